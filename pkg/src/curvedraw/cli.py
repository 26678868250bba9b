"""Command-line entry point: ``curvedraw {synth,run,eval,sweep,export-ply}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import io
from .config import PipelineConfig
from .drawing import graph_from_text, graph_to_ply
from .errors import CurveDrawError, StageError
from .evaluation import CSV_HEADER, default_tau_prox, evaluate, format_sweep
from .pipeline import STAGES, SWEEPABLE, evaluate_result, load_scene, run_pipeline, sweep, write_outputs
from .synth import SceneSpec, generate_scene, ground_truth_samples, preset_spec

log = logging.getLogger("curvedraw")


def _load_config(args) -> PipelineConfig:
    path = getattr(args, "config", None)
    cfg = PipelineConfig.load(path) if path else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.run.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.run.threads = args.threads
    if getattr(args, "tau_v", None) is not None:
        cfg.verification.tau_v = args.tau_v
    if getattr(args, "min_views", None) is not None:
        cfg.verification.n_min_views = args.min_views
    if getattr(args, "tau_prox", None) is not None:
        cfg.evaluation.tau_prox = args.tau_prox
    return cfg


def cmd_synth(args) -> int:
    if args.spec and Path(args.spec).exists():
        spec = SceneSpec.load(args.spec)
    else:
        spec = preset_spec(args.spec or "cube")
    if args.seed is not None:
        spec.seed = args.seed
    scene = generate_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_cameras(out / "cameras.txt", scene.cameras)
    io.write_curves2d(out / "curves.txt", scene.curves, scene.sizes)
    gt = ground_truth_samples(scene.ground_truth, scene.diameter() / 2000.0)
    io.write_curves3d(out / "gt.curves", io.polylines_to_curves3d(gt))
    (out / "scene.json").write_text(spec.to_json())
    (out / "scene.cfg").write_text(
        "[input]\ncameras = cameras.txt\ncurves = curves.txt\nground_truth = gt.curves\n\n"
        f"[run]\nseed = {spec.seed}\n"
    )
    n = sum(map(len, scene.curves.values()))
    print(f"wrote {len(scene.cameras)} cameras and {n} curves to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    data = load_scene(cfg)
    ckpt = Path(args.out) / "checkpoints" if args.checkpoint else None
    res = run_pipeline(data, cfg, stop_after=args.stage, checkpoint_dir=ckpt)
    for p in write_outputs(res, Path(args.out)):
        print(p)
    if res.drawing is not None and data.ground_truth is not None:
        pr = evaluate_result(res, data, cfg)
        print(CSV_HEADER)
        print(pr.csv_row("run"))
    return 0


def _read_recon(path: Path):
    text = path.read_text()
    if text.lstrip().startswith("{"):
        return graph_from_text(text)
    return io.parse_curves3d(text)


def cmd_eval(args) -> int:
    recon = _read_recon(Path(args.recon))
    gt = [c.points for c in io.read_curves3d(args.gt)]
    tau = args.tau_prox if args.tau_prox is not None else default_tau_prox(gt)
    pr = evaluate(recon, gt, tau)
    print(CSV_HEADER)
    print(pr.csv_row(f"tau_prox={tau:.6g}"))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    data = load_scene(cfg)
    if data.ground_truth is None:
        raise StageError("load", "sweeping needs ground truth (input.ground_truth or a synthetic scene)")
    points = sweep(data, cfg, args.param, args.values)
    text = format_sweep(points)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    for p in points:
        if p.error:
            print(f"# {p.param}={p.value} failed: {p.error}", file=sys.stderr)
    return 0


def cmd_export_ply(args) -> int:
    g = graph_from_text(Path(args.graph).read_text())
    out = Path(args.out) if args.out else Path(args.graph).with_suffix(".ply")
    out.write_text(graph_to_ply(g))
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curvedraw", description="Multiview 3D curve drawing from 2D curve fragments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene")
    s.add_argument("spec", nargs="?", help="scene JSON file or preset name (cube, noisy-cube)")
    s.add_argument("--spec", dest="spec_opt", help=argparse.SUPPRESS)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    def pipeline_flags(q):
        q.add_argument("config", nargs="?", help="pipeline config (INI)")
        q.add_argument("--config", dest="config_opt", help=argparse.SUPPRESS)
        q.add_argument("--seed", type=int)
        q.add_argument("--threads", type=int)
        q.add_argument("--tau-v", type=float)
        q.add_argument("--min-views", type=int)
        q.add_argument("--tau-prox", type=float)

    r = sub.add_parser("run", help="run the pipeline")
    pipeline_flags(r)
    r.add_argument("--out", default="out")
    r.add_argument("--checkpoint", action="store_true", help="write per-stage outputs")
    r.add_argument("--stage", choices=STAGES, help="stop after this stage")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="precision/recall of a reconstruction")
    e.add_argument("--recon", required=True, help="drawing.graph or .curves file")
    e.add_argument("--gt", required=True, help="ground truth .curves file")
    e.add_argument("--tau-prox", type=float)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="precision/recall over a parameter sweep")
    pipeline_flags(w)
    w.add_argument("--param", default="n_min_views", choices=sorted(SWEEPABLE))
    w.add_argument("--values", nargs="+", default=["2", "3", "4", "5", "6"])
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export-ply", help="convert drawing.graph to PLY")
    x.add_argument("graph")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export_ply)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # both positional and --flag spellings are accepted for config/spec
    if getattr(args, "config_opt", None):
        args.config = args.config_opt
    if getattr(args, "spec_opt", None):
        args.spec = args.spec_opt
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as e:
        print(f"curvedraw: {e}", file=sys.stderr)
        return 1
    except (CurveDrawError, OSError, ValueError) as e:
        print(f"curvedraw: [{args.command}] {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
