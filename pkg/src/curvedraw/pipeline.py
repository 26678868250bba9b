"""Stage orchestration: 2D curves and cameras in, curve drawing out."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import io
from .averaging import fuse_redundant
from .config import PipelineConfig
from .consistency import MCCN, MLN, build_mccn, build_mln, gap_fill, link_masks
from .curves import Curve2D, Curve3D, EdgelIndex, arc_length, cumulative_length, resample_polyline
from .drawing import DrawingGraph, MergeSettings, build_drawing, evolve_cluster, graph_to_ply, graph_to_text, merge_cluster
from .errors import StageError
from .evaluation import PRResult, default_tau_prox, evaluate
from .geometry import Camera
from .hypothesis import CurvePairHypothesis, enumerate_view_pairs, generate_all, format_hypotheses
from .parallel import parallel_map
from .synth import SceneSpec, generate_scene, ground_truth_samples, preset_spec
from .verification import verify_all

log = logging.getLogger(__name__)

STAGES = ("load", "hypotheses", "verify", "fuse", "consistency", "evolve", "merge")


@dataclass
class SceneData:
    cameras: dict[int, Camera]
    curves: dict[int, list[Curve2D]]
    sizes: dict[int, tuple[float, float]] = field(default_factory=dict)
    ground_truth: list[np.ndarray] | None = None
    provenance: dict[tuple[int, int], tuple[int, ...]] | None = None


@dataclass
class PipelineResult:
    hypotheses: list[CurvePairHypothesis] = field(default_factory=list)
    verified: list[Curve3D] = field(default_factory=list)
    fused: list[Curve3D] = field(default_factory=list)
    mln: MLN | None = None
    mccn: MCCN | None = None
    evolved: list[list[np.ndarray]] = field(default_factory=list)
    drawing: DrawingGraph | None = None
    spacing: float = 0.0
    log: dict = field(default_factory=dict)
    stopped_after: str = ""


def scene_from_spec(spec: SceneSpec, gt_spacing: float | None = None) -> SceneData:
    scene = generate_scene(spec)
    spacing = gt_spacing or scene.diameter() / 2000.0
    return SceneData(
        scene.cameras, scene.curves, scene.sizes, ground_truth_samples(scene.ground_truth, spacing), scene.provenance
    )


def load_scene(cfg: PipelineConfig) -> SceneData:
    """Synthesise from ``input.scene`` (a preset name or a JSON spec), or read camera/curve files."""
    src = cfg.input
    try:
        if src.scene:
            path = Path(src.scene)
            spec = SceneSpec.load(path) if path.suffix == ".json" or path.exists() else preset_spec(src.scene)
            spec.seed = cfg.run.seed
            return scene_from_spec(spec)
        if not src.cameras or not src.curves:
            raise ValueError("config needs input.scene, or both input.cameras and input.curves")
        for p in (src.cameras, src.curves):
            if not Path(p).exists():
                raise FileNotFoundError(f"missing input file {p}")
        cams = io.read_cameras(src.cameras)
        curves, sizes = io.read_curves2d(src.curves)
        gt = None
        if src.ground_truth:
            gt = [c.points for c in io.read_curves3d(src.ground_truth)]
        missing = sorted(set(curves) - set(cams))
        if missing:
            raise ValueError(f"no camera for views {missing}")
        return SceneData(cams, curves, sizes, gt)
    except StageError:
        raise
    except Exception as e:
        raise StageError("load", str(e)) from e


def edgel_ranks(curves: Mapping[int, Sequence[Curve2D]]) -> dict[tuple[int, int], tuple[int, int]]:
    out = {}
    for v, cs in curves.items():
        for c in cs:
            for k, e in enumerate(c.edgel_ids):
                out[(v, int(e))] = (c.curve_id, k)
    return out


def median_step(curves: Sequence[Curve3D]) -> float:
    steps = [np.linalg.norm(np.diff(c.points, axis=0), axis=1) for c in curves]
    return float(np.median(np.concatenate(steps))) if steps else 0.0


def sketch_diameter(curves: Sequence[Curve3D]) -> float:
    if not curves:
        return 0.0
    pts = np.concatenate([c.points for c in curves])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def _resample_indexed(points: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform resampling plus, per new sample, the nearest original sample."""
    if cumulative_length(points)[-1] <= spacing:
        return points.copy(), np.arange(len(points))
    new, t = resample_polyline(points, spacing)
    s = cumulative_length(points)
    right = np.clip(np.searchsorted(s, t), 1, len(s) - 1)
    left = right - 1
    return new, np.where(t - s[left] <= s[right] - t, left, right)


def _evolve_and_merge(
    cluster_id: int,
    members: list[int],
    fused: Sequence[Curve3D],
    masks: Mapping[tuple[int, int], np.ndarray],
    spacing: float,
    cfg: PipelineConfig,
    settings: MergeSettings,
) -> tuple[list[np.ndarray], DrawingGraph]:
    dp = cfg.drawing
    res = [_resample_indexed(fused[i].points, spacing) for i in members]
    local = {g: k for k, g in enumerate(members)}
    links = {}
    for (i, j), m in masks.items():
        if i in local and j in local:
            links[(local[i], local[j])] = m[res[local[i]][1]]
    pts = [r[0] for r in res]
    # samples near epipolar tangency in every partner view
    floor = cfg.verification.reliability_floor
    rel = [fused[i].reliability[r[1]] for i, r in zip(members, res)]
    if len(members) > 1:
        # evidence: conditioning times the number of views supporting the sample
        views = [np.array([len(fused[i].support[k]) for k in r[1]], dtype=float) for i, r in zip(members, res)]
        cond = [np.minimum(r / floor, 1.0) ** 2 if floor > 0 else np.ones(len(r)) for r in rel]
        weights = [c * v**2 for c, v in zip(cond, views)]
        ev = evolve_cluster(
            pts, links, dp.alpha, dp.max_iters, dp.tol_fraction * spacing, weights=weights,
            max_dist=settings.d_attach,
            reject_factor=2.0,
            reject_floor=settings.d_merge,
        )
        pts = ev.points
        if not ev.converged:
            log.info("cluster %d: evolution hit %d iterations", cluster_id, dp.max_iters)
    keep = [_distinct(p) for p in pts]
    pts = [p[k] for p, k in zip(pts, keep)]
    weak = [(r < floor)[k] for r, k in zip(rel, keep)]
    weak = [w for p, w in zip(pts, weak) if len(p) >= 2]
    pts = [p for p in pts if len(p) >= 2]
    graph = merge_cluster(pts, settings, cluster_id, weak=weak)
    return pts, graph


def _distinct(p: np.ndarray) -> np.ndarray:
    return np.concatenate([[True], np.linalg.norm(np.diff(p, axis=0), axis=1) > 0])


def run_pipeline(
    data: SceneData,
    cfg: PipelineConfig,
    stop_after: str | None = None,
    checkpoint_dir: Path | None = None,
    hypotheses: list[CurvePairHypothesis] | None = None,
) -> PipelineResult:
    """Run every stage in order, optionally stopping early and writing checkpoints.

    ``hypotheses`` may be passed in to skip their generation (they do not
    depend on any verification or drawing setting).
    """
    if stop_after is not None and stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}; choose from {', '.join(STAGES)}")
    threads = max(1, cfg.run.threads)
    res = PipelineResult()
    res.log = {"seed": cfg.run.seed, "config_digest": cfg.digest(), "stages": []}
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)

    def stage(name: str, t0: float, **counts) -> bool:
        res.log["stages"].append({"stage": name, "seconds": round(time.perf_counter() - t0, 3), **counts})
        log.info("%s: %s", name, ", ".join(f"{k}={v}" for k, v in counts.items()))
        if stop_after == name:
            res.stopped_after = name
            return True
        return False

    t0 = time.perf_counter()
    n_edgels = sum(len(c) for cs in data.curves.values() for c in cs)
    if stage("load", t0, views=len(data.cameras), curves=sum(map(len, data.curves.values())), edgels=n_edgels):
        return res

    views = sorted(data.cameras)
    try:
        t0 = time.perf_counter()
        if hypotheses is None:
            hp = cfg.hypothesis
            pos = enumerate_view_pairs(len(views), hp.strategy, hp.window or None)
            pairs = [(views[a], views[b]) for a, b in pos]
            hypotheses = generate_all(data.curves, data.cameras, pairs, hp.tau_overlap, hp.min_edgels, threads)
        res.hypotheses = hypotheses
        if ckpt:
            (ckpt / "hypotheses.txt").write_text(format_hypotheses(hypotheses))
    except Exception as e:
        raise StageError("hypotheses", str(e)) from e
    if stage("hypotheses", t0, hypotheses=len(hypotheses)):
        return res

    try:
        t0 = time.perf_counter()
        index = EdgelIndex.from_curves(data.curves, data.sizes)
        res.verified = verify_all(hypotheses, data.cameras, index, cfg.verification, threads)
        if ckpt:
            io.write_curves3d(ckpt / "verified.curves", res.verified)
    except Exception as e:
        raise StageError("verify", str(e)) from e
    if stage("verify", t0, verified=len(res.verified)):
        return res

    try:
        t0 = time.perf_counter()
        res.fused = fuse_redundant(res.verified, cfg.fusion, edgel_ranks(data.curves))
        if ckpt:
            io.write_curves3d(ckpt / "fused.curves", res.fused)
    except Exception as e:
        raise StageError("fuse", str(e)) from e
    if stage("fuse", t0, fused=len(res.fused)):
        return res

    try:
        t0 = time.perf_counter()
        cp = cfg.consistency
        mln = build_mln(res.fused)
        mccn = build_mccn(mln, cp.tau_eps, cp.tau_sl)
        res.mln = gap_fill(mln, mccn, cp.g_max)
        res.mccn = mccn
        if ckpt:
            (ckpt / "mccn.txt").write_text(mccn.format())
    except Exception as e:
        raise StageError("consistency", str(e)) from e
    if stage("consistency", t0, links=len(mccn.links), clusters=len(mccn.clusters)):
        return res

    try:
        t0 = time.perf_counter()
        dp = cfg.drawing
        diam = sketch_diameter(res.fused)
        res.spacing = dp.spacing or (diam / dp.spacing_divisor if diam > 0 else 1.0)
        base = median_step(res.fused) or res.spacing
        settings = MergeSettings(
            d_merge=dp.merge_factor * res.spacing,
            min_overlap_run=dp.min_overlap_run,
            d_attach=dp.attach_factor * base,
            spur_length=dp.spur_factor * base,
        )
        masks = link_masks(res.mln, res.mccn)
        clusters = res.mccn.clusters
        out = parallel_map(
            lambda kc: _evolve_and_merge(kc[0], kc[1], res.fused, masks, res.spacing, cfg, settings),
            list(enumerate(clusters)),
            threads,
        )
        res.evolved = [o[0] for o in out]
        if ckpt:
            evolved = [p for ps in res.evolved for p in ps]
            (ckpt / "evolved.curves").write_text(io.format_curves3d(io.polylines_to_curves3d(evolved)))
    except Exception as e:
        raise StageError("evolve", str(e)) from e
    if stage("evolve", t0, curves=sum(map(len, res.evolved)), spacing=float(f"{res.spacing:.6g}")):
        return res

    try:
        t0 = time.perf_counter()
        res.drawing = build_drawing([o[1] for o in out])
        res.drawing.check_invariants()
    except Exception as e:
        raise StageError("merge", str(e)) from e
    stage(
        "merge",
        t0,
        nodes=len(res.drawing.nodes),
        links=len(res.drawing.links),
        junctions=len(res.drawing.junctions()),
    )
    return res


def write_outputs(res: PipelineResult, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if res.drawing is not None:
        for name, text in (("drawing.graph", graph_to_text(res.drawing)), ("drawing.ply", graph_to_ply(res.drawing))):
            (out_dir / name).write_text(text)
            written.append(out_dir / name)
    (out_dir / "run_log.json").write_text(json.dumps(res.log, indent=2) + "\n")
    written.append(out_dir / "run_log.json")
    return written


def evaluate_result(res: PipelineResult, data: SceneData, cfg: PipelineConfig) -> PRResult:
    if data.ground_truth is None:
        raise ValueError("no ground truth to evaluate against")
    tau = cfg.evaluation.tau_prox or default_tau_prox(data.ground_truth, cfg.evaluation.tau_prox_fraction)
    return evaluate(res.drawing if res.drawing is not None else [], data.ground_truth, tau)


SWEEPABLE = {"n_min_views": ("verification", int), "tau_v": ("verification", float)}


def sweep(data: SceneData, cfg: PipelineConfig, param: str, values: Sequence) -> list:
    """PR points for each value of ``param``, reusing one set of hypotheses."""
    from .evaluation import pr_sweep

    if param not in SWEEPABLE:
        raise ValueError(f"cannot sweep {param!r}; choose from {sorted(SWEEPABLE)}")
    section, cast = SWEEPABLE[param]
    hyps = run_pipeline(data, cfg, stop_after="hypotheses").hypotheses

    def one(p, value):
        c = dataclasses.replace(cfg)
        setattr(c, section, dataclasses.replace(getattr(cfg, section), **{p: cast(value)}))
        r = run_pipeline(data, c, hypotheses=hyps)
        return evaluate_result(r, data, c), r.drawing.arc_length()

    return pr_sweep(one, [(param, v) for v in values])
