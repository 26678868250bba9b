"""Pipeline configuration: one dataclass per stage, read from and written to INI text."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class HypothesisParams:
    tau_overlap: float = 0.5
    min_edgels: int = 5
    strategy: str = "exhaustive"
    window: int = 0


@dataclass
class VerificationParams:
    delta_d: float = 2.0
    delta_theta_deg: float = 15.0
    tau_v: float = 0.0
    n_min_views: int = 3
    min_run: int = 5
    reliability_floor: float = 0.1

    @property
    def delta_theta(self) -> float:
        return math.radians(self.delta_theta_deg)


@dataclass
class FusionParams:
    outlier_sigmas: float = 2.0
    # split fused runs where one step exceeds this multiple of the median step
    jump_factor: float = 4.0


@dataclass
class ConsistencyParams:
    tau_eps: int = 3
    tau_sl: int = 5
    g_max: int = 5


@dataclass
class DrawingParams:
    # 0 means scene diameter / spacing_divisor
    spacing: float = 0.0
    spacing_divisor: float = 2000.0
    alpha: float = 1.0
    max_iters: int = 50
    tol_fraction: float = 0.01
    merge_factor: float = 2.0
    min_overlap_run: int = 3
    # end attachment radius and minimum dangling-branch length, in units of
    # the median sample spacing of the enhanced curve sketch
    attach_factor: float = 8.0
    spur_factor: float = 6.0


@dataclass
class EvalParams:
    tau_prox: float = 0.0
    tau_prox_fraction: float = 0.005


@dataclass
class RunParams:
    seed: int = 0
    threads: int = 1


@dataclass
class InputParams:
    scene: str = ""
    cameras: str = ""
    curves: str = ""
    ground_truth: str = ""


@dataclass
class PipelineConfig:
    input: InputParams = field(default_factory=InputParams)
    hypothesis: HypothesisParams = field(default_factory=HypothesisParams)
    verification: VerificationParams = field(default_factory=VerificationParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    consistency: ConsistencyParams = field(default_factory=ConsistencyParams)
    drawing: DrawingParams = field(default_factory=DrawingParams)
    evaluation: EvalParams = field(default_factory=EvalParams)
    run: RunParams = field(default_factory=RunParams)

    def to_ini(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            lines.append(f"[{f.name}]")
            for g in dataclasses.fields(section):
                lines.append(f"{g.name} = {getattr(section, g.name)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        """Hash of every setting except the thread count (which never changes results)."""
        text = self.to_ini().replace(f"threads = {self.run.threads}", "threads = *")
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_ini(cls, text: str, base_dir: Path | None = None) -> "PipelineConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        cfg = cls()
        sections = {f.name: f for f in dataclasses.fields(cls)}
        for name in parser.sections():
            if name not in sections:
                raise ValueError(f"unknown config section [{name}]")
            section = getattr(cfg, name)
            known = {g.name: g for g in dataclasses.fields(section)}
            for key, raw in parser.items(name):
                if key not in known:
                    raise ValueError(f"unknown key {key!r} in section [{name}]")
                setattr(section, key, _coerce(known[key].type, raw))
        if base_dir is not None:
            for key in ("scene", "cameras", "curves", "ground_truth"):
                value = getattr(cfg.input, key)
                if value and not Path(value).is_absolute():
                    setattr(cfg.input, key, str(Path(base_dir) / value))
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        return cls.from_ini(path.read_text(), base_dir=path.parent)


def _coerce(type_name, raw: str):
    t = type_name if isinstance(type_name, str) else type_name.__name__
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    if t == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw.strip()
