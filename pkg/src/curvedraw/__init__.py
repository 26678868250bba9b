"""Reconstruct a 3D curve drawing (curves meeting at junctions) from calibrated 2D curve fragments."""

from .config import PipelineConfig
from .curves import Curve2D, Curve3D, EdgelIndex
from .drawing import DrawingGraph
from .geometry import Camera
from .pipeline import run_pipeline

__all__ = ["Camera", "Curve2D", "Curve3D", "DrawingGraph", "EdgelIndex", "PipelineConfig", "run_pipeline"]
__version__ = "0.1.0"
