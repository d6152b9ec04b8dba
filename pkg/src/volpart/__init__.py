"""volpart: segmentation-conforming assemblable volumetric partitioning."""

from .surface import LabeledSurfaceMesh, RayHit, build_adjacency
from .tetmesh import LabeledTetMesh, DualGraph
from .directions import (DirectionSphere, build_direction_set,
                         triangle_extractable, region_extractable,
                         select_robust_direction, analyze)
from .pipeline import PipelineParams, AssemblyPlan, run
from .oracle import PartGeometry, sweep_collides, verify_proposition1

__all__ = [
    "LabeledSurfaceMesh", "LabeledTetMesh", "DualGraph", "RayHit",
    "DirectionSphere", "build_adjacency", "build_direction_set",
    "triangle_extractable", "region_extractable", "select_robust_direction",
    "analyze", "PipelineParams", "AssemblyPlan", "run", "PartGeometry",
    "sweep_collides", "verify_proposition1",
]

__version__ = "0.1.0"
