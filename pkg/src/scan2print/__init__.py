"""Scan to print: turntable scan simulation and point cloud to STL reconstruction."""

from .geometry import (
    PointCloud,
    RigidTransform,
    TriangleMesh,
    apply_transform,
    compose,
    invert,
    merge,
)

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "RigidTransform",
    "TriangleMesh",
    "apply_transform",
    "compose",
    "invert",
    "merge",
    "__version__",
]
