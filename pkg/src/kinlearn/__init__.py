"""kinlearn: learning kinematic models of articulated objects.

Pipeline: synthetic (or recorded) 3-D feature trajectories -> motion
segmentation into rigid clusters -> per-cluster SE(3) pose smoothing ->
joint model fitting with BIC selection -> minimum spanning kinematic tree,
persisted for later motion prediction.
"""

from . import geometry, joints, kingraph, posegraph, segmentation, synth, trajectories
from .errors import KinlearnError

__all__ = [
    "geometry",
    "trajectories",
    "synth",
    "segmentation",
    "posegraph",
    "joints",
    "kingraph",
    "KinlearnError",
]

__version__ = "0.1.0"
