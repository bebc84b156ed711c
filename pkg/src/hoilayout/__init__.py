"""Multi-instance human/object scene layout from a single view."""

from .config import LossWeights, RunConfig, StageConfig, load_config
from .errors import HoiLayoutError
from .geometry import Camera, RigidPose, TriMesh
from .scene import Scene, load_scene, save_scene

__version__ = "0.1.0"

__all__ = ["Camera", "HoiLayoutError", "LossWeights", "RigidPose", "RunConfig", "Scene", "StageConfig",
           "TriMesh", "load_config", "load_scene", "save_scene", "__version__"]
