"""Camera localization from LED contours modelled as Lamé curves."""
from .camera import CameraIntrinsics, Pose, back_project_to_plane, camera_center, project
from .database import Database, LedRecord, RefPoint, build_database, load, save
from .estimator import LamePoseEstimator
from .exceptions import LamePoseError
from .freepnp import FreePnpConfig, freepnp
from .geometry import LameCurve, algebraic_distance, point_at, polar_radius
from .refine import Diagnostics, FeasibleRegion, RefineOptions, refine
from .scene import Observation, Scene
from .simulation import ScenarioConfig, run_monte_carlo, scenario_preset

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "Database", "Diagnostics", "FeasibleRegion", "FreePnpConfig",
    "LameCurve", "LamePoseError", "LamePoseEstimator", "LedRecord", "Observation", "Pose",
    "RefPoint", "RefineOptions", "ScenarioConfig", "Scene", "algebraic_distance",
    "back_project_to_plane", "build_database", "camera_center", "freepnp", "load",
    "point_at", "polar_radius", "project", "refine", "run_monte_carlo", "save",
    "scenario_preset",
]
