"""Scikit-learn style front end for single-image localization.

A pose solver has nothing to learn from training data, so ``fit`` only
validates hyper-parameters and freezes them into solver options. ``predict``
maps a sequence of scenes to camera centres; ``score`` is the negative mean
position error against known centres.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .camera import Pose, camera_center
from .exceptions import GeometryError
from .freepnp import FreePnpConfig, freepnp
from .refine import RESIDUAL_FORMS, Diagnostics, FeasibleRegion, RefineOptions, refine
from .scene import Scene


def check_scenes(scenes) -> list[Scene]:
    """Accept one Scene or an iterable of them; always return a list."""
    if isinstance(scenes, Scene):
        return [scenes]
    try:
        out = list(scenes)
    except TypeError:
        raise TypeError(f"expected a Scene or a sequence of Scenes, got {type(scenes).__name__}") from None
    for s in out:
        if not isinstance(s, Scene):
            raise TypeError(f"expected Scene, got {type(s).__name__}")
    return out


def check_centers(centers, n: int) -> np.ndarray:
    arr = np.asarray(centers, dtype=float)
    if arr.shape != (n, 3):
        raise ValueError(f"expected camera centres of shape ({n}, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("camera centres must be finite")
    return arr


class LamePoseEstimator(BaseEstimator):
    """Camera pose from identified LED contours.

    Parameters mirror :class:`FreePnpConfig` and :class:`RefineOptions`.
    """

    def __init__(self, samples_per_led: int = 12, sampling_ratio: float = 1.0,
                 max_iterations: int = 100, rp_tolerance: float = 0.05,
                 residual_form: str = "root", feasible_region: FeasibleRegion | None = None):
        self.samples_per_led = samples_per_led
        self.sampling_ratio = sampling_ratio
        self.max_iterations = max_iterations
        self.rp_tolerance = rp_tolerance
        self.residual_form = residual_form
        self.feasible_region = feasible_region

    def fit(self, scenes=None, y=None):
        if self.residual_form not in RESIDUAL_FORMS:
            raise GeometryError(f"residual_form must be one of {RESIDUAL_FORMS}")
        self.freepnp_config_ = FreePnpConfig(int(self.samples_per_led))
        self.refine_options_ = RefineOptions(
            sampling_ratio=float(self.sampling_ratio),
            rp_tolerance=float(self.rp_tolerance),
            feasible_region=self.feasible_region,
            max_iterations=int(self.max_iterations),
            residual_form=self.residual_form,
        )
        return self

    def localize(self, scene: Scene) -> tuple[Pose, Diagnostics]:
        """Pose and refinement diagnostics for one scene."""
        check_is_fitted(self, "refine_options_")
        initial = freepnp(scene, self.freepnp_config_)
        return refine(initial, scene, self.refine_options_)

    def predict(self, scenes: Sequence[Scene]) -> np.ndarray:
        """Camera centres, shape ``(n_scenes, 3)``."""
        scenes = check_scenes(scenes)
        return np.array([camera_center(self.localize(s)[0]) for s in scenes]).reshape(-1, 3)

    def score(self, scenes: Sequence[Scene], centers) -> float:
        scenes = check_scenes(scenes)
        truth = check_centers(centers, len(scenes))
        return -float(np.mean(np.linalg.norm(self.predict(scenes) - truth, axis=1)))
