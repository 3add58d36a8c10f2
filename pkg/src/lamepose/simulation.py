"""Monte Carlo simulation of ceiling-LED camera localization.

A trial draws a random camera pose with at least two LEDs fully in view,
synthesizes noisy contours for every visible LED, runs the FreePnP initializer
and the back-projection refinement, and scores the estimate against the truth.
Per-trial random streams depend only on ``(seed, trial_index)``, so results do
not depend on the number of workers.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .camera import (
    MIN_DEPTH,
    CameraIntrinsics,
    Pose,
    camera_center,
    project,
    rodrigues_to_matrix,
    to_camera,
)
from .database import Database, LedRecord, build_database, table_one_database
from .exceptions import (
    GeometryError,
    InfeasibleScenarioError,
    LamePoseError,
    NotVisibleError,
    SimulationAbortedError,
)
from .freepnp import FreePnpConfig, freepnp
from .geometry import RECTANGLE_GAMMA, LameCurve, point_at, polyline
from .refine import FeasibleRegion, RefineOptions, refine
from .scene import Observation, Scene

MAX_POSE_ATTEMPTS = 10_000
MAX_FAILURE_FRACTION = 0.05
VISIBILITY_MARGIN_PX = 1.0
DENSE_TABLE_POINTS = 2048

CIRCLE = {"a": 0.15, "b": 0.15, "gamma": 2.0}
RECTANGLE = {"a": 0.15, "b": 0.12, "gamma": RECTANGLE_GAMMA}
RHOMBUS = {"a": 0.15, "b": 0.12, "gamma": 1.0}
SQUARE = {"a": 0.15, "b": 0.15, "gamma": 1.0}
ELLIPSE = {"a": 0.15, "b": 0.12, "gamma": 2.0}

SHAPES = {
    "circle": CIRCLE,
    "rectangle": RECTANGLE,
    "rhombus": RHOMBUS,
    "square": SQUARE,
    "ellipse": ELLIPSE,
}

SCENARIO_SHAPES = {
    "A": [CIRCLE] * 4,
    "B": [RECTANGLE] * 4,
    "C": [RHOMBUS] * 4,
    "C-rhombus": [RHOMBUS] * 4,
    "C-square": [SQUARE] * 4,
    "C-ellipse": [ELLIPSE] * 4,
    "C-circle": [CIRCLE] * 4,
    "C-rectangle": [RECTANGLE] * 4,
    "D": [RHOMBUS, ELLIPSE, CIRCLE, RECTANGLE],
}


@dataclass(frozen=True)
class PoseSampler:
    height_range: tuple[float, float] = (0.8, 1.8)
    max_tilt_deg: float = 30.0
    roll_range_deg: tuple[float, float] = (0.0, 360.0)
    wall_margin: float = 0.5


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    database: Database
    room: tuple[float, float, float] = (6.0, 8.0, 3.0)
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics.simulation)
    noise_std: float = 2.0
    trials: int = 2000
    seed: int = 42
    pose_sampler: PoseSampler = PoseSampler()
    contour_density: float = 1.0
    min_contour_points: int = 90
    min_visible_leds: int = 2
    samples_per_led: int = 12
    sampling_ratio: float = 1.0
    max_iterations: int = 100
    led_scale: float = 1.0
    residual_form: str = "root"

    def __post_init__(self):
        if self.noise_std < 0:
            raise GeometryError("noise_std must be >= 0")
        if self.trials < 1:
            raise GeometryError("trials must be >= 1")
        if self.min_visible_leds < 2:
            raise GeometryError("min_visible_leds must be >= 2")
        if self.led_scale <= 0:
            raise GeometryError("led_scale must be positive")

    def effective_database(self) -> Database:
        if self.led_scale == 1.0:
            return self.database
        return build_database(
            LedRecord(r.id, replace(r.curve, a=r.curve.a * self.led_scale, b=r.curve.b * self.led_scale))
            for r in self.database
        )

    def refine_options(self) -> RefineOptions:
        width, depth, _ = self.room
        return RefineOptions(
            sampling_ratio=self.sampling_ratio,
            max_iterations=self.max_iterations,
            residual_form=self.residual_form,
            feasible_region=FeasibleRegion.room(width, depth, self.database.z0),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "z0": self.database.z0,
            "leds": [
                {"id": r.id, "cx": r.curve.center_x, "cy": r.curve.center_y, "a": r.curve.a,
                 "b": r.curve.b, "gamma": r.curve.gamma, "phi": r.curve.phi}
                for r in self.database
            ],
            "room": list(self.room),
            "camera": asdict(self.camera),
            "noise_std": self.noise_std,
            "trials": self.trials,
            "seed": self.seed,
            "pose_sampler": {k: list(v) if isinstance(v, tuple) else v
                             for k, v in asdict(self.pose_sampler).items()},
            "contour_density": self.contour_density,
            "min_contour_points": self.min_contour_points,
            "min_visible_leds": self.min_visible_leds,
            "samples_per_led": self.samples_per_led,
            "sampling_ratio": self.sampling_ratio,
            "max_iterations": self.max_iterations,
            "led_scale": self.led_scale,
            "residual_form": self.residual_form,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__) | {"z0", "leds", "scenario"}
        unknown = set(doc) - known
        if unknown:
            raise GeometryError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        if "scenario" in doc:
            base = scenario_preset(doc.pop("scenario")).to_dict()
            base.update(doc)
            doc = base
        z0 = float(doc.pop("z0", 3.0))
        records = [
            LedRecord(int(led["id"]), LameCurve(led["cx"], led["cy"], z0, led["a"], led["b"],
                                                led.get("gamma", 2.0), led.get("phi", 0.0)))
            for led in doc.pop("leds")
        ]
        sampler = doc.pop("pose_sampler", {})
        sampler = PoseSampler(**{k: tuple(v) if isinstance(v, list) else v for k, v in sampler.items()})
        camera = CameraIntrinsics(**doc.pop("camera")) if "camera" in doc else CameraIntrinsics.simulation()
        room = tuple(float(v) for v in doc.pop("room", (6.0, 8.0, 3.0)))
        return cls(database=build_database(records), room=room, camera=camera,
                   pose_sampler=sampler, **doc)


def scenario_preset(name: str) -> ScenarioConfig:
    """Reference 6×8×3 m room and simulation camera with the LED shapes of scenario ``name``.

    Names: A (circles), B (rectangles), C / C-rhombus, C-square, C-ellipse, C-circle, C-rectangle, D
    (rhombus, ellipse, circle, rectangle), or a bare shape name such as
    ``circle``.
    """
    shapes = SCENARIO_SHAPES.get(name)
    if shapes is None and name in SHAPES:
        shapes = [SHAPES[name]] * 4
    if shapes is None:
        raise GeometryError(f"unknown scenario {name!r}")
    return ScenarioConfig(name=name, database=table_one_database(shapes))


# ---------------------------------------------------------------------------
# scene synthesis


def _axis_angle(axis, angle) -> np.ndarray:
    return rodrigues_to_matrix(np.asarray(axis, dtype=float) * angle)


def pose_from_orientation(center, tilt_azimuth, tilt, roll) -> Pose:
    """Camera at ``center`` looking up, tilted by ``tilt`` towards ``tilt_azimuth``, then rolled."""
    axis = np.array([math.cos(tilt_azimuth), math.sin(tilt_azimuth), 0.0])
    cam_to_world = _axis_angle(axis, tilt) @ _axis_angle([0.0, 0.0, 1.0], roll)
    return Pose.from_center(cam_to_world.T, center)


def led_fully_visible(curve: LameCurve, pose: Pose, K: CameraIntrinsics,
                      margin: float = VISIBILITY_MARGIN_PX, n: int = 720) -> bool:
    pts = polyline(curve, n)
    if np.any(to_camera(pose, pts)[:, 2] <= MIN_DEPTH):
        return False
    px = project(K, pose, pts)
    return bool(np.all((px[:, 0] >= margin) & (px[:, 0] <= K.width - margin)
                       & (px[:, 1] >= margin) & (px[:, 1] <= K.height - margin)))


def visible_records(db: Database, pose: Pose, K: CameraIntrinsics) -> list[LedRecord]:
    c = camera_center(pose)
    if c[2] >= db.z0:
        return []
    return [r for r in db if led_fully_visible(r.curve, pose, K)]


def sample_pose(config: ScenarioConfig, rng: np.random.Generator) -> Pose:
    """Random camera pose with at least ``min_visible_leds`` LEDs fully in view."""
    db = config.effective_database()
    width, depth, _ = config.room
    s = config.pose_sampler
    m = s.wall_margin
    for _ in range(MAX_POSE_ATTEMPTS):
        center = np.array([rng.uniform(m, width - m), rng.uniform(m, depth - m),
                           rng.uniform(*s.height_range)])
        azimuth = rng.uniform(0.0, 2 * math.pi)
        tilt = rng.uniform(0.0, math.radians(s.max_tilt_deg))
        roll = math.radians(rng.uniform(*s.roll_range_deg))
        pose = pose_from_orientation(center, azimuth, tilt, roll)
        if len(visible_records(db, pose, config.camera)) >= config.min_visible_leds:
            return pose
    raise InfeasibleScenarioError(
        f"no pose with {config.min_visible_leds} visible LEDs in {MAX_POSE_ATTEMPTS} attempts")


def synthesize_contour(record: LedRecord, pose: Pose, K: CameraIntrinsics, noise_std: float,
                       density: float, rng: np.random.Generator,
                       min_points: int = 90) -> Observation:
    """Noisy contour roughly uniform in projected arc length, in boundary order.

    Noise-free points are exact projections of curve points; noise is
    isotropic Gaussian per pixel coordinate and may push points off-image.
    """
    curve = record.curve
    theta = np.linspace(0.0, 2 * math.pi, DENSE_TABLE_POINTS + 1)
    world = point_at(curve, curve.phi + theta)
    if np.any(to_camera(pose, world)[:, 2] <= MIN_DEPTH):
        raise NotVisibleError(f"LED {record.id} is behind the camera")
    dense = project(K, pose, world)
    if not np.all(K.in_image(dense)):
        raise NotVisibleError(f"LED {record.id} is not fully inside the image")
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    perimeter = arc[-1]
    n = max(min_points, int(round(density * perimeter)))
    start = rng.uniform(0.0, perimeter)
    targets = (start + perimeter * np.arange(n) / n) % perimeter
    theta_k = np.interp(targets, arc, theta)
    pixels = project(K, pose, point_at(curve, curve.phi + theta_k))
    if noise_std > 0:
        pixels = pixels + rng.normal(0.0, noise_std, size=pixels.shape)
    return Observation(record.id, pixels)


def synthesize_scene(config: ScenarioConfig, pose: Pose, rng: np.random.Generator) -> Scene:
    db = config.effective_database()
    records = visible_records(db, pose, config.camera)
    observations = [
        synthesize_contour(r, pose, config.camera, config.noise_std, config.contour_density,
                           rng, config.min_contour_points)
        for r in records
    ]
    return Scene(config.camera, records, observations)


# ---------------------------------------------------------------------------
# metrics and statistics


def position_error(true, est) -> float:
    return float(np.linalg.norm(np.asarray(est, dtype=float) - np.asarray(true, dtype=float)))


def rotation_error(R_true, R_est) -> float:
    """Angle of ``R_est R_true^T`` in degrees."""
    cos = (np.trace(np.asarray(R_est) @ np.asarray(R_true).T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


@dataclass
class TrialResult:
    index: int
    status: str
    true_pose: Pose
    estimated_pose: Pose | None = None
    position_error: float = math.nan
    rotation_error: float = math.nan
    visible_leds: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class SummaryStats:
    trials: int
    succeeded: int
    failed: int
    mpe: float
    p50: float
    p90: float
    std: float
    mre: float
    r50: float
    r90: float
    mpe_ci95: float
    failure_codes: dict
    position_cdf: list
    rotation_cdf: list

    def to_dict(self, include_cdf: bool = False) -> dict:
        out = asdict(self)
        if not include_cdf:
            out.pop("position_cdf")
            out.pop("rotation_cdf")
        return out


def empirical_cdf(values) -> list[tuple[float, float]]:
    """Sorted ``(value, cumulative_fraction)`` pairs."""
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    return [(float(x), (i + 1) / n) for i, x in enumerate(v)]


def summarize(results: Sequence[TrialResult]) -> SummaryStats:
    ok = [r for r in results if r.ok]
    failures: dict[str, int] = {}
    for r in results:
        if not r.ok:
            failures[r.status] = failures.get(r.status, 0) + 1
    ep = np.array([r.position_error for r in ok])
    er = np.array([r.rotation_error for r in ok])
    if len(ok) == 0:
        nan = math.nan
        return SummaryStats(len(results), 0, len(results), nan, nan, nan, nan, nan, nan, nan, nan,
                            failures, [], [])
    std = float(np.std(ep, ddof=1)) if len(ep) > 1 else 0.0
    return SummaryStats(
        trials=len(results),
        succeeded=len(ok),
        failed=len(results) - len(ok),
        mpe=float(ep.mean()),
        p50=float(np.percentile(ep, 50)),
        p90=float(np.percentile(ep, 90)),
        std=std,
        mre=float(er.mean()),
        r50=float(np.percentile(er, 50)),
        r90=float(np.percentile(er, 90)),
        mpe_ci95=1.96 * std / math.sqrt(len(ep)),
        failure_codes=failures,
        position_cdf=empirical_cdf(ep),
        rotation_cdf=empirical_cdf(er),
    )


# ---------------------------------------------------------------------------
# Monte Carlo driver


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def localize_scene(scene: Scene, freepnp_config: FreePnpConfig, options: RefineOptions):
    initial = freepnp(scene, freepnp_config)
    return refine(initial, scene, options)


def run_trial(config: ScenarioConfig, index: int) -> TrialResult:
    rng = trial_rng(config.seed, index)
    true_pose = sample_pose(config, rng)
    scene = synthesize_scene(config, true_pose, rng)
    result = TrialResult(index=index, status="ok", true_pose=true_pose,
                         visible_leds=len(scene.observations))
    try:
        pose, diag = localize_scene(scene, FreePnpConfig(config.samples_per_led),
                                    config.refine_options())
    except LamePoseError as exc:
        result.status = type(exc).__name__
        return result
    result.estimated_pose = pose
    result.position_error = position_error(camera_center(true_pose), camera_center(pose))
    result.rotation_error = rotation_error(true_pose.rotation, pose.rotation)
    result.diagnostics = diag.to_dict()
    return result


def _run_chunk(args):
    config, indices = args
    return [run_trial(config, i) for i in indices]


@dataclass
class MonteCarloResult:
    config: ScenarioConfig
    summary: SummaryStats
    trials: list[TrialResult]


def run_monte_carlo(config: ScenarioConfig, workers: int = 1, strict: bool = True) -> MonteCarloResult:
    """Run ``config.trials`` independent trials and summarize them.

    Raises SimulationAbortedError when more than 5% of trials fail and
    ``strict`` is set.
    """
    indices = list(range(config.trials))
    if workers <= 1:
        results = [run_trial(config, i) for i in indices]
    else:
        chunks = [(config, indices[k::workers]) for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for chunk in pool.map(_run_chunk, chunks) for r in chunk]
    results.sort(key=lambda r: r.index)
    summary = summarize(results)
    if strict and summary.failed > MAX_FAILURE_FRACTION * config.trials:
        raise SimulationAbortedError(
            f"{summary.failed} of {config.trials} trials failed: {summary.failure_codes}")
    return MonteCarloResult(config, summary, results)


# ---------------------------------------------------------------------------
# result files

TRIALS_HEADER = ["trial_index", "ep_m", "er_deg", "iterations", "final_cost", "status"]


def trials_csv(results: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRIALS_HEADER)
    for r in results:
        writer.writerow([r.index, repr(r.position_error), repr(r.rotation_error),
                         r.diagnostics.get("iterations", ""),
                         repr(r.diagnostics["final_cost"]) if "final_cost" in r.diagnostics else "",
                         r.status])
    return buf.getvalue()


def summary_document(result: MonteCarloResult) -> dict:
    doc = result.summary.to_dict()
    doc["seed"] = result.config.seed
    doc["config"] = copy.deepcopy(result.config.to_dict())
    return doc


def summary_json(result: MonteCarloResult) -> str:
    return json.dumps(summary_document(result), indent=2, sort_keys=True) + "\n"
