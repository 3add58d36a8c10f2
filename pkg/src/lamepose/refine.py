"""Back-projection least-squares pose refinement.

Every retained contour pixel is cast onto the ceiling plane under the current
pose and scored against its LED's Lamé curve, either by the algebraic distance
``|u|^g + |v|^g - 1`` or by its g-th root form ``(|u|^g + |v|^g)^(1/g) - 1``.
Both vanish exactly on the curve; the root form keeps large-g (rectangular)
LEDs well conditioned because it grows linearly off the curve. The sum of
squares is minimized over the Rodrigues vector and translation with damped
Gauss-Newton (Levenberg-Marquardt). The camera-position box and the optional
reference-point tolerance enter as quadratic penalties that only act when
violated.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .camera import MIN_DEPTH, Pose, rodrigues_to_matrix, rotation_derivatives
from .exceptions import (
    GeometryError,
    InfeasibleInitializerError,
    NegativeDepthError,
    ParallelRayError,
    RefinementDivergedError,
)
from .geometry import POWER_SATURATION
from .scene import Scene

log = logging.getLogger(__name__)

RESIDUAL_CLIP = 1e6
REGION_WEIGHT = 1e6
RP_INITIAL_WEIGHT = 1e2
RP_RAMP = 10.0
RP_MAX_RAMPS = 3
RELATIVE_COST_TOL = 1e-12
_LOG_SATURATION = math.log(POWER_SATURATION)
# "algebraic": |u|^g + |v|^g - 1.  "root": (|u|^g + |v|^g)^(1/g) - 1, same zero
# set and sign but grows linearly off the curve instead of like |u|^g.
RESIDUAL_FORMS = ("algebraic", "root")


@dataclass(frozen=True)
class FeasibleRegion:
    """Axis-aligned box for the camera centre."""

    lower: tuple[float, float, float]
    upper: tuple[float, float, float]

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo >= hi):
            raise GeometryError(f"empty feasible region {self.lower}..{self.upper}")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    def contains(self, point) -> bool:
        p = np.asarray(point)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    @classmethod
    def below_ceiling(cls, z0: float, margin: float = 1e-3) -> "FeasibleRegion":
        return cls((-math.inf, -math.inf, -math.inf), (math.inf, math.inf, z0 - margin))

    @classmethod
    def room(cls, width: float, depth: float, z0: float, margin: float = 1e-3) -> "FeasibleRegion":
        return cls((0.0, 0.0, 0.0), (width, depth, z0 - margin))


@dataclass(frozen=True)
class RefineOptions:
    sampling_ratio: float = 1.0
    rp_tolerance: float = 0.05
    feasible_region: FeasibleRegion | None = None
    max_iterations: int = 100
    convergence_tol: float = 1e-10
    residual_form: str = "root"

    def __post_init__(self):
        if self.residual_form not in RESIDUAL_FORMS:
            raise GeometryError(
                f"residual_form must be one of {RESIDUAL_FORMS}, got {self.residual_form!r}")
        if not 0 < self.sampling_ratio <= 1:
            raise GeometryError(f"sampling_ratio must be in (0, 1], got {self.sampling_ratio}")
        if self.rp_tolerance <= 0:
            raise GeometryError("rp_tolerance must be positive")
        if self.max_iterations < 1:
            raise GeometryError("max_iterations must be >= 1")


@dataclass
class Diagnostics:
    iterations: int
    initial_cost: float
    final_cost: float
    clip_count: int
    constraint_status: str
    converged: bool
    stop_reason: str
    cost_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "clip_count": self.clip_count,
            "constraint_status": self.constraint_status,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
        }


def subsample_indices(n: int, ratio: float) -> np.ndarray:
    """``ceil(ratio*n)`` indices spaced ``1/ratio`` apart, starting at 0."""
    count = math.ceil(ratio * n - 1e-9)
    return np.floor(np.arange(count) / ratio + 1e-9).astype(int)


def subsample_contour(contour, ratio: float) -> np.ndarray:
    contour = np.asarray(contour)
    if not 0 < ratio <= 1:
        raise GeometryError(f"sampling ratio must be in (0, 1], got {ratio}")
    return contour[subsample_indices(len(contour), ratio)]


class _Problem:
    """Flattened per-pixel arrays for one scene, built once per refinement."""

    def __init__(self, scene: Scene, options: RefineOptions):
        K = scene.intrinsics
        self.z0 = scene.z0
        self.root_form = options.residual_form == "root"
        rays, params, counts = [], [], []
        for rec, obs in zip(scene.records, scene.observations):
            pts = subsample_contour(obs.contour, options.sampling_ratio)
            c = rec.curve
            rays.append(K.normalize(pts))
            params.append(np.tile([c.center_x, c.center_y, c.a, c.b, c.gamma,
                                   math.cos(c.phi), math.sin(c.phi)], (len(pts), 1)))
            counts.append(len(pts))
        self.rays = np.concatenate(rays)
        p = np.concatenate(params)
        self.cx, self.cy, self.a, self.b, self.gamma, self.cos_phi, self.sin_phi = p.T
        self.counts = counts
        if scene.ref_points:
            self.rp_rays = K.normalize([rp.pixel for rp in scene.ref_points])
            self.rp_world = np.array([rp.world for rp in scene.ref_points])
        else:
            self.rp_rays = None


def _back_project(R, t, rays, z0):
    """World points on ``z = z0`` plus the intermediates the Jacobian needs."""
    center = -R.T @ t
    w = rays @ R  # ray directions in the world frame
    wz = w[:, 2]
    if np.any(np.abs(wz) <= 1e-9):
        raise ParallelRayError("pixel ray parallel to the ceiling plane")
    depth = (z0 - center[2]) / wz
    if np.any(depth <= MIN_DEPTH):
        raise NegativeDepthError("ceiling intersection behind the camera")
    pts = center + depth[:, None] * w
    return pts, center, w, depth


def _back_project_jacobian(R, dR, t, rays, w, depth):
    """d(x, y)/d(omega, t) of back-projected points, shape ``(n, 2, 6)``."""
    n = len(rays)
    slope = w[:, :2] / w[:, 2:3]
    J = np.empty((n, 2, 6))
    for i in range(3):
        dc = -dR[i].T @ t
        dw = rays @ dR[i]
        v = dc + depth[:, None] * dw
        J[:, :, i] = v[:, :2] - slope * v[:, 2:3]
    for j in range(3):
        v = -R[j]
        J[:, :, 3 + j] = v[:2] - slope * v[2]
    return J


def _lame_terms(prob: _Problem, pts, need_grad):
    if prob.root_form:
        return _root_terms(prob, pts, need_grad)
    dx = pts[:, 0] - prob.cx
    dy = pts[:, 1] - prob.cy
    u = (prob.cos_phi * dx + prob.sin_phi * dy) / prob.a
    v = (-prob.sin_phi * dx + prob.cos_phi * dy) / prob.b
    g = prob.gamma
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_u = np.log(np.abs(u))
        log_v = np.log(np.abs(v))
        pu_log = g * log_u
        pv_log = g * log_v
        pu = np.exp(np.minimum(pu_log, _LOG_SATURATION))
        pv = np.exp(np.minimum(pv_log, _LOG_SATURATION))
    r = pu + pv - 1.0
    if not need_grad:
        return r, None
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # d|q|^g/dq = g |q|^(g-1) sgn(q); at g=1 corners take the one-sided +1
        du = np.where(g == 1.0, 1.0, g * np.exp((g - 1.0) * log_u))
        dv = np.where(g == 1.0, 1.0, g * np.exp((g - 1.0) * log_v))
    du = np.where(pu_log >= _LOG_SATURATION, 0.0, du * np.where(u < 0, -1.0, 1.0))
    dv = np.where(pv_log >= _LOG_SATURATION, 0.0, dv * np.where(v < 0, -1.0, 1.0))
    du = du / prob.a
    dv = dv / prob.b
    grad = np.stack([du * prob.cos_phi - dv * prob.sin_phi,
                     du * prob.sin_phi + dv * prob.cos_phi], axis=1)
    return r, grad


def _local_coords(prob: _Problem, pts):
    dx = pts[:, 0] - prob.cx
    dy = pts[:, 1] - prob.cy
    u = (prob.cos_phi * dx + prob.sin_phi * dy) / prob.a
    v = (-prob.sin_phi * dx + prob.cos_phi * dy) / prob.b
    return u, v


def _root_terms(prob: _Problem, pts, need_grad):
    u, v = _local_coords(prob, pts)
    g = prob.gamma
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_u = np.log(np.abs(u))
        log_v = np.log(np.abs(v))
        log_s = np.logaddexp(g * log_u, g * log_v)
        r = np.exp(log_s / g) - 1.0
    if not need_grad:
        return r, None
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # dr/du = s^(1/g - 1) |u|^(g-1) sgn(u); g=1 corners take the one-sided +1
        scale = (1.0 / g - 1.0) * log_s
        du = np.exp(scale + np.where(g == 1.0, 0.0, (g - 1.0) * log_u))
        dv = np.exp(scale + np.where(g == 1.0, 0.0, (g - 1.0) * log_v))
    du = np.where(np.isfinite(du), du, 0.0) * np.where(u < 0, -1.0, 1.0) / prob.a
    dv = np.where(np.isfinite(dv), dv, 0.0) * np.where(v < 0, -1.0, 1.0) / prob.b
    grad = np.stack([du * prob.cos_phi - dv * prob.sin_phi,
                     du * prob.sin_phi + dv * prob.cos_phi], axis=1)
    return r, grad


def _contour_residuals(prob: _Problem, params, need_jac):
    omega, t = params[:3], params[3:]
    R = rodrigues_to_matrix(omega)
    pts, _, w, depth = _back_project(R, t, prob.rays, prob.z0)
    r, grad = _lame_terms(prob, pts, need_jac)
    clipped = np.abs(r) > RESIDUAL_CLIP
    r = np.clip(r, -RESIDUAL_CLIP, RESIDUAL_CLIP)
    if not need_jac:
        return r, None, int(clipped.sum())
    dR = rotation_derivatives(omega)
    Jb = _back_project_jacobian(R, dR, t, prob.rays, w, depth)
    J = np.einsum("nk,nkp->np", grad, Jb)
    J[clipped] = 0.0
    return r, J, int(clipped.sum())


def residuals(pose: Pose, scene: Scene, options: RefineOptions = RefineOptions()) -> np.ndarray:
    """Curve residual of every retained back-projected contour pixel, LED-major."""
    r, _, _ = _contour_residuals(_Problem(scene, options), pose.params, False)
    return r


def jacobian(pose: Pose, scene: Scene, options: RefineOptions = RefineOptions()) -> np.ndarray:
    """Analytic ``d residuals / d(omega, t)``, shape ``(n_residuals, 6)``."""
    _, J, _ = _contour_residuals(_Problem(scene, options), pose.params, True)
    return J


def rp_rms_error(pose: Pose, scene: Scene) -> float:
    """Root-mean-square ceiling distance between back-projected RP pixels and their survey points."""
    if not scene.ref_points:
        return 0.0
    prob = _Problem(scene, RefineOptions())
    pts, *_ = _back_project(pose.rotation, pose.t, prob.rp_rays, prob.z0)
    return float(np.sqrt(np.mean(np.sum((pts - prob.rp_world) ** 2, axis=1))))


class _Objective:
    """Contour residuals stacked with the active penalty rows."""

    def __init__(self, prob: _Problem, region: FeasibleRegion, rp_tolerance: float):
        self.prob = prob
        self.lower = np.asarray(region.lower)
        self.upper = np.asarray(region.upper)
        self.rp_tolerance = rp_tolerance
        self.rp_weight = 0.0

    def __call__(self, params, need_jac):
        r, J, clips = _contour_residuals(self.prob, params, need_jac)
        extra_r, extra_J = [], []
        omega, t = params[:3], params[3:]
        R = rodrigues_to_matrix(omega)
        center = -R.T @ t
        below = np.maximum(self.lower - center, 0.0)
        above = np.maximum(center - self.upper, 0.0)
        if np.any(below > 0) or np.any(above > 0):
            sw = math.sqrt(REGION_WEIGHT)
            extra_r.append(sw * (below + above))
            if need_jac:
                dR = rotation_derivatives(omega)
                dc = np.empty((3, 6))
                for i in range(3):
                    dc[:, i] = -dR[i].T @ t
                dc[:, 3:] = -R.T
                sign = np.where(below > 0, -1.0, np.where(above > 0, 1.0, 0.0))
                extra_J.append(sw * sign[:, None] * dc)
        if self.rp_weight > 0 and self.prob.rp_rays is not None:
            pts, _, w, depth = _back_project(R, t, self.prob.rp_rays, self.prob.z0)
            diff = (pts - self.prob.rp_world)[:, :2]
            rms = math.sqrt(float(np.mean(np.sum(diff**2, axis=1))))
            excess = rms - self.rp_tolerance
            if excess > 0:
                sw = math.sqrt(self.rp_weight)
                extra_r.append(np.array([sw * excess]))
                if need_jac:
                    Jb = _back_project_jacobian(R, rotation_derivatives(omega), t,
                                                self.prob.rp_rays, w, depth)
                    d_rms = np.einsum("nk,nkp->p", diff, Jb) / (len(diff) * rms)
                    extra_J.append(sw * d_rms[None, :])
        if extra_r:
            r = np.concatenate([r] + extra_r)
            if need_jac:
                J = np.vstack([J] + extra_J)
        return r, J, clips


def _levenberg_marquardt(objective, x0, max_iterations, step_tol):
    try:
        r, J, clips = objective(x0, True)
    except (ParallelRayError, NegativeDepthError) as exc:
        raise InfeasibleInitializerError(f"initial pose cannot back-project contours: {exc}") from None
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise RefinementDivergedError("non-finite cost at the initial pose")
    x = x0.copy()
    history = [cost]
    A = J.T @ J
    g = J.T @ r
    lam = 1e-3  # relative to diag(JᵀJ), Marquardt scaling
    iterations = 0
    stop = "max_iterations"
    converged = False
    while iterations < max_iterations:
        if cost == 0.0:
            stop, converged = "zero_cost", True
            break
        iterations += 1
        diag = np.maximum(np.diag(A), 1e-12 * max(float(np.max(np.diag(A))), 1e-300))
        try:
            step = np.linalg.solve(A + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        x_new = x + step
        try:
            r_new, _, _ = objective(x_new, False)
            new_cost = float(r_new @ r_new)
        except (ParallelRayError, NegativeDepthError):
            new_cost = math.inf
        if new_cost < cost:
            decrease = cost - new_cost
            x = x_new
            r, J, clips = objective(x, True)
            cost = float(r @ r)
            history.append(cost)
            A = J.T @ J
            g = J.T @ r
            lam = max(lam / 10.0, 1e-15)
            if np.linalg.norm(step) < step_tol:
                stop, converged = "step_tol", True
                break
            if decrease <= RELATIVE_COST_TOL * max(cost + decrease, 1e-300):
                stop, converged = "cost_tol", True
                break
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left at this scale: a stationary point
                stop, converged = "stalled", True
                break
    if not math.isfinite(cost):
        raise RefinementDivergedError("refinement produced a non-finite cost")
    return x, cost, iterations, clips, history, stop, converged


def refine(initial: Pose, scene: Scene, options: RefineOptions = RefineOptions()):
    """Refine ``initial`` by minimizing the squared contour residuals.

    Returns ``(pose, diagnostics)``. Hitting the iteration cap is reported in
    the diagnostics, not raised.
    """
    prob = _Problem(scene, options)
    region = options.feasible_region or FeasibleRegion.below_ceiling(scene.z0)
    objective = _Objective(prob, region, options.rp_tolerance)
    x0 = initial.params
    try:
        r0, _, _ = _contour_residuals(prob, x0, False)
    except (ParallelRayError, NegativeDepthError) as exc:
        raise InfeasibleInitializerError(f"initial pose cannot back-project contours: {exc}") from None
    initial_cost = float(r0 @ r0)

    x, cost, iterations, clips, history, stop, converged = _levenberg_marquardt(
        objective, x0, options.max_iterations, options.convergence_tol)
    total_iterations = iterations
    pose = Pose.from_params(x)
    status = "ok"
    if scene.ref_points:
        ramps = 0
        objective.rp_weight = RP_INITIAL_WEIGHT
        while rp_rms_error(pose, scene) > options.rp_tolerance:
            if ramps > RP_MAX_RAMPS:
                status = "rp_infeasible"
                break
            x, cost, iterations, clips, history, stop, converged = _levenberg_marquardt(
                objective, x, options.max_iterations, options.convergence_tol)
            total_iterations += iterations
            pose = Pose.from_params(x)
            objective.rp_weight *= RP_RAMP
            ramps += 1
    if status == "ok" and not region.contains(-pose.rotation.T @ pose.t):
        status = "region_infeasible"
    if clips:
        log.debug("%d residuals clipped at %g", clips, RESIDUAL_CLIP)

    r_final, _, _ = _contour_residuals(prob, x, False)
    diagnostics = Diagnostics(
        iterations=total_iterations,
        initial_cost=initial_cost,
        final_cost=float(r_final @ r_final),
        clip_count=clips,
        constraint_status=status,
        converged=converged,
        stop_reason=stop,
        cost_history=history,
    )
    return pose.canonical(), diagnostics
