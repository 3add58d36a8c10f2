"""Correspondence-free initial pose from LED contours.

Each observed LED is paired with the next one (cyclically). The contour pixel
pointing towards the neighbour's projected centre is matched with the curve
point on the segment between the two LED centres; collinearity is preserved by
projection, so the two correspond. Walking both curves counterclockwise from
that anchor in equal steps gives ``M`` virtual 3D-2D pairs per LED, which feed
a planar PnP solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .camera import CameraIntrinsics, Pose, matrix_to_rodrigues, project, to_camera
from .database import LedRecord
from .exceptions import (
    BehindCameraError,
    DegenerateConfigurationError,
    GeometryError,
    InsufficientObservationsError,
)
from .geometry import sample_polar
from .scene import Scene, require_leds


@dataclass(frozen=True)
class FreePnpConfig:
    samples_per_led: int = 12

    def __post_init__(self):
        if self.samples_per_led < 4:
            raise GeometryError(f"samples_per_led must be >= 4, got {self.samples_per_led}")


@dataclass(frozen=True)
class Correspondence:
    world: np.ndarray
    pixel: np.ndarray


def projected_center(contour) -> np.ndarray:
    """Centroid of the contour pixels."""
    return np.asarray(contour, dtype=float).mean(axis=0)


def select_start_pixel(contour, center, center_neighbor) -> int:
    """Index of the contour pixel whose direction from ``center`` is closest to the neighbour's.

    Ties go to the smallest index.
    """
    contour = np.asarray(contour, dtype=float)
    direction = np.asarray(center_neighbor, dtype=float) - np.asarray(center, dtype=float)
    if not np.any(direction):
        raise GeometryError("neighbour centre coincides with this LED's centre")
    rel = contour - center
    cross = rel[:, 0] * direction[1] - rel[:, 1] * direction[0]
    dot = rel @ direction
    return int(np.argmin(np.arctan2(np.abs(cross), dot)))


def start_polar_angle(record: LedRecord, neighbor: LedRecord) -> float:
    """Local polar angle of the curve point facing the neighbour LED's centre."""
    dx = neighbor.curve.center_x - record.curve.center_x
    dy = neighbor.curve.center_y - record.curve.center_y
    if dx == 0 and dy == 0:
        raise GeometryError(f"LEDs {record.id} and {neighbor.id} share a centre")
    return math.atan2(dy, dx) - record.curve.phi


def signed_area(contour) -> float:
    """Shoelace area in raw pixel coordinates; positive for counterclockwise order."""
    c = np.asarray(contour, dtype=float)
    x, y = c[:, 0], c[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def winding_number(contour) -> float:
    c = np.asarray(contour, dtype=float)
    rel = c - c.mean(axis=0)
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    steps = np.diff(np.append(ang, ang[0]))
    steps = (steps + math.pi) % (2 * math.pi) - math.pi
    return float(steps.sum() / (2 * math.pi))


def check_boundary_order(contour) -> None:
    """Reject contours that do not wind exactly once around their centroid."""
    w = winding_number(contour)
    if abs(abs(w) - 1.0) > 1e-6:
        raise GeometryError(f"contour is not in boundary order (winding number {w:.3f})")


def reorder_ccw(contour, start_index: int) -> np.ndarray:
    """Contour starting at ``start_index`` and running counterclockwise.

    Counterclockwise means positive shoelace area in raw ``(u, v)`` pixel
    coordinates, which is the orientation an upward-looking camera gives to a
    ceiling curve traversed with increasing polar angle.
    """
    contour = np.asarray(contour, dtype=float)
    area = signed_area(contour)
    if area == 0.0:
        raise GeometryError("contour encloses zero area")
    n = len(contour)
    if area > 0:
        order = (start_index + np.arange(n)) % n
    else:
        order = (start_index - np.arange(n)) % n
    return contour[order]


def sample_indices(n: int, M: int) -> np.ndarray:
    """``floor(k*n/M)`` for ``k = 0..M-1``."""
    if n < M:
        raise GeometryError(f"cannot pick {M} samples from {n} contour points")
    return (np.arange(M) * n) // M


def build_virtual_correspondences(scene: Scene, config: FreePnpConfig = FreePnpConfig()):
    """``N*M`` approximate world/pixel pairs, LED-major order."""
    require_leds(scene, 2)
    M = config.samples_per_led
    n_leds = len(scene.observations)
    centers = [projected_center(o.contour) for o in scene.observations]
    out = []
    for i, (rec, obs) in enumerate(zip(scene.records, scene.observations)):
        j = (i + 1) % n_leds
        if len(obs.contour) < M:
            raise GeometryError(
                f"LED {rec.id}: {len(obs.contour)} contour points, need at least {M}")
        check_boundary_order(obs.contour)
        start = select_start_pixel(obs.contour, centers[i], centers[j])
        beta = start_polar_angle(rec, scene.records[j])
        world = sample_polar(rec.curve, beta, M)
        pixels = reorder_ccw(obs.contour, start)[sample_indices(len(obs.contour), M)]
        out.extend(Correspondence(w, p) for w, p in zip(world, pixels))
    return out


def _normalizer(points: np.ndarray) -> np.ndarray:
    mean = points.mean(axis=0)
    scale = math.sqrt(2.0) / max(np.mean(np.linalg.norm(points - mean, axis=1)), 1e-300)
    return np.array([[scale, 0.0, -scale * mean[0]], [0.0, scale, -scale * mean[1]], [0.0, 0.0, 1.0]])


def estimate_homography(plane_xy: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Normalized DLT homography mapping plane ``(x, y, 1)`` to pixels."""
    Tw = _normalizer(plane_xy)
    Tp = _normalizer(pixels)
    X = np.column_stack([plane_xy, np.ones(len(plane_xy))]) @ Tw.T
    U = np.column_stack([pixels, np.ones(len(pixels))]) @ Tp.T
    n = len(X)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = X
    A[0::2, 6:9] = -U[:, [0]] * X
    A[1::2, 3:6] = X
    A[1::2, 6:9] = -U[:, [1]] * X
    _, s, Vt = np.linalg.svd(A)
    if s[-2] <= 1e-10 * s[0]:
        raise DegenerateConfigurationError("homography system is rank deficient")
    Hn = Vt[-1].reshape(3, 3)
    return np.linalg.solve(Tp, Hn @ Tw)


def pose_from_homography(H: np.ndarray, K: CameraIntrinsics, z0: float, plane_xy) -> Pose:
    """Extrinsics from a plane homography ``H ~ K [r1 r2 r3*z0 + t]``.

    The overall sign is the one giving the observed points ``plane_xy``
    positive depth.
    """
    G = np.linalg.solve(K.matrix, H)
    depths = np.column_stack([plane_xy, np.ones(len(plane_xy))]) @ G[2]
    if np.sum(np.sign(depths)) < 0:
        G = -G
    U, s, Vt = np.linalg.svd(G[:, :2], full_matrices=False)
    r12 = U @ Vt
    scale = 2.0 / (s[0] + s[1])
    r3 = np.cross(r12[:, 0], r12[:, 1])
    R = np.column_stack([r12, r3])
    t_plane = scale * G[:, 2]
    return Pose(matrix_to_rodrigues(R), t_plane - z0 * r3)


def _reprojection_residuals(params, K, world, pixels):
    pose = Pose.from_params(params)
    xc = to_camera(pose, world)
    z = np.maximum(xc[:, 2], 1e-9)
    u = K.fx * xc[:, 0] / z + K.u0 - pixels[:, 0]
    v = K.fy * xc[:, 1] / z + K.v0 - pixels[:, 1]
    return np.concatenate([u, v])


def planar_pnp(correspondences, K: CameraIntrinsics, polish: bool = True) -> Pose:
    """Pose from coplanar 3D-2D pairs: DLT homography, decomposition, reprojection polish."""
    if len(correspondences) < 4:
        raise DegenerateConfigurationError(f"need >= 4 correspondences, got {len(correspondences)}")
    world = np.array([c.world for c in correspondences], dtype=float)
    pixels = np.array([c.pixel for c in correspondences], dtype=float)
    z0 = float(world[0, 2])
    if np.ptp(world[:, 2]) > 1e-9 * max(1.0, abs(z0)):
        raise DegenerateConfigurationError("planar PnP needs points on one horizontal plane")
    xy = world[:, :2]
    centered = xy - xy.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateConfigurationError("world points are collinear")
    pose = pose_from_homography(estimate_homography(xy, pixels), K, z0, xy)
    if np.any(to_camera(pose, world)[:, 2] <= 0):
        raise DegenerateConfigurationError("no homography decomposition puts all points in front")
    if polish:
        fit = least_squares(_reprojection_residuals, pose.params, method="lm",
                            args=(K, world, pixels), xtol=1e-12, ftol=1e-12)
        candidate = Pose.from_params(fit.x).canonical()
        if np.all(to_camera(candidate, world)[:, 2] > 0):
            pose = candidate
    return pose.canonical()


def freepnp(scene: Scene, config: FreePnpConfig = FreePnpConfig()) -> Pose:
    """Initial pose estimate from contours alone."""
    if len(scene.observations) < 2:
        raise InsufficientObservationsError(
            f"need at least 2 observed LEDs, got {len(scene.observations)}")
    return planar_pnp(build_virtual_correspondences(scene, config), scene.intrinsics)


def reprojection_rms(pose: Pose, correspondences, K: CameraIntrinsics) -> float:
    world = np.array([c.world for c in correspondences])
    pixels = np.array([c.pixel for c in correspondences])
    try:
        err = project(K, pose, world) - pixels
    except BehindCameraError:
        return math.inf
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))
