"""Pinhole camera, Rodrigues rotations and ceiling-plane back-projection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BehindCameraError, GeometryError, NegativeDepthError, ParallelRayError

MIN_DEPTH = 1e-9
SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    u0: float
    v0: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.u0 < self.width and 0 < self.v0 < self.height):
            raise GeometryError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]])

    def normalize(self, pixels) -> np.ndarray:
        """Rays ``K^-1 [u, v, 1]`` for pixel(s) of shape ``(2,)`` or ``(n, 2)``."""
        pixels = np.asarray(pixels, dtype=float)
        x = (pixels[..., 0] - self.u0) / self.fx
        y = (pixels[..., 1] - self.v0) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def in_image(self, pixels) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=float)
        return ((pixels[..., 0] >= 0) & (pixels[..., 0] <= self.width)
                & (pixels[..., 1] >= 0) & (pixels[..., 1] <= self.height))

    @classmethod
    def table_one(cls) -> "CameraIntrinsics":
        """The 640x480, f=800 px simulation camera."""
        return cls(fx=800.0, fy=800.0, u0=320.0, v0=240.0, width=640, height=480)

    @classmethod
    def simulation(cls) -> "CameraIntrinsics":
        """f=800 px with a centred principal point and a 1800x2400 frame.

        The 640x480 frame cannot hold two LEDs of the reference room from
        1.2-2.2 m below the ceiling. This frame is the smallest 3:4 one that
        keeps all four in view from the room centre at 1.5 m height.
        """
        return cls(fx=800.0, fy=800.0, u0=900.0, v0=1200.0, width=1800, height=2400)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues_to_matrix(omega) -> np.ndarray:
    """Rotation matrix of the axis-angle vector ``omega``."""
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    W = skew(omega)
    if angle < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    A = math.sin(angle) / angle
    B = (1.0 - math.cos(angle)) / angle**2
    return np.eye(3) + A * W + B * (W @ W)


def matrix_to_rodrigues(R) -> np.ndarray:
    """Axis-angle vector with norm in ``[0, pi]`` for rotation matrix ``R``."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-6) \
            or np.linalg.det(R) < 0:
        raise GeometryError("matrix is not a proper rotation")
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = math.acos(cos_angle)
    axis_sin = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if angle < 1e-6:
        # sin(angle)/angle ~ 1 - angle^2/6
        return axis_sin * (1.0 + angle**2 / 6.0)
    if angle < math.pi - 1e-4:
        return axis_sin * (angle / math.sin(angle))
    # near pi: axis from the symmetric part R + R^T = 2 n n^T (1 - cos) + 2 cos I
    S = (R + R.T) / 2.0 - cos_angle * np.eye(3)
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / math.sqrt(S[k, k])
    axis /= np.linalg.norm(axis)
    if np.dot(axis, axis_sin) < 0:
        axis = -axis
    # refine the angle with the sine part, which is accurate away from exactly pi
    angle = math.atan2(float(np.dot(axis, axis_sin)), cos_angle)
    return axis * angle


def rotation_derivatives(omega) -> np.ndarray:
    """``dR/d(omega_i)`` stacked as shape ``(3, 3, 3)`` indexed ``[i]``.

    Uses dR/dw_i = (w_i [w]x + [w x (I - R) e_i]x) R / |w|^2, which reduces
    to [e_i]x at the identity.
    """
    omega = np.asarray(omega, dtype=float)
    angle2 = float(omega @ omega)
    R = rodrigues_to_matrix(omega)
    basis = np.eye(3)
    if angle2 < SMALL_ANGLE**2:
        return np.stack([skew(e) for e in basis])
    W = skew(omega)
    I_minus_R = np.eye(3) - R
    out = []
    for i in range(3):
        v = np.cross(omega, I_minus_R @ basis[i])
        out.append((omega[i] * W + skew(v)) @ R / angle2)
    return np.stack(out)


@dataclass(frozen=True)
class Pose:
    """World-to-camera extrinsics ``x_c = R x + t`` with ``R`` given as a Rodrigues vector."""

    omega: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.array(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "t", np.array(self.t, dtype=float).reshape(3))

    @property
    def rotation(self) -> np.ndarray:
        return rodrigues_to_matrix(self.omega)

    @classmethod
    def from_matrix(cls, R, t) -> "Pose":
        return cls(matrix_to_rodrigues(R), t)

    @classmethod
    def from_center(cls, R, center) -> "Pose":
        R = np.asarray(R, dtype=float)
        return cls(matrix_to_rodrigues(R), -R @ np.asarray(center, dtype=float))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.zeros(3))

    def canonical(self) -> "Pose":
        """Same rotation with the Rodrigues vector norm reduced to ``[0, pi]``."""
        return Pose(matrix_to_rodrigues(self.rotation), self.t)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.omega, self.t])

    @classmethod
    def from_params(cls, params) -> "Pose":
        return cls(params[:3], params[3:])

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.omega, other.omega) and np.array_equal(self.t, other.t))

    __hash__ = None


def camera_center(pose: Pose) -> np.ndarray:
    """World position of the optical centre, ``-R^T t``."""
    return -pose.rotation.T @ pose.t


def to_camera(pose: Pose, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x @ pose.rotation.T + pose.t


def project(K: CameraIntrinsics, pose: Pose, x) -> np.ndarray:
    """Pixel coordinates of world point(s) ``x``; raises if any is behind the camera."""
    xc = to_camera(pose, x)
    z = xc[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCameraError("world point at or behind the camera plane")
    u = K.fx * xc[..., 0] / z + K.u0
    v = K.fy * xc[..., 1] / z + K.v0
    return np.stack([u, v], axis=-1)


def back_project_to_plane(K: CameraIntrinsics, pose: Pose, u, z0: float) -> np.ndarray:
    """Intersect pixel ray(s) with the horizontal plane ``z = z0``.

    Raises ParallelRayError for rays parallel to the plane and
    NegativeDepthError when the intersection is behind the camera.
    """
    R = pose.rotation
    d = K.normalize(u)
    r3 = R[:, 2]  # r3 . v is the world z of camera-frame vector v
    denom = d @ r3
    if np.any(np.abs(denom) <= 1e-9):
        raise ParallelRayError("pixel ray parallel to the ceiling plane")
    depth = (z0 + r3 @ pose.t) / denom
    if np.any(depth <= MIN_DEPTH):
        raise NegativeDepthError("ceiling intersection behind the camera")
    xc = depth[..., None] * d - pose.t
    out = xc @ R
    out[..., 2] = z0
    return out


def fov_bound(K: CameraIntrinsics) -> float:
    """sqrt(1 + tan^2 ax + tan^2 ay) for the half-image field of view."""
    tan_x = (K.width / 2.0) / K.fx
    tan_y = (K.height / 2.0) / K.fy
    return math.sqrt(1.0 + tan_x**2 + tan_y**2)
