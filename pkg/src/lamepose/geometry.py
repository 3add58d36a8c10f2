"""Lamé curve (superellipse) geometry on a horizontal ceiling plane.

A curve is ``|x'/a|^gamma + |y'/b|^gamma = 1`` in a local frame centred on
``(center_x, center_y)`` and rotated by ``phi`` about the vertical axis.
All functions accept scalars or numpy arrays of angles/points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GeometryError

TWO_PI = 2.0 * math.pi

# |u|^gamma saturates here so points far off a gamma=100 curve stay finite
POWER_SATURATION = 1e12

RECTANGLE_GAMMA = 100.0


@dataclass(frozen=True)
class LameCurve:
    center_x: float
    center_y: float
    z0: float
    a: float
    b: float
    gamma: float = 2.0
    phi: float = 0.0

    def __post_init__(self):
        values = (self.center_x, self.center_y, self.z0, self.a, self.b, self.gamma, self.phi)
        if not all(math.isfinite(float(v)) for v in values):
            raise GeometryError(f"non-finite curve parameter in {values}")
        if self.a <= 0 or self.b <= 0:
            raise GeometryError(f"semi-axes must be positive, got a={self.a}, b={self.b}")
        if self.gamma < 1:
            raise GeometryError(f"order gamma must be >= 1, got {self.gamma}")
        a, b, phi = float(self.a), float(self.b), float(self.phi)
        if a < b:
            a, b, phi = b, a, phi + math.pi / 2
        for name, value in (("center_x", self.center_x), ("center_y", self.center_y),
                            ("z0", self.z0), ("gamma", self.gamma)):
            object.__setattr__(self, name, float(value))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "phi", normalize_angle(phi))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.center_x, self.center_y, self.z0])

    def to_local(self, x, y):
        """Offsets of world ``(x, y)`` in the curve's rotated frame."""
        dx = np.asarray(x, dtype=float) - self.center_x
        dy = np.asarray(y, dtype=float) - self.center_y
        c, s = math.cos(self.phi), math.sin(self.phi)
        return c * dx + s * dy, -s * dx + c * dy


def normalize_angle(theta):
    """Reduce angles to ``[0, 2*pi)``."""
    out = np.mod(theta, TWO_PI)
    # mod can round up to exactly 2*pi for tiny negative inputs
    out = np.where(out >= TWO_PI, 0.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def saturated_power(u, gamma):
    """``|u|**gamma`` computed as ``exp(gamma*log|u|)``, capped at POWER_SATURATION."""
    u = np.abs(np.asarray(u, dtype=float))
    with np.errstate(divide="ignore", over="ignore"):
        out = np.exp(np.minimum(gamma * np.log(u), math.log(POWER_SATURATION)))
    return out


def _log_radial_terms(curve: LameCurve, theta_local):
    c = np.abs(np.cos(theta_local))
    s = np.abs(np.sin(theta_local))
    with np.errstate(divide="ignore"):
        p = curve.gamma * (np.log(c) - math.log(curve.a))
        q = curve.gamma * (np.log(s) - math.log(curve.b))
    return p, q, np.logaddexp(p, q)


def polar_radius(curve: LameCurve, theta_local):
    """Distance from the centre to the curve along local polar angle ``theta_local``.

    Evaluated in the log domain, so gamma in the hundreds does not overflow.
    """
    theta_local = np.asarray(theta_local, dtype=float)
    _, _, log_sum = _log_radial_terms(curve, theta_local)
    rho = np.exp(-log_sum / curve.gamma)
    return float(rho) if rho.ndim == 0 else rho


def polar_radius_derivative(curve: LameCurve, theta_local):
    """d(rho)/d(theta) in the local frame.

    At gamma=1 corners the derivative jumps; the value returned there is the
    one-sided limit from larger angles.
    """
    theta_local = np.asarray(theta_local, dtype=float)
    g = curve.gamma
    cos_t, sin_t = np.cos(theta_local), np.sin(theta_local)
    # sign just above a zero crossing follows the derivative of cos/sin
    sgn_c = np.where(cos_t != 0, np.sign(cos_t), -np.sign(sin_t))
    sgn_s = np.where(sin_t != 0, np.sign(sin_t), np.sign(cos_t))
    _, _, log_sum = _log_radial_terms(curve, theta_local)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_c = np.where(g == 1.0, 0.0, (g - 1) * np.log(np.abs(cos_t)))
        log_s = np.where(g == 1.0, 0.0, (g - 1) * np.log(np.abs(sin_t)))
    wc = np.exp(log_c - g * math.log(curve.a) - log_sum)
    ws = np.exp(log_s - g * math.log(curve.b) - log_sum)
    rho = np.exp(-log_sum / g)
    d_rho = -rho * (-sgn_c * sin_t * wc + sgn_s * cos_t * ws)
    return float(d_rho) if d_rho.ndim == 0 else d_rho


def point_at(curve: LameCurve, theta_global):
    """World point on the curve at global polar angle ``theta_global``.

    The radius is taken at the local angle ``theta - phi`` and applied along
    the global direction ``theta``. Returns shape ``(3,)`` or ``(n, 3)``.
    """
    theta = np.asarray(theta_global, dtype=float)
    rho = polar_radius(curve, theta - curve.phi)
    pts = np.stack(
        [curve.center_x + rho * np.cos(theta),
         curve.center_y + rho * np.sin(theta),
         np.full_like(theta, curve.z0)],
        axis=-1,
    )
    return pts


def algebraic_distance(curve: LameCurve, point):
    """Signed Lamé residual of world point(s); z is ignored.

    -1 at the centre, 0 on the curve, positive outside.
    """
    point = np.asarray(point, dtype=float)
    u, v = curve.to_local(point[..., 0], point[..., 1])
    out = saturated_power(u / curve.a, curve.gamma) + saturated_power(v / curve.b, curve.gamma) - 1.0
    return float(out) if out.ndim == 0 else out


def sample_polar(curve: LameCurve, beta: float, M: int) -> np.ndarray:
    """``M`` curve points at local polar angles ``beta + 2*pi*k/M``."""
    if M < 4:
        raise GeometryError(f"need at least 4 samples, got M={M}")
    k = np.arange(M)
    local = normalize_angle(beta + TWO_PI * k / M)
    return point_at(curve, curve.phi + local)


def arc_length_differential(curve: LameCurve, theta_local):
    """d(l)/d(theta) = sqrt(rho'^2 + rho^2) of the curve in its own plane."""
    rho = polar_radius(curve, theta_local)
    d_rho = polar_radius_derivative(curve, theta_local)
    return np.hypot(rho, d_rho)


def perimeter(curve: LameCurve, n: int = 20000) -> float:
    """Perimeter by midpoint quadrature of the arc-length differential."""
    theta = (np.arange(n) + 0.5) * (TWO_PI / n)
    return float(np.sum(arc_length_differential(curve, theta)) * TWO_PI / n)


def polyline(curve: LameCurve, n: int) -> np.ndarray:
    """``n`` points uniformly spaced in global polar angle, counterclockwise."""
    theta = TWO_PI * np.arange(n) / n
    return point_at(curve, curve.phi + theta)
