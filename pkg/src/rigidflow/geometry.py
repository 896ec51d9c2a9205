"""Rotation and rigid-motion algebra.

Quaternions are stored as ``(w, x, y, z)`` float arrays with the scalar part
first. Axis-angle vectors carry the rotation angle as their norm. Every
function accepts a single value or a stack along leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

INF_ORDER = math.inf


@dataclass(frozen=True)
class SymmetrySpec:
    """Rotational symmetry of order ``order`` about ``axis`` (object frame)."""

    axis: tuple[float, float, float]
    order: float  # integer >= 2 or math.inf

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError(f"symmetry axis must be a unit 3-vector, got {self.axis}")
        if not (self.order == INF_ORDER or (float(self.order).is_integer() and self.order >= 2)):
            raise ValueError(f"symmetry order must be an integer >= 2 or inf, got {self.order}")

    @property
    def is_continuous(self) -> bool:
        return self.order == INF_ORDER


@dataclass(frozen=True)
class RigidMotion:
    """Axis-angle rotation ``Q`` about center ``X`` followed by translation ``T``."""

    Q: np.ndarray
    T: np.ndarray
    X: np.ndarray

    def as_dict(self) -> dict:
        return {"Q": [float(v) for v in self.Q], "T": [float(v) for v in self.T],
                "X": [float(v) for v in self.X]}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidMotion":
        return cls(np.asarray(d["Q"], float), np.asarray(d["T"], float), np.asarray(d["X"], float))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @classmethod
    def for_resolution(cls, height: int, width: int, fov_scale: float = 0.9) -> "CameraIntrinsics":
        f = fov_scale * width
        return cls(f, f, width / 2.0, height / 2.0, width, height)


# --------------------------------------------------------------------------
# quaternion basics

def _leading_sign(v):
    """Sign of the first nonzero entry along the last axis (+1 for all-zero)."""
    v = np.asarray(v, dtype=float)
    nz = v != 0.0
    first = np.argmax(nz, axis=-1)
    lead = np.take_along_axis(v, first[..., None], axis=-1)[..., 0]
    return np.where(lead < 0.0, -1.0, 1.0)


def quat_canonical(q):
    """Flip sign so that w >= 0; for w == 0 the first nonzero vector entry is positive."""
    q = np.asarray(q, dtype=float)
    return q * _leading_sign(q)[..., None]


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a, b):
    """Hamilton product ``a * b`` (apply ``b`` first, then ``a``)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q):
    q = np.array(q, dtype=float)
    q[..., 1:] *= -1.0
    return q


def quat_from_axis_angle(v):
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(h)/angle = 0.5 * sinc(h), safe at zero
    k = 0.5 * np.sinc(half / np.pi)
    return np.concatenate([np.cos(half), k * v], axis=-1)


def axis_angle_from_quat(q):
    """Axis-angle vector with angle in [0, pi]; zero vector for identity."""
    # canonical sign keeps w >= 0 so the angle stays in [0, pi], and fixes the
    # axis direction at exactly pi
    q = quat_canonical(q)
    w = q[..., :1]
    xyz = q[..., 1:]
    s = np.linalg.norm(xyz, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    safe_s = np.where(s > 0.0, s, 1.0)
    safe_w = np.where(w > 0.0, w, 1.0)
    scale = np.where(s > 0.0, angle / safe_s, 2.0 / safe_w)
    return xyz * scale


def quat_to_matrix(q):
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def quat_from_matrix(R):
    """Shepperd's method, single 3x3 matrix."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_canonical(quat_normalize(np.array(q)))


def random_quaternion(rng: np.random.Generator, size=None):
    """Uniformly distributed unit quaternions (canonical sign)."""
    shape = (4,) if size is None else (size, 4)
    return quat_canonical(quat_normalize(rng.standard_normal(shape)))


# --------------------------------------------------------------------------
# point transport

def rotate(p, Q):
    """Rotate points ``p`` by axis-angle ``Q`` with Rodrigues' formula.

    Shapes broadcast, e.g. ``p`` of ``(H, W, 3)`` against ``Q`` of ``(H, W, 3)``
    or ``(3,)``.
    """
    p = np.asarray(p, dtype=float)
    Q = np.asarray(Q, dtype=float)
    angle = np.linalg.norm(Q, axis=-1, keepdims=True)
    c = np.cos(angle)
    # sin(a)/a and (1-cos(a))/a^2, both stable near zero
    a = np.sinc(angle / np.pi)
    b = 0.5 * np.sinc(angle / (2.0 * np.pi)) ** 2
    kxp = np.cross(Q, p)
    kdp = np.sum(Q * p, axis=-1, keepdims=True)
    return c * p + a * kxp + b * kdp * Q


def transport_point(P_t, Q, T, X):
    """Corresponding point in the previous frame and the scene flow.

    ``P_prev = R(P_t - X) + X + T`` and ``S = P_prev - P_t``.
    """
    P_t = np.asarray(P_t, dtype=float)
    d = P_t - np.asarray(X, dtype=float)
    # flow from the rotated offset, so a static object gives exactly zero
    S = (rotate(d, Q) - d) + np.asarray(T, dtype=float)
    return P_t + S, S


def transport_motion(P_t, m: RigidMotion):
    return transport_point(P_t, m.Q, m.T, m.X)


# --------------------------------------------------------------------------
# swing-twist and symmetry canonicalization

class SwingTwist(NamedTuple):
    alpha: float        # twist angle about the axis, (-pi, pi]
    theta: float        # swing angle, [0, pi]
    r_perp: np.ndarray  # swing axis (unit, perpendicular to the twist axis) or zeros
    swing: np.ndarray   # quaternion
    twist: np.ndarray   # quaternion
    degenerate: bool


def _wrap_pi(a: float) -> float:
    """Wrap into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def twist_quat(axis, alpha: float):
    axis = np.asarray(axis, dtype=float)
    return np.concatenate([[math.cos(alpha / 2.0)], math.sin(alpha / 2.0) * axis])


def swing_twist(q, axis) -> SwingTwist:
    """Split ``q`` into ``swing * twist`` with the twist about ``axis``.

    The twist is applied first, so ``quat_mul(swing, twist)`` reproduces ``q``.
    When the quaternion has no component along ``axis`` and ``w == 0`` the twist
    is undefined; the result then uses a half turn and is flagged degenerate.
    """
    axis = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise ValueError("twist axis must be unit length")
    q = quat_canonical(quat_normalize(q))
    proj = float(np.dot(q[1:], axis))
    w = float(q[0])
    degenerate = math.hypot(w, proj) < 1e-12
    if degenerate:
        alpha = math.pi
    else:
        alpha = _wrap_pi(2.0 * math.atan2(proj, w))
    twist = twist_quat(axis, alpha)
    swing = quat_mul(q, quat_conj(twist))
    swing = quat_canonical(swing)
    s = float(np.linalg.norm(swing[1:]))
    theta = 2.0 * math.atan2(s, swing[0])
    r_perp = swing[1:] / s if s > 0 else np.zeros(3)
    return SwingTwist(alpha, theta, r_perp, swing, twist, degenerate)


def wrap_twist(alpha: float, order: float) -> float:
    """Reduce a twist angle modulo ``2*pi/order`` into ``(-pi/order, pi/order]``."""
    if order == INF_ORDER:
        return 0.0
    period = 2.0 * math.pi / order
    half = math.pi / order
    if -half < alpha <= half:
        return alpha
    return alpha - period * math.ceil((alpha - half) / period)


def canonicalize_rotation(q, syms: Sequence[SymmetrySpec], frame_rotation=None):
    """Replace the twist of ``q`` about each symmetry axis by its minimal equivalent.

    ``syms`` axes live in the object frame; ``frame_rotation`` (a quaternion)
    maps them into the frame of the point set that ``q`` acts on. Axes are
    processed in the order given. The result has canonical sign.
    """
    q = quat_canonical(quat_normalize(q))
    for sym in syms:
        axis = np.asarray(sym.axis, dtype=float)
        if frame_rotation is not None:
            axis = quat_to_matrix(frame_rotation) @ axis
            axis = axis / np.linalg.norm(axis)
        st = swing_twist(q, axis)
        alpha_hat = wrap_twist(st.alpha, sym.order)
        if alpha_hat == st.alpha and not st.degenerate:
            continue
        q = quat_canonical(quat_mul(st.swing, twist_quat(axis, alpha_hat)))
    return q


# --------------------------------------------------------------------------
# pinhole camera

def project(P, cam: CameraIntrinsics):
    """Pixel coordinates ``(u, v)`` of camera-frame points; u runs along width."""
    P = np.asarray(P, dtype=float)
    z = P[..., 2]
    if np.any(z <= 0):
        raise ValueError("point behind camera (z <= 0)")
    u = cam.fx * P[..., 0] / z + cam.cx
    v = cam.fy * P[..., 1] / z + cam.cy
    return u, v


def backproject(u, v, z, cam: CameraIntrinsics):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    return np.stack([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z], axis=-1)
