"""Rotation representations and rotation-based pose error measures.

Conversions between the continuous 6D representation, rotation matrices,
axis-angle, and Euler angles, plus the two pose-error metrics used by the
evaluation suite (Frobenius deviation from identity and relative angle).

All matrix functions work on plain numpy arrays; batched inputs of shape
(..., 6) / (..., 3, 3) are supported where noted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput

ORTHO_TOL = 1e-9
_TWO_SQRT2 = 2.0 * np.sqrt(2.0)


class EulerConvention(enum.Enum):
    """Order in which the intrinsic elementary rotations are applied.

    ZYX: yaw about z, then pitch about y, then roll about x (default;
    the usual head-pose order). XYZ is the reverse composition, kept as
    a cross-check alternative.
    """

    ZYX = "zyx"
    XYZ = "xyz"


@dataclass(frozen=True)
class EulerAngles:
    yaw: float
    pitch: float
    roll: float
    convention: EulerConvention = EulerConvention.ZYX
    gimbal_lock: bool = False


@dataclass(frozen=True)
class AxisAngle:
    axis: np.ndarray  # unit 3-vector; (0,0,1) by convention when angle == 0
    angle: float      # radians in [0, pi]


def is_rotation_matrix(m, tol: float = ORTHO_TOL) -> bool:
    """True when m is orthonormal with det +1 within tol."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    if not np.all(np.abs(m.T @ m - np.eye(3)) <= tol):
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def rot6d_to_matrix(r):
    """Gram-Schmidt the two 3-vectors of a 6D rotation into a matrix.

    Accepts shape (6,) or (..., 6); returns (3, 3) or (..., 3, 3).
    The first three entries give the first column direction, the second
    three are orthogonalized against it, and the third column is their
    cross product.

    Raises DegenerateInput when the first vector is (numerically) zero or
    the second is parallel to it.
    """
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 6:
        raise DegenerateInput(f"expected 6 components, got shape {r.shape}")
    a = r[..., :3]
    b = r[..., 3:]
    na = np.linalg.norm(a, axis=-1)
    if np.any(na < 1e-12):
        raise DegenerateInput("first 6D vector has near-zero norm")
    c1 = a / na[..., None]
    b_perp = b - np.sum(c1 * b, axis=-1)[..., None] * c1
    nb = np.linalg.norm(b_perp, axis=-1)
    if np.any(nb < 1e-12):
        raise DegenerateInput("second 6D vector is parallel to the first")
    c2 = b_perp / nb[..., None]
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def matrix_to_rot6d(m):
    """First two columns of a rotation matrix, flattened to 6 components."""
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


IDENTITY_ROT6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def matrix_to_axis_angle(m) -> AxisAngle:
    """Axis-angle of a rotation matrix; angle in [0, pi].

    The angle comes from the (clamped) trace; the axis from the skew part,
    with the near-pi branch recovered from the largest diagonal of
    (R + I) / 2 for stability.
    """
    m = np.asarray(m, dtype=float)
    cos_t = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_t))
    if angle < 1e-12:
        return AxisAngle(axis=np.array([0.0, 0.0, 1.0]), angle=0.0)
    skew = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    sin_t = np.linalg.norm(skew) / 2.0
    if np.pi - angle > 1e-6:
        axis = skew / (2.0 * np.sin(angle))
        return AxisAngle(axis=axis / np.linalg.norm(axis), angle=angle)
    # Near pi the skew part vanishes; (R + I)/2 -> outer(axis, axis).
    b = (m + np.eye(3)) / 2.0
    k = int(np.argmax(np.diag(b)))
    axis = b[:, k] / np.sqrt(max(b[k, k], 1e-30))
    axis = axis / np.linalg.norm(axis)
    # Fix the sign from the skew part when it still carries information.
    if sin_t > 1e-12 and np.dot(axis, skew) < 0:
        axis = -axis
    return AxisAngle(axis=axis, angle=angle)


def axis_angle_to_matrix(axis, angle: float):
    """Rodrigues rotation matrix for a unit axis and an angle in radians."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.eye(3)
    k = axis / n
    kx = _skew(k)
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def rotvec_to_matrix(r):
    """Rotation matrix of an axis-angle 3-vector (angle = vector norm)."""
    r = np.asarray(r, dtype=float)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        return np.eye(3)
    return axis_angle_to_matrix(r / angle, angle)


def _skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _skew_batch(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_right_jacobian(r):
    """Right Jacobian of the exponential map, batched over (..., 3).

    J_r(r) = I - (1-cos t)/t^2 [r]x + (t - sin t)/t^3 [r]x^2, with the
    Taylor limits 1/2 and 1/6 near t = 0.
    """
    r = np.asarray(r, dtype=float)
    t2 = np.sum(r * r, axis=-1)
    t = np.sqrt(t2)
    small = t < 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / np.where(small, 1.0, t2))
        c2 = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / np.where(small, 1.0, t2 * t))
    rx = _skew_batch(r)
    eye = np.broadcast_to(np.eye(3), rx.shape)
    return eye - c1[..., None, None] * rx + c2[..., None, None] * (rx @ rx)


def rotvec_apply(rotvecs, points):
    """Rotate each point by its own axis-angle vector. Shapes (N,3),(N,3)."""
    rotvecs = np.asarray(rotvecs, dtype=float)
    points = np.asarray(points, dtype=float)
    t = np.linalg.norm(rotvecs, axis=-1)
    safe = np.where(t < 1e-30, 1.0, t)
    k = rotvecs / safe[..., None]
    cos_t = np.cos(t)[..., None]
    sin_t = np.sin(t)[..., None]
    kxp = np.cross(k, points)
    kdp = np.sum(k * points, axis=-1)[..., None]
    rotated = points * cos_t + kxp * sin_t + k * kdp * (1.0 - cos_t)
    return np.where(t[..., None] < 1e-30, points, rotated)


def rotvec_apply_jacobian(rotvecs, points):
    """Rotated points and d(R(r) p)/dr for per-row rotation vectors.

    Returns (rotated (N,3), jac (N,3,3)) with jac = -R(r) [p]x J_r(r).
    """
    rotvecs = np.asarray(rotvecs, dtype=float)
    points = np.asarray(points, dtype=float)
    rotated = rotvec_apply(rotvecs, points)
    jr = so3_right_jacobian(rotvecs)
    rmats = _rotvec_to_matrix_batch(rotvecs)
    jac = -rmats @ _skew_batch(points) @ jr
    return rotated, jac


def _rotvec_to_matrix_batch(r):
    t2 = np.sum(r * r, axis=-1)
    t = np.sqrt(t2)
    small = t < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(small, 1.0, np.sin(t) / np.where(small, 1.0, t))
        c = np.where(small, 0.5, (1.0 - np.cos(t)) / np.where(small, 1.0, t2))
    rx = _skew_batch(r)
    eye = np.broadcast_to(np.eye(3), rx.shape)
    return eye + s[..., None, None] * rx + c[..., None, None] * (rx @ rx)


def rot6d_jacobian(r):
    """Rotation matrix of a 6D input together with dR/dr, shape (3,3,6)."""
    r = np.asarray(r, dtype=float)
    a = r[:3]
    b = r[3:]
    na = np.linalg.norm(a)
    if na < 1e-12:
        raise DegenerateInput("first 6D vector has near-zero norm")
    c1 = a / na
    dot = float(c1 @ b)
    w = b - dot * c1
    nw = np.linalg.norm(w)
    if nw < 1e-12:
        raise DegenerateInput("second 6D vector is parallel to the first")
    c2 = w / nw
    c3 = np.cross(c1, c2)

    eye = np.eye(3)
    dc1_da = (eye - np.outer(c1, c1)) / na
    dw_dc1 = -(np.outer(c1, b) + dot * eye)
    dc2_dw = (eye - np.outer(c2, c2)) / nw
    dc2_da = dc2_dw @ dw_dc1 @ dc1_da
    dc2_db = dc2_dw @ (eye - np.outer(c1, c1))

    dc3_da = -_skew(c2) @ dc1_da + _skew(c1) @ dc2_da
    dc3_db = _skew(c1) @ dc2_db

    jac = np.zeros((3, 3, 6))
    jac[:, 0, :3] = dc1_da
    jac[:, 1, :3] = dc2_da
    jac[:, 2, :3] = dc3_da
    jac[:, 1, 3:] = dc2_db
    jac[:, 2, 3:] = dc3_db
    rot = np.stack([c1, c2, c3], axis=-1)
    return rot, jac


def pose_error_frobenius(r1, r2):
    """|| I - R1 R2^T ||_F; lies in [0, 2*sqrt(2)]. Batched over (...,3,3)."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    rel = r1 @ np.swapaxes(r2, -1, -2)
    eye = np.broadcast_to(np.eye(3), rel.shape)
    out = np.linalg.norm(eye - rel, axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


def pose_error_angle(r1, r2):
    """Relative rotation angle between two matrices, in degrees."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    rel = r1 @ np.swapaxes(r2, -1, -2)
    tr = np.trace(rel, axis1=-2, axis2=-1)
    ang = np.degrees(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))
    return float(ang) if ang.ndim == 0 else ang


def _sind(deg: float) -> float:
    # Exact values at multiples of 90 degrees keep axis-aligned matrices
    # integer-valued, which the gimbal-lock round trips rely on.
    if deg % 90.0 == 0.0:
        return float([0.0, 1.0, 0.0, -1.0][int(deg / 90.0) % 4])
    return float(np.sin(np.radians(deg)))


def _cosd(deg: float) -> float:
    if deg % 90.0 == 0.0:
        return float([1.0, 0.0, -1.0, 0.0][int(deg / 90.0) % 4])
    return float(np.cos(np.radians(deg)))


def euler_to_matrix(e: EulerAngles):
    """Rotation matrix of intrinsic Euler angles given in degrees.

    Entries are written out as scalar expressions (not matrix products) so
    that algebraically equal triplets produce bit-identical matrices.
    """
    sy, cy = _sind(e.yaw), _cosd(e.yaw)
    sp, cp = _sind(e.pitch), _cosd(e.pitch)
    sr, cr = _sind(e.roll), _cosd(e.roll)
    if e.convention is EulerConvention.ZYX:
        return np.array([
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ])
    return np.array([
        [cp * cy, -cp * sy, sp],
        [cr * sy + sr * sp * cy, cr * cy - sr * sp * sy, -sr * cp],
        [sr * sy - cr * sp * cy, sr * cy + cr * sp * sy, cr * cp],
    ])


_GIMBAL_FLAG_DEG = 1e-6


def matrix_to_euler(m, convention: EulerConvention = EulerConvention.ZYX) -> EulerAngles:
    """Euler angles (degrees) of a rotation matrix.

    The pitch comes from atan2 against the hypotenuse of the two entries
    that carry cos(pitch), which stays accurate arbitrarily close to the
    lock. Exactly at pitch = +/-90 deg the remaining two angles are not
    independent; roll is then fixed to 0 with the combined angle assigned
    to yaw, which keeps the matrix round trip exact. The gimbal_lock flag
    fires whenever |pitch| is within 1e-6 degrees of 90.
    """
    m = np.asarray(m, dtype=float)
    if convention is EulerConvention.ZYX:
        cp = float(np.hypot(m[0, 0], m[1, 0]))
        pitch = np.degrees(np.arctan2(-m[2, 0], cp))
        if cp == 0.0:
            yaw = np.degrees(np.arctan2(-m[0, 1], m[1, 1]))
            roll = 0.0
        else:
            yaw = np.degrees(np.arctan2(m[1, 0], m[0, 0]))
            roll = np.degrees(np.arctan2(m[2, 1], m[2, 2]))
    else:
        cp = float(np.hypot(m[0, 0], m[0, 1]))
        pitch = np.degrees(np.arctan2(m[0, 2], cp))
        if cp == 0.0:
            yaw = np.degrees(np.arctan2(m[1, 0], m[1, 1]))
            roll = 0.0
        else:
            yaw = np.degrees(np.arctan2(-m[0, 1], m[0, 0]))
            roll = np.degrees(np.arctan2(-m[1, 2], m[2, 2]))
    lock = abs(90.0 - abs(pitch)) <= _GIMBAL_FLAG_DEG
    return EulerAngles(yaw=float(yaw), pitch=float(pitch), roll=float(roll),
                       convention=convention, gimbal_lock=bool(lock))
