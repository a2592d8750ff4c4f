"""Forward kinematics, geometric Jacobian and pose error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError
from .spatial import (
    axis_angle_to_matrix,
    cross,
    quat_conjugate,
    quat_from_matrix,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    quat_to_rotvec,
)

FRAMES = ("base", "end_effector")


def as_vector(x, n, name="q"):
    """Validate a length-``n`` float vector."""
    v = np.asarray(x, dtype=float)
    if v.shape != (n,):
        raise DimensionError(f"{name} must have shape ({n},), got {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class CartesianPose:
    """Translation in metres and unit quaternion ``(w, x, y, z)``."""

    translation: np.ndarray
    orientation: np.ndarray = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        t = np.array(self.translation, dtype=float)
        if t.shape != (3,):
            raise DimensionError(f"translation must have shape (3,), got {t.shape}")
        q = np.asarray(self.orientation, dtype=float)
        if q.shape != (4,):
            raise DimensionError(f"orientation must have shape (4,), got {q.shape}")
        q = quat_normalize(q)
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_matrix(cls, R, p):
        return cls(p, quat_from_matrix(np.asarray(R)))

    @property
    def rotation(self):
        return quat_to_matrix(self.orientation)

    def __repr__(self):
        t = np.array2string(self.translation, precision=4)
        o = np.array2string(self.orientation, precision=4)
        return f"CartesianPose(translation={t}, orientation={o})"


class ChainFrames(NamedTuple):
    rotations: np.ndarray  # (n, 3, 3) world rotation of each body frame
    positions: np.ndarray  # (n, 3) world position of each joint origin
    axes: np.ndarray  # (n, 3) world joint axes
    tip_rotation: np.ndarray
    tip_position: np.ndarray


def chain_frames(chain, q):
    """Single forward pass returning every joint frame and the tip frame."""
    q = as_vector(q, chain.n)
    R = np.eye(3)
    p = np.zeros(3)
    rotations, positions, axes = [], [], []
    for joint, qi in zip(chain.joints, q):
        p = R @ joint.offset_pos + p
        R = R @ joint.offset_rot
        axes.append(R @ joint.axis)
        R = R @ axis_angle_to_matrix(joint.axis, qi)
        rotations.append(R)
        positions.append(p)
    tip_p = R @ chain.tip_pos + p
    tip_R = R @ chain.tip_rot
    return ChainFrames(np.array(rotations), np.array(positions), np.array(axes), tip_R, tip_p)


def forward_kinematics(chain, q):
    """Pose of the chain tip in the base frame."""
    frames = chain_frames(chain, q)
    return CartesianPose.from_matrix(frames.tip_rotation, frames.tip_position)


def jacobian_from_frames(frames, n):
    J = np.empty((6, n))
    J[:3] = cross(frames.axes, frames.tip_position - frames.positions).T
    J[3:] = frames.axes.T
    return J


def rotate_twist(x, R):
    """Re-express 6-vectors (or the rows of a 6xN matrix) given in the base frame in frame ``R``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    out[:3] = R.T @ x[:3]
    out[3:] = R.T @ x[3:]
    return out


def geometric_jacobian(chain, q, frame="base"):
    """6xn Jacobian of the tip: linear rows first, angular rows last.

    Column ``i`` is ``(z_i x (p_tip - p_i), z_i)`` in the base frame. With
    ``frame="end_effector"`` both blocks are rotated into the tip frame
    (the reference point stays the tip origin).
    """
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}")
    frames = chain_frames(chain, q)
    J = jacobian_from_frames(frames, chain.n)
    if frame == "end_effector":
        J = rotate_twist(J, frames.tip_rotation)
    return J


def pose_error(current, desired):
    """6-vector ``(p - p_d, rotvec(q ⊗ q_d^-1))``.

    The rotational part is the axis-angle vector of the error rotation taken
    along the shorter arc, so its norm is at most pi.
    """
    err = np.empty(6)
    err[:3] = current.translation - desired.translation
    q_err = quat_multiply(current.orientation, quat_conjugate(desired.orientation))
    err[3:] = quat_to_rotvec(q_err)
    return err
