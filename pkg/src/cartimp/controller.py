"""Cartesian impedance control law with online-parameter filtering and safety stages.

The commanded torque is the sum of three terms::

    tau_ca  = J^T (-K_ca dxi - D_ca J qdot)      Cartesian impedance
    tau_ns  = (I - J^T (J^T)^+) tau_0            nullspace joint impedance
    tau_0   = -K_ns (q - q_d) - D_ns qdot
    tau_ext = J^T F_cmd                          wrench feed-forward

Each control step runs: apply queued updates, advance the parameter filters,
saturate, evaluate the three terms, add optional gravity feed-forward, limit
the torque rate, and clamp to joint effort limits.
"""

from __future__ import annotations

import math
import queue
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .dynamics import DEFAULT_GRAVITY, gravity_torques
from .errors import (
    BoundsWarning,
    DimensionError,
    DomainError,
    EmptyTrajectoryError,
    NonFiniteInputError,
    NonMonotoneTimestampsError,
)
from .kinematics import (
    FRAMES,
    CartesianPose,
    chain_frames,
    forward_kinematics,
    jacobian_from_frames,
    pose_error,
    rotate_twist,
)
from .spatial import quat_slerp

DEFAULT_FILTER_FRACTION = 0.99
DEFAULT_FILTER_TIME = 0.3
DEFAULT_DELTA_TAU_MAX = 1.0
PINV_CUTOFF = 1e-6

CHANNELS = ("pose", "q_ns", "k_ca", "d_ca", "k_ns", "d_ns", "wrench")


# --------------------------------------------------------------------------- filtering


def filter_coefficient(p, T, dt):
    """Coefficient ``a`` such that ``T/dt`` filter steps cover fraction ``p`` of a step change.

    Solves ``1 - (1 - a)**(T/dt) = p``.
    """
    if not 0.0 < p <= 1.0:
        raise DomainError(f"filter fraction must be in (0, 1], got {p}")
    if not dt > 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    if not T >= dt:
        raise DomainError(f"filter time {T} must be at least dt {dt}")
    if p == 1.0:
        return 1.0
    return -math.expm1(math.log1p(-p) * dt / T)


@dataclass(frozen=True, eq=False)
class FilteredValue:
    value: np.ndarray
    target: np.ndarray
    coeff: float

    def step(self):
        a = self.coeff
        return replace(self, value=(1.0 - a) * self.value + a * self.target)


@dataclass(frozen=True, eq=False)
class FilteredPose:
    """Translation filtered linearly, orientation by slerp toward the target."""

    value: CartesianPose
    target: CartesianPose
    coeff: float

    def step(self):
        a = self.coeff
        t = (1.0 - a) * self.value.translation + a * self.target.translation
        q = quat_slerp(self.value.orientation, self.target.orientation, a)
        return replace(self, value=CartesianPose(t, q))


@dataclass(frozen=True, eq=False)
class FilterBank:
    pose: FilteredPose
    q_ns: FilteredValue
    k_ca: FilteredValue
    d_ca: FilteredValue
    k_ns: FilteredValue
    d_ns: FilteredValue
    wrench: FilteredValue


def filter_step(bank):
    """Advance every filtered parameter by one step of ``a_{k+1} = (1-a) a_k + a a_D``."""
    return FilterBank(**{name: getattr(bank, name).step() for name in CHANNELS})


# --------------------------------------------------------------------------- saturation


def saturate(value, min_bound, max_bound):
    """Elementwise clamp."""
    return np.minimum(np.maximum(value, min_bound), max_bound)


def _saturate_diagonal(M, lo, hi):
    out = np.array(M, dtype=float)
    idx = np.diag_indices(out.shape[0])
    out[idx] = saturate(out[idx], lo, hi)
    return out


@dataclass(frozen=True, eq=False)
class SafetyLimits:
    """Bounds on gain diagonals and commanded wrench, plus the torque-rate limit.

    Each bound is a ``(min, max)`` pair of scalars or arrays broadcastable to
    the diagonal (length 6 for Cartesian gains, n for nullspace gains).
    ``delta_tau_max`` bounds the Euclidean norm of the torque change per
    control step (N·m). ``clamp_effort`` enables the per-joint clamp to the
    model's effort limits.
    """

    k_ca: tuple = (0.0, np.inf)
    d_ca: tuple = (0.0, np.inf)
    k_ns: tuple = (0.0, np.inf)
    d_ns: tuple = (0.0, np.inf)
    wrench: tuple = (-np.inf, np.inf)
    delta_tau_max: float = DEFAULT_DELTA_TAU_MAX
    clamp_effort: bool = True

    def __post_init__(self):
        for name in ("k_ca", "d_ca", "k_ns", "d_ns", "wrench"):
            lo, hi = (np.asarray(b, dtype=float) for b in getattr(self, name))
            if np.any(lo > hi):
                raise DomainError(f"{name} bounds have min > max")
            object.__setattr__(self, name, (lo, hi))
        if not self.delta_tau_max > 0.0:
            raise DomainError(f"delta_tau_max must be positive, got {self.delta_tau_max}")


# --------------------------------------------------------------------------- control law terms


def _check_jacobian(J, n=None):
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != 6 or (n is not None and J.shape[1] != n):
        raise DimensionError(f"Jacobian must be 6x{n if n is not None else 'n'}, got {J.shape}")
    return J


def _vec(x, size, name):
    v = np.asarray(x, dtype=float)
    if v.shape != (size,):
        raise DimensionError(f"{name} must have shape ({size},), got {v.shape}")
    return v


def _mat(x, size, name):
    M = np.asarray(x, dtype=float)
    if M.shape != (size, size):
        raise DimensionError(f"{name} must have shape ({size}, {size}), got {M.shape}")
    return M


def cartesian_impedance_torque(J, pose_err, qdot, K_ca, D_ca):
    """``J^T (-K_ca dxi - D_ca J qdot)``."""
    J = _check_jacobian(J)
    n = J.shape[1]
    dxi = _vec(pose_err, 6, "pose error")
    qdot = _vec(qdot, n, "qdot")
    K = _mat(K_ca, 6, "K_ca")
    D = _mat(D_ca, 6, "D_ca")
    return J.T @ (-K @ dxi - D @ (J @ qdot))


def nullspace_projector(J, cutoff=PINV_CUTOFF):
    """``I - J^T (J^T)^+`` with the pseudoinverse taken by SVD.

    Singular values below ``cutoff * sigma_max`` are treated as zero, so the
    projector stays defined at kinematic singularities. Since ``J^T (J^T)^+``
    is the orthogonal projector onto the range of ``J^T`` it equals
    ``U_r U_r^T`` for the retained left singular vectors of ``J^T``.
    """
    J = _check_jacobian(J)
    n = J.shape[1]
    U, s, _ = np.linalg.svd(J.T, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(n)
    Ur = U[:, s > cutoff * s[0]]
    return np.eye(n) - Ur @ Ur.T


def pinv_transpose(J, cutoff=PINV_CUTOFF):
    """``(J^T)^+`` by SVD with a relative singular-value cutoff."""
    J = _check_jacobian(J)
    U, s, Vt = np.linalg.svd(J.T, full_matrices=False)
    keep = s > cutoff * s[0] if s.size and s[0] > 0.0 else np.zeros_like(s, dtype=bool)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


def nullspace_torque(N, q, qdot, q_desired, K_ns, D_ns):
    """``N (-K_ns (q - q_d) - D_ns qdot)``."""
    N = np.asarray(N, dtype=float)
    n = N.shape[0]
    _mat(N, n, "N")
    q = _vec(q, n, "q")
    qdot = _vec(qdot, n, "qdot")
    q_desired = _vec(q_desired, n, "q_desired")
    tau0 = -_mat(K_ns, n, "K_ns") @ (q - q_desired) - _mat(D_ns, n, "D_ns") @ qdot
    return N @ tau0


def wrench_torque(J, F_cmd):
    """``J^T F_cmd``; ``F_cmd`` is the wrench the robot exerts on its environment."""
    J = _check_jacobian(J)
    return J.T @ _vec(F_cmd, 6, "wrench")


def rate_limit(tau_prev, tau_new, delta_max):
    """Clamp the step ``tau_new - tau_prev`` to Euclidean norm ``delta_max``, keeping its direction."""
    if not delta_max > 0.0:
        raise DomainError(f"delta_max must be positive, got {delta_max}")
    tau_prev = np.asarray(tau_prev, dtype=float)
    tau_new = np.asarray(tau_new, dtype=float)
    diff = tau_new - tau_prev
    norm = np.linalg.norm(diff)
    if norm <= delta_max:
        return tau_new
    return tau_prev + diff * (delta_max / norm)


def critical_damping(stiffness, ratio=1.0):
    """Damping ``2 * ratio * sqrt(k)`` for diagonal stiffness entries."""
    return 2.0 * np.asarray(ratio, dtype=float) * np.sqrt(np.asarray(stiffness, dtype=float))


# --------------------------------------------------------------------------- configuration


def _as_gain_matrix(x, size, name):
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return np.eye(size) * float(a)
    if a.shape == (size,):
        return np.diag(a)
    return _mat(a, size, name).copy()


@dataclass(frozen=True, eq=False)
class ImpedanceGains:
    k_ca: np.ndarray
    d_ca: np.ndarray
    k_ns: np.ndarray
    d_ns: np.ndarray

    @property
    def n(self):
        return self.k_ns.shape[0]

    @classmethod
    def from_diagonal(cls, n, translational, rotational, nullspace=0.0, damping_ratio=1.0,
                      nullspace_damping_ratio=None, d_ca=None, d_ns=None):
        """Diagonal gains; damping defaults to ``2 * ratio * sqrt(K)`` per axis."""
        k_ca = np.concatenate([np.broadcast_to(np.asarray(translational, float), 3),
                               np.broadcast_to(np.asarray(rotational, float), 3)])
        k_ns = np.broadcast_to(np.asarray(nullspace, float), n).copy()
        if d_ca is None:
            d_ca = critical_damping(k_ca, damping_ratio)
        if d_ns is None:
            ratio = damping_ratio if nullspace_damping_ratio is None else nullspace_damping_ratio
            d_ns = critical_damping(k_ns, ratio)
        return cls(np.diag(k_ca), _as_gain_matrix(d_ca, 6, "d_ca"), np.diag(k_ns), _as_gain_matrix(d_ns, n, "d_ns"))


@dataclass(frozen=True, eq=False)
class ControllerTargets:
    pose: CartesianPose
    q_nullspace: np.ndarray
    wrench: np.ndarray = np.zeros(6)

    @classmethod
    def hold(cls, chain, q):
        """Targets that keep the robot where it is."""
        q = np.array(q, dtype=float)
        return cls(forward_kinematics(chain, q), q, np.zeros(6))


class ControlOutput(NamedTuple):
    tau: np.ndarray  # commanded torque after every safety stage
    tau_ca: np.ndarray
    tau_ns: np.ndarray
    tau_ext: np.ndarray
    tau_gravity: np.ndarray
    pose_error: np.ndarray  # in the controller's working frame


class CartesianImpedanceController:
    """Stateful controller for one serial chain.

    One owner calls :meth:`step` at the control rate. Target and gain changes
    go either directly through :meth:`set_targets` / :meth:`set_gains`
    between steps, or from other threads through :meth:`submit`, which queues
    them until the start of the next step.

    Args:
        chain: the :class:`~cartimp.model.KinematicChain` being controlled.
        gains: initial :class:`ImpedanceGains` (also the initial filter state).
        targets: initial :class:`ControllerTargets`.
        limits: :class:`SafetyLimits`; defaults bound gains to be non-negative.
        dt: control period in seconds.
        filter_fraction, filter_time: a parameter change covers
            ``filter_fraction`` of its gap after ``filter_time`` seconds.
        filter_overrides: optional ``{channel: (fraction, time)}``.
        frame: ``"base"`` or ``"end_effector"``; the frame in which pose
            error, Cartesian gains and commanded wrench are expressed.
        gravity_feedforward: add ``g(q)`` to the command.
        gravity: gravity vector used for the feed-forward.
    """

    def __init__(self, chain, gains, targets, limits=None, dt=1e-3,
                 filter_fraction=DEFAULT_FILTER_FRACTION, filter_time=DEFAULT_FILTER_TIME,
                 filter_overrides=None, frame="base", gravity_feedforward=False, gravity=DEFAULT_GRAVITY):
        if frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {frame!r}")
        self.chain = chain
        self.n = chain.n
        self.limits = limits if limits is not None else SafetyLimits()
        self.dt = float(dt)
        self.frame = frame
        self.gravity_feedforward = bool(gravity_feedforward)
        self.gravity = np.asarray(gravity, dtype=float)
        coeffs = {}
        overrides = filter_overrides or {}
        for name in CHANNELS:
            p, T = overrides.get(name, (filter_fraction, filter_time))
            coeffs[name] = filter_coefficient(p, T, self.dt)
        self.coefficients = coeffs

        n = self.n
        k_ca, d_ca, k_ns, d_ns = self._checked_gains(gains.k_ca, gains.d_ca, gains.k_ns, gains.d_ns)
        wrench = self._checked_wrench(targets.wrench)
        q_ns = _vec(targets.q_nullspace, n, "q_nullspace").copy()
        self.bank = FilterBank(
            pose=FilteredPose(targets.pose, targets.pose, coeffs["pose"]),
            q_ns=FilteredValue(q_ns, q_ns, coeffs["q_ns"]),
            k_ca=FilteredValue(k_ca, k_ca, coeffs["k_ca"]),
            d_ca=FilteredValue(d_ca, d_ca, coeffs["d_ca"]),
            k_ns=FilteredValue(k_ns, k_ns, coeffs["k_ns"]),
            d_ns=FilteredValue(d_ns, d_ns, coeffs["d_ns"]),
            wrench=FilteredValue(wrench, wrench, coeffs["wrench"]),
        )
        self.tau_prev = np.zeros(n)
        self.k = 0
        self._mailbox = queue.SimpleQueue()

    # -- parameter updates

    def _clamped(self, value, lo, hi, name, diagonal=False):
        out = _saturate_diagonal(value, lo, hi) if diagonal else saturate(value, lo, hi)
        if not np.array_equal(out, value):
            warnings.warn(f"{name} target clamped to limits", BoundsWarning, stacklevel=4)
        return out

    def _checked_gains(self, k_ca=None, d_ca=None, k_ns=None, d_ns=None):
        out = []
        for name, value, size in (("k_ca", k_ca, 6), ("d_ca", d_ca, 6), ("k_ns", k_ns, self.n), ("d_ns", d_ns, self.n)):
            if value is None:
                out.append(None)
                continue
            if not np.all(np.isfinite(value)):
                raise NonFiniteInputError(f"{name} must be finite")
            M = _as_gain_matrix(value, size, name)
            lo, hi = getattr(self.limits, name)
            out.append(self._clamped(M, lo, hi, name, diagonal=True))
        return out

    def _checked_wrench(self, wrench):
        w = _vec(wrench, 6, "wrench")
        if not np.all(np.isfinite(w)):
            raise NonFiniteInputError("wrench must be finite")
        return self._clamped(w, *self.limits.wrench, "wrench")

    def set_targets(self, pose=None, q_nullspace=None, wrench=None):
        """Stage new targets; filtered values move toward them on each step."""
        bank = self.bank
        if pose is not None:
            if not isinstance(pose, CartesianPose):
                raise TypeError("pose must be a CartesianPose")
            bank = replace(bank, pose=replace(bank.pose, target=pose))
        if q_nullspace is not None:
            q_ns = _vec(q_nullspace, self.n, "q_nullspace")
            if not np.all(np.isfinite(q_ns)):
                raise NonFiniteInputError("q_nullspace must be finite")
            bank = replace(bank, q_ns=replace(bank.q_ns, target=q_ns.copy()))
        if wrench is not None:
            bank = replace(bank, wrench=replace(bank.wrench, target=self._checked_wrench(wrench)))
        self.bank = bank

    def set_gains(self, k_ca=None, d_ca=None, k_ns=None, d_ns=None):
        """Stage new gains (scalars, diagonals or full matrices). Diagonals are saturated."""
        values = self._checked_gains(k_ca, d_ca, k_ns, d_ns)
        bank = self.bank
        for name, value in zip(("k_ca", "d_ca", "k_ns", "d_ns"), values):
            if value is not None:
                bank = replace(bank, **{name: replace(getattr(bank, name), target=value)})
        self.bank = bank

    def submit(self, kind, **kwargs):
        """Queue a ``"targets"`` or ``"gains"`` update for the next step. Thread-safe."""
        if kind not in ("targets", "gains"):
            raise ValueError(f"unknown update kind {kind!r}")
        self._mailbox.put((kind, kwargs))

    def _drain(self):
        while True:
            try:
                kind, kwargs = self._mailbox.get_nowait()
            except queue.Empty:
                return
            if kind == "targets":
                self.set_targets(**kwargs)
            else:
                self.set_gains(**kwargs)

    # -- effective (filtered) values

    @property
    def desired_pose(self):
        return self.bank.pose.value

    @property
    def q_nullspace(self):
        return self.bank.q_ns.value

    @property
    def gains(self):
        b = self.bank
        return ImpedanceGains(b.k_ca.value, b.d_ca.value, b.k_ns.value, b.d_ns.value)

    @property
    def wrench(self):
        return self.bank.wrench.value

    def reset(self, tau_prev=None):
        """Set the rate limiter's reference torque (e.g. to the holding torque at start-up)."""
        self.tau_prev = np.zeros(self.n) if tau_prev is None else _vec(tau_prev, self.n, "tau_prev").copy()

    # -- control step

    def _filter(self):
        bank = filter_step(self.bank)
        lim = self.limits
        # targets are already inside the bounds; clamping here guards against rounding
        self.bank = replace(
            bank,
            k_ca=replace(bank.k_ca, value=_saturate_diagonal(bank.k_ca.value, *lim.k_ca)),
            d_ca=replace(bank.d_ca, value=_saturate_diagonal(bank.d_ca.value, *lim.d_ca)),
            k_ns=replace(bank.k_ns, value=_saturate_diagonal(bank.k_ns.value, *lim.k_ns)),
            d_ns=replace(bank.d_ns, value=_saturate_diagonal(bank.d_ns.value, *lim.d_ns)),
            wrench=replace(bank.wrench, value=saturate(bank.wrench.value, *lim.wrench)),
        )

    def step(self, q, qdot, J=None, current_pose=None):
        """Compute one torque command.

        ``J`` (6xn, base frame) and ``current_pose`` are computed from the
        chain when not supplied.
        """
        n = self.n
        q = _vec(q, n, "q")
        qdot = _vec(qdot, n, "qdot")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise NonFiniteInputError("q and qdot must be finite")
        if J is None or current_pose is None:
            frames = chain_frames(self.chain, q)
            if J is None:
                J = jacobian_from_frames(frames, n)
            if current_pose is None:
                current_pose = CartesianPose.from_matrix(frames.tip_rotation, frames.tip_position)
        J = _check_jacobian(J, n)

        self._drain()
        self._filter()
        b = self.bank

        dxi = pose_error(current_pose, b.pose.value)
        if self.frame == "end_effector":
            R = current_pose.rotation
            J = rotate_twist(J, R)
            dxi = rotate_twist(dxi, R)
        tau_ca = cartesian_impedance_torque(J, dxi, qdot, b.k_ca.value, b.d_ca.value)
        N = nullspace_projector(J)
        tau_ns = nullspace_torque(N, q, qdot, b.q_ns.value, b.k_ns.value, b.d_ns.value)
        tau_ext = wrench_torque(J, b.wrench.value)
        tau = tau_ca + tau_ns + tau_ext
        if self.gravity_feedforward:
            tau_g = gravity_torques(self.chain, q, self.gravity)
            tau = tau + tau_g
        else:
            tau_g = np.zeros(n)
        tau = rate_limit(self.tau_prev, tau, self.limits.delta_tau_max)
        if self.limits.clamp_effort:
            effort = self.chain.effort_limits
            tau = saturate(tau, -effort, effort)
        self.tau_prev = tau
        self.k += 1
        return ControlOutput(tau, tau_ca, tau_ns, tau_ext, tau_g, dxi)


# --------------------------------------------------------------------------- trajectories


@dataclass(frozen=True, eq=False)
class JointTrajectory:
    """Joint-space waypoints, linearly interpolated and held at both ends."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        P = np.asarray(self.positions, dtype=float)
        if t.size == 0:
            raise EmptyTrajectoryError("trajectory has no waypoints")
        if P.ndim != 2 or P.shape[0] != t.size:
            raise DimensionError(f"positions must be ({t.size}, n), got {P.shape}")
        if np.any(np.diff(t) < 0.0):
            raise NonMonotoneTimestampsError("waypoint timestamps must be nondecreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", P)

    def sample(self, t):
        times, P = self.times, self.positions
        if t <= times[0]:
            return P[0].copy()
        if t >= times[-1]:
            return P[-1].copy()
        i = int(np.searchsorted(times, t, side="right"))
        t0, t1 = times[i - 1], times[i]
        s = (t - t0) / (t1 - t0)
        return (1.0 - s) * P[i - 1] + s * P[i]


def trajectory_target(traj, t, chain):
    """Joint target at time ``t`` and the matching Cartesian target ``FK(q_d)``."""
    if traj.positions.shape[1] != chain.n:
        raise DimensionError(f"trajectory has {traj.positions.shape[1]} joints, chain has {chain.n}")
    q_d = traj.sample(t)
    return q_d, forward_kinematics(chain, q_d)
