"""Rigid-body dynamics of a fixed-base serial chain.

Inverse dynamics uses recursive Newton-Euler and the joint-space inertia
matrix uses the composite-rigid-body algorithm, both formulated with
world-frame 3-vectors. The two are independent so each can check the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DimensionError, NonFiniteStateError, SingularMassMatrixError
from .kinematics import as_vector, chain_frames
from .spatial import cross

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class JointState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        qdot = np.array(self.qdot, dtype=float)
        if q.ndim != 1 or q.shape != qdot.shape:
            raise DimensionError(f"q and qdot must be matching vectors, got {q.shape} and {qdot.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)

    @property
    def n(self):
        return self.q.shape[0]


@dataclass(frozen=True, eq=False)
class DynamicsTerms:
    M: np.ndarray
    bias: np.ndarray
    gravity: np.ndarray


def _gravity(g):
    g = np.asarray(g, dtype=float)
    if g.shape != (3,):
        raise DimensionError(f"gravity vector must have shape (3,), got {g.shape}")
    return g


def _body_terms(chain, frames):
    """World-frame centres of mass and inertias about them."""
    R = frames.rotations
    com = np.einsum("nij,nj->ni", R, chain.coms) + frames.positions
    inertia = R @ chain.inertias @ R.transpose(0, 2, 1)
    return com, inertia


def _shift(x):
    """Row ``i`` of the result is row ``i - 1`` of ``x``; row 0 is zero (the fixed base)."""
    out = np.zeros_like(x)
    out[1:] = x[:-1]
    return out


def _rnea(chain, frames, qd, qdd, g):
    # Newton-Euler in world coordinates: every forward recursion is a
    # running sum over joints, every backward one a reversed running sum.
    Z, P = frames.axes, frames.positions
    com, inertia = _body_terms(chain, frames)
    wz = Z * qd[:, None]
    w = np.cumsum(wz, axis=0)
    w_prev = _shift(w)
    dw = np.cumsum(Z * qdd[:, None] + cross(w_prev, wz), axis=0)
    dw_prev = _shift(dw)
    d = P - _shift(P)
    # joint origins sit on the parent body; the base accelerates at -g
    a = np.cumsum(cross(dw_prev, d) + cross(w_prev, cross(w_prev, d)), axis=0) - g
    r = com - P
    ac = a + cross(dw, r) + cross(w, cross(w, r))
    F = chain.masses[:, None] * ac
    Iw = np.einsum("nij,nj->ni", inertia, w)
    N = np.einsum("nij,nj->ni", inertia, dw) + cross(w, Iw)
    f = np.cumsum(F[::-1], axis=0)[::-1]
    mu = np.cumsum((N + cross(com, F))[::-1], axis=0)[::-1]  # moments about the world origin
    moment = mu - cross(P, f)
    return np.einsum("ni,ni->n", Z, moment)


def inverse_dynamics(chain, q, qdot, qddot, gravity_vec=DEFAULT_GRAVITY):
    """Joint torques ``M(q) qddot + C(q, qdot) qdot + g(q)`` for the given gravity field."""
    n = chain.n
    qd = as_vector(qdot, n, "qdot")
    qdd = as_vector(qddot, n, "qddot")
    frames = chain_frames(chain, q)
    return _rnea(chain, frames, qd, qdd, _gravity(gravity_vec))


def bias_torques(chain, q, qdot):
    """Coriolis and centripetal torques ``C(q, qdot) qdot``."""
    n = chain.n
    return inverse_dynamics(chain, q, qdot, np.zeros(n), np.zeros(3))


def gravity_torques(chain, q, gravity_vec=DEFAULT_GRAVITY):
    """Torques that hold the chain static against ``gravity_vec``."""
    n = chain.n
    return inverse_dynamics(chain, q, np.zeros(n), np.zeros(n), gravity_vec)


def _mass_matrix(chain, frames):
    # Composite bodies j..n-1 accumulated as mass, first moment and inertia
    # about the world origin. Entry (i, j), i <= j, is the torque about axis i
    # needed to give composite j a unit acceleration about axis j.
    Z, P = frames.axes, frames.positions
    com, inertia = _body_terms(chain, frames)
    m = chain.masses
    h = m[:, None] * com
    I_origin = inertia + m[:, None, None] * (
        np.einsum("ni,ni->n", com, com)[:, None, None] * np.eye(3) - np.einsum("ni,nj->nij", com, com)
    )
    mc = np.cumsum(m[::-1])[::-1]
    hc = np.cumsum(h[::-1], axis=0)[::-1]
    Ic = np.cumsum(I_origin[::-1], axis=0)[::-1]
    force = cross(Z, hc - mc[:, None] * P)
    moment = np.einsum("nij,nj->ni", Ic, Z) - cross(hc, cross(Z, P))
    A = Z @ moment.T + cross(P, Z) @ force.T
    upper = np.triu(A)
    return upper + np.triu(A, 1).T


def mass_matrix(chain, q):
    """Joint-space inertia matrix ``M(q)`` via composite rigid bodies."""
    return _mass_matrix(chain, chain_frames(chain, q))


def dynamics_terms(chain, q, qdot, gravity_vec=DEFAULT_GRAVITY):
    n = chain.n
    qd = as_vector(qdot, n, "qdot")
    frames = chain_frames(chain, q)
    zero = np.zeros(n)
    return DynamicsTerms(
        M=_mass_matrix(chain, frames),
        bias=_rnea(chain, frames, qd, zero, np.zeros(3)),
        gravity=_rnea(chain, frames, zero, zero, _gravity(gravity_vec)),
    )


def solve_mass_matrix(M, rhs):
    """Solve ``M x = rhs`` by Cholesky, refusing ill-conditioned matrices."""
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMassMatrixError(f"mass matrix condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    try:
        factor = cho_factor(M)
    except LinAlgError:
        raise SingularMassMatrixError("mass matrix is not positive definite") from None
    return cho_solve(factor, rhs)


def forward_dynamics(chain, q, qdot, tau, gravity_vec=DEFAULT_GRAVITY):
    n = chain.n
    qd = as_vector(qdot, n, "qdot")
    tau = as_vector(tau, n, "tau")
    frames = chain_frames(chain, q)
    # bias and gravity in one Newton-Euler pass
    h = _rnea(chain, frames, qd, np.zeros(n), _gravity(gravity_vec))
    rhs = tau - h
    if not np.all(np.isfinite(rhs)):
        raise NonFiniteStateError("joint torques or velocity-dependent terms are not finite")
    return solve_mass_matrix(_mass_matrix(chain, frames), rhs)


def forward_step(chain, state, tau_c, tau_ext, gravity_vec=DEFAULT_GRAVITY, dt=1e-3):
    """Advance one semi-implicit Euler step under ``tau_c + tau_ext``."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = chain.n
    tau = as_vector(tau_c, n, "tau_c") + as_vector(tau_ext, n, "tau_ext")
    qdd = forward_dynamics(chain, state.q, state.qdot, tau, gravity_vec)
    qdot = state.qdot + qdd * dt
    return JointState(state.q + qdot * dt, qdot)


def kinetic_energy(chain, q, qdot):
    qd = as_vector(qdot, chain.n, "qdot")
    return 0.5 * qd @ mass_matrix(chain, q) @ qd


def potential_energy(chain, q, gravity_vec=DEFAULT_GRAVITY):
    g = _gravity(gravity_vec)
    com, _ = _body_terms(chain, chain_frames(chain, q))
    return -float(chain.masses @ (com @ g))
