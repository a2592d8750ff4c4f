import threading
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cartimp.controller import (
    CartesianImpedanceController,
    ControllerTargets,
    FilteredPose,
    ImpedanceGains,
    JointTrajectory,
    SafetyLimits,
    cartesian_impedance_torque,
    critical_damping,
    filter_coefficient,
    nullspace_projector,
    nullspace_torque,
    pinv_transpose,
    rate_limit,
    saturate,
    trajectory_target,
    wrench_torque,
)
from cartimp.dynamics import gravity_torques
from cartimp.errors import (
    BoundsWarning,
    DimensionError,
    DomainError,
    EmptyTrajectoryError,
    NonFiniteInputError,
    NonMonotoneTimestampsError,
)
from cartimp.kinematics import CartesianPose, forward_kinematics, geometric_jacobian
from cartimp.spatial import quat_from_rotvec

from conftest import PANDA_Q0, random_q


def make_controller(chain, q, **kwargs):
    gains = kwargs.pop("gains", ImpedanceGains.from_diagonal(chain.n, 200.0, 20.0, 5.0))
    return CartesianImpedanceController(chain, gains, ControllerTargets.hold(chain, q), **kwargs)


# --------------------------------------------------------------------------- filtering


@pytest.mark.parametrize("p,T,dt", [(0.99, 1.0, 1e-3), (0.5, 0.1, 1e-3), (0.999, 0.3, 2e-3), (0.9, 0.01, 0.01)])
def test_filter_coefficient_covers_fraction(p, T, dt):
    a = filter_coefficient(p, T, dt)
    steps = int(round(T / dt))
    assert abs((1.0 - (1.0 - a) ** steps) - p) < 1e-12


@pytest.mark.parametrize("p,T,dt", [(0.0, 1.0, 1e-3), (1.5, 1.0, 1e-3), (0.9, 1.0, 0.0), (0.9, 1e-4, 1e-3)])
def test_filter_coefficient_domain(p, T, dt):
    with pytest.raises(DomainError):
        filter_coefficient(p, T, dt)


def test_filter_p_one_is_immediate():
    assert filter_coefficient(1.0, 0.3, 1e-3) == 1.0


def test_stiffness_step_reaches_fraction(panda):
    ctrl = make_controller(panda, PANDA_Q0, filter_fraction=0.99, filter_time=1.0)
    k0 = ctrl.gains.k_ca[0, 0]
    ctrl.set_gains(k_ca=np.full(6, 800.0))
    for _ in range(1000):
        ctrl.step(PANDA_Q0, np.zeros(7))
    frac = (ctrl.gains.k_ca[0, 0] - k0) / (800.0 - k0)
    assert abs(frac - 0.99) <= 1e-6


def test_filter_overrides(panda):
    ctrl = make_controller(panda, PANDA_Q0, filter_overrides={"wrench": (1.0, 1e-3)})
    ctrl.set_targets(wrench=[1, 0, 0, 0, 0, 0])
    ctrl.step(PANDA_Q0, np.zeros(7))
    np.testing.assert_array_equal(ctrl.wrench, [1, 0, 0, 0, 0, 0])


def test_orientation_filter_slerp_midpoint():
    axis = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
    a = CartesianPose([0, 0, 0], quat_from_rotvec(0.3 * axis))
    b = CartesianPose([1, 0, 0], quat_from_rotvec(1.7 * axis))
    # a = 0.5 makes one filter step land exactly halfway
    f = FilteredPose(a, b, filter_coefficient(0.5, 1e-3, 1e-3)).step()
    np.testing.assert_allclose(f.value.translation, [0.5, 0, 0], atol=1e-15)
    expected = quat_from_rotvec(1.0 * axis)
    assert np.abs(f.value.orientation - expected).max() <= 1e-9


# --------------------------------------------------------------------------- saturation and rate limit


def test_saturate():
    np.testing.assert_array_equal(saturate([-2.0, 0.5, 3.0], 0.0, 1.0), [0.0, 0.5, 1.0])


def test_targets_clamped_with_warning(panda):
    limits = SafetyLimits(k_ca=(0.0, 500.0), wrench=(-10.0, 10.0))
    ctrl = make_controller(panda, PANDA_Q0, limits=limits)
    with pytest.warns(BoundsWarning):
        ctrl.set_gains(k_ca=np.full(6, 1000.0))
    with pytest.warns(BoundsWarning):
        ctrl.set_targets(wrench=[50, 0, 0, 0, 0, -50])
    for _ in range(3000):
        ctrl.step(PANDA_Q0, np.zeros(7))
    assert np.diag(ctrl.gains.k_ca).max() <= 500.0
    np.testing.assert_allclose(ctrl.wrench, [10, 0, 0, 0, 0, -10], atol=1e-9)


def test_in_bounds_update_does_not_warn(panda):
    ctrl = make_controller(panda, PANDA_Q0, limits=SafetyLimits(k_ca=(0.0, 500.0)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ctrl.set_gains(k_ca=400.0)


def test_bad_limits():
    with pytest.raises(DomainError):
        SafetyLimits(k_ca=(10.0, 1.0))
    with pytest.raises(DomainError):
        SafetyLimits(delta_tau_max=0.0)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=5, max_size=5),
       st.lists(st.floats(-100, 100), min_size=5, max_size=5),
       st.floats(1e-3, 10))
def test_rate_limit_properties(prev, new, delta):
    prev, new = np.array(prev), np.array(new)
    out = rate_limit(prev, new, delta)
    assert np.linalg.norm(out - prev) <= delta + 1e-12
    step = new - prev
    if np.linalg.norm(step) <= delta:
        np.testing.assert_array_equal(out, new)
    else:
        # direction preserved
        cos = (out - prev) @ step / (np.linalg.norm(out - prev) * np.linalg.norm(step))
        assert cos > 1 - 1e-12


def test_rate_limit_in_controller(panda):
    ctrl = make_controller(panda, PANDA_Q0, limits=SafetyLimits(delta_tau_max=0.5))
    q = PANDA_Q0 + 0.2
    prev = np.zeros(7)
    for _ in range(50):
        tau = ctrl.step(q, np.zeros(7)).tau
        assert np.linalg.norm(tau - prev) <= 0.5 + 1e-12
        prev = tau


def test_effort_clamp(panda):
    ctrl = make_controller(panda, PANDA_Q0, gains=ImpedanceGains.from_diagonal(7, 1e5, 1e4),
                           limits=SafetyLimits(delta_tau_max=1e6))
    tau = ctrl.step(PANDA_Q0 + 0.5, np.zeros(7)).tau
    assert np.all(np.abs(tau) <= panda.effort_limits)
    assert np.any(np.abs(tau) == panda.effort_limits)


# --------------------------------------------------------------------------- control law


def test_cartesian_term_by_hand():
    J = np.arange(12, dtype=float).reshape(6, 2) / 10
    dxi = np.array([0.1, -0.2, 0.0, 0.05, 0.0, 0.0])
    qd = np.array([0.3, -0.1])
    K = np.diag([100, 100, 100, 10, 10, 10.0])
    D = np.diag([20, 20, 20, 2, 2, 2.0])
    expected = np.zeros(2)
    for i in range(2):
        for r in range(6):
            v = sum(J[r, c] * qd[c] for c in range(2))
            expected[i] += J[r, i] * (-K[r, r] * dxi[r] - D[r, r] * v)
    np.testing.assert_allclose(cartesian_impedance_torque(J, dxi, qd, K, D), expected, atol=1e-13)


def test_projector_identities(panda, ur):
    rng = np.random.default_rng(10)
    for _ in range(100):
        J = geometric_jacobian(panda, random_q(panda, rng))
        N = nullspace_projector(J)
        assert np.abs(J @ N).max() <= 1e-10
        assert np.abs(N @ N - N).max() <= 1e-10
        np.testing.assert_allclose(N, N.T, atol=1e-12)
        np.testing.assert_allclose(np.eye(7) - J.T @ np.linalg.pinv(J.T), N, atol=1e-9)
    for _ in range(20):
        J = geometric_jacobian(ur, random_q(ur, rng))
        assert np.abs(nullspace_projector(J)).max() <= 1e-10


def test_projector_at_singularity(panda):
    # stretched-out posture: the Jacobian loses rank
    J = geometric_jacobian(panda, np.zeros(7))
    assert np.linalg.matrix_rank(J, tol=1e-9) < 6
    N = nullspace_projector(J)
    assert np.abs(J @ N).max() <= 1e-10
    assert np.abs(N @ N - N).max() <= 1e-10
    assert np.trace(N) > 1.5


def test_pinv_transpose_matches_numpy(panda):
    rng = np.random.default_rng(11)
    J = geometric_jacobian(panda, random_q(panda, rng))
    np.testing.assert_allclose(pinv_transpose(J), np.linalg.pinv(J.T), atol=1e-10)


def test_nullspace_torque_has_no_task_effect(panda):
    rng = np.random.default_rng(12)
    q = random_q(panda, rng)
    J = geometric_jacobian(panda, q)
    N = nullspace_projector(J)
    tau = nullspace_torque(N, q, np.zeros(7), q + 0.3, np.eye(7) * 10, np.eye(7))
    # N tau lies in the nullspace of J, orthogonal to every J^T F
    assert np.abs(J @ tau).max() <= 1e-10


def test_wrench_feedforward_exact(panda):
    rng = np.random.default_rng(13)
    zero = ImpedanceGains.from_diagonal(7, 0.0, 0.0, 0.0)
    for _ in range(20):
        q = random_q(panda, rng)
        F = rng.normal(size=6) * 10
        targets = ControllerTargets(forward_kinematics(panda, q), q, F)
        ctrl = CartesianImpedanceController(panda, zero, targets, SafetyLimits(delta_tau_max=1e9, clamp_effort=False))
        out = ctrl.step(q + 0.05, rng.normal(size=7))
        J = geometric_jacobian(panda, q + 0.05)
        np.testing.assert_allclose(out.tau, J.T @ F, atol=1e-12, rtol=0)
        np.testing.assert_allclose(out.tau_ext, wrench_torque(J, F), atol=1e-12, rtol=0)


def test_end_effector_frame_with_isotropic_gains(panda):
    rng = np.random.default_rng(14)
    q = random_q(panda, rng)
    target = CartesianPose(forward_kinematics(panda, q).translation + [0.02, -0.01, 0.03],
                           quat_from_rotvec([0.1, 0.0, -0.05]))
    outs = []
    for frame in ("base", "end_effector"):
        ctrl = CartesianImpedanceController(panda, ImpedanceGains.from_diagonal(7, 300.0, 30.0, 0.0),
                                            ControllerTargets(target, q), SafetyLimits(delta_tau_max=1e9), frame=frame)
        outs.append(ctrl.step(q, np.full(7, 0.1)))
    # K and D are multiples of identity per block, so the frame does not matter
    np.testing.assert_allclose(outs[0].tau_ca, outs[1].tau_ca, atol=1e-10)
    R = forward_kinematics(panda, q).rotation
    np.testing.assert_allclose(outs[1].pose_error[:3], R.T @ outs[0].pose_error[:3], atol=1e-14)


def test_gravity_feedforward(panda):
    q = PANDA_Q0
    ctrl = make_controller(panda, q, gravity_feedforward=True, limits=SafetyLimits(delta_tau_max=1e9))
    out = ctrl.step(q, np.zeros(7))
    np.testing.assert_allclose(out.tau_gravity, gravity_torques(panda, q), atol=1e-14)
    np.testing.assert_allclose(out.tau, gravity_torques(panda, q), atol=1e-12)


def test_critical_damping():
    np.testing.assert_allclose(critical_damping([100.0, 4.0], 0.7), [14.0, 2.8])
    g = ImpedanceGains.from_diagonal(3, 400.0, 25.0, 9.0, damping_ratio=1.0)
    np.testing.assert_allclose(np.diag(g.d_ca), [40, 40, 40, 10, 10, 10])
    np.testing.assert_allclose(np.diag(g.d_ns), [6, 6, 6])


def test_input_validation(panda):
    ctrl = make_controller(panda, PANDA_Q0)
    with pytest.raises(DimensionError):
        ctrl.step(np.zeros(6), np.zeros(7))
    with pytest.raises(NonFiniteInputError):
        ctrl.step(np.full(7, np.nan), np.zeros(7))
    with pytest.raises(NonFiniteInputError):
        ctrl.set_gains(k_ca=np.inf)
    with pytest.raises(NonFiniteInputError):
        ctrl.set_targets(wrench=[np.nan] * 6)
    with pytest.raises(TypeError):
        ctrl.set_targets(pose=[0, 0, 0])
    with pytest.raises(DimensionError):
        ctrl.step(PANDA_Q0, np.zeros(7), J=np.zeros((6, 6)))
    with pytest.raises(ValueError):
        ctrl.submit("bogus")
    with pytest.raises(ValueError):
        make_controller(panda, PANDA_Q0, frame="world")


def test_mailbox_applies_between_steps(panda):
    ctrl = make_controller(panda, PANDA_Q0, filter_fraction=1.0, filter_time=1e-3)
    worker = threading.Thread(target=lambda: ctrl.submit("gains", k_ca=50.0))
    worker.start()
    worker.join()
    # queued, not yet applied
    assert ctrl.gains.k_ca[0, 0] == 200.0
    ctrl.step(PANDA_Q0, np.zeros(7))
    assert ctrl.gains.k_ca[0, 0] == 50.0


# --------------------------------------------------------------------------- trajectories


def test_trajectory_sampling():
    traj = JointTrajectory([0.0, 1.0, 3.0], [[0.0, 0.0], [1.0, 2.0], [1.0, 0.0]])
    np.testing.assert_allclose(traj.sample(-1.0), [0, 0])
    np.testing.assert_allclose(traj.sample(0.5), [0.5, 1.0])
    np.testing.assert_allclose(traj.sample(2.0), [1.0, 1.0])
    np.testing.assert_allclose(traj.sample(5.0), [1.0, 0.0])


def test_trajectory_errors(panda):
    with pytest.raises(EmptyTrajectoryError):
        JointTrajectory([], np.zeros((0, 7)))
    with pytest.raises(NonMonotoneTimestampsError):
        JointTrajectory([0.0, 2.0, 1.0], np.zeros((3, 7)))
    with pytest.raises(DimensionError):
        JointTrajectory([0.0, 1.0], np.zeros((3, 7)))
    with pytest.raises(DimensionError):
        trajectory_target(JointTrajectory([0.0], np.zeros((1, 3))), 0.0, panda)


def test_trajectory_target_is_forward_kinematics(panda):
    traj = JointTrajectory([0.0, 1.0], [PANDA_Q0, PANDA_Q0 + 0.2])
    q_d, pose = trajectory_target(traj, 0.25, panda)
    np.testing.assert_allclose(q_d, PANDA_Q0 + 0.05)
    np.testing.assert_allclose(pose.translation, forward_kinematics(panda, q_d).translation)
