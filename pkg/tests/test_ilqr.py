import numpy as np
import pytest

from geoctrl.ilqr import (
    AffinePolicy,
    CostWeights,
    GoalSpec,
    IllConditionedError,
    backward_pass,
    continuous_model,
    control_change_norm,
    desired_perturbation,
    euler_discretize,
    forward_rollout,
    ilqr_solve,
    initial_trajectory,
    linearize_error_dynamics,
    linearize_trajectory,
    linearize_twist_dynamics,
    psd_floor,
    terminal_cost,
    trajectory_cost,
    zoh_discretize,
)
from geoctrl.rigid_body import euler_poincare_rhs
from geoctrl.so3 import error_angle, exp_so3, hat, log_so3
from conftest import random_rotations

J135 = np.diag([1.0, 3.0, 5.0])
J_TABLE2 = np.diag([5.0, 10.0, 15.0])
Q_TABLE2 = np.array([0.0157, 0.5627, 0.2839, -0.7762])


def table2_goal():
    from geoctrl.harness.config import quat_to_matrix

    return GoalSpec(quat_to_matrix(Q_TABLE2))


def test_error_dynamics_block():
    assert np.array_equal(linearize_error_dynamics(np.zeros(3)), np.zeros((3, 3)))
    assert np.array_equal(linearize_error_dynamics([0.0, 0.0, 1.0]), -hat([0.0, 0.0, 1.0]))


def test_twist_jacobians_examples():
    F, G = linearize_twist_dynamics(np.zeros(3), J135)
    assert np.array_equal(F, np.zeros((3, 3)))
    assert np.allclose(G, np.linalg.inv(J135))
    F, _ = linearize_twist_dynamics([0.4, -1.0, 2.0], np.eye(3))
    assert np.allclose(F, 0.0, atol=1e-15)


def test_twist_jacobian_matches_central_differences():
    w = np.array([1.0, 0.0, 1.0])
    F, G = linearize_twist_dynamics(w, J135)
    h = 1e-5
    fd = np.column_stack(
        [(euler_poincare_rhs(w + h * e, 0, J135) - euler_poincare_rhs(w - h * e, 0, J135)) / (2 * h) for e in np.eye(3)]
    )
    assert np.abs(F - fd).max() <= 1e-6
    fdu = np.column_stack(
        [(euler_poincare_rhs(w, h * e, J135) - euler_poincare_rhs(w, -h * e, J135)) / (2 * h) for e in np.eye(3)]
    )
    assert np.abs(G - fdu).max() <= 1e-6


def test_error_linearization_over_one_short_step():
    """psi after a step of the exact error kinematics vs the linear model."""
    xi = np.array([0.5, -0.3, 0.8])
    for eps in (1e-2, 1e-3):
        psi0, dxi = eps * np.array([0.3, 0.5, -0.2]), eps * np.array([-0.4, 0.1, 0.6])
        h = 1e-3
        # perturbed attitude R exp(psi) driven by xi + dxi, nominal by xi
        R = exp_so3(psi0) @ exp_so3((xi + dxi) * h)
        psi1 = log_so3(exp_so3(xi * h).T @ R)
        lin = psi0 + h * (linearize_error_dynamics(xi) @ psi0 + dxi)
        assert np.linalg.norm(psi1 - lin) <= 5 * (h**2 * eps + eps**2 * h)


def test_zoh_examples():
    B = np.array([[0.0], [1.0]])
    A_n, B_n = zoh_discretize(np.zeros((2, 2)), B, 0.1)
    assert np.allclose(A_n, np.eye(2))
    assert np.allclose(B_n, 0.1 * B)
    a, dt = -0.7, 0.3
    A_n, B_n = zoh_discretize([[a]], [[1.0]], dt)
    assert A_n[0, 0] == pytest.approx(np.exp(a * dt), rel=1e-14)
    assert B_n[0, 0] == pytest.approx((np.exp(a * dt) - 1) / a, rel=1e-14)


def test_zoh_departs_from_euler_at_second_order():
    A, B = continuous_model(np.array([0.5, -1.0, 0.3]), J135)
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        errs.append(np.linalg.norm(zoh_discretize(A, B, dt)[0] - euler_discretize(A, B, dt)[0]))
    assert np.allclose(np.log2(np.array(errs[:-1]) / errs[1:]), 2.0, atol=0.05)


def test_desired_perturbation_examples():
    traj = initial_trajectory(np.eye(3), np.zeros(3), J135, 0.1, 1.0)
    x_d, v_d, hits = desired_perturbation(traj, GoalSpec(np.eye(3)))
    assert not x_d.any() and not v_d.any() and hits == 0
    x_d, _, _ = desired_perturbation(traj, GoalSpec(exp_so3([0, 0, np.pi / 2])))
    assert np.allclose(x_d[:, :3], [0, 0, np.pi / 2])
    goal = table2_goal()
    traj = initial_trajectory(np.eye(3), np.zeros(3), J_TABLE2, 0.01, 3.0)
    x_d, _, _ = desired_perturbation(traj, goal)
    assert x_d.shape == (301, 6)
    assert np.allclose(x_d[:, :3], log_so3(goal.R_g), atol=0, rtol=0)


def test_backward_pass_zero_targets():
    n = 4
    A = np.tile(np.eye(6), (n, 1, 1))
    B = np.tile(np.vstack([np.zeros((3, 3)), np.eye(3)]), (n, 1, 1))
    w = CostWeights(np.eye(6), np.eye(3), np.eye(6))
    pol = backward_pass(A, B, np.zeros((n + 1, 6)), np.zeros((n, 3)), w)
    assert not pol.v_ff.any()


def test_backward_pass_single_knot_scalar_analog():
    a, b, q, s, v = 0.9, 0.2, 1.0, 0.5, 3.0
    A = (a * np.eye(6))[None]
    B = np.vstack([np.zeros((3, 3)), b * np.eye(3)])[None]
    x_d = np.array([[0.0] * 6, [0.0, 0.0, 0.0, 1.0, 2.0, 3.0]])
    v_d = np.array([[0.1, 0.2, 0.3]])
    pol = backward_pass(A, B, x_d, v_d, CostWeights(q, s, v))
    # scalar Riccati step per velocity axis
    gain = -(b * v * a) / (s + b * b * v)
    for i in range(3):
        ff = -(-s * v_d[0, i] + b * (-v * x_d[1, 3 + i])) / (s + b * b * v)
        assert pol.v_ff[0, i] == pytest.approx(ff, rel=1e-14)
        assert pol.K[0, i, 3 + i] == pytest.approx(gain, rel=1e-14)
    assert np.allclose(pol.K[0, :, :3], 0.0)


def test_backward_pass_ill_conditioned():
    A = np.eye(6)[None]
    B = np.zeros((1, 6, 3))
    w = CostWeights(1.0, np.diag([1.0, 1.0, 1e-14]), 1.0)
    with pytest.raises(IllConditionedError):
        backward_pass(A, B, np.zeros((2, 6)), np.zeros((1, 3)), w)


def test_forward_rollout_identity_policy(rng):
    traj = initial_trajectory(np.eye(3), np.array([0.2, -0.1, 0.4]), J135, 0.05, 1.0, controls=rng.normal(size=(20, 3)))
    same = forward_rollout(traj, AffinePolicy.zeros(20), J135)
    assert np.array_equal(same.R, traj.R) and np.array_equal(same.omega, traj.omega) and np.array_equal(same.u, traj.u)
    pol = AffinePolicy(np.zeros((20, 3, 6)), rng.normal(size=(20, 3)))
    same = forward_rollout(traj, pol, J135, gamma=0.0)
    assert np.array_equal(same.u, traj.u) and np.array_equal(same.R, traj.R)
    with pytest.raises(ValueError):
        forward_rollout(traj, AffinePolicy.zeros(5), J135)


def test_terminal_cost_at_goal():
    goal = GoalSpec(exp_so3([0.3, 0.2, -0.1]))
    V = 1000.0 * np.eye(6)
    for model in ("proposed", "trace"):
        value, g, H = terminal_cost(goal.R_g, np.zeros(3), goal, model, V)
        assert value == pytest.approx(0.0, abs=1e-20)
        assert np.allclose(g, 0.0, atol=1e-10)
        assert np.linalg.eigvalsh(H).min() >= -1e-9


def test_proposed_terminal_value_is_quadratic_in_angle():
    axis = np.array([2.0, -1.0, 2.0]) / 3.0
    for theta in (0.1, 1.0, 3.0, 0.995 * np.pi):
        goal = GoalSpec(exp_so3(theta * axis))
        value, g, _ = terminal_cost(np.eye(3), np.zeros(3), goal, "proposed", 1000.0 * np.eye(6))
        assert value == pytest.approx(500.0 * theta**2, rel=1e-10)
        assert np.linalg.norm(g) == pytest.approx(1000.0 * theta, rel=1e-10)


def test_trace_gradient_vanishes_near_pi():
    theta = 0.995 * np.pi
    goal = GoalSpec(exp_so3(theta * np.array([0.0, 0.6, 0.8])))
    V = 1000.0 * np.eye(6)
    g_trace = terminal_cost(np.eye(3), np.zeros(3), goal, "trace", V)[1]
    g_prop = terminal_cost(np.eye(3), np.zeros(3), goal, "proposed", V)[1]
    ratio = np.linalg.norm(g_trace) / np.linalg.norm(g_prop)
    # 1/2 |I - M|_F^2 = 2 (1 - cos t) for a rotation by t, so the gradient is 2 sin t
    assert ratio == pytest.approx(2.0 * np.sin(theta) / theta, rel=1e-9)
    assert ratio < 0.011


def _fd_terminal(R, w, goal, V, h=1e-4):
    def f(x):
        return terminal_cost(R @ exp_so3(x[:3]), w + x[3:], goal, "trace", V)[0]

    g = np.zeros(6)
    H = np.zeros((6, 6))
    E = np.eye(6) * h
    for i in range(6):
        g[i] = (f(E[i]) - f(-E[i])) / (2 * h)
        for j in range(6):
            H[i, j] = (f(E[i] + E[j]) - f(E[i] - E[j]) - f(-E[i] + E[j]) + f(-E[i] - E[j])) / (4 * h * h)
    return g, H


def test_trace_derivatives_match_finite_differences(rng):
    V = np.diag([100.0, 200.0, 300.0, 1.0, 2.0, 3.0])
    for R, R_g in random_rotations(rng, 10).reshape(5, 2, 3, 3):
        goal = GoalSpec(R_g, rng.normal(size=3))
        w = rng.normal(size=3)
        _, g, H = terminal_cost(R, w, goal, "trace", V)
        g_fd, H_fd = _fd_terminal(R, w, goal, V)
        assert np.abs(g - g_fd).max() <= 1e-6 * max(1.0, np.abs(g).max())
        assert np.abs(H - H_fd).max() <= 1e-5 * max(1.0, np.abs(H).max())


def test_terminal_weight_must_be_block_diagonal():
    V = np.eye(6)
    V[0, 4] = V[4, 0] = 0.1
    with pytest.raises(ValueError, match="block diagonal"):
        terminal_cost(np.eye(3), np.zeros(3), GoalSpec(np.eye(3)), "proposed", V)


def test_psd_floor():
    H = np.diag([2.0, -1.0, 0.5])
    assert np.allclose(psd_floor(H), np.diag([2.0, 0.0, 0.5]))


def test_cost_weights_validation():
    w = CostWeights(0.0, 0.01, [1000.0] * 6)
    assert w.Q.shape == (6, 6) and np.allclose(w.S, 0.01 * np.eye(3))
    assert np.allclose(w.per_step(0.01).S, 1e-4 * np.eye(3))
    assert w.per_step(0.01, "sum") is w
    with pytest.raises(ValueError, match="S"):
        CostWeights(0.0, 0.0, 1.0)
    with pytest.raises(ValueError, match="semidefinite"):
        CostWeights(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        CostWeights(np.eye(5), 1.0, 1.0)


def test_control_change_norm():
    U = np.zeros((4, 3))
    assert control_change_norm(U, U) == 0.0
    W = U.copy()
    W[2] = [3.0, 4.0, 0.0]
    assert control_change_norm(W, U) == 5.0
    with pytest.raises(ValueError):
        control_change_norm(U, np.zeros((3, 3)))


def test_solve_at_goal_takes_one_iteration():
    init = initial_trajectory(np.eye(3), np.zeros(3), J_TABLE2, 0.01, 1.0)
    traj, _, rep = ilqr_solve(init, GoalSpec(np.eye(3)), CostWeights(0.0, 0.01, 1000.0), J_TABLE2)
    assert rep.converged and rep.iterations == 1
    assert rep.control_changes == [0.0]
    assert not traj.u.any()


def test_solve_isotropic_body_converges_fast():
    goal = GoalSpec(exp_so3([0.0, 1.2, -0.6]))
    init = initial_trajectory(np.eye(3), np.zeros(3), 10.0 * np.eye(3), 0.02, 2.0)
    traj, _, rep = ilqr_solve(init, goal, CostWeights(0.0, 0.01, 1000.0), 10.0 * np.eye(3), max_iters=30)
    assert rep.converged and rep.iterations <= 10
    assert error_angle(traj.R[-1], goal.R_g) < 0.05
    assert np.all(np.diff(rep.distance_to_final[-4:]) <= 1e-12)
    assert np.all(np.diff(rep.costs[-4:]) <= 1e-9)


def test_first_iteration_moves_toward_goal():
    goal = table2_goal()
    init = initial_trajectory(np.eye(3), np.zeros(3), J_TABLE2, 0.01, 3.0)
    traj, _, rep = ilqr_solve(init, goal, CostWeights(0.0, 0.01, 1000.0), J_TABLE2, max_iters=1)
    assert error_angle(traj.R[-1], goal.R_g) < error_angle(init.R[-1], goal.R_g)
    assert rep.costs[1] < rep.costs[0]
    assert not rep.converged and rep.iterations == 1


def test_trace_model_full_step_divergence_is_reported():
    goal = table2_goal()
    init = initial_trajectory(np.eye(3), np.zeros(3), J_TABLE2, 0.01, 3.0)
    traj, _, rep = ilqr_solve(init, goal, CostWeights(0.0, 0.01, 1000.0), J_TABLE2, max_iters=5, cost_model="trace")
    # either the full step blows up or it fails to converge in 5 iterations
    assert not rep.converged
    assert np.all(np.isfinite(traj.u))
    assert trajectory_cost(traj, goal, CostWeights(0.0, 0.01, 1000.0), "trace") <= rep.costs[0]


def test_linearize_trajectory_shapes():
    init = initial_trajectory(np.eye(3), np.array([0.1, 0.2, 0.3]), J135, 0.1, 1.0)
    for disc in ("exact", "euler"):
        A_n, B_n = linearize_trajectory(init, J135, disc)
        assert A_n.shape == (10, 6, 6) and B_n.shape == (10, 6, 3)
    with pytest.raises(ValueError):
        linearize_trajectory(init, J135, "tustin")


def test_table2_cost_is_nonincreasing_with_full_steps():
    goal = table2_goal()
    init = initial_trajectory(np.eye(3), np.zeros(3), J_TABLE2, 0.01, 3.0)
    _, _, rep = ilqr_solve(init, goal, CostWeights(0.0, 0.01, 1000.0), J_TABLE2, max_iters=25)
    assert set(rep.step_sizes) == {1.0}
    assert np.all(np.diff(rep.costs) <= 0.0)


def test_converged_terminal_perturbation_is_small():
    goal = GoalSpec(exp_so3([0.0, 1.2, -0.6]))
    J = 10.0 * np.eye(3)
    init = initial_trajectory(np.eye(3), np.zeros(3), J, 0.02, 2.0)
    traj, _, rep = ilqr_solve(init, goal, CostWeights(0.0, 0.01, 1000.0), J, max_iters=30)
    x_d, _, _ = desired_perturbation(traj, goal)
    # with V = 1000 and S = 0.01 the optimal terminal miss is a few 1e-3 rad
    assert rep.converged and np.linalg.norm(x_d[-1, :3]) < 5e-3
