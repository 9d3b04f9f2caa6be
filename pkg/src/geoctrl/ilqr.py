"""Iterative LQR on SO(3) with Lie-algebra perturbation coordinates.

The perturbation of a trajectory ``(X_hat, xi_hat)`` about a nominal
``(X, xi)`` is ``x = [psi; dxi]`` with ``X_hat = X exp(psi)`` and
``dxi = xi_hat - xi``. Its linearized dynamics are

    psi_dot = -ad_xi psi + dxi
    dxi_dot = F dxi + G v

which are discretized per knot and solved by a Riccati-style backward pass.
The forward pass integrates the nonlinear dynamics with the Lie-Euler step and
applies the affine policy on the log error.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import expm

from geoctrl.rigid_body import euler_poincare_rhs, num_steps
from geoctrl.so3 import ad_of, exp_so3, hat, log_so3

log = logging.getLogger(__name__)

COST_MODELS = ("proposed", "trace")
STAGE_COSTS = ("integral", "sum")
DISCRETIZATIONS = ("exact", "euler")
LINE_SEARCH_STEPS = tuple(0.5**i for i in range(7))  # 1 ... 1/64

# Angle within this distance of pi is reported as a branch-cut hit.
BRANCH_CUT_TOL = 1e-12


class IllConditionedError(np.linalg.LinAlgError):
    """q_uu could not be inverted reliably during the backward pass."""


@dataclass(frozen=True)
class CostWeights:
    """Stage weights ``Q`` (6x6), ``S`` (3x3) and terminal weight ``V`` (6x6)."""

    Q: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for name, shape in (("Q", (6, 6)), ("S", (3, 3)), ("V", (6, 6))):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.ndim == 0:
                M = float(M) * np.eye(shape[0])
            elif M.ndim == 1:
                M = np.diag(M)
            if M.shape != shape:
                raise ValueError(f"cost weight {name} must be {shape}, got {M.shape}")
            if np.abs(M - M.T).max() > 1e-12:
                raise ValueError(f"cost weight {name} is not symmetric")
            lo = np.linalg.eigvalsh(M).min()
            if name == "S" and lo <= 0.0:
                raise ValueError("cost weight S must be positive definite")
            if lo < -1e-12:
                raise ValueError(f"cost weight {name} must be positive semidefinite")
            object.__setattr__(self, name, M)

    def per_step(self, dt: float, stage_cost: str = "integral") -> "CostWeights":
        """Weights of the discrete problem. ``integral`` treats ``Q`` and ``S`` as
        running-cost rates (scaled by ``dt``); ``sum`` uses them per knot as is."""
        if stage_cost == "sum":
            return self
        if stage_cost != "integral":
            raise ValueError(f"unknown stage cost {stage_cost!r}; expected {STAGE_COSTS}")
        return CostWeights(self.Q * dt, self.S * dt, self.V)


@dataclass(frozen=True)
class GoalSpec:
    R_g: np.ndarray
    omega_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    u_g: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def controls(self, n: int) -> np.ndarray:
        u = np.asarray(self.u_g, dtype=float)
        return np.broadcast_to(u, (n, 3)) if u.ndim == 1 else u[:n]


@dataclass(frozen=True)
class NominalTrajectory:
    """Knots ``R[k], omega[k]`` for ``k = 0..N`` and torques ``u[k]`` for ``k < N``."""

    R: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return len(self.u)

    @property
    def t_f(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class AffinePolicy:
    K: np.ndarray  # (N, 3, 6)
    v_ff: np.ndarray  # (N, 3)

    @classmethod
    def zeros(cls, n: int) -> "AffinePolicy":
        return cls(np.zeros((n, 3, 6)), np.zeros((n, 3)))


@dataclass
class ConvergenceReport:
    costs: List[float]  # costs[0] is the initial trajectory
    control_changes: List[float]  # |U_{i+1} - U_i| per iteration
    distance_to_final: List[float]  # |U_i - U_*|, filled after the run
    iterations: int
    converged: bool
    diverged: bool = False
    step_sizes: List[float] = field(default_factory=list)
    branch_cut_hits: int = 0
    message: str = ""

    def iterations_to_reduction(self, fraction: float = 0.9) -> Optional[int]:
        """First iteration whose cost is at most ``(1 - fraction)`` of the initial cost."""
        target = (1.0 - fraction) * self.costs[0]
        for i, c in enumerate(self.costs):
            if c <= target:
                return i
        return None


# --------------------------------------------------------------------------- dynamics


def step(R, omega, u, J, dt):
    """Lie-Euler step used by every rollout in this module."""
    return R @ exp_so3(omega * dt), omega + dt * euler_poincare_rhs(omega, u, J)


def rollout_controls(R0, omega0, controls, J, dt) -> NominalTrajectory:
    controls = np.asarray(controls, dtype=float)
    n = len(controls)
    R = np.empty((n + 1, 3, 3))
    W = np.empty((n + 1, 3))
    R[0], W[0] = R0, omega0
    for k in range(n):
        R[k + 1], W[k + 1] = step(R[k], W[k], controls[k], J, dt)
    return NominalTrajectory(R, W, controls.copy(), dt)


def initial_trajectory(R0, omega0, J, dt: float, t_f: float, controls=None) -> NominalTrajectory:
    """Rollout of ``controls`` (zeros by default) from ``(R0, omega0)``."""
    n = num_steps(dt, t_f)
    u = np.zeros((n, 3)) if controls is None else np.asarray(controls, dtype=float)
    return rollout_controls(np.asarray(R0, dtype=float), np.asarray(omega0, dtype=float), u, J, dt)


# --------------------------------------------------------------------------- linearization


def linearize_error_dynamics(xi_d) -> np.ndarray:
    """The ``(psi, psi)`` block ``-ad_{xi_d}``; the ``(psi, dxi)`` block is identity."""
    return -ad_of(xi_d)


def linearize_twist_dynamics(omega, J) -> Tuple[np.ndarray, np.ndarray]:
    """Jacobians ``F = d f / d omega`` and ``G = d f / d u`` of the body-rate dynamics."""
    omega = np.asarray(omega, dtype=float)
    Jinv = np.linalg.inv(J)
    # d/dw (w x Jw) = hat(w) J - hat(Jw)
    F = Jinv @ (hat(omega) @ J - hat(J @ omega))
    return F, Jinv


def continuous_model(omega, J) -> Tuple[np.ndarray, np.ndarray]:
    F, G = linearize_twist_dynamics(omega, J)
    A = np.zeros((6, 6))
    A[:3, :3] = linearize_error_dynamics(omega)
    A[:3, 3:] = np.eye(3)
    A[3:, 3:] = F
    B = np.zeros((6, 3))
    B[3:, :] = G
    return A, B


def zoh_discretize(A, B, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def euler_discretize(A, B, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return np.eye(A.shape[0]) + A * dt, np.asarray(B, dtype=float) * dt


def linearize_trajectory(traj: NominalTrajectory, J, discretization: str = "exact"):
    """Discrete ``(A_n, B_n)`` for every step of ``traj``."""
    if discretization == "exact":
        disc = zoh_discretize
    elif discretization == "euler":
        disc = euler_discretize
    else:
        raise ValueError(f"unknown discretization {discretization!r}; expected {DISCRETIZATIONS}")
    n = traj.n_steps
    A_n = np.empty((n, 6, 6))
    B_n = np.empty((n, 6, 3))
    for k in range(n):
        A_n[k], B_n[k] = disc(*continuous_model(traj.omega[k], J), traj.dt)
    return A_n, B_n


# --------------------------------------------------------------------------- costs


def desired_perturbation(traj: NominalTrajectory, goal: GoalSpec):
    """Per-knot targets ``x_d = [log(X^{-1} X_g); xi_g - xi]`` and ``v_d = u_g - u``.

    Returns ``(x_d, v_d, branch_cut_hits)``.
    """
    RtRg = np.swapaxes(traj.R, -1, -2) @ goal.R_g
    psi = log_so3(RtRg)
    hits = int(np.sum(np.abs(np.linalg.norm(psi, axis=-1) - np.pi) < BRANCH_CUT_TOL))
    x_d = np.concatenate([psi, goal.omega_g - traj.omega], axis=-1)
    v_d = goal.controls(traj.n_steps) - traj.u
    return x_d, v_d, hits


def _check_block_diagonal(V):
    if np.abs(V[:3, 3:]).max() > 0.0 or np.abs(V[3:, :3]).max() > 0.0:
        raise ValueError("terminal weight must be block diagonal in (psi, omega)")


def terminal_cost(R, omega, goal: GoalSpec, model: str, V):
    """Terminal cost at ``(R, omega)`` with gradient and Hessian in ``[psi; dxi]``.

    ``proposed``: ``1/2 |psi - psi*|^2_{V_psi} + 1/2 |omega - omega_g|^2_{V_omega}``
    with ``exp(psi*) = R^{-1} R_g``; derivatives are taken treating the error as
    ``psi - psi*`` (gradient ``-V x_d``, Hessian ``V``).

    ``trace``: ``1/2 tr((I - M)^T V_psi (I - M)) + 1/2 |omega - omega_g|^2_{V_omega}``
    with ``M = R_g^{-1} R``; exact derivatives of ``psi -> cost(R exp(psi))``.
    """
    V = np.asarray(V, dtype=float)
    _check_block_diagonal(V)
    Vp, Vw = V[:3, :3], V[3:, 3:]
    dw = np.asarray(omega, dtype=float) - goal.omega_g
    grad = np.zeros(6)
    hess = np.zeros((6, 6))
    grad[3:] = Vw @ dw
    hess[3:, 3:] = Vw
    w_cost = 0.5 * float(dw @ Vw @ dw)

    if model == "proposed":
        psi_star = log_so3(np.asarray(R).T @ goal.R_g)
        grad[:3] = -Vp @ psi_star
        hess[:3, :3] = Vp
        return 0.5 * float(psi_star @ Vp @ psi_star) + w_cost, grad, hess
    if model != "trace":
        raise ValueError(f"unknown cost model {model!r}; expected {COST_MODELS}")

    M = np.asarray(goal.R_g).T @ np.asarray(R)
    D = np.eye(3) - M
    E = hat(np.eye(3))  # E[i] = hat(e_i)
    ME = M @ E
    WD = Vp @ D
    for i in range(3):
        grad[i] = -np.trace(D.T @ Vp @ ME[i])
        for j in range(i, 3):
            # second-order terms of M exp(psi) = M (I + psi^ + psi^2/2 + ...)
            sym = E[i] @ E[j] + E[j] @ E[i]
            h = np.trace(ME[i].T @ Vp @ ME[j]) - 0.5 * np.trace(WD.T @ M @ sym)
            hess[i, j] = hess[j, i] = h
    return 0.5 * float(np.trace(D.T @ Vp @ D)) + w_cost, grad, hess


def psd_floor(H, floor: float = 0.0) -> np.ndarray:
    """Symmetric part of ``H`` with eigenvalues clipped from below at ``floor``."""
    Hs = 0.5 * (H + H.T)
    lam, U = np.linalg.eigh(Hs)
    return (U * np.maximum(lam, floor)) @ U.T


def trajectory_cost(
    traj: NominalTrajectory, goal: GoalSpec, w: CostWeights, model: str = "proposed", stage_cost: str = "integral"
) -> float:
    """Total cost: stage terms at every step plus the terminal model cost."""
    w = w.per_step(traj.dt, stage_cost)
    x_d, v_d, _ = desired_perturbation(traj, goal)
    stage = 0.5 * np.einsum("ni,ij,nj->", x_d[:-1], w.Q, x_d[:-1])
    stage += 0.5 * np.einsum("ni,ij,nj->", v_d, w.S, v_d)
    term, _, _ = terminal_cost(traj.R[-1], traj.omega[-1], goal, model, w.V)
    return float(stage + term)


# --------------------------------------------------------------------------- passes


def backward_pass(A_n, B_n, x_d, v_d, w: CostWeights, terminal=None, cond_limit: float = 1e12) -> AffinePolicy:
    """Dynamic-programming solve of the local LQR problem about ``x = 0``.

    ``terminal`` optionally overrides the seed ``(p_x, p_xx) = (-V x_d[N], V)``.
    """
    n = len(A_n)
    if terminal is None:
        p_x = -w.V @ x_d[n]
        p_xx = w.V.copy()
    else:
        p_x, p_xx = (np.asarray(a, dtype=float) for a in terminal)
    K = np.empty((n, 3, 6))
    v_ff = np.empty((n, 3))
    for k in range(n - 1, -1, -1):
        A, B = A_n[k], B_n[k]
        PA = p_xx @ A
        q_x = -w.Q @ x_d[k] + A.T @ p_x
        q_u = -w.S @ v_d[k] + B.T @ p_x
        q_xx = w.Q + A.T @ PA
        q_ux = B.T @ PA
        q_uu = w.S + B.T @ p_xx @ B
        cond = np.linalg.cond(q_uu)
        if not np.isfinite(cond) or cond > cond_limit:
            raise IllConditionedError(f"q_uu is ill-conditioned at knot {k} (cond ~ {cond:.3e})")
        sol = np.linalg.solve(q_uu, np.column_stack([q_u, q_ux]))
        v_ff[k] = -sol[:, 0]
        K[k] = -sol[:, 1:]
        p_x = q_x + q_ux.T @ v_ff[k]
        p_xx = q_xx + q_ux.T @ K[k]
        p_xx = 0.5 * (p_xx + p_xx.T)
    return AffinePolicy(K, v_ff)


def forward_rollout(traj: NominalTrajectory, policy: AffinePolicy, J, dt: Optional[float] = None, gamma=1.0) -> NominalTrajectory:
    """Apply ``u + gamma v_ff + K [log(X^{-1} X_hat); xi_hat - xi]`` along the nonlinear dynamics."""
    dt = traj.dt if dt is None else dt
    n = traj.n_steps
    if len(policy.v_ff) != n:
        raise ValueError(f"policy has {len(policy.v_ff)} knots, trajectory has {n} steps")
    gammas = np.broadcast_to(np.asarray(gamma, dtype=float), (n,))
    R = np.empty_like(traj.R)
    W = np.empty_like(traj.omega)
    U = np.empty_like(traj.u)
    R[0], W[0] = traj.R[0], traj.omega[0]
    for k in range(n):
        dx = np.concatenate([log_so3(traj.R[k].T @ R[k]), W[k] - traj.omega[k]])
        U[k] = traj.u[k] + gammas[k] * policy.v_ff[k] + policy.K[k] @ dx
        R[k + 1], W[k + 1] = step(R[k], W[k], U[k], J, dt)
        if not (np.all(np.isfinite(W[k + 1])) and np.all(np.isfinite(U[k]))):
            raise FloatingPointError(f"rollout diverged at step {k}")
    return NominalTrajectory(R, W, U, dt)


def control_change_norm(U_a, U_b) -> float:
    """Max over knots of the per-knot Euclidean norm of ``U_a - U_b``."""
    U_a = np.asarray(U_a, dtype=float)
    U_b = np.asarray(U_b, dtype=float)
    if U_a.shape != U_b.shape:
        raise ValueError(f"control sequences differ in shape: {U_a.shape} vs {U_b.shape}")
    if U_a.size == 0:
        return 0.0
    return float(np.linalg.norm(U_a - U_b, axis=-1).max())


def _terminal_seed(traj, goal, w, model):
    if model == "proposed":
        return None
    _, g, H = terminal_cost(traj.R[-1], traj.omega[-1], goal, model, w.V)
    return g, psd_floor(H)


def _line_search(traj, policy, goal, w, J, cost, cost_model, stage_cost, enabled):
    """Full step, or backtracking over ``LINE_SEARCH_STEPS`` until the cost does
    not increase. Divergent trials are skipped; if every trial diverges the last
    error is raised. Without a decrease the smallest finite step is taken."""
    candidates = LINE_SEARCH_STEPS if enabled else (1.0,)
    new = None
    err: Optional[Exception] = None
    for gamma in candidates:
        try:
            with np.errstate(over="raise", invalid="raise"):
                trial = forward_rollout(traj, policy, J, gamma=gamma)
                trial_cost = trajectory_cost(trial, goal, w, cost_model, stage_cost)
        except FloatingPointError as exc:
            err = exc
            continue
        new = (trial, trial_cost, gamma)
        if trial_cost <= cost:
            break
    if new is None:
        raise FloatingPointError(str(err))
    return new


def ilqr_solve(
    init: NominalTrajectory,
    goal: GoalSpec,
    w: CostWeights,
    J,
    max_iters: int = 50,
    tol: float = 1e-6,
    cost_model: str = "proposed",
    line_search: bool = False,
    discretization: str = "exact",
    stage_cost: str = "integral",
):
    """Iterate backward pass and forward rollout until the control update is below ``tol``.

    Returns ``(trajectory, policy, report)``. On a divergent rollout or an
    ill-conditioned backward pass the lowest-cost iterate seen so far is returned
    with ``report.converged = False``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if cost_model not in COST_MODELS:
        raise ValueError(f"unknown cost model {cost_model!r}; expected {COST_MODELS}")
    traj = init
    wd = w.per_step(traj.dt, stage_cost)
    cost = trajectory_cost(traj, goal, w, cost_model, stage_cost)
    costs = [cost]
    changes: List[float] = []
    steps: List[float] = []
    history = [traj.u]
    best = (cost, traj, AffinePolicy.zeros(traj.n_steps))
    policy = best[2]
    converged = diverged = False
    hits = 0
    message = "iteration limit reached"

    for it in range(max_iters):
        try:
            x_d, v_d, h = desired_perturbation(traj, goal)
            hits += h
            A_n, B_n = linearize_trajectory(traj, J, discretization)
            policy = backward_pass(A_n, B_n, x_d, v_d, wd, _terminal_seed(traj, goal, wd, cost_model))
            new = _line_search(traj, policy, goal, w, J, cost, cost_model, stage_cost, line_search)
        except (FloatingPointError, IllConditionedError) as exc:
            diverged = True
            message = f"stopped at iteration {it + 1}: {exc}"
            log.warning(message)
            break
        trial, trial_cost, gamma = new
        change = control_change_norm(trial.u, traj.u)
        changes.append(change)
        steps.append(gamma)
        traj, cost = trial, trial_cost
        costs.append(cost)
        history.append(traj.u)
        if cost < best[0]:
            best = (cost, traj, policy)
        log.debug("iter %d cost %.6e change %.3e gamma %g", it + 1, cost, change, gamma)
        if change < tol:
            converged = True
            message = f"converged in {it + 1} iterations"
            break

    if diverged:
        _, traj, policy = best
    final_u = traj.u
    report = ConvergenceReport(
        costs=costs,
        control_changes=changes,
        distance_to_final=[control_change_norm(u, final_u) for u in history],
        iterations=len(changes),
        converged=converged,
        diverged=diverged,
        step_sizes=steps,
        branch_cut_hits=hits,
        message=message,
    )
    return traj, policy, report
