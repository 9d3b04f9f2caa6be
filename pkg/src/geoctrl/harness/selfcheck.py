"""Small embedded property suite run by ``geo-ctrl check``.

Each check is quick and self-contained; the full test suite lives in ``tests/``.
"""
from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from geoctrl.harness.config import matrix_to_quat, quat_to_matrix
from geoctrl.ilqr import CostWeights, backward_pass, terminal_cost, GoalSpec
from geoctrl.pd_tracking import solve_lyapunov
from geoctrl.rigid_body import BodyState, kinetic_energy, simulate
from geoctrl.so3 import exp_so3, hat, is_rotation, log_so3, vee


def _random_vectors(rng, n, max_norm):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(1e-6, max_norm, size=(n, 1))


def check_hat_vee(rng) -> str:
    v = rng.normal(size=(1000, 3))
    err = np.abs(vee(hat(v)) - v).max()
    assert err == 0.0, f"vee(hat(v)) error {err:.3g}"
    return "exact"


def check_exp_log(rng) -> str:
    phi = _random_vectors(rng, 10000, np.pi - 1e-3)
    R = exp_so3(phi)
    assert np.all(is_rotation(R)), "exp left SO(3)"
    err = np.linalg.norm(log_so3(R) - phi, axis=-1).max()
    assert err <= 1e-9, f"roundtrip error {err:.3g}"
    return f"max error {err:.2e}"


def check_quaternion(rng) -> str:
    R = exp_so3(_random_vectors(rng, 1000, np.pi))
    q = matrix_to_quat(R)
    assert np.abs(np.linalg.norm(q, axis=-1) - 1.0).max() <= 1e-12, "non-unit quaternion"
    err = np.abs(quat_to_matrix(q) - R).max()
    assert err <= 1e-12, f"quaternion roundtrip error {err:.3g}"
    return f"max error {err:.2e}"


def check_lyapunov(rng) -> str:
    worst = 0.0
    for _ in range(20):
        V = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        K = V @ np.diag(rng.uniform(0.1, 10.0, 3)) @ V.T + 0.1 * hat(rng.normal(size=3))
        cert = solve_lyapunov(K, np.eye(3))
        assert np.linalg.eigvalsh(cert.P).min() > 0.0, "P not positive definite"
        worst = max(worst, cert.residual)
    assert worst <= 1e-8, f"residual {worst:.3g}"
    return f"max residual {worst:.2e}"


def check_free_rotation(rng) -> str:
    J = np.diag([1.0, 3.0, 5.0])
    s0 = BodyState(np.eye(3), np.array([1.0, 0.1, 0.1]))
    states = simulate(s0, np.zeros((1000, 3)), J, 1e-3, 1.0, method="rk4")
    e0 = kinetic_energy(s0.omega, J)
    drift = abs(kinetic_energy(states[-1].omega, J) - e0) / e0
    assert drift <= 1e-6, f"energy drift {drift:.3g}"
    return f"energy drift {drift:.2e}"


def check_terminal_gradient(rng) -> str:
    goal = GoalSpec(exp_so3(np.array([0.3, -1.2, 0.8])), np.zeros(3), np.zeros(3))
    V = np.diag([10.0, 20.0, 30.0, 1.0, 2.0, 3.0])
    R = exp_so3(np.array([0.1, 0.2, -0.3]))
    w = np.array([0.1, -0.2, 0.3])
    _, g, _ = terminal_cost(R, w, goal, "trace", V)
    h = 1e-6
    fd = np.zeros(6)
    for i in range(6):
        d = np.zeros(6)
        d[i] = h
        fp = terminal_cost(R @ exp_so3(d[:3]), w + d[3:], goal, "trace", V)[0]
        fm = terminal_cost(R @ exp_so3(-d[:3]), w - d[3:], goal, "trace", V)[0]
        fd[i] = (fp - fm) / (2 * h)
    err = np.abs(fd - g).max() / max(1.0, np.abs(g).max())
    assert err <= 1e-6, f"gradient mismatch {err:.3g}"
    return f"relative mismatch {err:.2e}"


def check_backward_pass(rng) -> str:
    # scalar-free sanity: zero targets give zero feedforward
    N = 5
    A = np.tile(np.eye(6), (N, 1, 1))
    B = np.tile(np.vstack([np.zeros((3, 3)), np.eye(3)]), (N, 1, 1))
    w = CostWeights(np.eye(6), np.eye(3), np.eye(6))
    policy = backward_pass(A, B, np.zeros((N + 1, 6)), np.zeros((N, 3)), w)
    assert np.abs(policy.v_ff).max() == 0.0, "nonzero feedforward for zero targets"
    assert np.all(np.isfinite(policy.K)), "non-finite gains"
    return "ok"


CHECKS: List[Tuple[str, Callable]] = [
    ("hat/vee inverse", check_hat_vee),
    ("exp/log roundtrip", check_exp_log),
    ("quaternion roundtrip", check_quaternion),
    ("Lyapunov solve", check_lyapunov),
    ("free-rotation energy", check_free_rotation),
    ("trace-cost gradient", check_terminal_gradient),
    ("backward pass", check_backward_pass),
]


def run_checks(seed: int = 0, report=print) -> bool:
    rng = np.random.default_rng(seed)
    ok = True
    for name, fn in CHECKS:
        try:
            detail = fn(rng)
            report(f"PASS  {name}: {detail}")
        except Exception as exc:  # any failure counts against the suite
            ok = False
            report(f"FAIL  {name}: {exc}")
    return ok
