"""Rotational rigid-body dynamics on SO(3).

The body rate obeys the forced Euler-Poincare equation in the form

    J omega_dot = omega x (J omega) + u

and the attitude follows the reconstruction ``R_dot = R hat(omega)``, which is
always integrated through the exponential map so states stay on the group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from geoctrl.so3 import exp_so3, project_to_so3

# Re-orthonormalize integrated attitudes every this many steps.
REPROJECT_EVERY = 100


class SimulationError(FloatingPointError):
    """Integration produced a non-finite value; carries the partial result."""

    def __init__(self, message, states, controls):
        super().__init__(message)
        self.states = states
        self.controls = controls


@dataclass(frozen=True)
class BodyState:
    """Attitude ``R`` (body to world) and body-frame angular velocity ``omega``."""

    R: np.ndarray
    omega: np.ndarray

    @classmethod
    def at_rest(cls, R=None) -> "BodyState":
        return cls(np.eye(3) if R is None else np.asarray(R, dtype=float), np.zeros(3))


def check_inertia(J, name: str = "inertia") -> np.ndarray:
    """Validate a symmetric positive-definite inertia matrix."""
    J = np.asarray(J, dtype=float)
    if J.shape == (3,):
        J = np.diag(J)
    if J.shape != (3, 3) or not np.all(np.isfinite(J)):
        raise ValueError(f"{name} must be a finite 3x3 matrix or 3 diagonal entries")
    if np.abs(J - J.T).max() > 1e-12:
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(J).min() <= 0.0:
        raise ValueError(f"{name} is not positive definite")
    return J


def euler_poincare_rhs(omega, u, J) -> np.ndarray:
    """Angular acceleration ``J^{-1} (omega x J omega + u)``."""
    omega = np.asarray(omega, dtype=float)
    return np.linalg.solve(J, np.cross(omega, J @ omega) + np.asarray(u, dtype=float))


def kinetic_energy(omega, J) -> float:
    omega = np.asarray(omega, dtype=float)
    return 0.5 * float(omega @ J @ omega)


def step_geometric_euler(s: BodyState, u, J, dt: float) -> BodyState:
    """One Lie-Euler step: ``R exp(omega dt)`` and explicit Euler on omega."""
    R = s.R @ exp_so3(s.omega * dt)
    omega = s.omega + dt * euler_poincare_rhs(s.omega, u, J)
    return BodyState(R, omega)


def step_rk4(s: BodyState, u, J, dt: float) -> BodyState:
    """Classical RK4 on omega; the attitude is advanced by ``exp`` of the RK4
    combination of the stage rates (second order in ``R``, fourth in ``omega``)."""
    w1 = s.omega
    k1 = euler_poincare_rhs(w1, u, J)
    w2 = w1 + 0.5 * dt * k1
    k2 = euler_poincare_rhs(w2, u, J)
    w3 = w1 + 0.5 * dt * k2
    k3 = euler_poincare_rhs(w3, u, J)
    w4 = w1 + dt * k3
    k4 = euler_poincare_rhs(w4, u, J)
    dphi = dt / 6.0 * (w1 + 2.0 * w2 + 2.0 * w3 + w4)
    omega = w1 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return BodyState(s.R @ exp_so3(dphi), omega)


def _dexp_inv(theta, v) -> np.ndarray:
    """Inverse right-trivialized differential of exp applied to ``v``."""
    t2 = float(theta @ theta)
    if t2 < 1e-8:
        c = 1.0 / 12.0 + t2 / 720.0
    else:
        t = math.sqrt(t2)
        c = (1.0 - 0.5 * t / math.tan(0.5 * t)) / t2
    tv = np.cross(theta, v)
    return v - 0.5 * tv + c * np.cross(theta, tv)


def step_rkmk4(s: BodyState, u, J, dt: float) -> BodyState:
    """Runge-Kutta-Munthe-Kaas step: fourth order in both ``R`` and ``omega``.

    The attitude increment ``theta`` (with ``R' = R exp(theta)``) is integrated
    as a vector ODE ``theta_dot = dexp^{-1}_theta(omega)``; the sign follows the
    body-frame reconstruction ``R_dot = R hat(omega)``.
    """
    w1 = s.omega
    k1w = euler_poincare_rhs(w1, u, J)
    k1 = w1
    w2 = w1 + 0.5 * dt * k1w
    k2w = euler_poincare_rhs(w2, u, J)
    k2 = _dexp_inv(-0.5 * dt * k1, w2)
    w3 = w1 + 0.5 * dt * k2w
    k3w = euler_poincare_rhs(w3, u, J)
    k3 = _dexp_inv(-0.5 * dt * k2, w3)
    w4 = w1 + dt * k3w
    k4w = euler_poincare_rhs(w4, u, J)
    k4 = _dexp_inv(-dt * k3, w4)
    theta = dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    omega = w1 + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    return BodyState(s.R @ exp_so3(theta), omega)


STEPPERS = {"euler": step_geometric_euler, "rk4": step_rk4, "rkmk4": step_rkmk4}

ControlSource = Union[np.ndarray, Sequence, Callable[[int, float, BodyState], np.ndarray]]


def num_steps(dt: float, t_f: float) -> int:
    """Number of integration steps covering ``[0, t_f]`` at step ``dt``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if t_f < dt * (1.0 - 1e-12):
        raise ValueError("t_f must be at least dt")
    # tolerate t_f/dt landing a hair above an integer
    return int(math.ceil(t_f / dt - 1e-9))


def simulate(
    s0: BodyState,
    controls: ControlSource,
    J,
    dt: float,
    t_f: float,
    method: str = "euler",
    reproject_every: int = REPROJECT_EVERY,
    return_controls: bool = False,
):
    """Integrate from ``s0`` with zero-order-hold torques.

    ``controls`` is either an array of per-step torques (at least
    ``num_steps`` rows) or a callable ``controls(k, t, state) -> u`` sampled at
    each knot. Returns ``num_steps + 1`` states, and the applied torques too
    when ``return_controls`` is set.
    """
    try:
        step = STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown integration method {method!r}") from None
    n = num_steps(dt, t_f)
    if callable(controls):
        source = controls
    else:
        table = np.asarray(controls, dtype=float)
        if table.ndim != 2 or table.shape[0] < n or table.shape[1] != 3:
            raise ValueError(f"control table must have shape ({n}, 3), got {table.shape}")
        source = lambda k, t, s: table[k]  # noqa: E731

    states = [s0]
    applied = np.zeros((n, 3))
    s = s0
    for k in range(n):
        u = np.asarray(source(k, k * dt, s), dtype=float)
        if u.shape != (3,) or not np.all(np.isfinite(u)):
            raise SimulationError(
                f"control source returned non-finite torque {u!r} at step {k}", states, applied[:k]
            )
        applied[k] = u
        with np.errstate(over="ignore", invalid="ignore"):
            s = step(s, u, J, dt)
        if not (np.all(np.isfinite(s.omega)) and np.all(np.isfinite(s.R))):
            raise SimulationError(f"state became non-finite at step {k + 1}", states, applied[: k + 1])
        if reproject_every and (k + 1) % reproject_every == 0:
            s = BodyState(project_to_so3(s.R), s.omega)
        states.append(s)
    if return_controls:
        return states, applied
    return states
