"""PD attitude tracking on SO(3) and the first-order kinematic feedback law.

Two proportional terms are provided:

* ``proposed``: ``-Kp log(Psi)``, linear in the algebra error all the way to pi;
* ``baseline``: ``-Kp vee((Psi - Psi^T)/2)``, the gradient of the trace error
  ``tr(I - Psi)/2``, which equals ``-Kp sin|psi|/|psi| psi`` and vanishes as
  the error approaches pi.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from geoctrl.rigid_body import BodyState, num_steps
from geoctrl.so3 import adjoint_of, exp_so3, group_error, hat, log_so3, vee

VARIANTS = ("proposed", "baseline")


def _as_gain(K, name: str) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = float(K) * np.eye(3)
    elif K.shape == (3,):
        K = np.diag(K)
    if K.shape != (3, 3) or not np.all(np.isfinite(K)):
        raise ValueError(f"{name} must be a scalar, 3 diagonal entries or a 3x3 matrix")
    return K


def is_stabilizing(K) -> bool:
    """True when every eigenvalue of ``K`` has positive real part."""
    return bool(np.all(np.linalg.eigvals(K).real > 0.0))


@dataclass(frozen=True)
class PDGains:
    Kp: np.ndarray
    Kd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Kp", _as_gain(self.Kp, "Kp"))
        object.__setattr__(self, "Kd", _as_gain(self.Kd, "Kd"))
        for name in ("Kp", "Kd"):
            if not is_stabilizing(getattr(self, name)):
                raise ValueError(f"{name} must have eigenvalues with positive real part")


@dataclass(frozen=True)
class ReferencePoint:
    R_d: np.ndarray
    omega_d: np.ndarray
    omega_dot_d: np.ndarray


@dataclass(frozen=True)
class SinusoidSpec:
    """Per-axis ``amplitude * sin(frequency * t + phase)`` body-rate reference."""

    amplitude: np.ndarray = field(default_factory=lambda: np.ones(3))
    frequency: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.3, 0.1]))
    phase: np.ndarray = field(
        default_factory=lambda: np.array([0.1, np.pi / 5.0, np.sqrt(2.0) / 3.0])
    )

    def __post_init__(self):
        for name in ("amplitude", "frequency", "phase"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"sinusoid {name} must be finite")
            object.__setattr__(self, name, arr)

    def omega(self, t: float) -> np.ndarray:
        return self.amplitude * np.sin(self.frequency * t + self.phase)

    def omega_dot(self, t: float) -> np.ndarray:
        return self.amplitude * self.frequency * np.cos(self.frequency * t + self.phase)


def reference_from_sinusoid(spec: SinusoidSpec, R_d0, dt: float, t_f: float) -> List[ReferencePoint]:
    """Sample the reference at every knot; ``R_d`` follows Lie-Euler integration."""
    n = num_steps(dt, t_f)
    refs = []
    R_d = np.asarray(R_d0, dtype=float)
    for k in range(n + 1):
        t = k * dt
        w = spec.omega(t)
        refs.append(ReferencePoint(R_d, w, spec.omega_dot(t)))
        R_d = R_d @ exp_so3(w * dt)
    return refs


def velocity_error(s: BodyState, ref: ReferencePoint) -> np.ndarray:
    """``omega - R^T R_d omega_d``: reference rate expressed in the body frame."""
    return s.omega - adjoint_of(group_error(s.R, ref.R_d)) @ ref.omega_d


def proportional_proposed(Psi, Kp) -> np.ndarray:
    return -np.asarray(Kp) @ log_so3(Psi)


def proportional_baseline(Psi, Kp) -> np.ndarray:
    Psi = np.asarray(Psi, dtype=float)
    return -np.asarray(Kp) @ vee(0.5 * (Psi - Psi.T))


def feedforward(s: BodyState, ref: ReferencePoint, J) -> np.ndarray:
    """Torque that keeps an exactly tracking state on the reference.

    The gyroscopic term is chosen to cancel the one in
    :func:`geoctrl.rigid_body.euler_poincare_rhs`, so with ``u = feedforward``
    the velocity error has zero derivative whenever it is zero.
    """
    RtRd = group_error(s.R, ref.R_d)
    w = s.omega
    return -np.cross(w, J @ w) - J @ (hat(w) @ RtRd @ ref.omega_d - RtRd @ ref.omega_dot_d)


def pd_control(s: BodyState, ref: ReferencePoint, gains: PDGains, J, variant: str = "proposed") -> np.ndarray:
    Psi = group_error(ref.R_d, s.R)
    if variant == "proposed":
        prop = proportional_proposed(Psi, gains.Kp)
    elif variant == "baseline":
        prop = proportional_baseline(Psi, gains.Kp)
    else:
        raise ValueError(f"unknown PD variant {variant!r}; expected one of {VARIANTS}")
    return prop - gains.Kd @ velocity_error(s, ref) + feedforward(s, ref, J)


def kinematic_feedback(Psi, K, xi_d) -> np.ndarray:
    """Body twist ``-K log(Psi) + Ad_{Psi^{-1}} xi_d`` for the first-order system."""
    Psi = np.asarray(Psi, dtype=float)
    return -np.asarray(K) @ log_so3(Psi) + adjoint_of(Psi.T) @ np.asarray(xi_d, dtype=float)


def simulate_kinematic(Psi0, K, dt: float, t_f: float, xi_d=None):
    """Closed-loop error flow ``Psi_dot = Psi hat(xi - Ad_{Psi^{-1}} xi_d)``.

    ``xi_d`` may be ``None`` (zero), a constant 3-vector or a callable of time.
    The error is advanced with the exact exponential over each step while the
    twists are held. Returns the error rotations at every knot.
    """
    n = num_steps(dt, t_f)
    if xi_d is None:
        xi_fn = lambda t: np.zeros(3)  # noqa: E731
    elif callable(xi_d):
        xi_fn = xi_d
    else:
        const = np.asarray(xi_d, dtype=float)
        xi_fn = lambda t: const  # noqa: E731
    Psi = np.asarray(Psi0, dtype=float)
    out = [Psi]
    for k in range(n):
        xd = xi_fn(k * dt)
        xi = kinematic_feedback(Psi, K, xd)
        Psi = Psi @ exp_so3((xi - Psi.T @ xd) * dt)
        out.append(Psi)
    return out


@dataclass(frozen=True)
class LyapunovCertificate:
    P: np.ndarray
    Q: np.ndarray
    K: np.ndarray

    @property
    def residual(self) -> float:
        A = -self.K
        return float(np.linalg.norm(self.P @ A + A.T @ self.P + 2.0 * self.Q))


def solve_lyapunov(K, Q) -> LyapunovCertificate:
    """Solve ``P(-K) + (-K)^T P + 2Q = 0`` for ``P`` by a dense Kronecker solve."""
    K = np.asarray(K, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = K.shape[0]
    if not is_stabilizing(K):
        raise ValueError("gain is not Hurwitz-stabilizing: -K has an eigenvalue with non-negative real part")
    if np.abs(Q - Q.T).max() > 1e-12 or np.linalg.eigvalsh(Q).min() <= 0.0:
        raise ValueError("Q must be symmetric positive definite")
    I = np.eye(n)
    # row-major vec: vec(P A) = (I kron A^T) vec(P), vec(A^T P) = (A^T kron I) vec(P)
    A = -K
    L = np.kron(I, A.T) + np.kron(A.T, I)
    P = np.linalg.solve(L, (-2.0 * Q).ravel()).reshape(n, n)
    P = 0.5 * (P + P.T)
    return LyapunovCertificate(P, Q, K)


def lyapunov_value(psi, P) -> float:
    psi = np.asarray(psi, dtype=float)
    return 0.5 * float(psi @ np.asarray(P) @ psi)
