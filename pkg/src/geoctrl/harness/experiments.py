"""Experiment drivers: PD tracking comparison and iLQR reorientation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from geoctrl.harness.config import ConfigError, ScenarioConfig, matrix_to_quat
from geoctrl.ilqr import (
    ConvergenceReport,
    NominalTrajectory,
    control_change_norm,
    ilqr_solve,
    initial_trajectory,
)
from geoctrl.pd_tracking import pd_control, reference_from_sinusoid, velocity_error
from geoctrl.rigid_body import BodyState, SimulationError, simulate
from geoctrl.so3 import error_angle


@dataclass
class PDResult:
    series: Dict[str, np.ndarray]  # variant -> rows in TIME_SERIES_COLUMNS order
    summary: Dict[str, dict]
    failed: bool = False


@dataclass
class ILQRResult:
    series: np.ndarray
    convergence: np.ndarray
    report: ConvergenceReport
    trajectory: NominalTrajectory
    summary: dict = field(default_factory=dict)


def time_series_rows(t, R, omega, u, err, verr) -> np.ndarray:
    q = matrix_to_quat(np.asarray(R))
    return np.column_stack([t, q, omega, u, err, verr])


def first_crossing(t: np.ndarray, values: np.ndarray, threshold: float) -> Optional[float]:
    """Time at which ``values`` first drops below ``threshold`` (``None`` if never)."""
    below = np.nonzero(values < threshold)[0]
    return float(t[below[0]]) if below.size else None


def run_pd_experiment(cfg: ScenarioConfig) -> PDResult:
    if cfg.experiment != "pd":
        raise ConfigError(f"experiment: expected 'pd', got {cfg.experiment!r}")
    refs = reference_from_sinusoid(cfg.sinusoid, cfg.R_d0, cfg.dt, cfg.t_f)
    series, summary = {}, {}
    failed_any = False
    for variant in cfg.variants:
        held = {}

        def control(k, t, s, variant=variant, held=held):
            if k % cfg.control_every == 0:
                held["u"] = pd_control(s, refs[k], cfg.gains, cfg.J, variant)
            return held["u"]

        failed, message = False, ""
        try:
            states, U = simulate(cfg.initial_state, control, cfg.J, cfg.dt, cfg.t_f, cfg.integrator, return_controls=True)
        except SimulationError as exc:
            states, U = exc.states, exc.controls
            failed, message = True, str(exc)
        n = len(states)
        last = states[-1]
        u_last = pd_control(last, refs[n - 1], cfg.gains, cfg.J, variant) if not failed else np.full(3, np.nan)
        U = np.vstack([U[: n - 1], u_last])
        t = np.arange(n) * cfg.dt
        R = np.array([s.R for s in states])
        err = np.array([error_angle(refs[k].R_d, s.R) for k, s in enumerate(states)])
        verr = np.array([np.linalg.norm(velocity_error(s, refs[k])) for k, s in enumerate(states)])
        series[variant] = time_series_rows(t, R, np.array([s.omega for s in states]), U, err, verr)
        summary[variant] = {
            "time_to_threshold": {repr(th): first_crossing(t, err, th) for th in cfg.thresholds},
            "final_error_angle": float(err[-1]),
            "final_velocity_error_norm": float(verr[-1]),
            "failed": failed,
            "message": message,
        }
        failed_any |= failed
    return PDResult(series, summary, failed_any)


def run_ilqr_experiment(cfg: ScenarioConfig) -> ILQRResult:
    if cfg.experiment != "ilqr":
        raise ConfigError(f"experiment: expected 'ilqr', got {cfg.experiment!r}")
    if cfg.integrator != "euler":
        raise ConfigError("integrator: iLQR rollouts use the Lie-Euler step; set 'euler'")
    controls = None if cfg.data["initial_controls"] == "zeros" else np.asarray(cfg.data["initial_controls"], float)
    init = initial_trajectory(cfg.initial_state.R, cfg.initial_state.omega, cfg.J, cfg.dt, cfg.t_f, controls)
    s = cfg.solver
    traj, _, report = ilqr_solve(
        init,
        cfg.goal,
        cfg.weights,
        cfg.J,
        max_iters=s["max_iters"],
        tol=s["tol"],
        cost_model=s["cost_model"],
        line_search=s["line_search"],
        discretization=s["discretization"],
        stage_cost=s["stage_cost"],
    )
    goal = cfg.goal
    u = np.vstack([traj.u, goal.controls(traj.n_steps + 1)[-1:]])
    err = error_angle(traj.R, goal.R_g)
    verr = np.linalg.norm(traj.omega - goal.omega_g, axis=-1)
    series = time_series_rows(traj.times, traj.R, traj.omega, u, err, verr)

    changes = [0.0] + list(report.control_changes)
    conv = np.column_stack(
        [np.arange(len(report.costs)), report.costs, changes, report.distance_to_final]
    )
    summary = {
        "converged": report.converged,
        "diverged": report.diverged,
        "iterations": report.iterations,
        "message": report.message,
        "initial_cost": report.costs[0],
        "final_cost": report.costs[-1],
        "iterations_to_90pct_cost_reduction": report.iterations_to_reduction(0.9),
        "final_error_angle": float(err[-1]),
        "final_control_change": report.control_changes[-1] if report.control_changes else None,
        "branch_cut_hits": report.branch_cut_hits,
    }
    return ILQRResult(series, conv, report, traj, summary)


def paired_cost_models(cfg: ScenarioConfig, models=("proposed", "trace")) -> Dict[str, ILQRResult]:
    """Run the same iLQR scenario once per terminal cost model."""
    out = {}
    for model in models:
        data = cfg.to_dict()
        data["solver"]["cost_model"] = model
        from geoctrl.harness.config import parse_scenario

        out[model] = run_ilqr_experiment(parse_scenario(data))
    return out


def control_sequences_equal(a: ILQRResult, b: ILQRResult) -> float:
    return control_change_norm(a.trajectory.u, b.trajectory.u)
