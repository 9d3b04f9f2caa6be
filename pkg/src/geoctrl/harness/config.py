"""Scenario files: JSON in, validated :class:`ScenarioConfig` out.

A scenario is normalized into a plain dict with every default filled in. That
dict is what gets echoed into output sidecars, and loading it again yields the
same configuration.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from geoctrl.ilqr import COST_MODELS, DISCRETIZATIONS, STAGE_COSTS, CostWeights, GoalSpec
from geoctrl.pd_tracking import PDGains, SinusoidSpec
from geoctrl.rigid_body import STEPPERS, BodyState, check_inertia
from geoctrl.so3 import check_rotation, exp_so3, log_so3

SCHEMA_VERSION = 1
EXPERIMENTS = ("pd", "ilqr")

# A stated goal angle and the angle of the given quaternion may differ by this
# much before loading fails.
STATED_ANGLE_TOL = 0.02


class ConfigError(ValueError):
    """Invalid scenario; the message names the offending field."""


# --------------------------------------------------------------------------- rotations


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion(s) ``(w, x, y, z)`` to rotation matrices (input is normalized)."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (4,) or q.ndim > 2 or not np.all(np.isfinite(q)) or np.linalg.norm(q, axis=-1).min() < 1e-12:
        raise ValueError("quaternion must be 4 finite numbers (w, x, y, z)")
    return Rotation.from_quat(q, scalar_first=True).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    q = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat(scalar_first=True, canonical=True)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def parse_rotation(spec, where: str) -> np.ndarray:
    """Rotation from ``"identity"``, ``{"quaternion": [w,x,y,z]}``,
    ``{"matrix": [9 numbers, row-major]}`` or ``{"axis": [...], "angle": rad}``
    (``"angle_pi"`` gives the angle in multiples of pi)."""
    if spec == "identity" or spec is None:
        return np.eye(3)
    if not isinstance(spec, dict) or len(spec) == 0:
        raise ConfigError(f"{where}: expected 'identity' or an object")
    try:
        if "quaternion" in spec:
            _only(spec, {"quaternion"}, where)
            return quat_to_matrix(spec["quaternion"])
        if "matrix" in spec:
            _only(spec, {"matrix"}, where)
            m = np.asarray(spec["matrix"], dtype=float).reshape(3, 3)
            return check_rotation(m, where, tol=1e-9)
        if "axis" in spec:
            _only(spec, {"axis", "angle", "angle_pi"}, where)
            axis = np.asarray(spec["axis"], dtype=float)
            if axis.shape != (3,) or np.linalg.norm(axis) == 0.0:
                raise ValueError("axis must be a nonzero 3-vector")
            if ("angle" in spec) == ("angle_pi" in spec):
                raise ValueError("give exactly one of 'angle' or 'angle_pi'")
            angle = float(spec["angle"]) if "angle" in spec else float(spec["angle_pi"]) * math.pi
            return exp_so3(axis / np.linalg.norm(axis) * angle)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: expected one of 'quaternion', 'matrix', 'axis'")


def _only(d: dict, allowed: set, where: str):
    extra = set(k for k in d if not k.startswith("_")) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")


# --------------------------------------------------------------------------- defaults

REQUIRED = "<required>"

_COMMON = {
    "schema_version": SCHEMA_VERSION,
    "dt": REQUIRED,
    "t_f": REQUIRED,
    "inertia": REQUIRED,
    "integrator": "euler",
    "initial_state": {"rotation": "identity", "omega": [0.0, 0.0, 0.0]},
    "output": {"prefix": None},
    "seed": 0,
}

_PD = {
    "reference": {
        "R_d0": "identity",
        "amplitude": [1.0, 1.0, 1.0],
        "frequency": [0.2, 0.3, 0.1],
        "phase": [0.1, math.pi / 5.0, math.sqrt(2.0) / 3.0],
    },
    "gains": {"Kp": REQUIRED, "Kd": REQUIRED},
    "variants": ["proposed", "baseline"],
    "control_every": 1,
    "thresholds": [0.1, 1e-3],
}

_ILQR = {
    "goal": {"rotation": REQUIRED, "omega": [0.0, 0.0, 0.0], "u": [0.0, 0.0, 0.0], "stated_angle_pi": None},
    "initial_controls": "zeros",
    "weights": {"Q": 0.0, "S": REQUIRED, "V": REQUIRED},
    "solver": {
        "max_iters": 50,
        "tol": 1e-6,
        "cost_model": "proposed",
        "line_search": False,
        "discretization": "exact",
        "stage_cost": "integral",
    },
}


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = {}
    for key, value in given.items():
        if key.startswith("_"):
            continue
        if key not in defaults:
            path = f"{where}.{key}" if where else key
            raise ConfigError(f"{path}: unknown field")
    for key, default in defaults.items():
        path = f"{where}.{key}" if where else key
        if key not in given:
            if default == REQUIRED:
                raise ConfigError(f"{path}: missing required field")
            out[key] = copy.deepcopy(default)
            continue
        value = given[key]
        # nested objects are merged only when the default itself is a plain
        # settings object (rotation specs are replaced wholesale)
        if isinstance(default, dict) and isinstance(value, dict) and key not in ("rotation", "R_d0"):
            out[key] = _merge(default, value, path)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _vector(value, where: str, n: int = 3) -> np.ndarray:
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected {n} numbers") from None
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ConfigError(f"{where}: expected {n} finite numbers")
    return v


def _matrix(value, where: str, n: int) -> np.ndarray:
    """Scalar (times identity), ``n`` diagonal entries, or a full ``n x n`` matrix."""
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, {n} numbers or a {n}x{n} matrix") from None
    if m.ndim == 0:
        m = float(m) * np.eye(n)
    elif m.shape == (n,):
        m = np.diag(m)
    if m.shape != (n, n) or not np.all(np.isfinite(m)):
        raise ConfigError(f"{where}: expected a number, {n} numbers or a {n}x{n} matrix")
    return m


def _positive(value, where: str) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number") from None
    if not (x > 0.0 and math.isfinite(x)):
        raise ConfigError(f"{where}: must be positive")
    return x


def _choice(value, options, where: str) -> str:
    if value not in options:
        raise ConfigError(f"{where}: expected one of {list(options)}, got {value!r}")
    return value


# --------------------------------------------------------------------------- config


@dataclass
class ScenarioConfig:
    experiment: str
    data: Dict[str, Any]  # normalized scenario, echoed into outputs
    J: np.ndarray
    dt: float
    t_f: float
    integrator: str
    initial_state: BodyState
    seed: int
    # pd
    sinusoid: Optional[SinusoidSpec] = None
    R_d0: Optional[np.ndarray] = None
    gains: Optional[PDGains] = None
    variants: tuple = ()
    control_every: int = 1
    thresholds: tuple = ()
    # ilqr
    goal: Optional[GoalSpec] = None
    weights: Optional[CostWeights] = None
    solver: Optional[Dict[str, Any]] = None

    @property
    def prefix(self) -> str:
        return self.data["output"]["prefix"]

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.data)


def parse_scenario(raw: Dict[str, Any], default_prefix: str = "scenario") -> ScenarioConfig:
    """Validate a scenario dict (as loaded from JSON) and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a JSON object")
    kind = raw.get("experiment")
    if kind not in EXPERIMENTS:
        raise ConfigError(f"experiment: expected one of {list(EXPERIMENTS)}, got {kind!r}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version!r}")
    defaults = dict(_COMMON, experiment=kind, **(_PD if kind == "pd" else _ILQR))
    given = dict(raw)
    given.setdefault("output", {})
    if isinstance(given["output"], dict) and given["output"].get("prefix") is None:
        given["output"] = dict(given["output"], prefix=default_prefix)
    data = _merge(defaults, given, "")

    try:
        J = check_inertia(data["inertia"])
    except ValueError as exc:
        raise ConfigError(f"inertia: {exc}") from None
    dt = _positive(data["dt"], "dt")
    t_f = _positive(data["t_f"], "t_f")
    if t_f < dt:
        raise ConfigError("t_f: must be at least dt")
    integrator = _choice(data["integrator"], tuple(STEPPERS), "integrator")
    init = data["initial_state"]
    s0 = BodyState(
        parse_rotation(init.get("rotation"), "initial_state.rotation"),
        _vector(init.get("omega"), "initial_state.omega"),
    )
    seed = data["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: expected an integer")
    if not isinstance(data["output"].get("prefix"), str) or not data["output"]["prefix"]:
        raise ConfigError("output.prefix: expected a non-empty string")

    cfg = ScenarioConfig(kind, data, J, dt, t_f, integrator, s0, seed)
    if kind == "pd":
        _parse_pd(cfg, data)
    else:
        _parse_ilqr(cfg, data)
    return cfg


def _parse_pd(cfg: ScenarioConfig, data: dict):
    ref = data["reference"]
    cfg.sinusoid = SinusoidSpec(
        _vector(ref["amplitude"], "reference.amplitude"),
        _vector(ref["frequency"], "reference.frequency"),
        _vector(ref["phase"], "reference.phase"),
    )
    cfg.R_d0 = parse_rotation(ref["R_d0"], "reference.R_d0")
    try:
        cfg.gains = PDGains(_matrix(data["gains"]["Kp"], "gains.Kp", 3), _matrix(data["gains"]["Kd"], "gains.Kd", 3))
    except ValueError as exc:
        raise ConfigError(f"gains: {exc}") from None
    variants = data["variants"]
    if not isinstance(variants, list) or not variants:
        raise ConfigError("variants: expected a non-empty list")
    cfg.variants = tuple(_choice(v, ("proposed", "baseline"), "variants") for v in variants)
    every = data["control_every"]
    if not isinstance(every, int) or isinstance(every, bool) or every < 1:
        raise ConfigError("control_every: expected a positive integer")
    cfg.control_every = every
    th = data["thresholds"]
    if not isinstance(th, list):
        raise ConfigError("thresholds: expected a list of angles")
    cfg.thresholds = tuple(_positive(x, "thresholds") for x in th)


def _parse_ilqr(cfg: ScenarioConfig, data: dict):
    goal = data["goal"]
    R_g = parse_rotation(goal["rotation"], "goal.rotation")
    stated = goal.get("stated_angle_pi")
    if stated is not None:
        _check_stated_angle(goal["rotation"], R_g, float(stated) * math.pi)
    n = int(math.ceil(cfg.t_f / cfg.dt - 1e-9))
    u_g = np.asarray(goal["u"], dtype=float)
    if u_g.shape not in ((3,), (n, 3)) or not np.all(np.isfinite(u_g)):
        raise ConfigError(f"goal.u: expected 3 numbers or a ({n}, 3) table")
    cfg.goal = GoalSpec(R_g, _vector(goal["omega"], "goal.omega"), u_g)

    if data["initial_controls"] != "zeros":
        u0 = np.asarray(data["initial_controls"], dtype=float)
        if u0.shape != (n, 3) or not np.all(np.isfinite(u0)):
            raise ConfigError(f"initial_controls: expected 'zeros' or a ({n}, 3) table")

    w = data["weights"]
    try:
        cfg.weights = CostWeights(
            _matrix(w["Q"], "weights.Q", 6), _matrix(w["S"], "weights.S", 3), _matrix(w["V"], "weights.V", 6)
        )
    except ValueError as exc:
        raise ConfigError(f"weights: {exc}") from None

    s = data["solver"]
    mi = s["max_iters"]
    if not isinstance(mi, int) or isinstance(mi, bool) or mi < 1:
        raise ConfigError("solver.max_iters: expected a positive integer")
    if not isinstance(s["line_search"], bool):
        raise ConfigError("solver.line_search: expected true or false")
    cfg.solver = {
        "max_iters": mi,
        "tol": _positive(s["tol"], "solver.tol"),
        "cost_model": _choice(s["cost_model"], COST_MODELS, "solver.cost_model"),
        "line_search": s["line_search"],
        "discretization": _choice(s["discretization"], DISCRETIZATIONS, "solver.discretization"),
        "stage_cost": _choice(s["stage_cost"], STAGE_COSTS, "solver.stage_cost"),
    }


def _check_stated_angle(spec, R_g: np.ndarray, stated: float):
    """Load-time check of the quaternion convention against a stated goal angle."""
    angle = float(np.linalg.norm(log_so3(R_g)))
    if abs(angle - stated) > STATED_ANGLE_TOL:
        raise ConfigError(
            f"goal.rotation: angle {angle:.6f} rad differs from stated {stated:.6f} rad "
            f"by more than {STATED_ANGLE_TOL} rad"
        )
    if isinstance(spec, dict) and "quaternion" in spec:
        q = np.asarray(spec["quaternion"], dtype=float)
        alt = Rotation.from_quat(q, scalar_first=False).magnitude()
        if abs(alt - stated) < abs(angle - stated):
            raise ConfigError("goal.rotation: quaternion looks scalar-last; expected (w, x, y, z)")


# --------------------------------------------------------------------------- files


def bundled_scenarios() -> Dict[str, Path]:
    root = resources.files("geoctrl") / "scenarios"
    return {p.name: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def resolve_scenario_path(path) -> Path:
    """``path`` itself if it exists, else a bundled scenario with the same file name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    name = p.name if p.name.endswith(".json") else p.name + ".json"
    if name in bundled:
        return bundled[name]
    raise ConfigError(f"scenario file not found: {path}")


def load_scenario(path) -> ScenarioConfig:
    p = resolve_scenario_path(path)
    text = p.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_scenario(raw, default_prefix=p.stem)


def template(kind: str) -> str:
    """Annotated scenario template for ``geo-ctrl init``."""
    name = {"pd": "table1_pd.json", "ilqr": "table2_ilqr.json"}.get(kind)
    if name is None:
        raise ConfigError(f"no template for experiment {kind!r}")
    return bundled_scenarios()[name].read_text()
