"""``geo-ctrl`` command line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 solver nonconvergence
(or a diverged simulation).
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

from geoctrl import __version__
from geoctrl.harness.config import ConfigError, load_scenario, parse_scenario, template
from geoctrl.harness.experiments import run_ilqr_experiment, run_pd_experiment
from geoctrl.harness.io import CONVERGENCE_COLUMNS, TIME_SERIES_COLUMNS, write_csv
from geoctrl.harness.selfcheck import run_checks

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for CSV and sidecar files")
    common.add_argument("--quiet", action="store_true", help="suppress the stdout summary")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    p = _Parser(prog="geo-ctrl", description="Geometric attitude control experiments on SO(3).")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("pd", "PD tracking comparison"), ("ilqr", "iLQR reorientation")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("scenario", help="scenario JSON (bundled names such as table1_pd.json also work)")

    sp = sub.add_parser("check", parents=[common], help="run the embedded property checks")

    sp = sub.add_parser("sweep", parents=[common], help="rerun a scenario over values of one parameter")
    sp.add_argument("scenario")
    sp.add_argument("--param", required=True, help="dotted path into the scenario, e.g. gains.Kp")
    sp.add_argument("--values", required=True, help="comma-separated values, or a JSON array such as '[[1,2,3],[4,5,6]]'")
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    sp = sub.add_parser("init", help="print a commented scenario template")
    sp.add_argument("kind", choices=("pd", "ilqr"))
    return p


def _say(args, *lines):
    if not args.quiet:
        for line in lines:
            print(line)


def _with_seed(cfg, seed):
    if seed is None:
        return cfg
    data = cfg.to_dict()
    data["seed"] = seed
    return parse_scenario(data)


def run_config(cfg, out_dir: Path, prefix: Optional[str] = None):
    """Run one scenario and write its outputs. Returns ``(ok, summary, paths)``."""
    prefix = prefix or cfg.prefix
    echo = cfg.to_dict()
    if cfg.experiment == "pd":
        res = run_pd_experiment(cfg)
        paths = [
            write_csv(TIME_SERIES_COLUMNS, rows, out_dir / f"{prefix}_{variant}.csv", echo, res.summary[variant])
            for variant, rows in res.series.items()
        ]
        return not res.failed, res.summary, paths
    res = run_ilqr_experiment(cfg)
    paths = [
        write_csv(TIME_SERIES_COLUMNS, res.series, out_dir / f"{prefix}_trajectory.csv", echo, res.summary),
        write_csv(CONVERGENCE_COLUMNS, res.convergence, out_dir / f"{prefix}_convergence.csv", echo, res.summary),
    ]
    return res.report.converged, res.summary, paths


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_values(text: str) -> list:
    """A JSON array (for list-valued parameters) or a plain comma-separated list."""
    if text.strip().startswith("["):
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--values: invalid JSON array ({exc.msg})") from None
        if isinstance(values, list):
            return values
    return [_parse_value(v.strip()) for v in text.split(",") if v.strip()]


def _set_path(data: dict, dotted: str, value):
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"--param {dotted}: no field {key!r}")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"--param {dotted}: no field {keys[-1]!r}")
    node[keys[-1]] = value


def _sweep_one(job):
    data, out_dir, prefix = job
    return run_config(parse_scenario(data), Path(out_dir), prefix)


def _cmd_sweep(args, out_dir: Path) -> int:
    base = _with_seed(load_scenario(args.scenario), args.seed)
    values = _parse_values(args.values)
    if not values:
        raise ConfigError("--values: expected at least one value")
    if args.jobs < 1:
        raise ConfigError("--jobs: expected a positive integer")
    jobs = []
    for i, value in enumerate(values):
        data = copy.deepcopy(base.to_dict())
        _set_path(data, args.param, value)
        parse_scenario(data)  # validate every instance before running any
        jobs.append((data, str(out_dir), f"{base.prefix}_{args.param.replace('.', '-')}_{i}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    all_ok = True
    for value, (ok, summary, paths) in zip(values, results):
        all_ok &= ok
        _say(args, f"{args.param}={json.dumps(value)}: {'ok' if ok else 'NOT CONVERGED'}")
        _say(args, *(f"  wrote {p}" for p in paths))
    return EXIT_OK if all_ok else EXIT_NONCONVERGED


def _dispatch(args) -> int:
    if args.command == "init":
        sys.stdout.write(template(args.kind))
        return EXIT_OK
    if args.command == "check":
        ok = run_checks(seed=args.seed or 0, report=(lambda s: None) if args.quiet else print)
        return EXIT_OK if ok else EXIT_NONCONVERGED

    out_dir = Path(args.out_dir)
    if args.command == "sweep":
        return _cmd_sweep(args, out_dir)

    cfg = _with_seed(load_scenario(args.scenario), args.seed)
    if cfg.experiment != args.command:
        raise ConfigError(f"{args.scenario}: is a {cfg.experiment!r} scenario, not {args.command!r}")
    ok, summary, paths = run_config(cfg, out_dir)
    _say(args, json.dumps(summary, indent=2, sort_keys=True), *(f"wrote {p}" for p in paths))
    return EXIT_OK if ok else EXIT_NONCONVERGED


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"geo-ctrl: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"geo-ctrl: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
