"""``morreykit run|list|inspect``.

Exit status: 0 when every check of every requested suite passes, 1 when
some check fails (the failing criteria are printed), 2 when the command
line or the config does not validate.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, parallel_map
from .experiments import REGISTRY, list_experiments, resolve_params, run_experiment
from .field import read_field


def _build_configs(args) -> list[ExperimentConfig]:
    base = ExperimentConfig.load(args.config) if args.config else None
    names = args.experiment or ([base.experiment] if base else [])
    if not names:
        raise ConfigError("no experiment given: pass --experiment or a config naming one")
    if names == ["all"]:
        names = sorted(REGISTRY)
    cfgs = []
    for name in names:
        if base is not None and name == base.experiment:
            cfg = replace(base, grid=replace(base.grid))
        else:
            cfg = ExperimentConfig(name)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.grid is not None:
            cfg.grid.resolution = args.grid
        if args.tol_scale is not None:
            cfg.tol_scale = args.tol_scale
        if args.out is not None:
            cfg.out = str(Path(args.out) / name) if len(names) > 1 else args.out
        elif base is None or name != base.experiment:
            cfg.out = f"runs/{name}"
        resolve_params(cfg)  # validate everything before running anything
        cfgs.append(cfg)
    return cfgs


def _print_checks(name: str, checks) -> None:
    for c in checks:
        mark = "PASS" if c.passed else "FAIL"
        print(f"{mark} [{name} criterion {c.criterion}] {c.description}: {c.value:.6g} ({c.bound})")


def cmd_run(args) -> int:
    cfgs = _build_configs(args)
    results = parallel_map(run_experiment, cfgs)
    status = 0
    for cfg, res in zip(cfgs, results):
        _print_checks(cfg.experiment, res.checks)
        print(f"wrote {res.out}/summary.json")
        if res.status:
            failing = sorted({c.criterion for c in res.checks if not c.passed})
            print(f"{cfg.experiment}: failing criteria {', '.join(failing)}", file=sys.stderr)
            status = 1
    return status


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "summary.json"
    if not path.exists():
        raise ConfigError(f"no such file {path}")
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        print(f"{data['experiment']} seed={data['seed']} passed={data['passed']}")
        for c in data["checks"]:
            mark = "PASS" if c["passed"] else "FAIL"
            print(f"{mark} [criterion {c['criterion']}] {c['description']}: {c['value']} ({c['bound']})")
        print("files: " + ", ".join(data["files"]))
    elif path.suffix == ".fld":
        f = read_field(path)
        vals = f.masked
        print(json.dumps(f.grid.describe()))
        print(f"min {vals.min():.6g} max {vals.max():.6g} mean {vals.mean():.6g} nonfinite {int((~np.isfinite(vals)).sum())}")
    elif path.suffix == ".toml":
        cfg = ExperimentConfig.load(path)
        _, params = resolve_params(cfg)
        print(cfg.dumps(), end="")
        print("# resolved parameters")
        for k, v in sorted(params.items()):
            print(f"# {k} = {v!r}")
    else:
        raise ConfigError(f"cannot inspect {path.suffix or path.name!r} files")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morreykit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one or more experiment suites")
    run.add_argument("--experiment", action="append", help="suite name (repeatable, or 'all')")
    run.add_argument("--config", help="TOML experiment config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--grid", type=int, help="base grid resolution (cells per axis)")
    run.add_argument("--tol-scale", type=float, help="multiplies every relative tolerance")
    sub.add_parser("list", help="list registered suites")
    ins = sub.add_parser("inspect", help="show a summary.json, .fld snapshot or config")
    ins.add_argument("path")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        if args.command == "list":
            print(list_experiments())
            return 0
        if args.command == "run":
            return cmd_run(args)
        return cmd_inspect(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
