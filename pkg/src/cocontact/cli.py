"""Command-line front end.

Subcommands:
  constraints  run the constraint algorithm, print the ladder report
  simulate     integrate a trajectory, write CSV/JSON, print residuals
  verify       run the named identity checks, print a pass/fail table
  sweep        fan a parameter sweep across worker threads

Configuration is a JSON document (--config), or --preset NAME for a
built-in system with its default initial data:

  {
    "system": "duffing" | {"n": 1, "lagrangian": "<expression>", "params": {...}},
    "params": {...},                     # preset overrides (preset systems only)
    "initial": {"t0": 0.0, "q": [...], "v": [...], "s": 0.0},
    "integrator": {"method": "rk4", "step": 1e-3, "t_end": 10.0,
                    "abs_tol": 1e-9, "rel_tol": 1e-9, "reproject": false},
    "outputs": {"csv": "run.csv", "json": "run.json",
                 "channels": ["holonomy", "sdot", "herglotz", "constraint"]},
    "sweep": {"param": "alpha", "values": [0.5, 1.0, 2.0]}
  }

Momenta are never part of the input; initial states are projected onto
the constraint set.  Relative output paths resolve inside $COCONTACT_OUT_DIR
(default: current directory).

Exit codes: 0 success; 1 configuration error or failed verification;
2 incompatible constraint ladder; 3 constraint algorithm hit its
generation cap; 4 integrator failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dsl
from .dynamics import (
    IntegratorConfig,
    LadderLost,
    NonInvertibleLegendre,
    StepFailure,
    hamiltonian_field,
    integrate,
    lagrangian_field,
    residual_report,
    trajectory_to_csv,
    trajectory_to_json,
    unified_field,
)
from .checks import run_all_checks
from .jets import JetDomainError
from .mechanics import LagrangianSystem
from .pontryagin import AlgorithmOptions, InfeasiblePoint, run_constraint_algorithm
from .systems import PRESET_NAMES, preset_by_name

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INCOMPATIBLE = 2
EXIT_MAX_GENERATIONS = 3
EXIT_INTEGRATOR = 4

CHANNELS = ("holonomy", "sdot", "herglotz", "constraint")


class ConfigError(ValueError):
    pass


def _load_config(args) -> dict:
    if getattr(args, "preset", None):
        if args.config:
            raise ConfigError("give either --config or --preset, not both")
        return {"system": args.preset}
    if not args.config:
        raise ConfigError("a --config file or --preset name is required")
    try:
        with open(args.config) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _build_system(config: dict):
    """(system, preset-or-None) from the config's system block."""
    spec = config.get("system")
    if isinstance(spec, str):
        try:
            pre = preset_by_name(spec, config.get("params"))
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
        return pre.system, pre
    if isinstance(spec, dict):
        if config.get("params"):
            raise ConfigError("inline systems take params inside the system block")
        try:
            n = int(spec["n"])
            text = spec["lagrangian"]
        except KeyError as exc:
            raise ConfigError(f"inline system needs {exc} field") from exc
        params = dict(spec.get("params", {}))
        try:
            expr = dsl.parse(text, n)
            field = dsl.as_field(expr, params)
        except (dsl.DslError, dsl.UnknownParameterError) as exc:
            raise ConfigError(f"bad inline Lagrangian: {exc}") from exc
        L = LagrangianSystem(n, lambda t, q, v, s, P: field.fn([t, *q, *v, s]),
                             params, label="inline")
        return L, None
    raise ConfigError("config needs a system: preset name or inline definition")


def _initial_state(config: dict, L, pre) -> np.ndarray:
    """Unified-space start vector; momenta zeroed (projected later)."""
    init = config.get("initial")
    if init is None:
        if pre is None:
            raise ConfigError("inline systems need an initial block")
        ic = pre.initial
        return np.concatenate(([ic.t], ic.q, ic.v, np.zeros(L.n), [ic.s]))
    try:
        t0 = float(init.get("t0", 0.0))
        q = np.asarray(init["q"], dtype=float)
        v = np.asarray(init["v"], dtype=float)
        s0 = float(init.get("s", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad initial block: {exc}") from exc
    if q.shape != (L.n,) or v.shape != (L.n,):
        raise ConfigError(f"initial q and v must have length n = {L.n}")
    return np.concatenate(([t0], q, v, np.zeros(L.n), [s0]))


def _integrator_config(config: dict, args) -> IntegratorConfig:
    block = dict(config.get("integrator", {}))
    if getattr(args, "step", None) is not None:
        block["step"] = args.step
    if getattr(args, "t_end", None) is not None:
        block["t_end"] = args.t_end
    allowed = {"method", "step", "t_end", "abs_tol", "rel_tol", "reproject"}
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown integrator fields: {sorted(unknown)}")
    try:
        return IntegratorConfig(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad integrator block: {exc}") from exc


def _out_dir() -> Path:
    return Path(os.environ.get("COCONTACT_OUT_DIR", "."))


def _resolve(path: str | Path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else _out_dir() / path


def _ladder_exit(status: str) -> int:
    return {"Closed": EXIT_OK, "Incompatible": EXIT_INCOMPATIBLE,
            "MaxIterations": EXIT_MAX_GENERATIONS}[status]


def cmd_constraints(args) -> int:
    config = _load_config(args)
    L, pre = _build_system(config)
    w0 = _initial_state(config, L, pre)
    try:
        ladder, _ = run_constraint_algorithm(L, w0, AlgorithmOptions())
    except InfeasiblePoint as exc:
        print(f"error: initial point cannot be projected: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR
    report = ladder.report()
    report["system"] = L.label
    text = json.dumps(report, indent=1)
    if args.out:
        _resolve(args.out).write_text(text + "\n")
    else:
        print(text)
    return _ladder_exit(ladder.status)


def _make_field(space: str, L, ladder, opts):
    if space == "unified":
        return unified_field(L, ladder, opts)
    if space == "lagrangian":
        return lagrangian_field(L, ladder, opts)
    return hamiltonian_field(L, ladder, opts)


def _space_state(space: str, w0: np.ndarray, n: int) -> np.ndarray:
    if space == "unified":
        return w0
    if space == "lagrangian":
        return np.concatenate((w0[: 1 + 2 * n], w0[-1:]))
    return np.concatenate((w0[: 1 + n], w0[1 + 2 * n : 1 + 3 * n], w0[-1:]))


def cmd_simulate(args) -> int:
    config = _load_config(args)
    L, pre = _build_system(config)
    w0 = _initial_state(config, L, pre)
    cfg = _integrator_config(config, args)
    outputs = dict(config.get("outputs", {}))
    channels = outputs.get("channels", list(CHANNELS))
    bad = set(channels) - set(CHANNELS)
    if bad:
        raise ConfigError(f"unknown residual channels: {sorted(bad)}")

    opts = AlgorithmOptions()
    try:
        ladder, _ = run_constraint_algorithm(L, w0, opts)
    except InfeasiblePoint as exc:
        print(f"error: initial point cannot be projected: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR
    if ladder.status != "Closed":
        print(f"error: constraint algorithm ended {ladder.status}", file=sys.stderr)
        return _ladder_exit(ladder.status)

    field = _make_field(args.space, L, ladder, opts)
    x0 = _space_state(args.space, ladder.probe, L.n)
    try:
        traj = integrate(field, x0, cfg)
    except (StepFailure, LadderLost, NonInvertibleLegendre, InfeasiblePoint,
            JetDomainError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR

    csv_path = args.out or outputs.get("csv") or f"{L.label}_{args.space}.csv"
    csv_path = _resolve(csv_path)
    trajectory_to_csv(traj, csv_path)
    written = [str(csv_path)]
    if outputs.get("json"):
        jpath = _resolve(outputs["json"])
        trajectory_to_json(traj, jpath)
        written.append(str(jpath))

    rep = residual_report(L, traj)
    summary = {
        "system": L.label,
        "space": args.space,
        "samples": len(traj),
        "t_final": traj.times[-1],
        "files": written,
        "residuals": {k: rep[k] for k in channels},
    }
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def cmd_verify(args) -> int:
    config = _load_config(args)
    L, pre = _build_system(config)
    if pre is None:
        print("error: verify needs a preset system (its closed forms are the oracle)",
              file=sys.stderr)
        return EXIT_CONFIG
    results = run_all_checks(pre, seed=args.seed, tol=args.tol)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_CONFIG


def _sweep_one(config: dict, name: str, param: str, value: float, space: str,
               cfg: IntegratorConfig):
    pre = preset_by_name(name, {**config.get("params", {}), param: value})
    L = pre.system
    ic = pre.initial
    w0 = np.concatenate(([ic.t], ic.q, ic.v, np.zeros(L.n), [ic.s]))
    opts = AlgorithmOptions()
    ladder, _ = run_constraint_algorithm(L, w0, opts)
    if ladder.status != "Closed":
        raise RuntimeError(f"{param}={value}: ladder {ladder.status}")
    traj = integrate(_make_field(space, L, ladder, opts),
                     _space_state(space, ladder.probe, L.n), cfg)
    path = _resolve(f"{L.label}_{param}_{value:g}.csv")
    trajectory_to_csv(traj, path)
    rep = residual_report(L, traj)
    return {
        "value": value,
        "file": str(path),
        "t_final": traj.times[-1],
        "final_state": traj.states[-1].tolist(),
        "residual_max": {k: rep[k]["max"] for k in CHANNELS},
    }


def cmd_sweep(args) -> int:
    config = _load_config(args)
    spec = config.get("system")
    if not isinstance(spec, str):
        print("error: sweep needs a preset system", file=sys.stderr)
        return EXIT_CONFIG
    block = dict(config.get("sweep", {}))
    param = args.param or block.get("param")
    values = args.values or block.get("values")
    if isinstance(values, str):
        values = [float(x) for x in values.split(",")]
    if not param or not values:
        print("error: sweep needs a parameter name and a value list", file=sys.stderr)
        return EXIT_CONFIG
    cfg = _integrator_config(config, args)

    # each worker builds its own system, ladder, and field: no shared state
    with ThreadPoolExecutor(max_workers=min(4, len(values))) as pool:
        futures = [
            pool.submit(_sweep_one, config, spec, param, float(v), args.space, cfg)
            for v in values
        ]
        rows = []
        for fut in futures:
            try:
                rows.append(fut.result())
            except (KeyError, ConfigError, ValueError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            except (StepFailure, LadderLost, NonInvertibleLegendre, InfeasiblePoint,
                    RuntimeError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_INTEGRATOR
    print(json.dumps({"param": param, "runs": rows}, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cocontact",
        description="Constraint algorithm, trajectories, and identity checks "
                    "for time-dependent contact Lagrangian systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, integrator=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--preset", choices=PRESET_NAMES,
                       help="built-in system with default initial data")
        p.add_argument("--out", help="output path (resolved in $COCONTACT_OUT_DIR)")
        p.add_argument("--seed", type=int, default=42, help="random probe seed")
        if integrator:
            p.add_argument("--space", choices=("unified", "lagrangian", "hamiltonian"),
                           default="unified", help="description to integrate")
            p.add_argument("--step", type=float, help="integrator step override")
            p.add_argument("--t-end", dest="t_end", type=float, help="end time override")

    p = sub.add_parser("constraints", help="run the constraint algorithm, report the ladder")
    common(p)
    p.set_defaults(fn=cmd_constraints)

    p = sub.add_parser("simulate", help="integrate a trajectory and export it")
    common(p, integrator=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("verify", help="run the identity checks for a preset")
    common(p)
    p.add_argument("--tol", type=float, default=None,
                   help="override every value-comparison tolerance")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("sweep", help="integrate one preset across parameter values")
    common(p, integrator=True)
    p.add_argument("--param", help="parameter to sweep")
    p.add_argument("--values", help="comma-separated parameter values")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
