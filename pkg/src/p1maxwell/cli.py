"""Command-line entry point.

Subcommands: ``converge`` (manufactured-solution convergence table), ``run``
(one simulation with optional VTK snapshots and an energy log), ``cfl-sweep``
(empirical stability threshold) and ``mesh`` (generate and export meshes).

Settings come from command-line flags, then a JSON file given by
``--config``, then built-in defaults. Exit codes: 0 success, 2 instability,
3 I/O error, 4 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .fespace import NodalVectorField, interpolate
from .mesh import (build_disk_mesh, build_square_mesh, export_vtk, save_mesh)
from .solver import (EnergyLog, InstabilityError, SchemeOperators, initialize,
                     n_steps_for, run, spectral_time_step)
from .verify import (REFERENCE_LEVELS, ErrorTracker, ManufacturedCase, convergence_study,
                     reference_tau, write_rate_plot_data, write_report_csv)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_UNSTABLE, EXIT_IO, EXIT_CONFIG = 0, 2, 3, 4

DEFAULTS = {
    "m": 2,
    "levels": "1..5",
    "l": 1,
    "tau": None,
    "T": 0.5,
    "out": ".",
    "emit": None,
    "force": False,
    "seed": 0,
    "threads": 1,
    "safety_factor": 0.9,
    "zero_data": False,
    "kind": "disk",
    "vtk_every": 0,
    "steps": 400,
    "factors": None,
}

DEFAULT_EMIT = {"converge": ["csv"], "run": ["energy"], "cfl-sweep": ["csv"], "mesh": []}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with the
    # instability code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def parse_levels(text) -> tuple[int, int]:
    """``"a..b"`` or ``"a"`` to an inclusive (a, b) pair."""
    if isinstance(text, int):
        return text, text
    parts = str(text).split("..")
    try:
        if len(parts) == 1:
            a = b = int(parts[0])
        elif len(parts) == 2:
            a, b = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise ConfigError(f"bad level range {text!r}; expected a..b") from None
    if not 1 <= a <= b:
        raise ConfigError(f"bad level range {text!r}; need 1 <= a <= b")
    return a, b


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # defaults are None so that unset flags do not mask the config file
    common.add_argument("--config", help="JSON file with the same keys as the flags")
    common.add_argument("--m", type=int, help="permittivity exponent (default 2)")
    common.add_argument("--T", type=float, help="final time (default 0.5)")
    common.add_argument("--tau", type=float, help="time step override")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--emit", action="append", choices=["csv", "vtk", "energy"],
                        help="artifact to write; repeatable")
    common.add_argument("--force", action="store_true", default=None,
                        help="skip the CFL and T/tau checks on --tau")
    common.add_argument("--seed", type=int, help="seed for randomized utilities")
    common.add_argument("--threads", type=int, help="levels run concurrently")
    common.add_argument("--safety-factor", dest="safety_factor", type=float,
                        help="fraction of the spectral time step allowed (default 0.9)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="p1maxwell", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("converge", parents=[common], help="convergence table for one m")
    p.add_argument("--levels", help="level range a..b (default 1..5)")

    p = sub.add_parser("run", parents=[common], help="single simulation")
    p.add_argument("--l", type=int, help="mesh level (default 1)")
    p.add_argument("--zero-data", dest="zero_data", action="store_true", default=None,
                   help="zero initial data and no source")
    p.add_argument("--vtk-every", dest="vtk_every", type=int,
                   help="VTK snapshot stride in steps (0: first and last only)")

    p = sub.add_parser("cfl-sweep", parents=[common], help="empirical stability threshold")
    p.add_argument("--l", type=int, help="mesh level (default 1)")
    p.add_argument("--steps", type=int, help="steps per trial run (default 400)")

    p = sub.add_parser("mesh", parents=[common], help="generate a mesh")
    p.add_argument("--l", type=int, help="mesh level (default 1)")
    p.add_argument("--kind", choices=["disk", "square"], help="default disk")
    return parser


def resolve_config(args) -> dict:
    """Merge defaults, the JSON config file and explicit flags, in that order."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(data)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    if cfg["emit"] is None:
        cfg["emit"] = list(DEFAULT_EMIT[args.command])
    elif isinstance(cfg["emit"], str):
        cfg["emit"] = [cfg["emit"]]
    bad = set(cfg["emit"]) - {"csv", "vtk", "energy"}
    if bad:
        raise ConfigError(f"unknown emit targets {sorted(bad)}")
    if not 0 < cfg["safety_factor"] <= 1:
        raise ConfigError("safety_factor must lie in (0, 1]")
    if not cfg["T"] > 0:
        raise ConfigError("T must be positive")
    if cfg["tau"] is not None and not cfg["tau"] > 0:
        raise ConfigError("tau must be positive")
    if cfg["m"] < 2:
        raise ConfigError("m must be at least 2 for a C^2 permittivity")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if int(cfg["l"]) < 1:
        raise ConfigError("l must be >= 1")
    return cfg


# a forced run covers at least this many time levels, so that a step far
# beyond the CFL limit has room to show its growth
MIN_FORCED_LEVELS = 10


def forced_steps(T: float, tau: float) -> int:
    """Step count N when --force accepts a tau that need not divide T."""
    return max(MIN_FORCED_LEVELS, math.ceil(T / tau - 1e-9))


def choose_tau(cfg, ops, level):
    """Time step and step count for one level, enforcing the CFL guard."""
    T, tau = cfg["T"], cfg["tau"]
    if tau is None:
        if level in REFERENCE_LEVELS:
            tau = reference_tau(level)
        else:
            # largest tau = T/N below the guard
            limit = cfg["safety_factor"] * spectral_time_step(ops)
            tau = T / math.ceil(T / limit)
        return tau, n_steps_for(T, tau)
    if cfg["force"]:
        return tau, forced_steps(T, tau)
    limit = cfg["safety_factor"] * spectral_time_step(ops)
    if tau > limit:
        raise ConfigError(f"tau={tau!r} exceeds {cfg['safety_factor']} x spectral limit "
                          f"{limit / cfg['safety_factor']:.4e} on level {level}; use --force")
    try:
        return tau, n_steps_for(T, tau)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_converge(cfg) -> int:
    a, b = parse_levels(cfg["levels"])
    m, T = cfg["m"], cfg["T"]
    tau, n_steps = cfg["tau"], None
    if tau is not None:
        case = ManufacturedCase(m=m, T=T)
        for level in range(a, b + 1):
            ops = SchemeOperators.assemble(build_disk_mesh(level), case.eps)
            _, n_steps = choose_tau(cfg, ops, level)
    out = _outdir(cfg)
    executor = ThreadPoolExecutor(cfg["threads"]) if cfg["threads"] > 1 else None
    try:
        report = convergence_study(m, a, b, T=T, executor=executor, tau=tau, n_steps=n_steps)
    except InstabilityError as exc:
        print(f"instability on level {getattr(exc, 'level', '?')}: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    finally:
        if executor is not None:
            executor.shutdown()
    if "csv" in cfg["emit"]:
        write_report_csv(report, out / f"report_m{m}.csv")
        write_rate_plot_data(report, out / f"rates_m{m}.csv")
    for lv in report.levels:
        print(f"l={lv.l} nel={lv.nel} nno={lv.nno} e1={lv.e1:.4e} e2={lv.e2:.4e} e3={lv.e3:.4e}")
    return EXIT_OK


def cmd_run(cfg) -> int:
    m, level = cfg["m"], int(cfg["l"])
    case = ManufacturedCase(m=m, T=cfg["T"])
    mesh = build_disk_mesh(level)
    ops = SchemeOperators.assemble(mesh, case.eps)
    tau, N = choose_tau(cfg, ops, level)
    out = _outdir(cfg)
    if cfg["zero_data"]:
        e0 = e1 = NodalVectorField.zeros(mesh)
        source = None
    else:
        e0 = interpolate(case.initial_data, mesh)
        e1 = interpolate(case.initial_velocity, mesh)
        source = case.source
    state = initialize(e0, e1, tau)
    tracker = ErrorTracker(mesh, case, tau)
    log = EnergyLog(extra=lambda s: tracker.last, extra_names=("err1", "err2", "err3"))
    callbacks = [tracker, log]
    stem = f"run_m{m}_l{level}"
    if "vtk" in cfg["emit"]:
        every = int(cfg["vtk_every"])

        def snapshot(s):
            if s.k == 1 or s.k == N or (every > 0 and s.k % every == 0):
                export_vtk(mesh, s.e_curr.reshape(mesh.n_vertices, -1),
                           out / f"{stem}_{s.k:06d}.vtk")
        callbacks.append(snapshot)
    status = EXIT_OK
    try:
        state = run(ops, state, source=source, callbacks=callbacks, n_steps=N)
    except InstabilityError as exc:
        print(f"instability on level {level}: {exc}", file=sys.stderr)
        status = EXIT_UNSTABLE
    if "energy" in cfg["emit"]:
        log.write(out / f"{stem}_energy.csv")
    if status == EXIT_OK:
        print(f"m={m} l={level} tau={tau!r} steps={N} energy={state.energy_history[-1]:.6e}")
    return status


def stable_at(ops, tau, n_steps, seed) -> bool:
    """Whether random initial data stays bounded for ``n_steps`` leapfrog steps."""
    rng = np.random.default_rng(seed)
    e0 = rng.standard_normal(len(ops.M))
    state = initialize(e0, np.zeros_like(e0), tau)
    try:
        run(ops, state, n_steps=n_steps)
    except InstabilityError:
        return False
    return True


def cfl_sweep(ops, n_steps=400, seed=0, factors=None, rtol=0.01):
    """Stability of tau = f * tau_spectral over a geometric grid of f, then bisection.

    Returns ``(tau_spectral, rows, threshold)`` where rows are (f, stable) and
    the threshold factor is bracketed to relative width ``rtol``.
    """
    tau_s = spectral_time_step(ops)
    if factors is None:
        factors = [0.25 * 2 ** (k / 2) for k in range(11)]  # 0.25 .. 8
    rows = [(float(f), stable_at(ops, f * tau_s, n_steps, seed)) for f in factors]
    lo = max((f for f, ok in rows if ok), default=None)
    hi = min((f for f, ok in rows if not ok and (lo is None or f > lo)), default=None)
    if lo is None or hi is None:
        return tau_s, rows, None
    while hi - lo > rtol * lo:
        mid = 0.5 * (lo + hi)
        ok = stable_at(ops, mid * tau_s, n_steps, seed)
        rows.append((mid, ok))
        lo, hi = (mid, hi) if ok else (lo, mid)
    return tau_s, rows, 0.5 * (lo + hi)


def cmd_cfl_sweep(cfg) -> int:
    m, level = cfg["m"], int(cfg["l"])
    case = ManufacturedCase(m=m, T=cfg["T"])
    ops = SchemeOperators.assemble(build_disk_mesh(level), case.eps)
    tau_s, rows, thr = cfl_sweep(ops, int(cfg["steps"]), cfg["seed"], cfg["factors"])
    out = _outdir(cfg)
    if "csv" in cfg["emit"]:
        with open(out / f"cfl_m{m}_l{level}.csv", "w") as fh:
            fh.write("factor,tau,stable\n")
            for f, ok in rows:
                fh.write(f"{f!r},{f * tau_s!r},{int(ok)}\n")
    print(f"tau_spectral={tau_s:.6e}")
    if thr is None:
        print("threshold not bracketed by the sweep", file=sys.stderr)
        return EXIT_UNSTABLE
    print(f"threshold factor={thr:.4f} tau={thr * tau_s:.6e}")
    return EXIT_OK


def cmd_mesh(cfg) -> int:
    level = int(cfg["l"])
    mesh = (build_disk_mesh if cfg["kind"] == "disk" else build_square_mesh)(level)
    out = _outdir(cfg)
    stem = out / f"{cfg['kind']}_l{level}"
    save_mesh(mesh, f"{stem}.mesh")
    if "vtk" in cfg["emit"]:
        export_vtk(mesh, None, f"{stem}.vtk")
    print(f"{stem}.mesh: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
    return EXIT_OK


COMMANDS = {"converge": cmd_converge, "run": cmd_run, "cfl-sweep": cmd_cfl_sweep,
            "mesh": cmd_mesh}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg["command"]](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
