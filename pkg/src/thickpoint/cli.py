"""Command-line entry point: ``thickpoint <command> --config run.toml``."""

from __future__ import annotations

import argparse
import sys
import tempfile
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentConfig, load_config, parse_config
from .errors import (ConfigError, MissingStage, NumericalError, StageFailure, ThickpointError,
                     VerificationFailure)
from .experiment import RunManifest, report, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

COMMANDS = {
    "model": ("model",),
    "dims": ("dimensions",),
    "transport": ("exponents",),
    "spacing": ("spacing",),
    "construct": ("state",),
    "verify": None,
}

SELFTEST_CONFIG = """
[model]
family = "free"
size = 64

[initial_state]
kind = "delta"

[time]
t_min = 1.0
t_max = 8.0
fit_window = [1.0, 8.0]

[run]
seeds = [0]
"""


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thickpoint", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["report", "selftest"]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment TOML file")
        p.add_argument("--seed-override", type=int, default=None,
                       help="run with this single seed instead of the configured list")
        p.add_argument("--out", help="output directory (overrides run.output_dir)")
        p.add_argument("--threads", type=int, default=None, help="worker threads over seeds")
    return ap


def _config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config", "a config file is required for this command")
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from exc
    return _overrides(cfg, args)


def _overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed_override is not None:
        cfg = cfg.with_seeds([args.seed_override])
    if args.out:
        cfg = cfg.with_output(args.out)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        from dataclasses import replace
        cfg = replace(cfg, threads=args.threads)
    return cfg


def _selftest(args) -> int:
    from .dynamics import evolve, time_avg_site_prob
    from .models import ModelSpec, build_hamiltonian, delta_state, eigensolve

    checks = []
    spec = ModelSpec("free", 64)
    eig = eigensolve(build_hamiltonian(spec))
    k = np.arange(1, 65)
    exact = np.sort(2 * np.cos(k * np.pi / 65))
    checks.append(("free-chain eigenvalues", float(np.max(np.abs(exact - eig.eigenvalues))) < 1e-12))
    xi = delta_state(spec)
    s = np.linspace(0.0, 3.0, 20001)
    probs = np.array([abs(evolve(eig, xi, t)[spec.origin]) ** 2 for t in s])
    from scipy.integrate import simpson
    quad = simpson(probs, x=s) / 3.0
    closed = time_avg_site_prob(eig, xi, 3.0, spec.origin)
    checks.append(("time-averaged return probability", abs(quad - closed) <= 1e-8 * closed))
    with tempfile.TemporaryDirectory() as tmp:
        cfg = _overrides(parse_config(SELFTEST_CONFIG).with_output(tmp), args)
        run_experiment(cfg)
        checks.append(("pipeline", True))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_VERIFY


def _cause(exc: BaseException) -> BaseException:
    while isinstance(exc, StageFailure):
        exc = exc.cause
    return exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return _selftest(args)
        if args.command == "report":
            if args.out:
                manifest = RunManifest.load(args.out)
            else:
                manifest = RunManifest.load(_config(args).output_dir)
            res = report(manifest)
            print(res["text"], end="")
            return EXIT_OK
        cfg = _config(args)
        manifest = run_experiment(cfg, COMMANDS[args.command])
        print(f"wrote {len(manifest.files())} files to {manifest.output_dir}")
        if args.command == "verify":
            res = report(manifest)
            print(res["text"], end="")
            if not res["bounds_passed"]:
                raise VerificationFailure("dimension-transport bound check failed")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except MissingStage as exc:
        print(f"incomplete run: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageFailure, NumericalError, ThickpointError, FileNotFoundError) as exc:
        cause = _cause(exc)
        if isinstance(cause, ConfigError):
            print(f"config error: {cause}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
