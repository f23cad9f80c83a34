"""Command-line driver: ``jumptame --problem cubic --mode converge ...``.

Settings come from, in decreasing priority: command-line flags, a flat
``key=value`` config file given with ``--config``, the ``JUMPTAME_SEED``
environment variable (seed only), and built-in defaults.

Exit codes: 0 success, 1 numerical or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

from . import analysis
from .problem import CATALOG, ContractError, get_problem
from .schemes import Scheme, SchemeError, as_scheme

log = logging.getLogger("jumptame")

MODES = ("converge", "moments", "diverge")
DEFAULT_SCHEMES = {
    "converge": (Scheme.NCTS, Scheme.STS, Scheme.CTS),
    "moments": (Scheme.NCTS, Scheme.STS, Scheme.CTS),
    "diverge": (Scheme.EM, Scheme.NCTS, Scheme.CTS),
}
DEFAULTS = {
    "levels": "16,32,64,128,256,512",
    "ref": "8192",
    "paths": "1000",
    "p": "2",
    "seed": "0",
    "threshold": "1e6",
    "noise_free": "false",
}
CONFIG_KEYS = {
    "problem", "mode", "scheme", "levels", "ref", "paths", "p", "seed", "out",
    "threads", "threshold", "noise_free", "horizon",
}


@dataclass
class ExperimentConfig:
    problem_key: str
    mode: str
    schemes: list
    levels: list
    ref_steps: int
    n_paths: int
    p: float
    seed: int
    output_path: str
    threads: Optional[int] = None
    threshold: float = 1e6
    noise_free: bool = False
    horizon: Optional[float] = None


class UsageError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="jumptame",
        description="Strong-convergence, moment and divergence experiments for tamed Euler schemes.",
    )
    ap.add_argument("--config", help="key=value file; flags override its values")
    ap.add_argument("--problem", choices=sorted(CATALOG), help="catalog problem key")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--scheme", action="append", help="EM, NCTS, STS or CTS; repeatable")
    ap.add_argument("--levels", help="comma-separated step counts")
    ap.add_argument("--ref", help="reference step count")
    ap.add_argument("--paths", help="Monte Carlo paths")
    ap.add_argument("--p", help="error norm exponent (moment order in moments mode)")
    ap.add_argument("--seed", help="global seed (fallback: $JUMPTAME_SEED)")
    ap.add_argument("--out", help="output CSV path")
    ap.add_argument("--threads", help="worker cap; never changes results")
    ap.add_argument("--threshold", help="divergence threshold (diverge mode)")
    ap.add_argument("--noise-free", dest="noise_free", action="store_const", const="true",
                    help="zero all increments (diverge mode)")
    ap.add_argument("--horizon", help="override the problem horizon T")
    return ap


def read_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or key not in CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: bad config line {raw.strip()!r}")
            values[key] = value.strip()
    return values


def _as_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _resolve(args: argparse.Namespace) -> ExperimentConfig:
    merged = dict(DEFAULTS)
    env_seed = os.environ.get("JUMPTAME_SEED")
    if env_seed:
        merged["seed"] = env_seed
    if args.config:
        try:
            merged.update(read_config_file(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is None:
            continue
        merged[key] = ",".join(value) if key == "scheme" else value

    if "problem" not in merged:
        raise UsageError("--problem is required")
    if merged["problem"] not in CATALOG:
        raise UsageError(f"unknown problem {merged['problem']!r}")
    mode = merged.get("mode", "converge")
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}")

    try:
        levels = [int(x) for x in merged["levels"].split(",") if x.strip()]
        ref = int(merged["ref"])
        paths = int(merged["paths"])
        p = float(merged["p"])
        seed = int(merged["seed"], 0)
        threads = int(merged["threads"]) if merged.get("threads") else None
        threshold = float(merged["threshold"])
        horizon = float(merged["horizon"]) if merged.get("horizon") else None
    except ValueError as exc:
        raise UsageError(f"bad numeric value: {exc}") from None

    if not levels:
        raise UsageError("--levels must not be empty")
    for a, b in zip(levels, levels[1:]):
        if b <= a:
            raise UsageError(f"levels must be strictly increasing ({a} then {b})")
    for lv in levels:
        if lv < 1 or ref % lv:
            raise UsageError(f"level {lv} does not divide ref_steps {ref}")
    if paths < 1:
        raise UsageError("--paths must be >= 1")
    if threads is not None and threads < 1:
        raise UsageError("--threads must be >= 1")

    if merged.get("scheme"):
        try:
            schemes = [as_scheme(s) for s in merged["scheme"].split(",") if s.strip()]
        except ContractError as exc:
            raise UsageError(str(exc)) from None
    else:
        schemes = list(DEFAULT_SCHEMES[mode])

    return ExperimentConfig(
        problem_key=merged["problem"],
        mode=mode,
        schemes=schemes,
        levels=levels,
        ref_steps=ref,
        n_paths=paths,
        p=p,
        seed=seed,
        output_path=merged.get("out") or f"jumptame_{mode}.csv",
        threads=threads,
        threshold=threshold,
        noise_free=_as_bool(merged["noise_free"]),
        horizon=horizon,
    )


def parse_config(args: list[str]) -> ExperimentConfig:
    """Parse flags (and any ``--config`` file); usage problems exit with status 2."""
    parser = build_parser()
    ns = parser.parse_args(args)
    try:
        return _resolve(ns)
    except UsageError as exc:
        parser.error(str(exc))


def _problem(config: ExperimentConfig):
    overrides = {}
    if config.horizon is not None:
        overrides["horizon"] = config.horizon
    problem = get_problem(config.problem_key, **overrides)
    schemes = [s for s in config.schemes if s is not Scheme.STS or problem.drift_split is not None]
    return problem, schemes


def _converge(config, problem, schemes):
    reports = analysis.strong_errors(
        problem, schemes, config.levels, config.ref_steps, config.n_paths,
        config.p, config.seed, config.threads,
    )
    for scheme, rep in reports.items():
        order = "degenerate" if rep.degenerate else f"{rep.fitted_order:.4f}"
        excluded = sum(r.excluded for r in rep.rows)
        print(f"{scheme}: fitted_order={order} intercept={rep.fitted_intercept:.4f} "
              f"max_tamed_increment={rep.max_tamed_increment:.4f} excluded={excluded}")
    return analysis.convergence_csv(reports.values())


def _moments(config, problem, schemes):
    series = {}
    for scheme in schemes:
        sups = []
        for steps in config.levels:
            sup, values = analysis.moment_track(
                problem, scheme, steps, config.n_paths, config.p, config.seed, config.threads
            )
            series[scheme, steps] = values
            sups.append(f"M={steps}:{sup:.6g}")
        print(f"{scheme}: sup_n E|Y_n|^{config.p:g} " + " ".join(sups))
    return analysis.moment_csv(series, config.p)


def _diverge(config, problem, schemes):
    dts = [problem.horizon / lv for lv in config.levels]
    rows = analysis.divergence_demo(
        problem, dts, config.n_paths, config.threshold, config.seed,
        schemes=schemes, noise_free=config.noise_free, threads=config.threads,
    )
    for scheme in schemes:
        fr = " ".join(f"dt={r.dt:g}:{r.fraction:g}" for r in rows if r.scheme is scheme)
        print(f"{scheme}: fraction above {config.threshold:g} {fr}")
    return analysis.divergence_csv(rows, config.threshold, config.n_paths)


RUNNERS = {"converge": _converge, "moments": _moments, "diverge": _diverge}


def run(config: ExperimentConfig) -> int:
    """Execute the configured experiment and write its CSV; returns an exit code."""
    parent = os.path.dirname(os.path.abspath(config.output_path))
    if not os.path.isdir(parent):
        print(f"jumptame: cannot write {config.output_path}: no directory {parent}", file=sys.stderr)
        return 1
    try:
        problem, schemes = _problem(config)
        text = RUNNERS[config.mode](config, problem, schemes)
    except (ContractError, KeyError) as exc:
        print(f"jumptame: error: {exc}", file=sys.stderr)
        return 2
    except (SchemeError, ArithmeticError, analysis.DegenerateDataError) as exc:
        print(f"jumptame: numerical failure: {exc}", file=sys.stderr)
        return 1
    try:
        with open(config.output_path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        print(f"jumptame: cannot write {config.output_path}: {exc}", file=sys.stderr)
        return 1
    log.info("wrote %s", config.output_path)
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    config = parse_config(sys.argv[1:] if argv is None else list(argv))
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
