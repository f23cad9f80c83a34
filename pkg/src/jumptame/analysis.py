"""Monte Carlo strong-error estimation and related diagnostics.

Each Monte Carlo path ``i`` draws its fine noise from stream ``i`` of the
run seed.  The reference solution is CTS on the finest grid; every scheme
under test runs on exact coarsenings of that same noise and its continuous
extension is compared with the reference at every fine grid point.

Paths are processed in fixed-size chunks, optionally on a thread pool.
Per-path results are reassembled in path order before any reduction, so the
numbers do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .noise import sample_noise, stack_noise
from .problem import ContractError, JumpDiffusionProblem, norm
from .schemes import (
    Scheme,
    SchemeError,
    check_scheme,
    interpolate_arrays,
    simulate_arrays,
)

CHUNK_PATHS = 128
REFERENCE_SCHEME = Scheme.CTS

CONVERGENCE_HEADER = ["scheme", "level_steps", "dt", "p", "error", "std_err", "n_paths", "excluded"]
MOMENT_HEADER = ["scheme", "steps", "n", "q", "moment"]
DIVERGENCE_HEADER = ["scheme", "dt", "steps", "threshold", "n_paths", "fraction"]


class ReferenceDivergenceError(SchemeError):
    """The reference path left the finite range, which a tamed scheme must not do."""


class DegenerateDataError(ValueError):
    """Convergence rows cannot be fitted on a log-log scale."""


@dataclass(frozen=True)
class ErrorSample:
    path_id: int
    sup_error: float
    diverged: bool = False


@dataclass(frozen=True)
class ConvergenceRow:
    steps: int
    dt: float
    error: float
    std_err: float
    excluded: int = 0


@dataclass
class ConvergenceReport:
    scheme: Scheme
    p: float
    n_paths: int
    ref_steps: int
    rows: list
    fitted_order: float = math.nan
    fitted_intercept: float = math.nan
    degenerate: bool = False
    max_tamed_increment: float = 0.0
    samples: dict = field(default_factory=dict, repr=False)

    def to_csv(self) -> str:
        return convergence_csv([self])


def fit_order(rows: Iterable) -> tuple[float, float]:
    """Least-squares line through ``(log dt, log error)``.

    ``rows`` holds ``(dt, error)`` pairs or :class:`ConvergenceRow` objects.
    Returns ``(slope, intercept)``.
    """
    pairs = [(r.dt, r.error) if isinstance(r, ConvergenceRow) else tuple(r) for r in rows]
    if len(pairs) < 2:
        raise DegenerateDataError("need at least two rows to fit an order")
    dt = np.array([p[0] for p in pairs], dtype=np.float64)
    err = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.any(dt <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise DegenerateDataError("errors and step sizes must be finite and positive")
    x = np.log(dt)
    y = np.log(err)
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    return slope, float(ym - slope * xm)


def lp_estimate(sup_errors: np.ndarray, p: float) -> tuple[float, float]:
    """``(mean(e**p))**(1/p)`` and its delta-method standard error."""
    n = sup_errors.size
    powered = sup_errors**p
    m = float(np.mean(powered))
    if m == 0.0 or n < 2:
        return m ** (1.0 / p), 0.0
    sd = float(np.std(powered, ddof=1))
    return m ** (1.0 / p), (1.0 / p) * m ** (1.0 / p - 1.0) * sd / math.sqrt(n)


def _check_ladder(levels: Sequence[int], ref_steps: int) -> list[int]:
    levels = sorted(int(lv) for lv in levels)
    if not levels:
        raise ContractError("levels must not be empty")
    for lv in levels:
        if lv < 1 or ref_steps % lv:
            raise ContractError(f"level {lv} does not divide ref_steps {ref_steps}")
    return levels


def _chunks(n_paths: int, size: int = CHUNK_PATHS) -> list[range]:
    return [range(i, min(i + size, n_paths)) for i in range(0, n_paths, size)]


def _map_chunks(fn, chunks, threads: Optional[int]):
    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _coarse_increments(brownian, poisson, level):
    paths, fine = poisson.shape
    k = fine // level
    bw = brownian.reshape(paths, level, k, brownian.shape[-1]).sum(axis=2)
    pn = poisson.reshape(paths, level, k).sum(axis=2)
    return bw, pn


def _error_chunk(problem, schemes, levels, ref_steps, seed, ids):
    noise = [sample_noise(problem, ref_steps, seed, i) for i in ids]
    bw, pn = stack_noise(noise)
    fine_dt = noise[0].dt
    ref = simulate_arrays(problem, REFERENCE_SCHEME, bw, pn, fine_dt)
    if np.any(ref.diverged):
        bad = int(np.flatnonzero(ref.diverged)[0])
        raise ReferenceDivergenceError(REFERENCE_SCHEME, detail=f"reference path {ids[bad]} diverged")

    out = {}
    for scheme in schemes:
        for level in levels:
            cbw, cpn = _coarse_increments(bw, pn, level)
            batch = simulate_arrays(problem, scheme, cbw, cpn, fine_dt * (ref_steps // level))
            chi = interpolate_arrays(problem, scheme, batch.states, bw, pn, fine_dt)
            with np.errstate(over="ignore", invalid="ignore"):
                sup = np.max(norm(ref.states - chi), axis=-1)
            diverged = batch.diverged | ~np.isfinite(sup)
            out[scheme, level] = (sup, diverged, batch.max_tamed_increment)
    return out, ref.max_tamed_increment


def strong_errors(
    problem: JumpDiffusionProblem,
    schemes: Sequence,
    levels: Sequence[int],
    ref_steps: int,
    n_paths: int,
    p: float = 2.0,
    seed: int = 0,
    threads: Optional[int] = None,
) -> dict:
    """Strong-error reports for several schemes sharing one reference ensemble.

    Returns a dict mapping :class:`Scheme` to :class:`ConvergenceReport`.
    """
    schemes = [check_scheme(problem, s) for s in schemes]
    levels = _check_ladder(levels, ref_steps)
    if ref_steps < 8 * levels[-1] and levels[-1] != ref_steps:
        raise ContractError(
            f"ref_steps {ref_steps} must be at least 8x the finest level {levels[-1]}"
        )
    if not p >= 1:
        raise ContractError("p must be >= 1")
    if n_paths < 2:
        raise ContractError("n_paths must be >= 2")

    chunks = _chunks(n_paths)
    results = _map_chunks(
        lambda ids: _error_chunk(problem, schemes, levels, ref_steps, seed, ids),
        chunks,
        threads,
    )
    ref_max = float(max(np.max(r[1]) for r in results))

    reports = {}
    for scheme in schemes:
        rows = []
        samples = {}
        max_inc = ref_max if scheme is REFERENCE_SCHEME else 0.0
        for level in levels:
            sup = np.concatenate([r[0][scheme, level][0] for r in results])
            diverged = np.concatenate([r[0][scheme, level][1] for r in results])
            inc = np.concatenate([r[0][scheme, level][2] for r in results])
            if scheme.tamed and np.any(diverged):
                raise SchemeError(scheme, detail=f"path {int(np.flatnonzero(diverged)[0])} diverged")
            max_inc = max(max_inc, float(np.max(inc[~diverged], initial=0.0)))
            kept = sup[~diverged]
            excluded = int(diverged.sum())
            if kept.size:
                error, se = lp_estimate(kept, p)
            else:
                error, se = math.nan, math.nan
            dt = problem.horizon / level
            rows.append(ConvergenceRow(level, dt, error, se, excluded))
            samples[level] = [
                ErrorSample(i, float(s), bool(dv)) for i, (s, dv) in enumerate(zip(sup, diverged))
            ]
        report = ConvergenceReport(
            scheme=scheme,
            p=float(p),
            n_paths=int(n_paths),
            ref_steps=int(ref_steps),
            rows=rows,
            max_tamed_increment=max_inc,
            samples=samples,
        )
        # zero rows are self-comparisons (CTS at ref_steps) or constant dynamics
        usable = [r for r in rows if r.error > 0]
        try:
            report.fitted_order, report.fitted_intercept = fit_order(usable)
        except DegenerateDataError:
            report.degenerate = True
        reports[scheme] = report
    return reports


def strong_error(
    problem: JumpDiffusionProblem,
    scheme,
    levels: Sequence[int],
    ref_steps: int,
    n_paths: int,
    p: float = 2.0,
    seed: int = 0,
    threads: Optional[int] = None,
) -> ConvergenceReport:
    """Estimate ``(E sup_t |X_t - chi_t|^p)^(1/p)`` per level and fit the order."""
    scheme = check_scheme(problem, scheme)
    return strong_errors(problem, [scheme], levels, ref_steps, n_paths, p, seed, threads)[scheme]


def _ensemble(problem, scheme, steps, n_paths, seed, threads, noise_free=False):
    def run(ids):
        if noise_free:
            bw = np.zeros((len(ids), steps, problem.brownian_dim))
            pn = np.zeros((len(ids), steps), dtype=np.int64)
        else:
            bw, pn = stack_noise([sample_noise(problem, steps, seed, i) for i in ids])
        return simulate_arrays(problem, scheme, bw, pn, problem.horizon / steps)

    batches = _map_chunks(run, _chunks(n_paths), threads)
    return np.concatenate([b.states for b in batches])


def moment_track(
    problem: JumpDiffusionProblem,
    scheme,
    steps: int,
    n_paths: int,
    q: float,
    seed: int = 0,
    threads: Optional[int] = None,
) -> tuple[float, np.ndarray]:
    """Empirical ``E|Y_n|^q`` for ``n = 0..steps``; returns ``(max over n, series)``."""
    scheme = check_scheme(problem, scheme)
    if not q >= 1:
        raise ContractError("q must be >= 1")
    states = _ensemble(problem, scheme, int(steps), int(n_paths), seed, threads)
    with np.errstate(over="ignore", invalid="ignore"):
        series = np.mean(norm(states) ** q, axis=0)
    return float(np.max(series)), series


@dataclass(frozen=True)
class DivergenceRow:
    dt: float
    steps: int
    scheme: Scheme
    fraction: float


def divergence_demo(
    problem: JumpDiffusionProblem,
    dt_values: Sequence[float],
    n_paths: int,
    threshold: float,
    seed: int = 0,
    *,
    schemes: Sequence = (Scheme.EM, Scheme.NCTS, Scheme.CTS),
    noise_free: bool = False,
    threads: Optional[int] = None,
) -> list[DivergenceRow]:
    """Fraction of paths whose running max norm exceeds ``threshold``.

    Overflow to inf/nan counts as exceeding.  ``noise_free`` replaces all
    increments by zero, which leaves only the deterministic recursion (plus
    the compensator for CTS).
    """
    if not threshold > float(norm(problem.initial_state)):
        raise ContractError("threshold must exceed |X_0|")
    rows = []
    for dt in dt_values:
        steps = round(problem.horizon / dt)
        if steps < 1 or not math.isclose(steps * dt, problem.horizon, rel_tol=1e-9):
            raise ContractError(f"dt {dt} does not divide the horizon {problem.horizon}")
        for scheme in schemes:
            scheme = check_scheme(problem, scheme)
            try:
                states = _ensemble(problem, scheme, steps, n_paths, seed, threads, noise_free)
                with np.errstate(invalid="ignore", over="ignore"):
                    peak = np.max(norm(states), axis=-1)
                blown = ~(peak <= threshold)
            except SchemeError:
                blown = np.ones(n_paths, dtype=bool)
            rows.append(DivergenceRow(float(dt), steps, scheme, float(np.mean(blown))))
    return rows


# -- CSV ---------------------------------------------------------------------


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _render(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def convergence_csv(reports: Iterable[ConvergenceReport]) -> str:
    out = []
    for rep in reports:
        for row in rep.rows:
            out.append([
                str(rep.scheme), row.steps, fmt(row.dt), fmt(rep.p), fmt(row.error),
                fmt(row.std_err), rep.n_paths, row.excluded,
            ])
    return _render(CONVERGENCE_HEADER, out)


def moment_csv(series: dict, q: float) -> str:
    """``series`` maps ``(scheme, steps)`` to a per-index moment array."""
    out = []
    for (scheme, steps), values in series.items():
        for n, value in enumerate(values):
            out.append([str(scheme), steps, n, fmt(q), fmt(value)])
    return _render(MOMENT_HEADER, out)


def divergence_csv(rows: Iterable[DivergenceRow], threshold: float, n_paths: int) -> str:
    out = [
        [str(r.scheme), fmt(r.dt), r.steps, fmt(threshold), n_paths, fmt(r.fraction)]
        for r in rows
    ]
    return _render(DIVERGENCE_HEADER, out)


def with_horizon(problem: JumpDiffusionProblem, horizon: float) -> JumpDiffusionProblem:
    return replace(problem, horizon=horizon)
