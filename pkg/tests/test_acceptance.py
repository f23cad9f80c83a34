"""Exit criteria for the package, one test per criterion.

Each test appends a PASS/FAIL line that is printed in the terminal summary.
Tolerances are fixed here and are not tuned to results.
"""

import json
import math
import pathlib
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from jumptame import (
    JumpDiffusionProblem,
    NoisePath,
    Scheme,
    compensated_increment,
    cubic_problem,
    moment_track,
    sample_noise,
    simulate,
)
from jumptame.analysis import convergence_csv, strong_errors
from jumptame.cli import main

from oracles import cts_cubic_states

DATA = pathlib.Path(__file__).parent / "data"

LEVELS = [16, 32, 64, 128, 256, 512]
REF_STEPS = 2**13
N_PATHS = 1000
P = 2.0
SEED = 42
ORDER_BAND = (0.4, 0.6)
TAMED = (Scheme.NCTS, Scheme.STS, Scheme.CTS)


def record(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def converge_reports():
    start = time.perf_counter()
    reports = strong_errors(cubic_problem(), TAMED, LEVELS, REF_STEPS, N_PATHS, P, SEED, threads=8)
    return reports, time.perf_counter() - start


def test_1_strong_order(converge_reports):
    reports, elapsed = converge_reports
    orders = {str(s): reports[s].fitted_order for s in TAMED}
    lo, hi = ORDER_BAND
    ok = all(lo <= v <= hi for v in orders.values()) and elapsed < 120
    detail = ", ".join(f"{k}={v:.4f}" for k, v in orders.items())
    record(1, "strong order in [0.4, 0.6]", ok, f"{detail} ({elapsed:.1f}s)")


def _sts_as_ncts(prob):
    return JumpDiffusionProblem(
        1, 1, prob.drift, prob.diffusion, prob.jump_coeff, prob.intensity,
        prob.initial_state, prob.horizon, drift_split=(lambda x: np.zeros_like(x), prob.drift),
    )


def _without_jumps(prob):
    return JumpDiffusionProblem(
        1, 1, prob.drift, prob.diffusion, lambda x: np.zeros_like(x), prob.intensity,
        prob.initial_state, prob.horizon, drift_split=prob.drift_split,
    )


def test_2_degeneracy_equivalence():
    prob = cubic_problem()
    sts_prob, nj = _sts_as_ncts(prob), _without_jumps(prob)
    mismatches = 0
    for i in range(100):
        noise = sample_noise(prob, 512, seed=2002, stream_id=i)
        ncts = simulate(prob, "NCTS", noise).states
        if not np.array_equal(simulate(sts_prob, "STS", noise).states, ncts):
            mismatches += 1
        if not np.array_equal(simulate(nj, "CTS", noise).states, simulate(nj, "NCTS", noise).states):
            mismatches += 1
    record(2, "degeneracy equivalence (bitwise, 100 paths)", mismatches == 0, f"{mismatches} mismatches")


def test_3_taming_bound(converge_reports):
    reports, _ = converge_reports
    worst = {str(s): reports[s].max_tamed_increment for s in TAMED}
    ok = all(v < 1.0 for v in worst.values())
    record(3, "tamed drift increment < 1", ok, ", ".join(f"{k} max={v:.6f}" for k, v in worst.items()))


def test_4_compensated_poisson_statistics():
    dt = 2.0**-7
    n = 10**6
    prob = cubic_problem(horizon=n * dt)
    noise = sample_noise(prob, n, seed=4004)
    assert noise.dt == dt
    x = compensated_increment(noise.poisson_increments, 1.0, dt)
    mu = 1.0 * dt
    mean = x.mean()
    se_mean = x.std(ddof=1) / math.sqrt(n)
    centred = x - mean
    var = np.mean(centred**2)
    se_var = math.sqrt((np.mean(centred**4) - var**2) / n)
    checks = [
        ("mean", abs(mean) / se_mean),
        ("var", abs(var - mu) / se_var),
    ]
    for c in (-1.0, 0.5, 1.0):
        e = np.exp(c * x)
        target = math.exp(mu * (math.exp(c) - c - 1.0))
        checks.append((f"mgf c={c:g}", abs(e.mean() - target) / (e.std(ddof=1) / math.sqrt(n))))
    ok = all(z <= 4.0 for _, z in checks)
    record(4, "compensated Poisson moments and MGF within 4 SE", ok,
           ", ".join(f"{k} {z:.2f} SE" for k, z in checks))


def test_5_moment_boundedness():
    sups = {}
    for m in (2**6, 2**8, 2**10):
        sups[m], _ = moment_track(cubic_problem(), "CTS", m, 10**4, q=4, seed=5005)
    ratio = max(sups.values()) / min(sups.values())
    record(5, "CTS sup_n E|Y_n|^4 flat across M (factor 2)", ratio <= 2.0,
           ", ".join(f"M={m}: {v:.4f}" for m, v in sups.items()) + f", ratio {ratio:.3f}")


def _zero_noise(steps, dt):
    return NoisePath(steps, dt, np.zeros((steps, 1)), np.zeros(steps, dtype=np.int64), 1.0, 0, 0)


def test_6_euler_divergence_foil():
    dt = 0.5
    em = simulate(cubic_problem(horizon=10 * dt), "EM", _zero_noise(10, dt)).states[:, 0]
    with np.errstate(invalid="ignore"):
        blown = np.flatnonzero(~(np.abs(em) <= 1e6))
    first = int(blown[0]) if blown.size else None
    head_ok = em[1] == -1.5 and em[2] == 3.1875 and abs(em[3] + 19.38) < 0.01
    long = cubic_problem(horizon=10**4 * dt)
    peaks = {
        s: float(np.max(np.abs(simulate(long, s, _zero_noise(10**4, dt)).states)))
        for s in ("NCTS", "CTS")
    }
    ok = head_ok and first is not None and first <= 10 and all(v <= 5 for v in peaks.values())
    record(6, "EM blows up, tamed stay bounded", ok,
           f"EM first |x|>1e6 at n={first}; " + ", ".join(f"{k} max|x|={v:.4f}" for k, v in peaks.items()))


def test_7_oracle_regression():
    noise = NoisePath.load(DATA / "cubic_cts_noise.bin")
    golden = [float.fromhex(h) for h in json.loads((DATA / "cubic_cts_golden.json").read_text())["states"]]
    got = simulate(cubic_problem(), "CTS", noise).states[:, 0].tolist()
    oracle = cts_cubic_states(1.0, 1.0, noise.dt, noise.brownian_increments[:, 0].tolist(),
                              noise.poisson_increments.tolist())
    ok = got == golden and oracle == golden
    record(7, "CTS matches straight-line oracle bitwise", ok, f"{len(golden)} states compared")


def test_8_reproducibility(converge_reports, tmp_path, capsys):
    reports, _ = converge_reports
    base = (
        f"--problem cubic --mode converge --levels {','.join(map(str, LEVELS))} --ref {REF_STEPS} "
        f"--paths {N_PATHS} --p 2 --seed {SEED}"
    ).split()
    one, eight = tmp_path / "t1.csv", tmp_path / "t8.csv"
    codes = [main(base + ["--threads", "1", "--out", str(one)]),
             main(base + ["--threads", "8", "--out", str(eight)])]
    capsys.readouterr()
    api = convergence_csv(reports[s] for s in TAMED).encode()
    ok = codes == [0, 0] and one.read_bytes() == eight.read_bytes() == api
    record(8, "CSV byte-identical across runs and thread counts", ok,
           f"exit codes {codes}, {len(api)} bytes")
