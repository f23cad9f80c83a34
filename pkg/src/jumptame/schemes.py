"""Explicit one-step schemes for jump-diffusion SDEs.

Four variants share one code path:

* ``EM``   -- Euler-Maruyama, ``y + f dt + g dW + h dN``
* ``NCTS`` -- tamed drift ``dt f / (1 + dt |f|)`` with the raw jump increment
* ``STS``  -- only the ``v`` part of ``f = u + v`` is tamed
* ``CTS``  -- tamed compensated drift ``f + lambda h`` with ``dN - lambda dt``

All array routines broadcast over leading axes, so a batch of paths is
advanced together and each row gets the same bits it would get alone.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .noise import NoisePath, cumulative, cumulative_arrays
from .problem import ContractError, JumpDiffusionProblem, norm


class Scheme(str, enum.Enum):
    EM = "EM"
    NCTS = "NCTS"
    STS = "STS"
    CTS = "CTS"

    def __str__(self):
        return self.value

    @property
    def tamed(self) -> bool:
        return self is not Scheme.EM


TAMED_SCHEMES = (Scheme.NCTS, Scheme.STS, Scheme.CTS)


class SchemeError(ArithmeticError):
    """A tamed scheme produced a non-finite value."""

    def __init__(self, scheme, step=None, state=None, detail="non-finite value"):
        self.scheme = Scheme(scheme)
        self.step = step
        self.state = state
        where = f" at step {step}" if step is not None else ""
        if state is not None:
            where += f" from state {np.asarray(state).tolist()!r}"
        super().__init__(f"{self.scheme}: {detail}{where}")


def as_scheme(scheme) -> Scheme:
    try:
        return Scheme(str(scheme).upper())
    except ValueError:
        raise ContractError(f"unknown scheme {scheme!r}") from None


def check_scheme(problem: JumpDiffusionProblem, scheme) -> Scheme:
    scheme = as_scheme(scheme)
    if scheme is Scheme.STS and problem.drift_split is None:
        raise ContractError("STS needs problem.drift_split = (u, v)")
    return scheme


def tamed_drift(fx: np.ndarray, dt: float) -> np.ndarray:
    """``dt * fx / (1 + dt * |fx|)``; the result always has norm below one."""
    fx = np.asarray(fx, dtype=np.float64)
    if not np.all(np.isfinite(fx)):
        raise ContractError(f"drift value {fx.tolist()!r} is not finite")
    if not dt > 0:
        raise ContractError("dt must be > 0")
    return _tame(fx, dt)


def _tame(fx, dt):
    return dt * fx / (1.0 + dt * norm(fx))[..., None]


def _diffuse(g, dw):
    # g: (..., d, m), dw: (..., m)
    return np.sum(g * dw[..., None, :], axis=-1)


def _advance(problem, scheme, y, dw, dn, dt):
    """One step from ``y``; returns the new state and the tamed-part increment norm."""
    dn = np.asarray(dn)
    noise = _diffuse(problem.diffusion(y), dw)
    h = problem.jump_coeff(y)
    if scheme is Scheme.EM:
        inc = problem.drift(y) * dt
        out = y + inc + noise + h * dn[..., None]
    elif scheme is Scheme.NCTS:
        inc = _tame(problem.drift(y), dt)
        out = y + inc + noise + h * dn[..., None]
    elif scheme is Scheme.STS:
        u, v = problem.drift_split
        inc = _tame(v(y), dt)
        out = y + u(y) * dt + inc + noise + h * dn[..., None]
    else:
        inc = _tame(problem.drift(y) + problem.intensity * h, dt)
        out = y + inc + noise + h * (dn - problem.intensity * dt)[..., None]
    return out, norm(inc)


def step(problem: JumpDiffusionProblem, scheme, y, dw, dn, dt: float) -> np.ndarray:
    """Advance one step of size ``dt`` with increments ``dw`` (length m) and ``dn``.

    Tamed schemes raise :class:`SchemeError` on a non-finite result.  EM is
    allowed to overflow and simply returns the inf/nan.
    """
    scheme = check_scheme(problem, scheme)
    y = problem.check_state(y)
    dw = np.asarray(dw, dtype=np.float64)
    if dw.shape[-1:] != (problem.brownian_dim,):
        raise ContractError(f"dw must have trailing length {problem.brownian_dim}")
    if np.any(np.asarray(dn) < 0):
        raise ContractError("dn must be >= 0")
    if not dt > 0:
        raise ContractError("dt must be > 0")
    with np.errstate(over="ignore", invalid="ignore"):
        out, _ = _advance(problem, scheme, y, dw, dn, dt)
    if scheme.tamed and not np.all(np.isfinite(out)):
        raise SchemeError(scheme, state=y)
    return out


@dataclass(frozen=True)
class PathBatch:
    """Output of :func:`simulate_arrays` for a stack of paths."""

    states: np.ndarray  # (..., M+1, d)
    diverged: np.ndarray  # (...,) bool, EM only
    max_tamed_increment: np.ndarray  # (...,) largest drift-increment norm seen


def simulate_arrays(
    problem: JumpDiffusionProblem,
    scheme,
    brownian: np.ndarray,
    poisson: np.ndarray,
    dt: float,
) -> PathBatch:
    """Iterate the scheme over increments of shape ``(..., M, m)`` and ``(..., M)``."""
    scheme = check_scheme(problem, scheme)
    lead = brownian.shape[:-2]
    steps = brownian.shape[-2]
    states = np.empty(lead + (steps + 1, problem.dim))
    states[..., 0, :] = problem.initial_state
    max_inc = np.zeros(lead)
    y = states[..., 0, :]
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(steps):
            y, inc = _advance(problem, scheme, y, brownian[..., n, :], poisson[..., n], dt)
            if scheme.tamed and not np.all(np.isfinite(y)):
                bad = np.argwhere(~np.all(np.isfinite(y), axis=-1))
                first = tuple(bad[0]) if bad.size else ()
                raise SchemeError(scheme, step=n, state=states[first + (n,)])
            np.fmax(max_inc, inc, out=max_inc)
            states[..., n + 1, :] = y
    diverged = ~np.all(np.isfinite(states), axis=(-2, -1))
    return PathBatch(states=states, diverged=diverged, max_tamed_increment=max_inc)


@dataclass(frozen=True, eq=False)
class DiscretePath:
    scheme: Scheme
    steps: int
    dt: float
    states: np.ndarray  # (steps+1, d)
    diverged: bool = False
    max_tamed_increment: float = 0.0


def _check_noise(problem: JumpDiffusionProblem, noise: NoisePath) -> None:
    if noise.intensity != problem.intensity:
        raise ContractError(
            f"noise intensity {noise.intensity} != problem intensity {problem.intensity}"
        )
    if not math.isclose(noise.horizon, problem.horizon, rel_tol=1e-12):
        raise ContractError(f"noise horizon {noise.horizon} != problem horizon {problem.horizon}")
    if noise.brownian_dim != problem.brownian_dim:
        raise ContractError("noise Brownian dimension does not match the problem")


def simulate(problem: JumpDiffusionProblem, scheme, noise: NoisePath) -> DiscretePath:
    """Run the scheme over every increment of ``noise``."""
    scheme = check_scheme(problem, scheme)
    _check_noise(problem, noise)
    batch = simulate_arrays(
        problem, scheme, noise.brownian_increments, noise.poisson_increments, noise.dt
    )
    return DiscretePath(
        scheme=scheme,
        steps=noise.steps,
        dt=noise.dt,
        states=batch.states,
        diverged=bool(batch.diverged),
        max_tamed_increment=float(batch.max_tamed_increment),
    )


# -- continuous-time extension ---------------------------------------------


def _interp_point(problem, scheme, y, dt, tau, dw, dn):
    """Value at offset ``tau`` into a step of size ``dt`` started at ``y``.

    ``dw`` and ``dn`` are the Brownian and Poisson increments since the
    start of that step.
    """
    noise = _diffuse(problem.diffusion(y), dw)
    h = problem.jump_coeff(y)
    if scheme is Scheme.EM:
        rate = problem.drift(y)
        jump = dn
    elif scheme is Scheme.NCTS:
        fx = problem.drift(y)
        rate = fx / (1.0 + dt * norm(fx))[..., None]
        jump = dn
    elif scheme is Scheme.STS:
        u, v = problem.drift_split
        vx = v(y)
        rate = u(y) + vx / (1.0 + dt * norm(vx))[..., None]
        jump = dn
    else:
        fx = problem.drift(y) + problem.intensity * h
        rate = fx / (1.0 + dt * norm(fx))[..., None]
        jump = dn - problem.intensity * tau
    return y + tau[..., None] * rate + noise + h * jump[..., None]


def _refinement(coarse_steps: int, fine_steps: int) -> int:
    if coarse_steps < 1 or fine_steps % coarse_steps:
        raise ContractError(f"fine grid of {fine_steps} steps does not refine {coarse_steps} steps")
    return fine_steps // coarse_steps


def interpolate(
    problem: JumpDiffusionProblem,
    scheme,
    coarse_path: DiscretePath,
    fine_noise: NoisePath,
    fine_index: int,
) -> np.ndarray:
    """Continuous extension of ``coarse_path`` at fine grid index ``fine_index``."""
    scheme = check_scheme(problem, scheme)
    k = _refinement(coarse_path.steps, fine_noise.steps)
    dt = fine_noise.dt * k
    if not math.isclose(coarse_path.dt, dt, rel_tol=1e-12):
        raise ContractError("coarse step size is not factor * fine step size")
    if not 0 <= fine_index <= fine_noise.steps:
        raise IndexError(f"fine_index {fine_index} outside [0, {fine_noise.steps}]")
    n, r = divmod(fine_index, k)
    if r == 0:
        return coarse_path.states[n].copy()
    w1, n1 = cumulative(fine_noise, fine_index)
    w0, n0 = cumulative(fine_noise, n * k)
    with np.errstate(over="ignore", invalid="ignore"):
        return _interp_point(
            problem,
            scheme,
            coarse_path.states[n],
            dt,
            np.asarray(r * fine_noise.dt),
            w1 - w0,
            np.asarray(n1 - n0),
        )


def interpolate_arrays(
    problem: JumpDiffusionProblem,
    scheme,
    coarse_states: np.ndarray,
    brownian: np.ndarray,
    poisson: np.ndarray,
    fine_dt: float,
) -> np.ndarray:
    """Continuous extension evaluated at every fine grid index.

    ``coarse_states`` is ``(..., Mc+1, d)``, the fine increments are
    ``(..., Mf, m)`` and ``(..., Mf)``.  Returns ``(..., Mf+1, d)``; entries at
    coarse nodes are copies of the coarse states.
    """
    scheme = check_scheme(problem, scheme)
    mc = coarse_states.shape[-2] - 1
    mf = brownian.shape[-2]
    k = _refinement(mc, mf)
    if k == 1:
        return coarse_states.copy()
    cw, cn = cumulative_arrays(brownian, poisson)
    lead = coarse_states.shape[:-2]
    d = coarse_states.shape[-1]
    m = brownian.shape[-1]
    # (..., Mc, k) views of the running sums; node value subtracted per block
    w = cw[..., :-1, :].reshape(lead + (mc, k, m))
    nn = cn[..., :-1].reshape(lead + (mc, k))
    dw = w - w[..., :, :1, :]
    dn = nn - nn[..., :, :1]
    tau = np.arange(k) * fine_dt
    y = coarse_states[..., :-1, None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        vals = _interp_point(problem, scheme, y, fine_dt * k, tau, dw, dn)
    vals = np.broadcast_to(vals, lead + (mc, k, d)).copy()
    vals[..., :, 0, :] = coarse_states[..., :-1, :]
    out = np.empty(lead + (mf + 1, d))
    out[..., :-1, :] = vals.reshape(lead + (mf, d))
    out[..., -1, :] = coarse_states[..., -1, :]
    return out
