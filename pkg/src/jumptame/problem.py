"""Jump-diffusion problem definitions and empirical assumption probes.

Coefficient functions are plain callables that must broadcast over leading
axes: ``drift(x)`` maps ``(..., d)`` to ``(..., d)``, ``diffusion(x)`` maps
``(..., d)`` to ``(..., d, m)`` and ``jump_coeff(x)`` maps ``(..., d)`` to
``(..., d)``.  They must be pure (deterministic, no side effects) and safe to
call from several threads at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Coefficient = Callable[[np.ndarray], np.ndarray]

SPLIT_TOLERANCE = 1e-12


class ContractError(ValueError):
    """Raised when an argument violates a documented precondition."""


def norm(x: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis.

    Written as ``sqrt(sum(x*x))`` so that a single row and the same row
    inside a batch give identical bits.
    """
    return np.sqrt(np.sum(x * x, axis=-1))


@dataclass(frozen=True, eq=False)
class JumpDiffusionProblem:
    """``dX = f(X-) dt + g(X-) dW + h(X-) dN`` on ``[0, T]`` with ``N`` Poisson(lambda)."""

    dim: int
    brownian_dim: int
    drift: Coefficient
    diffusion: Coefficient
    jump_coeff: Coefficient
    intensity: float
    initial_state: np.ndarray
    horizon: float
    drift_split: Optional[tuple[Coefficient, Coefficient]] = None
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if int(self.dim) < 1 or int(self.brownian_dim) < 1:
            raise ContractError("dim and brownian_dim must be >= 1")
        if not (self.intensity >= 0 and math.isfinite(self.intensity)):
            raise ContractError(f"intensity must be finite and >= 0, got {self.intensity}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ContractError(f"horizon must be finite and > 0, got {self.horizon}")
        x0 = np.array(self.initial_state, dtype=np.float64).reshape(-1)
        if x0.shape != (self.dim,):
            raise ContractError(
                f"initial_state has length {x0.size}, expected dim={self.dim}"
            )
        x0.setflags(write=False)
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "intensity", float(self.intensity))
        object.__setattr__(self, "horizon", float(self.horizon))
        if self.drift_split is not None:
            check_split(self, np.stack([x0, x0 + 1.0, x0 - 2.5]))

    def check_state(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.dim,):
            raise ContractError(
                f"state has trailing shape {x.shape[-1:]}, expected ({self.dim},)"
            )
        return x


def check_split(problem: JumpDiffusionProblem, points: np.ndarray) -> None:
    """Verify ``u + v == f`` at the given points to the split tolerance."""
    u, v = problem.drift_split
    fx = problem.drift(points)
    gap = norm(u(points) + v(points) - fx)
    bound = SPLIT_TOLERANCE * (1.0 + norm(fx))
    if np.any(gap > bound):
        raise ContractError(
            f"drift_split does not sum to drift (max gap {float(np.max(gap)):.3g})"
        )


def f_lambda(problem: JumpDiffusionProblem, x: np.ndarray) -> np.ndarray:
    """Compensated drift ``f(x) + lambda * h(x)``."""
    x = problem.check_state(x)
    return problem.drift(x) + problem.intensity * problem.jump_coeff(x)


@dataclass(frozen=True)
class AssumptionProbeReport:
    """Empirical witnesses for the structural conditions on the coefficients.

    These are sampled maxima, not proofs.  ``lipschitz_constants`` has keys
    ``"g"``, ``"h"`` and, when the drift is split, ``"u"``.
    """

    one_sided_constant: float
    lipschitz_constants: dict
    growth_exponent_witness: float
    probe_count: int
    probe_radius: float
    excluded: int = 0


def _ball_points(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((n, dim))
    direction /= norm(direction)[:, None]
    r = radius * rng.random(n) ** (1.0 / dim)
    return direction * r[:, None]


def probe_assumptions(
    problem: JumpDiffusionProblem,
    probe_count: int,
    probe_radius: float,
    seed: int = 0,
) -> AssumptionProbeReport:
    """Estimate one-sided, Lipschitz and growth constants on random pairs.

    Pairs are drawn uniformly in the ball of ``probe_radius``.  Pairs closer
    than 1e-8, and pairs where any coefficient is non-finite, are dropped;
    the number dropped is reported as ``excluded``.
    """
    if probe_count < 2:
        raise ContractError("probe_count must be >= 2")
    if not probe_radius > 0:
        raise ContractError("probe_radius must be > 0")

    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    x = _ball_points(rng, probe_count, problem.dim, probe_radius)
    y = _ball_points(rng, probe_count, problem.dim, probe_radius)
    dist = norm(x - y)

    with np.errstate(all="ignore"):
        fx, fy = problem.drift(x), problem.drift(y)
        gx, gy = problem.diffusion(x), problem.diffusion(y)
        hx, hy = problem.jump_coeff(x), problem.jump_coeff(y)
        parts = [fx, fy, gx.reshape(probe_count, -1), gy.reshape(probe_count, -1), hx, hy]
        if problem.drift_split is not None:
            u = problem.drift_split[0]
            ux, uy = u(x), u(y)
            parts += [ux, uy]

    keep = dist >= 1e-8
    for part in parts:
        keep &= np.all(np.isfinite(part), axis=-1)
    excluded = int(probe_count - np.count_nonzero(keep))
    if not np.any(keep):
        raise ContractError("every probe pair was excluded")

    d = dist[keep]
    diff = (x - y)[keep]
    df = fx[keep] - fy[keep]
    one_sided = np.sum(diff * df, axis=-1) / (d * d)

    # Frobenius norm for g: cheaper than the operator norm and bounds it above
    dg = (gx[keep] - gy[keep]).reshape(d.size, -1)
    lips = {
        "g": float(np.max(norm(dg) / d)),
        "h": float(np.max(norm(hx[keep] - hy[keep]) / d)),
    }
    if problem.drift_split is not None:
        lips["u"] = float(np.max(norm(ux[keep] - uy[keep]) / d))

    ratio = norm(df) / d
    size = np.maximum(norm(x[keep]), norm(y[keep]))
    growth = _growth_exponent(size, ratio, probe_radius)

    return AssumptionProbeReport(
        one_sided_constant=float(np.max(one_sided)),
        lipschitz_constants=lips,
        growth_exponent_witness=growth,
        probe_count=int(probe_count),
        probe_radius=float(probe_radius),
        excluded=excluded,
    )


def _growth_exponent(size: np.ndarray, ratio: np.ndarray, radius: float, bins: int = 16) -> float:
    # envelope of the difference quotient per radial shell, then a log-log slope
    edges = np.linspace(0.0, radius, bins + 1)
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (size >= lo) & (size < hi)
        if np.any(sel) and np.max(ratio[sel]) > 0:
            xs.append(math.log1p(hi))
            ys.append(math.log(float(np.max(ratio[sel]))))
    if len(xs) < 2:
        return 0.0
    slope = np.polyfit(np.array(xs), np.array(ys), 1)[0]
    return float(max(slope, 0.0))


# -- catalog ---------------------------------------------------------------


def _cubic_u(x):
    return -4.0 * x


def _cubic_v(x):
    return -(x * x * x)


def _cubic_drift(x):
    return -4.0 * x - x * x * x


def _identity_column(x):
    return x[..., None]


def _identity(x):
    return 1.0 * x


def _zero_vector(x):
    return np.zeros_like(x)


def _zero_matrix(x):
    return np.zeros(x.shape + (1,), dtype=np.float64)


def cubic_problem(horizon: float = 1.0, intensity: float = 1.0, x0: float = 1.0) -> JumpDiffusionProblem:
    """``dX = (-4X - X^3) dt + X dW + X dN``, ``X_0 = 1``, ``lambda = 1``, ``T = 1``."""
    return JumpDiffusionProblem(
        dim=1,
        brownian_dim=1,
        drift=_cubic_drift,
        diffusion=_identity_column,
        jump_coeff=_identity,
        intensity=intensity,
        initial_state=np.array([x0]),
        horizon=horizon,
        drift_split=(_cubic_u, _cubic_v),
        name="cubic",
    )


def linear_problem(
    a: float = -1.0,
    b: float = 0.0,
    c: float = 0.0,
    intensity: float = 1.0,
    x0: float = 1.0,
    horizon: float = 1.0,
) -> JumpDiffusionProblem:
    """Scalar linear problem ``f(x) = a x``, ``g(x) = b x``, ``h(x) = c x``.

    The drift is split as ``u = f``, ``v = 0`` so every scheme applies.
    """

    def drift(x):
        return a * x

    def diffusion(x):
        return (b * x)[..., None]

    def jump(x):
        return c * x

    return JumpDiffusionProblem(
        dim=1,
        brownian_dim=1,
        drift=drift,
        diffusion=diffusion,
        jump_coeff=jump,
        intensity=intensity,
        initial_state=np.array([x0]),
        horizon=horizon,
        drift_split=(drift, _zero_vector),
        name="linear",
    )


def zero_problem(x0: float = 1.0, intensity: float = 1.0, horizon: float = 1.0) -> JumpDiffusionProblem:
    """All coefficients zero; every scheme keeps the initial state."""
    return JumpDiffusionProblem(
        dim=1,
        brownian_dim=1,
        drift=_zero_vector,
        diffusion=_zero_matrix,
        jump_coeff=_zero_vector,
        intensity=intensity,
        initial_state=np.array([x0]),
        horizon=horizon,
        drift_split=(_zero_vector, _zero_vector),
        name="zero",
    )


CATALOG = {
    "cubic": cubic_problem,
    "linear": linear_problem,
    "zero": zero_problem,
}


def get_problem(key: str, **overrides) -> JumpDiffusionProblem:
    """Look up a built-in problem by key (``cubic``, ``linear``, ``zero``)."""
    try:
        factory = CATALOG[key]
    except KeyError:
        raise KeyError(f"unknown problem {key!r}; choose from {sorted(CATALOG)}") from None
    return factory(**overrides)
