"""Reproducible Brownian and Poisson increments on a uniform grid.

Every path is generated from its own counter-based Philox stream keyed by
``mix(seed, stream_id)``, and paths drawn at dyadically related step counts
from the same stream are nested refinements of one another.

Brownian increments are rounded to a power-of-two lattice fine enough to be
invisible statistically (about 1e-13 relative to the step standard
deviation) but coarse enough that any partial sum of increments along a path
is exact in float64.  That makes coarsening exact: summing in ascending
order, summing in any other order and coarsening in stages all give the same
bits."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .problem import ContractError, JumpDiffusionProblem

MASK64 = (1 << 64) - 1

# inversion by sequential search up to this mean, PTRS rejection above
INVERSION_LIMIT = 10.0
MAX_POISSON_MEAN = 1e12

# lattice spacing is 2**(LATTICE_BITS) * 2**ceil(log2 sqrt(T))
LATTICE_BITS = -44

_HEADER = struct.Struct("<QQddQQ")


class NoiseError(ValueError):
    """Raised when noise cannot be generated for the requested parameters."""


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix(seed: int, stream_id: int) -> int:
    """Derive a 64-bit stream key from a global seed and a path index."""
    return splitmix64(splitmix64(int(seed) & MASK64) ^ (int(stream_id) & MASK64))


def stream_generator(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=mix(seed, stream_id)))


def lattice_spacing(horizon: float) -> float:
    scale = math.ceil(math.log2(max(1.0, math.sqrt(horizon))))
    return math.ldexp(1.0, LATTICE_BITS + scale)


@dataclass(frozen=True, eq=False)
class NoisePath:
    """One realisation of ``(dW_n, dN_n)`` for ``n = 0..steps-1``."""

    steps: int
    dt: float
    brownian_increments: np.ndarray  # (steps, m) float64
    poisson_increments: np.ndarray  # (steps,) int64
    intensity: float
    seed: int
    stream_id: int

    def __post_init__(self):
        bw = np.asarray(self.brownian_increments, dtype=np.float64)
        pn = np.asarray(self.poisson_increments, dtype=np.int64)
        if bw.ndim != 2 or bw.shape[0] != self.steps:
            raise ContractError(f"brownian_increments must have shape ({self.steps}, m)")
        if pn.shape != (self.steps,):
            raise ContractError(f"poisson_increments must have shape ({self.steps},)")
        if np.any(pn < 0):
            raise ContractError("poisson_increments must be non-negative")
        bw.setflags(write=False)
        pn.setflags(write=False)
        object.__setattr__(self, "brownian_increments", bw)
        object.__setattr__(self, "poisson_increments", pn)

    @property
    def brownian_dim(self) -> int:
        return self.brownian_increments.shape[1]

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    def __eq__(self, other):
        if not isinstance(other, NoisePath):
            return NotImplemented
        return (
            self.steps == other.steps
            and self.dt == other.dt
            and self.intensity == other.intensity
            and self.seed == other.seed
            and self.stream_id == other.stream_id
            and np.array_equal(self.brownian_increments, other.brownian_increments)
            and np.array_equal(self.poisson_increments, other.poisson_increments)
        )

    __hash__ = None

    def to_bytes(self) -> bytes:
        """Little-endian dump: header then row-major increments."""
        head = _HEADER.pack(
            self.steps,
            self.brownian_dim,
            self.dt,
            self.intensity,
            self.seed & MASK64,
            self.stream_id & MASK64,
        )
        return (
            head
            + self.brownian_increments.astype("<f8").tobytes(order="C")
            + self.poisson_increments.astype("<u8").tobytes(order="C")
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NoisePath":
        steps, m, dt, intensity, seed, stream_id = _HEADER.unpack_from(blob, 0)
        offset = _HEADER.size
        nbw = steps * m * 8
        expected = offset + nbw + steps * 8
        if len(blob) != expected:
            raise ValueError(f"noise blob has {len(blob)} bytes, expected {expected}")
        bw = np.frombuffer(blob, dtype="<f8", count=steps * m, offset=offset)
        pn = np.frombuffer(blob, dtype="<u8", count=steps, offset=offset + nbw)
        return cls(
            steps=steps,
            dt=dt,
            brownian_increments=bw.reshape(steps, m).astype(np.float64),
            poisson_increments=pn.astype(np.int64),
            intensity=intensity,
            seed=seed,
            stream_id=stream_id,
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "NoisePath":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def sample_poisson(rng: np.random.Generator, mean: float, size: int) -> np.ndarray:
    """Poisson(mean) draws.

    Sequential-search inversion of one uniform per draw for ``mean <= 10``;
    numpy's PTRS transformed rejection sampler above that.
    """
    if not (math.isfinite(mean) and 0 <= mean <= MAX_POISSON_MEAN):
        raise NoiseError(f"Poisson mean {mean!r} is out of range [0, {MAX_POISSON_MEAN:g}]")
    if mean == 0.0:
        return np.zeros(size, dtype=np.int64)
    if mean > INVERSION_LIMIT:
        return rng.poisson(mean, size).astype(np.int64)

    u = rng.random(size)
    k = np.zeros(size, dtype=np.int64)
    prob = math.exp(-mean)
    cdf = np.full(size, prob)
    active = np.flatnonzero(u > cdf)
    j = 0
    # hard stop guards against cdf saturating just below u through rounding
    cap = int(mean + 40.0 * math.sqrt(mean) + 40)
    while active.size and j < cap:
        j += 1
        prob *= mean / j
        k[active] = j
        cdf[active] += prob
        active = active[u[active] > cdf[active]]
    return k


def sample_noise(
    problem: JumpDiffusionProblem,
    steps: int,
    seed: int,
    stream_id: int = 0,
) -> NoisePath:
    """Draw one path of increments on ``steps`` uniform steps over ``[0, T]``.

    Write ``steps = odd * 2**j``.  Increments are first drawn directly on the
    ``odd``-step grid, then each step is halved ``j`` times: the Brownian
    increment by a Brownian-bridge midpoint and the Poisson count by a
    Binomial(count, 1/2) split.  The result has i.i.d. Normal(0, dt) and
    Poisson(lambda dt) entries, and the paths for ``steps`` and ``2 * steps``
    from the same ``(seed, stream_id)`` are nested:
    ``coarsen(sample_noise(p, 2 * M, s, i), 2) == sample_noise(p, M, s, i)``.
    """
    if int(steps) < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    steps = int(steps)
    dt = problem.horizon / steps
    mean = problem.intensity * dt
    if not math.isfinite(mean) or mean > MAX_POISSON_MEAN:
        raise NoiseError(
            f"Poisson mean lambda*dt = {problem.intensity!r}*{dt!r} = {mean!r} is too large"
        )
    halvings = (steps & -steps).bit_length() - 1
    base = steps >> halvings
    base_dt = problem.horizon / base
    base_mean = problem.intensity * base_dt
    if not math.isfinite(base_mean) or base_mean > MAX_POISSON_MEAN:
        raise NoiseError(
            f"Poisson mean lambda*T/{base} = {problem.intensity!r}*{base_dt!r} is too large"
        )

    rng = stream_generator(seed, stream_id)
    q = lattice_spacing(problem.horizon)
    m = problem.brownian_dim
    brownian = np.round(rng.standard_normal((base, m)) * (math.sqrt(base_dt) / q)) * q
    poisson = sample_poisson(rng, base_mean, base)
    half = base_dt
    for _ in range(halvings):
        half /= 2.0
        z = rng.standard_normal(brownian.shape)
        # midpoint given the total over [0, 2h]: mean total/2, variance h/2
        left = np.round((0.5 * brownian + math.sqrt(half / 2.0) * z) / q) * q
        right = brownian - left
        brownian = np.stack([left, right], axis=1).reshape(-1, m)
        left_n = rng.binomial(poisson, 0.5)
        poisson = np.stack([left_n, poisson - left_n], axis=1).reshape(-1)
    return NoisePath(
        steps=steps,
        dt=dt,
        brownian_increments=brownian,
        poisson_increments=poisson,
        intensity=problem.intensity,
        seed=int(seed),
        stream_id=int(stream_id),
    )


def _coarsen_rows(rows: np.ndarray, factor: int, axis: int) -> np.ndarray:
    # sums along the grid axis; exact for lattice values so order is immaterial
    shape = rows.shape[:axis] + (rows.shape[axis] // factor, factor) + rows.shape[axis + 1:]
    return rows.reshape(shape).sum(axis=axis + 1)


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    """Merge each block of ``factor`` consecutive increments into one."""
    factor = int(factor)
    if factor < 1 or path.steps % factor:
        raise ContractError(f"factor {factor} does not divide steps {path.steps}")
    if factor == 1:
        return path
    return NoisePath(
        steps=path.steps // factor,
        dt=path.dt * factor,
        brownian_increments=_coarsen_rows(path.brownian_increments, factor, 0),
        poisson_increments=_coarsen_rows(path.poisson_increments, factor, 0),
        intensity=path.intensity,
        seed=path.seed,
        stream_id=path.stream_id,
    )


def compensated_increment(dn, intensity: float, dt: float):
    """``dN - lambda * dt``; works elementwise on arrays."""
    if np.any(np.asarray(dn) < 0):
        raise ContractError("dn must be >= 0")
    if not dt > 0:
        raise ContractError("dt must be > 0")
    return dn - intensity * dt


def cumulative(path: NoisePath, fine_index: int) -> tuple[np.ndarray, int]:
    """``(W, N)`` at grid index ``fine_index`` relative to time zero."""
    if not 0 <= fine_index <= path.steps:
        raise IndexError(f"fine_index {fine_index} outside [0, {path.steps}]")
    w = np.sum(path.brownian_increments[:fine_index], axis=0)
    n = int(np.sum(path.poisson_increments[:fine_index]))
    return w, n


def cumulative_arrays(brownian: np.ndarray, poisson: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Running sums along the grid axis (second to last for Brownian), starting at zero."""
    cw = np.cumsum(brownian, axis=-2)
    cn = np.cumsum(poisson, axis=-1)
    zero_w = np.zeros(brownian.shape[:-2] + (1, brownian.shape[-1]))
    zero_n = np.zeros(poisson.shape[:-1] + (1,), dtype=poisson.dtype)
    return np.concatenate([zero_w, cw], axis=-2), np.concatenate([zero_n, cn], axis=-1)


def stack_noise(paths) -> tuple[np.ndarray, np.ndarray]:
    """Stack several paths into ``(P, M, m)`` and ``(P, M)`` arrays."""
    bw = np.stack([p.brownian_increments for p in paths])
    pn = np.stack([p.poisson_increments for p in paths])
    return bw, pn
