"""Deterministic Monte Carlo machinery.

Every replicate gets its own seed, derived statelessly from ``(base_seed,
replicate_index)`` with a SplitMix64 mixer. Random streams come from PCG64 and
are consumed only through :func:`uniform` / :func:`gaussian` / :func:`raw_bits`,
whose transforms from raw 64-bit outputs are fixed here rather than delegated to
numpy's distribution samplers. Results therefore depend on the seed alone, not
on thread count, scheduling, or numpy's sampler internals.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "McEstimate",
    "McReplicateError",
    "RunPlan",
    "derive_seed",
    "gaussian",
    "make_rng",
    "map_replicates",
    "raw_bits",
    "run_mc",
    "run_mc_many",
    "splitmix64",
    "summarize",
    "uniform",
]

MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 step (Steele, Lea & Flood 2014): a bijection on 64-bit ints."""
    z = (x + _GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, replicate_index: int) -> int:
    """Seed for replicate ``replicate_index`` of a run started from ``base_seed``.

    ``splitmix64(splitmix64(base) ^ index)``. For a fixed base this is injective
    in the index (both steps are bijections), and it uses only 64-bit integer
    arithmetic, so it is identical on every platform.
    """
    if replicate_index < 0:
        raise ValueError(f"replicate_index must be non-negative, got {replicate_index}")
    return splitmix64(splitmix64(base_seed & MASK64) ^ (replicate_index & MASK64))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))


def raw_bits(rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` raw 64-bit outputs of the underlying bit generator."""
    return rng.bit_generator.random_raw(size).astype(np.uint64, copy=False)


def uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of each raw output."""
    return (raw_bits(rng, size) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def gaussian(rng: np.random.Generator, shape: int | Sequence[int]) -> np.ndarray:
    """Standard normals by the Box-Muller transform of :func:`uniform` pairs.

    Pair ``j`` uses ``u1 = uniform[2j]``, ``u2 = uniform[2j+1]`` and yields
    ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)`` with ``r = sqrt(-2 log(1-u1))``;
    outputs are laid out in C order.
    """
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    m = math.prod(shape)
    pairs = (m + 1) // 2
    u = uniform(rng, 2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    out = np.empty((pairs, 2))
    out[:, 0] = r * np.cos(theta)
    out[:, 1] = r * np.sin(theta)
    return out.ravel()[:m].reshape(shape)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    replicates: int
    seed: int

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.stderr >= 0:
            raise ValueError("stderr must be non-negative")


@dataclass(frozen=True)
class RunPlan:
    base_seed: int
    replicates: int
    max_parallelism: int = 1
    target_stderr: float | None = None
    # early-stopping checks happen after every `check_every` replicates; fixed
    # here (not tied to parallelism) so the stopping point is reproducible
    check_every: int = 100

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.max_parallelism < 1:
            raise ValueError("max_parallelism must be >= 1")
        if self.target_stderr is not None and not self.target_stderr > 0:
            raise ValueError("target_stderr must be positive")
        if self.check_every < 2:
            raise ValueError("check_every must be >= 2")


class McReplicateError(RuntimeError):
    def __init__(self, index: int, seed: int, cause: BaseException):
        super().__init__(f"replicate {index} (seed {seed}) failed: {cause!r}")
        self.index = index
        self.seed = seed


def summarize(values: Sequence[float], seed: int) -> McEstimate:
    """Mean and standard error (sample sd / sqrt(R)); stderr is 0 for R = 1."""
    values = [float(v) for v in values]
    r = len(values)
    mean = math.fsum(values) / r
    if r == 1:
        return McEstimate(mean, 0.0, 1, seed)
    var = math.fsum((v - mean) ** 2 for v in values) / (r - 1)
    return McEstimate(mean, math.sqrt(var / r), r, seed)


def _evaluate(estimator, base_seed: int, indices: range, pool) -> list:
    def one(i):
        s = derive_seed(base_seed, i)
        try:
            return estimator(s)
        except Exception as exc:
            raise McReplicateError(i, s, exc) from exc

    if pool is None:
        return [one(i) for i in indices]
    return list(pool.map(one, indices))


def _collect(estimator, plan: RunPlan, stop_stat) -> list:
    pool = ThreadPoolExecutor(plan.max_parallelism) if plan.max_parallelism > 1 else None
    try:
        if plan.target_stderr is None:
            return _evaluate(estimator, plan.base_seed, range(plan.replicates), pool)
        out: list = []
        while len(out) < plan.replicates:
            hi = min(len(out) + plan.check_every, plan.replicates)
            out.extend(_evaluate(estimator, plan.base_seed, range(len(out), hi), pool))
            if stop_stat(out) <= plan.target_stderr:
                break
        return out
    finally:
        if pool is not None:
            pool.shutdown()


def map_replicates(fn: Callable[[int], object], plan: RunPlan) -> list:
    """``[fn(derive_seed(base, i)) for i in range(replicates)]``, possibly in parallel.

    Ignores ``target_stderr``; the output order is always replicate order.
    """
    pool = ThreadPoolExecutor(plan.max_parallelism) if plan.max_parallelism > 1 else None
    try:
        return _evaluate(fn, plan.base_seed, range(plan.replicates), pool)
    finally:
        if pool is not None:
            pool.shutdown()


def run_mc(estimator: Callable[[int], float], plan: RunPlan) -> McEstimate:
    """Run a scalar estimator once per replicate seed and aggregate.

    Values are stored by replicate index and summed with ``math.fsum``, so the
    estimate is bit-identical for any ``max_parallelism``.
    """
    values = _collect(estimator, plan, lambda vs: summarize(vs, plan.base_seed).stderr)
    return summarize(values, plan.base_seed)


def run_mc_many(estimator: Callable[[int], Sequence[float]], plan: RunPlan) -> tuple[McEstimate, ...]:
    """Like :func:`run_mc` for an estimator returning a fixed-length tuple.

    Early stopping (if requested) waits until every component reaches the target.
    """

    def worst(vs):
        cols = zip(*vs)
        return max(summarize(c, plan.base_seed).stderr for c in cols)

    values = _collect(estimator, plan, worst)
    return tuple(summarize(col, plan.base_seed) for col in zip(*values))
