"""Effective-rank diagnostics of covariance spectra.

Indices follow the 1-based convention of the benign-overfitting literature:
``r_k`` and ``R_k`` look at the tail ``lambda_{k+1}, ..., lambda_d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "BenignRow",
    "DimensionRule",
    "Spectrum",
    "SpectrumFamily",
    "BENIGN_HEADER",
    "benign_rows_as_records",
    "benign_summary",
    "critical_index",
    "effective_rank_R",
    "effective_rank_r",
    "make_spectrum",
]

FAMILIES = ("isotropic", "power-law", "power-log-law", "spiked", "explicit")


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues of a non-singular covariance, sorted non-increasing."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=np.float64).ravel()
        if lam.size == 0:
            raise ValueError("spectrum must have at least one eigenvalue")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be sorted non-increasing")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "Spectrum":
        return cls(np.sort(np.asarray(values, dtype=np.float64))[::-1])

    @property
    def d(self) -> int:
        return self.eigenvalues.size

    def __len__(self) -> int:
        return self.d

    def scaled(self, c: float) -> "Spectrum":
        return Spectrum(self.eigenvalues * c)

    @cached_property
    def tail_sums(self) -> np.ndarray:
        """``tail_sums[k] = sum_{i>k} lambda_i`` for k = 0..d-1 (summed from the small end)."""
        return np.cumsum(self.eigenvalues[::-1])[::-1]

    @cached_property
    def tail_square_sums(self) -> np.ndarray:
        return np.cumsum(self.eigenvalues[::-1] ** 2)[::-1]

    @cached_property
    def r_all(self) -> np.ndarray:
        return self.tail_sums / self.eigenvalues

    @cached_property
    def R_all(self) -> np.ndarray:
        return self.tail_sums**2 / self.tail_square_sums


@dataclass(frozen=True)
class DimensionRule:
    """Map sample size n to a feature dimension.

    Either a fixed ``d`` or ``d_n = max(1, round(scale * n**power))``.
    """

    fixed: int | None = None
    scale: float = 1.0
    power: float = 1.0

    def __post_init__(self):
        if self.fixed is not None and self.fixed < 1:
            raise ValueError("fixed dimension must be >= 1")
        if not self.scale > 0:
            raise ValueError("dimension scale must be positive")

    def __call__(self, n: int) -> int:
        if self.fixed is not None:
            return self.fixed
        return max(1, int(round(self.scale * n**self.power)))


@dataclass(frozen=True)
class SpectrumFamily:
    """A recipe producing a spectrum for each sample size.

    ``power-law``: ``lambda_i = i**-alpha``.
    ``power-log-law``: ``lambda_i = i**-alpha * log(i + 1)**-gamma``.
    ``spiked``: ``spike_count`` copies of ``spike`` followed by ``tail`` values;
    with ``tail_exponent > 0`` the tail value shrinks as ``tail * n**-tail_exponent``.
    ``explicit``: the given ``values`` (sorted), independent of n.
    """

    kind: str
    dimension: DimensionRule = field(default_factory=DimensionRule)
    alpha: float = 1.0
    gamma: float = 0.0
    spike: float = 1.0
    spike_count: int = 1
    tail: float = 1.0
    tail_exponent: float = 0.0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown spectrum family {self.kind!r}; expected one of {FAMILIES}")
        if self.kind in ("power-law", "power-log-law") and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.kind == "power-log-law" and not self.gamma > 0:
            raise ValueError("gamma must be positive for power-log-law")
        if self.kind == "spiked":
            if not (self.spike > 0 and self.tail > 0):
                raise ValueError("spike and tail values must be positive")
            if self.spike_count < 0:
                raise ValueError("spike_count must be non-negative")
            if self.tail_exponent < 0:
                raise ValueError("tail_exponent must be non-negative")
        if self.kind == "explicit":
            if len(self.values) == 0 or any(not v > 0 for v in self.values):
                raise ValueError("explicit spectrum needs positive values")


def make_spectrum(family: SpectrumFamily, n: int) -> Spectrum:
    if n < 1:
        raise ValueError("n must be >= 1")
    if family.kind == "explicit":
        return Spectrum.from_values(family.values)
    d = family.dimension(n)
    i = np.arange(1, d + 1, dtype=np.float64)
    if family.kind == "isotropic":
        lam = np.ones(d)
    elif family.kind == "power-law":
        lam = i ** -family.alpha
    elif family.kind == "power-log-law":
        lam = i ** -family.alpha * np.log(i + 1.0) ** -family.gamma
    else:
        tail = family.tail * float(n) ** -family.tail_exponent
        s = min(family.spike_count, d)
        lam = np.full(d, tail)
        lam[:s] = family.spike
        lam = np.sort(lam)[::-1]
    return Spectrum(lam)


def _check_k(spectrum: Spectrum, k: int) -> None:
    if not 0 <= k < spectrum.d:
        raise IndexError(f"k must satisfy 0 <= k < d = {spectrum.d}, got {k}")


def effective_rank_r(spectrum: Spectrum, k: int) -> float:
    """``r_k = sum_{i>k} lambda_i / lambda_{k+1}``."""
    _check_k(spectrum, k)
    return float(spectrum.r_all[k])


def effective_rank_R(spectrum: Spectrum, k: int) -> float:
    """``R_k = (sum_{i>k} lambda_i)**2 / sum_{i>k} lambda_i**2``."""
    _check_k(spectrum, k)
    return float(spectrum.R_all[k])


def critical_index(spectrum: Spectrum, n: int, b: float = 1.0) -> int | None:
    """Smallest k with ``r_k >= b*n``, or None if the finite spectrum has none."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not b > 0:
        raise ValueError("b must be positive")
    hits = np.flatnonzero(spectrum.r_all >= b * n)
    return int(hits[0]) if hits.size else None


@dataclass(frozen=True)
class BenignRow:
    n: int
    d: int
    sqrt_r0_over_n: float
    kstar: int | None
    kstar_over_n: float | None
    n_over_R_kstar: float | None
    benign_sum: float | None

    @property
    def flag(self) -> str:
        return "" if self.kstar is not None else "kstar_none"


BENIGN_HEADER = ("n", "d", "sqrt_r0_over_n", "kstar", "kstar_over_n", "n_over_R_kstar", "benign_sum", "flag")


def benign_summary(family: SpectrumFamily, n_grid: Sequence[int], b: float = 1.0) -> list[BenignRow]:
    """The three benign-overfitting diagnostics at every n of the grid."""
    n_grid = list(n_grid)
    if not n_grid:
        raise ValueError("n_grid must be non-empty")
    if any(b2 <= a for a, b2 in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    rows = []
    for n in n_grid:
        spec = make_spectrum(family, n)
        term0 = math.sqrt(effective_rank_r(spec, 0) / n)
        k = critical_index(spec, n, b)
        if k is None:
            rows.append(BenignRow(n, spec.d, term0, None, None, None, None))
            continue
        t1 = k / n
        t2 = n / effective_rank_R(spec, k)
        rows.append(BenignRow(n, spec.d, term0, k, t1, t2, term0 + t1 + t2))
    return rows


def benign_rows_as_records(rows: Sequence[BenignRow]) -> list[tuple]:
    return [
        (r.n, r.d, r.sqrt_r0_over_n, r.kstar, r.kstar_over_n, r.n_over_R_kstar, r.benign_sum, r.flag)
        for r in rows
    ]
