"""Gaussian random-design regression with the minimum-norm interpolator.

The covariance is carried spectrally: eigenvalues plus an optional orthonormal
eigenbasis (``None`` means the coordinate basis), so ``Sigma = Q diag(lam) Q'``.
Population risk is always the closed form ``(b - beta)' Sigma (b - beta) + sigma**2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import mc_engine
from .mc_engine import McEstimate, RunPlan
from .spectra import Spectrum, critical_index, effective_rank_R, effective_rank_r

__all__ = [
    "DecompositionTerms",
    "DegenerateDesignWarning",
    "DesignSample",
    "RegressionInstance",
    "UncertifiableBoundError",
    "denoised_surrogate",
    "empirical_risk",
    "expected_risk_bound",
    "flip_adversary",
    "identity_residual",
    "make_beta",
    "min_norm_interpolator",
    "population_risk",
    "risk_gap_mc",
    "row_space_basis",
    "sample_design",
    "sgc_surrogate_bound",
    "surrogate_decomposition",
    "uc_failure_probe",
]

DEFAULT_TOL = 1e-12


class DegenerateDesignWarning(RuntimeWarning):
    """Design matrix is all zeros or (for d > n) rank deficient."""


class UncertifiableBoundError(ValueError):
    """The finite spectrum has no critical index, so the risk bound is undefined."""


@dataclass(frozen=True, eq=False)
class RegressionInstance:
    spectrum: Spectrum
    beta: np.ndarray
    sigma: float
    n: int
    basis: np.ndarray | None = None

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64).ravel()
        if beta.size != self.spectrum.d:
            raise ValueError(f"beta has length {beta.size}, spectrum has d = {self.spectrum.d}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.basis is not None:
            q = np.array(self.basis, dtype=np.float64)
            d = self.spectrum.d
            if q.shape != (d, d):
                raise ValueError(f"basis must be {d}x{d}")
            if np.max(np.abs(q.T @ q - np.eye(d))) > 1e-10:
                raise ValueError("basis is not orthonormal to 1e-10")
            q.setflags(write=False)
            object.__setattr__(self, "basis", q)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def d(self) -> int:
        return self.spectrum.d

    def sigma_apply(self, v: np.ndarray) -> np.ndarray:
        """``Sigma @ v`` for a vector or a d x m matrix."""
        lam = self.spectrum.eigenvalues
        if self.basis is None:
            return lam[:, None] * v if v.ndim == 2 else lam * v
        q = self.basis
        w = q.T @ v
        return q @ (lam[:, None] * w if v.ndim == 2 else lam * w)

    def sigma_quad(self, u: np.ndarray, v: np.ndarray | None = None) -> float:
        """``u' Sigma v`` (``v`` defaults to ``u``)."""
        lam = self.spectrum.eigenvalues
        if self.basis is not None:
            u = self.basis.T @ u
            v = u if v is None else self.basis.T @ v
        elif v is None:
            v = u
        return float(np.dot(u * lam, v))

    def covariance(self) -> np.ndarray:
        lam = self.spectrum.eigenvalues
        if self.basis is None:
            return np.diag(lam)
        return (self.basis * lam) @ self.basis.T


@dataclass(frozen=True, eq=False)
class DesignSample:
    """One draw ``(X, Y, Z)`` with ``Y = X @ beta + Z`` computed once and stored."""

    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class DecompositionTerms:
    """The three closed-form terms of the surrogate decomposition.

    ``term_risk_gap = trace_term + cross_term``. ``trace_term`` is
    ``tr(X (X'X)^+ Sigma (X'X)^+ X' Z Z')``; ``cross_term`` is
    ``-2 Z' X (X'X)^+ Sigma P_perp beta``, which has zero mean given X and
    vanishes when Sigma commutes with the row-space projection ``P``.
    """

    term_empirical_gap: float
    term_risk_gap: float
    term_surrogate_gen: float
    trace_term: float
    cross_term: float
    rank: int
    rank_deficient: bool

    @property
    def total(self) -> float:
        return self.term_empirical_gap + self.term_risk_gap + self.term_surrogate_gen


def make_beta(mode: str, d: int, norm: float = 1.0) -> np.ndarray:
    """``zero``, ``e1`` (norm times the top-eigenvalue axis) or ``flat`` (norm spread evenly)."""
    if mode == "zero":
        return np.zeros(d)
    if mode == "e1":
        b = np.zeros(d)
        b[0] = norm
        return b
    if mode == "flat":
        return np.full(d, norm / math.sqrt(d))
    raise ValueError(f"unknown beta mode {mode!r}; expected zero, e1 or flat")


def sample_design(instance: RegressionInstance, seed: int) -> DesignSample:
    rng = mc_engine.make_rng(seed)
    n, d = instance.n, instance.d
    g = mc_engine.gaussian(rng, (n, d)) * np.sqrt(instance.spectrum.eigenvalues)
    X = g if instance.basis is None else g @ instance.basis.T
    Z = instance.sigma * mc_engine.gaussian(rng, n)
    Y = X @ instance.beta + Z
    return DesignSample(X, Y, Z)


def row_space_basis(X: np.ndarray, tol: float = DEFAULT_TOL):
    """Thin SVD of X truncated at ``tol * s_max``: ``(U_r, s_r, V_r)`` with X ~ U_r diag(s_r) V_r'."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a matrix")
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return u[:, :0], s[:0], vt[:0].T
    r = int(np.count_nonzero(s > tol * s[0]))
    return u[:, :r], s[:r], vt[:r].T


def _warn_if_degenerate(X, rank):
    if rank == 0:
        warnings.warn("all-zero design; pseudo-inverse solution is the zero vector",
                      DegenerateDesignWarning, stacklevel=3)
    elif X.shape[1] > X.shape[0] and rank < X.shape[0]:
        warnings.warn(f"design has rank {rank} < n = {X.shape[0]} although d > n",
                      DegenerateDesignWarning, stacklevel=3)


def min_norm_interpolator(X: np.ndarray, Y: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``(X'X)^+ X'Y``, via SVD with singular values below ``tol * s_max`` dropped."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != (X.shape[0],):
        raise ValueError("Y must have one entry per row of X")
    u, s, v = row_space_basis(X, tol)
    _warn_if_degenerate(X, s.size)
    return v @ ((u.T @ Y) / s)


def denoised_surrogate(X: np.ndarray, beta: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Projection of ``beta`` onto the row space of X."""
    X = np.asarray(X, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (X.shape[1],):
        raise ValueError("beta must have one entry per column of X")
    _, s, v = row_space_basis(X, tol)
    _warn_if_degenerate(X, s.size)
    return v @ (v.T @ beta)


def population_risk(b: np.ndarray, instance: RegressionInstance) -> float:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (instance.d,):
        raise ValueError(f"coefficient vector must have length {instance.d}")
    e = b - instance.beta
    return instance.sigma_quad(e) + instance.sigma**2


def empirical_risk(b: np.ndarray, X: np.ndarray, Y: np.ndarray) -> float:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empirical risk of an empty sample")
    if np.shape(b) != (X.shape[1],) or np.shape(Y) != (X.shape[0],):
        raise ValueError("dimension mismatch")
    r = X @ b - Y
    return float(np.dot(r, r)) / X.shape[0]


def surrogate_decomposition(sample: DesignSample, instance: RegressionInstance,
                            tol: float = DEFAULT_TOL) -> DecompositionTerms:
    """Closed forms of the three gaps between the interpolator and its denoised surrogate.

    ``term_empirical_gap`` is ``||Z||^2/n`` when rank(X) = n and ``||H Z||^2/n``
    otherwise (H the projection onto the column space of X), so the term stays
    exact for d <= n designs where the interpolator does not interpolate.
    """
    X, Z = sample.X, sample.Z
    n = X.shape[0]
    u, s, v = row_space_basis(X, tol)
    rank = s.size
    rank_deficient = rank < min(n, X.shape[1])
    if rank_deficient:
        warnings.warn(f"design has rank {rank}; decomposition flagged", DegenerateDesignWarning, stacklevel=2)

    zz = float(np.dot(Z, Z))
    uz = u.T @ Z
    term_emp = zz / n if rank == n else float(np.dot(uz, uz)) / n

    beta = instance.beta
    perp_beta = beta - v @ (v.T @ beta)
    w = v @ (uz / s)  # (X'X)^+ X' Z
    trace_term = instance.sigma_quad(w)
    cross_term = -2.0 * instance.sigma_quad(w, perp_beta)
    term_gen = instance.sigma**2 - zz / n + instance.sigma_quad(perp_beta)
    return DecompositionTerms(term_emp, trace_term + cross_term, term_gen,
                              trace_term, cross_term, rank, rank_deficient)


def identity_residual(terms: DecompositionTerms, ld_hat: float, ls_hat: float,
                      instance: RegressionInstance) -> float:
    """Relative mismatch between the summed terms and ``L_D(beta_hat) - L_S(beta_hat)``.

    Scaled by the larger of the gap itself and ``E y^2 = sigma^2 + beta' Sigma beta``
    so that noiseless, null-signal cases do not divide by zero.
    """
    gap = ld_hat - ls_hat
    scale = max(abs(gap), abs(terms.total), instance.sigma**2 + instance.sigma_quad(instance.beta))
    if scale == 0.0:
        return 0.0 if terms.total == gap else math.inf
    return abs(terms.total - gap) / scale


def flip_adversary(sample: DesignSample, beta: np.ndarray) -> DesignSample:
    """``(x, y) -> (x, 2 x beta - y)``; the stored residual changes sign.

    The new response is formed as ``X @ beta + (-Z)`` so that flipping twice
    restores ``Y = X @ beta + Z`` bit for bit.
    """
    beta = np.asarray(beta, dtype=np.float64)
    Z = -sample.Z
    return DesignSample(sample.X, sample.X @ beta + Z, Z)


def _flip_gap(instance: RegressionInstance, seed: int, tol: float) -> float:
    sample = sample_design(instance, seed)
    flipped = flip_adversary(sample, instance.beta)
    b = min_norm_interpolator(flipped.X, flipped.Y, tol)
    return abs(population_risk(b, instance) - empirical_risk(b, sample.X, sample.Y))


def uc_failure_probe(instance: RegressionInstance, replicates: int, seed: int,
                     max_parallelism: int = 1, tol: float = DEFAULT_TOL) -> McEstimate:
    """Monte Carlo mean of ``|L_D - L_S|`` for the interpolator fitted to the flipped sample.

    ``L_S`` is measured on the original sample, where it equals ``4 ||Z||^2 / n``.
    Any set containing the flipped dataset has expected sup-gap at least this mean.
    """
    if instance.d <= instance.n:
        raise ValueError("the flip probe needs d > n")
    plan = RunPlan(seed, replicates, max_parallelism)
    return mc_engine.run_mc(lambda s: _flip_gap(instance, s, tol), plan)


def risk_gap_mc(instance: RegressionInstance, replicates: int, seed: int,
                max_parallelism: int = 1, tol: float = DEFAULT_TOL) -> McEstimate:
    """Monte Carlo mean of the trace term ``tr(X (X'X)^+ Sigma (X'X)^+ X' Z Z')``."""
    if instance.d <= instance.n:
        raise ValueError("risk_gap_mc needs d > n")

    def one(s):
        return surrogate_decomposition(sample_design(instance, s), instance, tol).trace_term

    return mc_engine.run_mc(one, RunPlan(seed, replicates, max_parallelism))


def sgc_surrogate_bound(instance: RegressionInstance, C: float = 1.0) -> float:
    """``C (sigma^2 + ||beta||^2 ||Sigma|| max(sqrt(r0), r0/sqrt(n))) / sqrt(n)``."""
    if not C > 0:
        raise ValueError("C must be positive")
    n = instance.n
    r0 = effective_rank_r(instance.spectrum, 0)
    lam_max = float(instance.spectrum.eigenvalues[0])
    beta_sq = float(np.dot(instance.beta, instance.beta))
    return C * (instance.sigma**2 + beta_sq * lam_max * max(math.sqrt(r0), r0 / math.sqrt(n))) / math.sqrt(n)


def variance_bound_term(instance: RegressionInstance, c: float = 1.0, b: float = 1.0) -> float:
    """``c sigma^2 (k*/n + n/R_{k*})``; raises if k* does not exist."""
    if not c > 0:
        raise ValueError("c must be positive")
    n = instance.n
    k = critical_index(instance.spectrum, n, b)
    if k is None:
        raise UncertifiableBoundError(
            f"no k < d = {instance.d} has r_k >= b*n = {b * n}; the finite spectrum cannot certify the bound")
    return c * instance.sigma**2 * (k / n + n / effective_rank_R(instance.spectrum, k))


def expected_risk_bound(instance: RegressionInstance, C: float = 1.0, c: float = 1.0, b: float = 1.0) -> float:
    """``sigma^2 + sgc_surrogate_bound + c sigma^2 (k*/n + n/R_{k*})``."""
    return instance.sigma**2 + sgc_surrogate_bound(instance, C) + variance_bound_term(instance, c, b)
