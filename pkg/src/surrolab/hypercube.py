"""The interpolating hypercube classifier and its conditioning surrogate.

Points of {0,1}^(2d) are packed little-endian into uint64 words: coordinate j
(1-based) lives in word (j-1)//64, bit (j-1)%64. The surrogate forgets the first
k coordinates, i.e. the low bits of the packed representation.

The learned rule built from a training set S flips the target label exactly at
points outside S whose complement is in S. It ignores the training labels.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import mc_engine
from .mc_engine import McEstimate, RunPlan

__all__ = [
    "BitDataset",
    "DDRow",
    "HypercubeInstance",
    "adversarial_gap_probe",
    "antipodal_dataset",
    "double_descent_curve",
    "empirical_risk_on",
    "exact_risk_learned",
    "generalization_bound",
    "massart_gap_bound",
    "pack_bits",
    "predict_learned",
    "sample_dataset",
    "slice_fraction",
    "surrogate_empirical_risk_mc",
    "surrogate_pair_counts",
    "surrogate_risk_bounds",
    "theorem_k_rule",
    "true_label",
    "unpack_bits",
    "vc_bound",
    "vc_shatter_witness",
]

_ONE = np.uint64(1)
# cubes up to 2^16 points use a dense membership table instead of sorting
_TABLE_BITS = 16


def n_words(d: int) -> int:
    return (2 * d + 63) // 64


def prefix_mask(d: int, k: int) -> np.ndarray:
    """Packed mask of coordinates 1..k."""
    if not 0 <= k <= 2 * d:
        raise ValueError(f"k must lie in [0, 2d] = [0, {2 * d}], got {k}")
    words = np.zeros(n_words(d), dtype=np.uint64)
    full, rest = divmod(k, 64)
    words[:full] = np.uint64(0xFFFFFFFFFFFFFFFF)
    if rest:
        words[full] = (_ONE << np.uint64(rest)) - _ONE
    return words


def full_mask(d: int) -> np.ndarray:
    return prefix_mask(d, 2 * d)


def pack_bits(bits, d: int | None = None) -> np.ndarray:
    """Pack 0/1 vectors of length 2d (last axis) into uint64 words."""
    bits = np.asarray(bits)
    length = bits.shape[-1]
    if d is None:
        if length % 2:
            raise ValueError(f"bit vectors must have even length, got {length}")
        d = length // 2
    if length != 2 * d:
        raise ValueError(f"expected {2 * d} bits, got {length}")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("bit vectors must contain only 0 and 1")
    w = n_words(d)
    padded = np.zeros(bits.shape[:-1] + (64 * w,), dtype=np.uint64)
    padded[..., :length] = bits
    shifts = np.arange(64, dtype=np.uint64)
    return (padded.reshape(bits.shape[:-1] + (w, 64)) << shifts).sum(axis=-1, dtype=np.uint64)


def unpack_bits(words: np.ndarray, d: int) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint64)
    shifts = np.arange(64, dtype=np.uint64)
    bits = (words[..., None] >> shifts) & _ONE
    return bits.reshape(words.shape[:-1] + (-1,))[..., : 2 * d].astype(np.uint8)


def popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)


def _labels(words: np.ndarray, d: int) -> np.ndarray:
    return (popcount(words) <= d).astype(np.uint8)


def _keys(words: np.ndarray) -> np.ndarray:
    """Hashable/sortable 1-D view of packed rows, for set membership."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    if words.shape[-1] == 1:
        return words[..., 0]
    return words.view(np.dtype((np.void, 8 * words.shape[-1])))[..., 0]


@dataclass(frozen=True)
class HypercubeInstance:
    d: int
    n: int
    k: int = 0

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be positive")
        if not 0 <= self.k <= 2 * self.d:
            raise ValueError(f"k must lie in [0, 2d] = [0, {2 * self.d}], got {self.k}")


@dataclass(frozen=True, eq=False)
class BitDataset:
    """Packed points (n x words) with one label bit each.

    ``adversarial`` marks datasets not drawn from the model (labels may
    disagree with the target function).
    """

    points: np.ndarray
    labels: np.ndarray
    d: int
    adversarial: bool = False

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.uint64)
        if pts.ndim != 2 or pts.shape[1] != n_words(self.d):
            raise ValueError(f"points must be an (n, {n_words(self.d)}) packed array")
        if np.any(pts & ~full_mask(self.d)):
            raise ValueError("points have bits set beyond coordinate 2d")
        lab = np.asarray(self.labels, dtype=np.uint8).ravel()
        if lab.size != pts.shape[0] or np.any(lab > 1):
            raise ValueError("need one 0/1 label per point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_bits(cls, bits, labels=None, adversarial: bool = False) -> "BitDataset":
        bits = np.atleast_2d(np.asarray(bits))
        d = bits.shape[1] // 2
        pts = pack_bits(bits, d)
        if labels is None:
            labels = _labels(pts, d)
        return cls(pts, labels, d, adversarial)

    def bits(self) -> np.ndarray:
        return unpack_bits(self.points, self.d)


def true_label(x, d: int) -> int:
    """1 if the point has at most d ones, else 0."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size != 2 * d:
        raise ValueError(f"expected a vector of {2 * d} bits, got shape {x.shape}")
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("bit vectors must contain only 0 and 1")
    return int(np.count_nonzero(x) <= d)


def sample_dataset(instance: HypercubeInstance, seed: int) -> BitDataset:
    rng = mc_engine.make_rng(seed)
    w = n_words(instance.d)
    pts = mc_engine.raw_bits(rng, instance.n * w).reshape(instance.n, w) & full_mask(instance.d)
    return BitDataset(pts, _labels(pts, instance.d), instance.d)


def _predict(train_points: np.ndarray, x: np.ndarray, d: int) -> np.ndarray:
    """Vectorised learned rule at packed points ``x`` for training features ``train_points``."""
    if 2 * d <= _TABLE_BITS:
        table = np.zeros(1 << (2 * d), dtype=bool)
        table[train_points[:, 0]] = True
        xs = x[:, 0]
        flip = ~table[xs] & table[xs ^ full_mask(d)[0]]
        return _labels(x, d) ^ flip.astype(np.uint8)
    train = _keys(train_points)
    inside = np.isin(_keys(x), train)
    comp_inside = np.isin(_keys(x ^ full_mask(d)), train)
    return _labels(x, d) ^ (~inside & comp_inside).astype(np.uint8)


def predict_learned(S: BitDataset, x) -> int:
    x = np.asarray(x)
    if x.ndim != 1 or x.size != 2 * S.d:
        raise ValueError(f"expected a vector of {2 * S.d} bits")
    return int(_predict(S.points, pack_bits(x[None, :], S.d), S.d)[0])


def antipodal_dataset(S: BitDataset) -> BitDataset:
    """Complement every point and every label."""
    return BitDataset(S.points ^ full_mask(S.d), 1 - S.labels, S.d, adversarial=not S.adversarial)


def _error_count(train_points: np.ndarray, d: int) -> int:
    # the learned rule errs exactly at complements of distinct training points
    # whose complement is not itself a training point
    uniq = np.unique(_keys(train_points))
    comp = np.unique(_keys(train_points ^ full_mask(d)))
    return int(np.count_nonzero(~np.isin(comp, uniq)))


def exact_risk_learned(S: BitDataset) -> float:
    """Population error of the rule learned from S, by counting flipped points."""
    return math.ldexp(_error_count(S.points, S.d), -2 * S.d)


def empirical_risk_on(S_eval: BitDataset, S_train: BitDataset) -> float:
    if S_eval.d != S_train.d:
        raise ValueError("datasets live on different cubes")
    pred = _predict(S_train.points, S_eval.points, S_train.d)
    return float(np.count_nonzero(pred != S_eval.labels)) / S_eval.n


def slice_fraction(S: BitDataset) -> float:
    """Fraction of points with exactly d ones.

    On this slice the target is not antisymmetric: a point and its complement
    both get label 1, so complemented labels disagree with the target there.
    """
    return float(np.count_nonzero(popcount(S.points) == S.d)) / S.n


def surrogate_pair_counts(S: BitDataset, k: int) -> tuple[int, int]:
    """Ordered pairs (i, j) whose coordinates k+1..2d are complementary / equal.

    At k = 2d the suffix is empty and counts as both equal and complementary to
    itself, so both counts are n**2.
    """
    suffix = full_mask(S.d) & ~prefix_mask(S.d, k)
    masked = S.points & suffix
    uniq, first, counts = np.unique(_keys(masked), return_index=True, return_counts=True)
    counts = counts.astype(np.int64)
    equal = int(np.sum(counts**2))
    comp = _keys(np.ascontiguousarray(masked[first] ^ suffix))
    pos = np.minimum(np.searchsorted(uniq, comp), uniq.size - 1)
    hit = uniq[pos] == comp
    antipodal = int(np.sum(counts[hit] * counts[pos[hit]]))
    return antipodal, equal


def surrogate_risk_bounds(S: BitDataset, k: int) -> tuple[float, float, float]:
    """Almost-sure bounds on ``(L_S(Q), L_Sbar(Q), L_D(Q))`` for this S."""
    antipodal, equal = surrogate_pair_counts(S, k)
    n = S.n
    p = 2.0**-k
    return p * (1.0 - p) / n * antipodal, p / n * equal, n * 2.0 ** (-2 * S.d)


def _rerandomized_errors(S: BitDataset, Sbar: BitDataset, kept: np.ndarray, prefix: np.ndarray, seed: int):
    rng = mc_engine.make_rng(seed)
    w = kept.shape[1]
    fresh = mc_engine.raw_bits(rng, kept.shape[0] * w).reshape(kept.shape) & prefix
    train = kept | fresh
    on_s = np.count_nonzero(_predict(train, S.points, S.d) != S.labels) / S.n
    on_sbar = np.count_nonzero(_predict(train, Sbar.points, S.d) != Sbar.labels) / S.n
    return on_s, on_sbar


def surrogate_empirical_risk_mc(S: BitDataset, k: int, replicates: int, seed: int,
                                max_parallelism: int = 1) -> tuple[McEstimate, McEstimate]:
    """Monte Carlo ``(L_S(Q), L_Sbar(Q))`` for the surrogate that forgets k coordinates.

    Each replicate redraws coordinates 1..k of every training point uniformly
    (keeping the rest), rebuilds the learned rule and scores it on S and on its
    antipodal dataset. Only the masked training features enter a replicate, so
    datasets that agree off the first k coordinates give identical trajectories.
    """
    prefix = prefix_mask(S.d, k)
    kept = S.points & ~prefix
    Sbar = antipodal_dataset(S)
    plan = RunPlan(seed, replicates, max_parallelism)
    est = mc_engine.run_mc_many(lambda s: _rerandomized_errors(S, Sbar, kept, prefix, s), plan)
    return est[0], est[1]


def _adversarial_gap(instance: HypercubeInstance, seed: int) -> float:
    S = sample_dataset(instance, seed)
    Sbar = antipodal_dataset(S)
    risk = math.ldexp(_error_count(Sbar.points, S.d), -2 * S.d)
    return abs(risk - empirical_risk_on(S, Sbar))


def adversarial_gap_probe(instance: HypercubeInstance, replicates: int, seed: int,
                          max_parallelism: int = 1) -> McEstimate:
    """Mean ``|L_D - L_S|`` of the rule trained on the antipodal dataset.

    A Monte Carlo lower bound on the expected supremum of the gap over the
    learned class.
    """
    if instance.n > 2 ** (2 * instance.d - 1):
        raise ValueError("need n <= 2^(2d-1)")
    return mc_engine.run_mc(lambda s: _adversarial_gap(instance, s), RunPlan(seed, replicates, max_parallelism))


def massart_gap_bound(instance: HypercubeInstance) -> float:
    """``2 sqrt(ln 2) n^(1/2) ((2d - k) n + 1)^(1/2) 2^-k``."""
    d, n, k = instance.d, instance.n, instance.k
    return 2.0 * math.sqrt(math.log(2.0)) * math.sqrt(n) * math.sqrt((2 * d - k) * n + 1) * 2.0**-k


def generalization_bound(instance: HypercubeInstance) -> float:
    """``(n - 1) 2^-2d`` plus :func:`massart_gap_bound`."""
    return (instance.n - 1) * 2.0 ** (-2 * instance.d) + massart_gap_bound(instance)


def theorem_k_rule(n: float, d: int, eps: float = 0.1) -> int:
    """``ceil((1 + eps) log2 n + log2(d) / 2)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return math.ceil((1.0 + eps) * math.log2(n) + math.log2(d) / 2.0)


def vc_bound(v: int, n: int) -> float:
    """``min(1, sqrt(2 v (ln(2n/v) + 1) / n))``."""
    if v < 1 or n < 1:
        raise ValueError("v and n must be positive")
    return min(1.0, math.sqrt(2.0 * v * (math.log(2.0 * n / v) + 1.0) / n))


@dataclass(frozen=True)
class DDRow:
    d: int
    n: int
    k: int | None
    vc_dim: int
    left_branch: float
    right_branch: float | None
    min_branch: float


DD_HEADER = ("d", "n", "k", "vc_dim", "left_branch", "right_branch", "min_branch")


def double_descent_curve(n: int, d_grid: Sequence[int],
                         k_rule: Callable[[int, int], int] | None = None,
                         vc_bound_form: Callable[[int, int], float] = vc_bound) -> list[DDRow]:
    """Left branch from a VC bound with dimension ``min(n, 2d-1)``, right branch from
    :func:`generalization_bound` with ``k = k_rule(n, d)``.

    Where the rule asks for more than 2d coordinates the right branch is
    undefined (``None``) and the row's minimum is the left branch.
    """
    if k_rule is None:
        k_rule = theorem_k_rule
    d_grid = list(d_grid)
    if any(b <= a for a, b in zip(d_grid, d_grid[1:])):
        raise ValueError("d_grid must be strictly increasing")
    rows = []
    for d in d_grid:
        v = min(n, 2 * d - 1)
        left = vc_bound_form(v, n)
        k = k_rule(n, d)
        if 0 <= k <= 2 * d:
            right = generalization_bound(HypercubeInstance(d, n, k))
            rows.append(DDRow(d, n, k, v, left, right, min(left, right)))
        else:
            rows.append(DDRow(d, n, None, v, left, None, left))
    return rows


def dd_rows_as_records(rows: Sequence[DDRow]) -> list[tuple]:
    return [(r.d, r.n, r.k, r.vc_dim, r.left_branch, r.right_branch, r.min_branch) for r in rows]


def vc_shatter_witness(points) -> list[tuple[tuple[int, ...], BitDataset]]:
    """Training sets realising every labelling of antipode-free distinct points.

    For pattern p, point i contributes ``(x_i, f(x_i))`` when ``p_i`` equals the
    target label and the antipode ``(1 - x_i, 1 - f(x_i))`` otherwise. Every
    returned dataset is checked by evaluating the learned rule.
    """
    bits = np.atleast_2d(np.asarray(points))
    n, length = bits.shape
    if length % 2:
        raise ValueError("points must have even bit length")
    d = length // 2
    if n > 2 ** (2 * d - 1):
        raise ValueError("need n <= 2^(2d-1)")
    if n > 24:
        raise ValueError("refusing to enumerate more than 2^24 patterns")
    base = BitDataset.from_bits(bits)
    keys = _keys(base.points)
    if np.unique(keys).size != n:
        raise ValueError("points must be pairwise distinct")
    if np.any(np.isin(_keys(base.points ^ full_mask(d)), keys)):
        raise ValueError("points must not contain an antipodal pair")
    anti = antipodal_dataset(base)
    out = []
    for pattern in itertools.product((0, 1), repeat=n):
        use_anti = np.array(pattern, dtype=np.uint8) != base.labels
        pts = np.where(use_anti[:, None], anti.points, base.points)
        labs = np.where(use_anti, anti.labels, base.labels)
        S = BitDataset(pts, labs, d, adversarial=bool(use_anti.any()))
        realised = _predict(S.points, base.points, d)
        if not np.array_equal(realised, np.array(pattern, dtype=np.uint8)):
            raise AssertionError(f"pattern {pattern} not realised")
        out.append((pattern, S))
    return out
