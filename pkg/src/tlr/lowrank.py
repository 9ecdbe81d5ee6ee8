"""Low-rank stationary access model via singular value soft-thresholding.

The regularized problem ``min_X ||X - avg||_F^2 + lam * ||X||_tr`` has the
closed-form minimizer ``U diag(max(d - lam/2, 0)) V^T`` built from the SVD
of the averaged matrix. Entries are clipped into [0, 1] when evaluated and
then clamped into ``[clip_low, 1 - clip_low]`` so that logarithms stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse.linalg as spla

from . import _accel
from .data import AveragedMatrix, Dataset, average_matrix
from .errors import DimensionError, EmptyDatasetError, SolverError

DEFAULT_CLIP_LOW = 1e-6
DEFAULT_MAX_RANK = 200
# below this many cells a dense LAPACK SVD is cheaper than ARPACK
DENSE_CELLS = 1_000_000


@dataclass(frozen=True)
class SvdFactors:
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for name in ("U", "singular_values", "V"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        k = self.singular_values.shape[0]
        if self.U.shape[1] != k or self.V.shape[1] != k:
            raise ValueError("factor shapes disagree with the number of singular values")

    @property
    def rank(self) -> int:
        return int(self.singular_values.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T


def _fix_signs(U, V):
    """Make the largest-magnitude entry of every U column positive."""
    if U.shape[1] == 0:
        return U, V
    idx = np.argmax(np.abs(U), axis=0)
    flip = np.sign(U[idx, np.arange(U.shape[1])])
    flip[flip == 0] = 1.0
    return U * flip, V * flip


def _finalize(U, s, Vt):
    order = np.argsort(-s, kind="stable")
    s = s[order]
    U = U[:, order]
    V = Vt[order].T
    if s.size:
        # numerical rank: drop values indistinguishable from zero
        cutoff = max(U.shape[0], V.shape[0]) * np.finfo(float).eps * s[0]
        keep = s > cutoff
        U, s, V = U[:, keep], s[keep], V[:, keep]
    U, V = _fix_signs(U, V)
    return SvdFactors(U, s, V)


def sparse_svd(b: AveragedMatrix, max_rank: int, maxiter: int | None = None) -> SvdFactors:
    """Leading ``max_rank`` singular triplets of the averaged matrix.

    Small inputs, or requests for most of the spectrum, go through a dense
    SVD; everything else through ARPACK on the sparse matrix.
    """
    if max_rank < 1:
        raise ValueError("max_rank must be positive")
    n, m = b.shape
    r = min(n, m)
    if r == 0 or b.values.nnz == 0:
        return SvdFactors(np.zeros((n, 0)), np.zeros(0), np.zeros((m, 0)))
    k = min(max_rank, r)
    if n * m <= DENSE_CELLS or 2 * k >= r:
        U, s, Vt = np.linalg.svd(b.toarray(), full_matrices=False)
        return _finalize(U[:, :k], s[:k], Vt[:k])
    # fixed start vector keeps ARPACK (and hence saved models) deterministic
    v0 = np.random.default_rng(0).uniform(-1.0, 1.0, size=r)
    try:
        U, s, Vt = spla.svds(b.values.astype(np.float64), k=k, tol=0, v0=v0,
                             maxiter=maxiter, solver="arpack")
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"sparse SVD did not converge for k={k}",
                          iterations=maxiter) from exc
    return _finalize(U, s, Vt)


def spectral_norm(b: AveragedMatrix) -> float:
    """Largest singular value of the averaged matrix."""
    if b.values.nnz == 0:
        return 0.0
    n, m = b.shape
    if n * m <= DENSE_CELLS:
        return float(np.linalg.norm(b.toarray(), 2))
    f = sparse_svd(b, 1)
    return float(f.singular_values[0])


def soft_threshold(f: SvdFactors, lam: float) -> SvdFactors:
    """Shrink every singular value by ``lam / 2``; drop the ones that hit zero."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    s = f.singular_values - lam / 2.0
    # singular values carry ~eps * s0 rounding; treat residues that small as zero
    top = f.singular_values[0] if f.rank else 0.0
    keep = s > 8 * np.finfo(float).eps * max(top, lam / 2.0)
    return SvdFactors(f.U[:, keep], s[keep], f.V[:, keep])


class SpectrumCache:
    """SVD of one averaged matrix, extended on demand as smaller lambdas need more rank.

    Thresholding at ``lam`` is exact only if the smallest computed singular
    value already lies below ``lam / 2``; otherwise the rank is doubled.
    """

    def __init__(self, b: AveragedMatrix, initial_rank: int | None = None):
        self.b = b
        self.full_rank = min(b.shape)
        self._rank = min(initial_rank or DEFAULT_MAX_RANK, max(self.full_rank, 1))
        self._factors = None

    def factors_for(self, lam: float) -> SvdFactors:
        while True:
            if self._factors is None:
                self._factors = sparse_svd(self.b, self._rank)
            s = self._factors.singular_values
            complete = s.size < self._rank or self._rank >= self.full_rank
            if complete or s[-1] <= lam / 2.0:
                return self._factors
            self._rank = min(2 * self._rank, self.full_rank)
            self._factors = None


@dataclass(frozen=True)
class ModelMatrix:
    """Factored estimate of the stationary access probabilities."""

    factors: SvdFactors
    lam: float
    clip_low: float = DEFAULT_CLIP_LOW

    def __post_init__(self):
        if not 0.0 <= self.clip_low < 0.5:
            raise ValueError("clip_low must lie in [0, 0.5)")

    @property
    def n(self) -> int:
        return self.factors.U.shape[0]

    @property
    def m(self) -> int:
        return self.factors.V.shape[0]

    @property
    def k(self) -> int:
        return self.factors.rank

    @cached_property
    def scaled_users(self) -> np.ndarray:
        """``U * s``; row i dotted with row j of V gives the raw entry."""
        return np.ascontiguousarray(self.factors.U * self.factors.singular_values)

    @cached_property
    def zero_sums(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Per-row and per-column sums of ``log(1 - p)`` and their grand total."""
        rows, cols = _accel.zero_term_sums(self.scaled_users, self.factors.V, self.clip_low)
        return rows, cols, float(rows.sum())

    def evaluate(self, rows, cols) -> np.ndarray:
        """Clipped and clamped probabilities at the given index pairs."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size and (rows.max() >= self.n or cols.max() >= self.m
                          or rows.min() < 0 or cols.min() < 0):
            raise DimensionError("index outside the model; fold new users/objects first")
        raw = _accel.entry_values(self.scaled_users, self.factors.V, rows, cols)
        return np.clip(raw, self.clip_low, 1.0 - self.clip_low)

    def dense(self) -> np.ndarray:
        """Full clamped probability matrix; only for small models."""
        raw = self.factors.reconstruct()
        return np.clip(raw, self.clip_low, 1.0 - self.clip_low)


def evaluate_entry(model: ModelMatrix, i: int, j: int) -> float:
    return float(model.evaluate([i], [j])[0])


def model_from_average(b: AveragedMatrix, lam: float, clip_low: float = DEFAULT_CLIP_LOW,
                       cache: SpectrumCache | None = None) -> ModelMatrix:
    """Thresholded model for an already averaged matrix (optionally reusing its SVD)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    cache = cache or SpectrumCache(b)
    return ModelMatrix(soft_threshold(cache.factors_for(lam), lam), float(lam), clip_low)


def find_model(s1: Dataset, lam: float, clip_low: float = DEFAULT_CLIP_LOW) -> ModelMatrix:
    """Average the intervals, take the SVD and soft-threshold it by ``lam / 2``."""
    if len(s1) == 0:
        raise EmptyDatasetError("cannot fit a model on an empty dataset")
    return model_from_average(average_matrix(s1), lam, clip_low)
