"""Bernoulli log-likelihood of interval matrices under a factored model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from . import _accel
from .data import IntervalMatrix
from .errors import DimensionError
from .lowrank import ModelMatrix


@dataclass(frozen=True)
class LogLikelihood:
    value: float
    n_entries: int
    n_folded_users: int = 0
    n_folded_objects: int = 0

    def __float__(self):
        return self.value


def log_likelihood(b: IntervalMatrix, model: ModelMatrix) -> LogLikelihood:
    """Sum of Bernoulli log-probabilities over every cell of the model.

    Cells the interval does not touch contribute ``log(1 - p)``; those sums
    are cached on the model, so only the accessed cells are visited here.
    Model rows/columns beyond the interval's own dimensions count as zeros.
    """
    if b.nnz and (b.users.max() >= model.n or b.objects.max() >= model.m):
        raise DimensionError(
            f"interval {b.interval_id} has ids outside the {model.n}x{model.m} model; "
            "use coldstart.folded_log_likelihood")
    _, _, zero_total = model.zero_sums
    odds = _accel.log_odds_sum(model.scaled_users, model.factors.V, b.users, b.objects,
                               model.clip_low)
    return LogLikelihood(zero_total + odds, model.n * model.m)


def bernoulli_cross_entropy(a, b):
    """Cross-entropy between Bernoulli(a) and Bernoulli(b); works elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = -xlogy(a, b) - xlogy(1.0 - a, 1.0 - b)
    return float(out) if out.ndim == 0 else out


def expected_log_likelihood(pi: np.ndarray, model: ModelMatrix) -> float:
    """``-H(pi, model)``: the mean LL of intervals drawn from ``pi`` (small models only)."""
    return -float(np.sum(bernoulli_cross_entropy(pi, model.dense())))
