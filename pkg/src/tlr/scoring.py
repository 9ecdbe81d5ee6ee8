"""Test-time anomaly scores: |observed LL - predicted LL| per interval."""
from __future__ import annotations

import csv
import json
from collections import ChainMap
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .coldstart import folded_log_likelihood
from .data import Dataset, IntervalMatrix
from .likelihood import LogLikelihood
from .training import TrainedPipeline, extract_features

SCORE_COLUMNS = ("interval_id", "observed_ll", "predicted_ll", "deviation",
                 "normalized_score", "folded_users", "folded_objects")


@dataclass(frozen=True)
class ScoredInterval:
    interval_id: int
    observed_ll: float
    predicted_ll: float
    deviation: float
    normalized_score: float
    n_folded_users: int = 0
    n_folded_objects: int = 0

    def row(self) -> list:
        return [self.interval_id, repr(self.observed_ll), repr(self.predicted_ll),
                repr(self.deviation), repr(self.normalized_score),
                self.n_folded_users, self.n_folded_objects]


def percentile_scores(deviations, reference) -> np.ndarray:
    """Empirical-CDF position ``rank / (count + 1)`` of each deviation.

    ``rank`` counts reference values not above the deviation, floored at 1.
    """
    ref = np.sort(np.asarray(reference, dtype=np.float64))
    if ref.size == 0:
        raise ValueError("empty reference deviations")
    rank = np.searchsorted(ref, np.asarray(deviations, dtype=np.float64), side="right")
    return np.maximum(rank, 1) / (ref.size + 1.0)


def score_interval(b: IntervalMatrix, p: TrainedPipeline,
                   history: Mapping[int, float] | None = None,
                   ll: LogLikelihood | None = None) -> ScoredInterval:
    """Score one interval; ``history`` maps earlier interval ids to observed LL.

    The pipeline's S2 LLs are used for any id ``history`` does not cover.
    """
    hist = p.s2_history if history is None else ChainMap(history, p.s2_history)
    if ll is None:
        ll = folded_log_likelihood(b, p.model, p.folding)
    v = extract_features(b, hist, p.features, p.impute_ll, p.reference_id)
    pred = p.regressor.predict(v)
    dev = abs(ll.value - pred)
    norm = float(percentile_scores([dev], p.reference_deviations)[0])
    return ScoredInterval(b.interval_id, ll.value, pred, dev, norm,
                          ll.n_folded_users, ll.n_folded_objects)


def score_sequence(intervals: Sequence[IntervalMatrix], lls: Sequence[LogLikelihood],
                   p: TrainedPipeline) -> list[ScoredInterval]:
    """Score intervals in id order given their already computed log-likelihoods.

    Each interval's autoregressive features see the observed LLs of the
    intervals before it, anomalous or not.
    """
    hist = {}
    out = []
    for b, ll in zip(intervals, lls):
        out.append(score_interval(b, p, hist, ll))
        hist[b.interval_id] = ll.value
    return out


def score_dataset(d: Dataset, p: TrainedPipeline) -> list[ScoredInterval]:
    lls = [folded_log_likelihood(b, p.model, p.folding) for b in d]
    return score_sequence(d.intervals, lls, p)


def normalize_scores(batch: Sequence[ScoredInterval], reference) -> list[ScoredInterval]:
    scores = percentile_scores([s.deviation for s in batch], reference)
    return [replace(s, normalized_score=float(v)) for s, v in zip(batch, scores)]


def rank_intervals(batch: Sequence[ScoredInterval], top_k: int | None = None) -> list[ScoredInterval]:
    """Most deviant first; ties by ascending interval id."""
    ordered = sorted(batch, key=lambda s: (-s.deviation, s.interval_id))
    return ordered if top_k is None else ordered[:top_k]


def write_scores_csv(batch: Iterable[ScoredInterval], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for s in batch:
            w.writerow(s.row())


def read_scores_csv(path) -> list[ScoredInterval]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [ScoredInterval(int(r["interval_id"]), float(r["observed_ll"]),
                           float(r["predicted_ll"]), float(r["deviation"]),
                           float(r["normalized_score"]), int(r["folded_users"]),
                           int(r["folded_objects"])) for r in rows]


def write_scores_jsonl(batch: Iterable[ScoredInterval], path) -> None:
    with open(path, "w") as fh:
        for s in batch:
            fh.write(json.dumps(asdict(s), sort_keys=True) + "\n")
