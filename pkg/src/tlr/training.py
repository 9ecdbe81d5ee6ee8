"""Two-stage training: CV-selected low-rank model on S1, LL regression on S2."""
from __future__ import annotations

import configparser
import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Mapping, Sequence

import numpy as np

from .coldstart import FoldingIndex, build_folding_index, folded_log_likelihood
from .data import AveragedMatrix, Dataset, IntervalMatrix, average_matrix, split_chronological
from .errors import FeatureError, TLRError
from .lowrank import (DEFAULT_CLIP_LOW, DEFAULT_MAX_RANK, ModelMatrix, SpectrumCache,
                      model_from_average, spectral_norm)

log = logging.getLogger(__name__)

RIDGE_PENALTY = 1e-6
DAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


class RankDeficientWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    weekend: bool = True
    autoregressive: bool = True
    access_count: bool = True
    since_training: bool = True
    day_of_week: bool = True
    hour_of_day: bool = True
    lag: int = 24
    # used when an interval carries no timestamp of its own
    start_timestamp: float | None = None
    interval_seconds: float = 3600.0

    @property
    def calendar(self) -> bool:
        return self.weekend or self.day_of_week or self.hour_of_day

    def names(self) -> list[str]:
        out = ["intercept"]
        if self.weekend:
            out.append("weekend")
        if self.autoregressive:
            out += ["ll_prev", f"ll_lag{self.lag}"]
        if self.access_count:
            out.append("access_count")
        if self.since_training:
            out.append("since_training")
        if self.day_of_week:
            out += [f"dow_{d}" for d in DAY_NAMES]
        if self.hour_of_day:
            out += ["hour", "hour_shifted"]
        return out


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...]


@dataclass(frozen=True)
class Regressor:
    weights: np.ndarray
    feature_names: tuple[str, ...]
    train_residual_std: float

    def predict(self, v) -> float:
        x = v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64)
        return float(x @ self.weights)


@dataclass(frozen=True)
class TrainConfig:
    split_fraction: float = 0.5
    k_folds: int = 10
    seed: int = 0
    clip_low: float = DEFAULT_CLIP_LOW
    improvement_tol: float = 1e-3
    max_k: int = 30
    cv_mode: str = "random"
    max_rank: int = DEFAULT_MAX_RANK
    min_intervals: int = 20
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def validate(self) -> "TrainConfig":
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        if not 0.0 <= self.clip_low < 0.5:
            raise ValueError("clip_low must lie in [0, 0.5)")
        if self.cv_mode not in ("random", "block"):
            raise ValueError("cv_mode must be 'random' or 'block'")
        if self.max_k < 0 or self.max_rank < 1 or self.features.lag < 1:
            raise ValueError("max_k, max_rank and lag must be positive")
        return self


@dataclass(frozen=True)
class TrainedPipeline:
    model: ModelMatrix
    folding: FoldingIndex
    regressor: Regressor
    lambda_star: float
    cv_scores: dict[float, float]
    features: FeatureConfig
    impute_ll: float
    reference_id: int
    s2_history: dict[int, float]
    reference_deviations: np.ndarray

    @property
    def s2_mean_ll(self) -> float:
        return self.impute_ll


def _coerce(value: str, kind):
    kind = str(kind)
    if "bool" in kind:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if "None" in kind and value.strip().lower() in ("", "none"):
        return None
    if "int" in kind:
        return int(value)
    if "float" in kind:
        return float(value)
    return value.strip()


def load_config(path=None, **overrides) -> TrainConfig:
    """Read ``key = value`` lines (``#`` comments).

    Feature keys use the ``features.`` prefix, e.g. ``features.lag = 7``.
    """
    values: dict[str, str] = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        with open(path) as fh:
            parser.read_string("[train]\n" + fh.read())
        values.update(parser["train"])
    values.update({k: str(v) for k, v in overrides.items() if v is not None})

    top = {f.name: f.type for f in dataclasses.fields(TrainConfig) if f.name != "features"}
    feat = {f.name: f.type for f in dataclasses.fields(FeatureConfig)}
    kw, fkw = {}, {}
    for key, raw in values.items():
        if key.startswith("features."):
            name = key.split(".", 1)[1]
            if name not in feat:
                raise ValueError(f"unknown feature option {name!r}")
            fkw[name] = _coerce(raw, feat[name])
        elif key in top:
            kw[key] = _coerce(raw, top[key])
        else:
            raise ValueError(f"unknown config key {key!r}")
    return TrainConfig(features=FeatureConfig(**fkw), **kw).validate()


def _timestamp(t: IntervalMatrix, cfg: FeatureConfig) -> float:
    if t.timestamp is not None:
        return t.timestamp
    if cfg.start_timestamp is not None:
        return cfg.start_timestamp + t.interval_id * cfg.interval_seconds
    raise FeatureError(f"interval {t.interval_id} has no timestamp but calendar "
                       "features are enabled")


def extract_features(t: IntervalMatrix, history: Mapping[int, float], cfg: FeatureConfig,
                     impute: float, reference_id: int) -> FeatureVector:
    """Regression features of one interval.

    ``history`` maps earlier interval ids to their observed LL; missing
    lags fall back to ``impute``. ``reference_id`` is the last interval the
    low-rank model was fitted on.
    """
    vals = [1.0]
    when = None
    if cfg.calendar:
        when = datetime.fromtimestamp(_timestamp(t, cfg), tz=timezone.utc)
    if cfg.weekend:
        vals.append(1.0 if when.weekday() >= 5 else 0.0)
    if cfg.autoregressive:
        vals.append(float(history.get(t.interval_id - 1, impute)))
        vals.append(float(history.get(t.interval_id - cfg.lag, impute)))
    if cfg.access_count:
        vals.append(float(t.nnz))
    if cfg.since_training:
        vals.append(float(t.interval_id - reference_id))
    if cfg.day_of_week:
        dow = [0.0] * 7
        dow[when.weekday()] = 1.0
        vals += dow
    if cfg.hour_of_day:
        vals += [float(when.hour), float((when.hour + 12) % 24)]
    return FeatureVector(np.array(vals), tuple(cfg.names()))


def fit_regressor(pairs: Sequence[tuple[FeatureVector, float]]) -> Regressor:
    """Least-squares weights of LL on the features.

    Falls back to a tiny ridge penalty, with a warning, when the design is
    rank deficient.
    """
    if not pairs:
        raise ValueError("no training pairs")
    X = np.vstack([fv.values for fv, _ in pairs])
    y = np.array([float(v) for _, v in pairs])
    names = pairs[0][0].names
    return fit_design(X, y, names)


def fit_design(X: np.ndarray, y: np.ndarray, names=None) -> Regressor:
    n, d = X.shape
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(d))
    if np.linalg.matrix_rank(X) < d:
        warnings.warn(f"rank-deficient design ({n}x{d}); using ridge penalty {RIDGE_PENALTY}",
                      RankDeficientWarning, stacklevel=2)
        A = np.vstack([X, np.sqrt(RIDGE_PENALTY) * np.eye(d)])
        b = np.concatenate([y, np.zeros(d)])
        w = np.linalg.lstsq(A, b, rcond=None)[0]
    else:
        w = np.linalg.lstsq(X, y, rcond=None)[0]
    resid = y - X @ w
    return Regressor(w, names, float(np.std(resid)))


def lambda_grid(b: AveragedMatrix | float, score: Callable[[float], float],
                improvement_tol: float = 1e-3, max_k: int = 30) -> list[float]:
    """Halving grid ``top / 2**i`` extended while the score keeps improving.

    ``b`` is the averaged matrix (or its spectral norm directly). Extension
    stops once the newest value improves on the best so far by less than
    ``improvement_tol * |best|``, or after ``max_k`` halvings.
    """
    top = b if isinstance(b, (int, float)) else spectral_norm(b)
    if top <= 0:
        top = 1.0  # empty matrix: every lambda gives the zero model
    grid = [float(top)]
    best = score(grid[0])
    for i in range(1, max_k + 1):
        lam = top / 2.0 ** i
        grid.append(lam)
        s = score(lam)
        if s - best < improvement_tol * abs(best):
            break
        best = s
    return grid


def fold_assignment(T: int, k_folds: int, seed: int, mode: str = "random") -> list[np.ndarray]:
    """Partition of positions 0..T-1 into ``k_folds`` validation sets."""
    if mode == "block":
        order = np.arange(T)
    else:
        order = np.random.default_rng(seed).permutation(T)
    return [np.sort(f) for f in np.array_split(order, k_folds)]


class _FoldScorer:
    """Mean validation LL per lambda, one cached spectrum per fold."""

    def __init__(self, s1: Dataset, folds, clip_low, max_rank):
        self.clip_low = clip_low
        self.parts = []
        all_pos = np.arange(len(s1))
        for val in folds:
            train = s1.subset(np.setdiff1d(all_pos, val))
            avg = average_matrix(train)
            self.parts.append((avg, SpectrumCache(avg, max_rank), s1.subset(val)))
        self.scores: dict[float, float] = {}

    def __call__(self, lam: float) -> float:
        if lam in self.scores:
            return self.scores[lam]
        fold_means = []
        for avg, cache, val in self.parts:
            model = model_from_average(avg, lam, self.clip_low, cache)
            idx = build_folding_index(avg, model)
            fold_means.append(np.mean([folded_log_likelihood(b, model, idx).value
                                       for b in val]))
        self.scores[lam] = float(np.mean(fold_means))
        log.debug("lambda %.6g -> cv score %.6f", lam, self.scores[lam])
        return self.scores[lam]


def select_lambda(scores: Mapping[float, float]) -> float:
    """Argmax of the scores; ties go to the larger lambda."""
    return max(scores, key=lambda lam: (scores[lam], lam))


def cross_validate_lambda(s1: Dataset, k_folds: int = 10, seed: int = 0,
                          clip_low: float = DEFAULT_CLIP_LOW, improvement_tol: float = 1e-3,
                          max_k: int = 30, grid: Sequence[float] | None = None,
                          mode: str = "random", max_rank: int = DEFAULT_MAX_RANK):
    """Pick lambda by k-fold CV on whole intervals; returns ``(lambda*, scores)``."""
    if len(s1) < k_folds:
        raise TLRError(f"need at least {k_folds} intervals for {k_folds}-fold CV, "
                       f"got {len(s1)}")
    folds = fold_assignment(len(s1), k_folds, seed, mode)
    scorer = _FoldScorer(s1, folds, clip_low, max_rank)
    if grid is None:
        lambda_grid(average_matrix(s1), scorer, improvement_tol, max_k)
    else:
        for lam in grid:
            scorer(float(lam))
    scores = dict(scorer.scores)
    return select_lambda(scores), scores


def regression_targets(s2: Dataset, model: ModelMatrix, idx: FoldingIndex) -> np.ndarray:
    return np.array([folded_log_likelihood(b, model, idx).value for b in s2])


def design_matrix(intervals: Sequence[IntervalMatrix], lls: Sequence[float],
                  cfg: FeatureConfig, impute: float, reference_id: int,
                  history: Mapping[int, float] | None = None) -> np.ndarray:
    """Feature rows for a run of consecutive intervals with known LLs.

    Autoregressive slots read the observed LLs of earlier intervals (seeded
    from ``history``); an interval never sees its own LL.
    """
    hist = dict(history or {})
    rows = []
    for b, ll in zip(intervals, lls):
        rows.append(extract_features(b, hist, cfg, impute, reference_id).values)
        hist[b.interval_id] = float(ll)
    return np.vstack(rows) if rows else np.empty((0, len(cfg.names())))


def train(d: Dataset, config: TrainConfig | None = None) -> TrainedPipeline:
    cfg = (config or TrainConfig()).validate()
    if len(d) < cfg.min_intervals:
        raise TLRError(f"need at least {cfg.min_intervals} intervals to train, got {len(d)}")
    s1, s2 = split_chronological(d, cfg.split_fraction)
    lam, scores = cross_validate_lambda(s1, cfg.k_folds, cfg.seed, cfg.clip_low,
                                        cfg.improvement_tol, cfg.max_k, mode=cfg.cv_mode,
                                        max_rank=cfg.max_rank)
    avg = average_matrix(s1)
    model = model_from_average(avg, lam, cfg.clip_low, SpectrumCache(avg, cfg.max_rank))
    idx = build_folding_index(avg, model)
    log.info("lambda*=%.6g rank=%d", lam, model.k)

    ys = regression_targets(s2, model, idx)
    impute = float(ys.mean())
    ref_id = s1[-1].interval_id
    X = design_matrix(s2.intervals, ys, cfg.features, impute, ref_id)
    reg = fit_design(X, ys, cfg.features.names())
    deviations = np.abs(ys - X @ reg.weights)
    return TrainedPipeline(
        model=model, folding=idx, regressor=reg, lambda_star=lam, cv_scores=scores,
        features=cfg.features, impute_ll=impute, reference_id=ref_id,
        s2_history={b.interval_id: float(y) for b, y in zip(s2, ys)},
        reference_deviations=deviations)


def s2_correlation(p: TrainedPipeline, s2: Dataset) -> float:
    """Pearson correlation of predicted vs observed LL over ``s2``."""
    ys = regression_targets(s2, p.model, p.folding)
    X = design_matrix(s2.intervals, ys, p.features, p.impute_ll, p.reference_id)
    return float(np.corrcoef(X @ p.regressor.weights, ys)[0, 1])
