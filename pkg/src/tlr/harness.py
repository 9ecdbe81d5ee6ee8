"""Synthetic data, anomaly injection and the evaluation protocols.

Experiment I injects random accesses into one test interval per run;
Experiment II swaps the contents of two test intervals from different
time regimes. Each run contributes all its test scores to one combined
ROC curve per method (TLR regression deviation vs. the MEAN baseline).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .coldstart import folded_log_likelihood
from .data import Dataset, IntervalMatrix, split_chronological
from .scoring import score_sequence
from .training import FeatureConfig, TrainConfig, TrainedPipeline, train

# Monday 2021-01-04 00:00 UTC
DEFAULT_START = 1609718400.0

# The generator has no weekly cycle and a short S2 covers only a few
# weekdays, so weekday dummies would just extrapolate noise.
SYNTHETIC_FEATURES = FeatureConfig(weekend=False, day_of_week=False)


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-rank Bernoulli access model with hour-of-day regimes.

    Every regime mixes the same ``rank`` non-negative rank-1 components
    with its own weights, so the time-averaged matrix has rank ``rank``.
    Regime 0 is active during ``day_hours``, regime 1 (if any) otherwise.
    """

    n: int = 200
    m: int = 200
    rank: int = 3
    T: int = 400
    seed: int = 0
    density: float = 0.02
    # day leans on a concentrated component, night on a more diffuse one;
    # equal total density so access counts alone do not reveal the regime
    regimes: tuple[tuple[float, ...], ...] = ((1.0, 0.2, 0.3), (0.2, 1.0, 0.3))
    day_hours: tuple[int, int] = (12, 24)
    loading_power: float | tuple[float, ...] = (4.0, 1.5, 1.0)
    start_timestamp: float = DEFAULT_START
    interval_seconds: float = 3600.0

    def __post_init__(self):
        if self.rank > min(self.n, self.m):
            raise ValueError("rank exceeds matrix dimensions")
        if not self.regimes or any(len(w) != self.rank for w in self.regimes):
            raise ValueError("every regime needs one weight per latent component")
        if len(self.regimes) > 2:
            raise ValueError("at most two regimes (day, night) are supported")


@dataclass(frozen=True)
class SyntheticData:
    dataset: Dataset
    regime: np.ndarray
    pis: tuple[np.ndarray, ...]

    @property
    def pi_bar(self) -> np.ndarray:
        counts = np.bincount(self.regime, minlength=len(self.pis))
        return sum(c * p for c, p in zip(counts, self.pis)) / counts.sum()


def regime_matrices(spec: SyntheticSpec) -> tuple[np.ndarray, ...]:
    rng = np.random.default_rng([spec.seed, 1])
    # larger powers concentrate a component on fewer users/objects
    power = np.broadcast_to(np.asarray(spec.loading_power, dtype=np.float64), (spec.rank,))
    A = rng.uniform(size=(spec.n, spec.rank)) ** power
    B = rng.uniform(size=(spec.m, spec.rank)) ** power
    # scale components to unit mean so weights read as relative densities
    A /= A.mean(axis=0)
    B /= B.mean(axis=0)
    pis = []
    for w in spec.regimes:
        pi = spec.density * (A * np.asarray(w, dtype=np.float64)) @ B.T
        if pi.max() > 1.0:
            raise ValueError("regime probabilities exceed 1; lower the density")
        pis.append(pi)
    return tuple(pis)


def timestamps(spec: SyntheticSpec) -> np.ndarray:
    return spec.start_timestamp + np.arange(spec.T) * spec.interval_seconds


def regime_schedule(spec: SyntheticSpec) -> np.ndarray:
    if len(spec.regimes) == 1:
        return np.zeros(spec.T, dtype=np.int64)
    lo, hi = spec.day_hours
    hours = np.array([datetime.fromtimestamp(ts, tz=timezone.utc).hour for ts in timestamps(spec)])
    return np.where((hours >= lo) & (hours < hi), 0, 1).astype(np.int64)


def sample_dataset(pis, schedule, stamps=None, seed=0, start_id: int = 0) -> Dataset:
    """Independent Bernoulli draws of every cell, one regime matrix per interval."""
    rng = np.random.default_rng(seed)
    out = []
    for t, reg in enumerate(schedule):
        pi = pis[reg]
        if pi.min() < 0.0 or pi.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        r, c = np.nonzero(rng.random(pi.shape) < pi)
        ts = None if stamps is None else float(stamps[t])
        out.append(IntervalMatrix(start_id + t, r, c, pi.shape[0], pi.shape[1], ts))
    return Dataset(tuple(out))


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    pis = regime_matrices(spec)
    sched = regime_schedule(spec)
    d = sample_dataset(pis, sched, timestamps(spec), seed=[spec.seed, 2])
    return SyntheticData(d, sched, pis)


def inject_random_accesses(b: IntervalMatrix, epsilon: float, seed=None,
                           shape: tuple[int, int] | None = None) -> IntervalMatrix:
    """Set every cell to 1 independently with probability ``epsilon`` (OR with ``b``)."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, m = shape or (b.n_users, b.n_objects)
    cells = n * m
    # drawing the count then distinct cells is the same law as per-cell coins
    hits = rng.choice(cells, size=rng.binomial(cells, epsilon), replace=False)
    users = np.concatenate([b.users, hits // m])
    objects = np.concatenate([b.objects, hits % m])
    out = b.with_entries(users, objects)
    return IntervalMatrix(out.interval_id, out.users, out.objects, max(out.n_users, n),
                          max(out.n_objects, m), out.timestamp)


def swap_intervals(d: Dataset, t1: int, t2: int) -> Dataset:
    """Exchange the entry sets of two intervals; ids and timestamps stay put."""
    ids = d.ids
    if t1 not in ids or t2 not in ids:
        raise KeyError(f"interval id {t1 if t1 not in ids else t2} not in dataset")
    a, b = d.by_id(t1), d.by_id(t2)

    def moved(dst, src):
        return IntervalMatrix(dst.interval_id, src.users, src.objects, src.n_users,
                              src.n_objects, dst.timestamp)

    swapped = {t1: moved(a, b), t2: moved(b, a)}
    return Dataset(tuple(swapped.get(x.interval_id, x) for x in d))


def mean_baseline_score(lls, s2_mean_ll: float) -> np.ndarray:
    return np.abs(np.asarray(lls, dtype=np.float64) - s2_mean_ll)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_auc(scores, labels=None) -> RocCurve:
    """ROC by a descending threshold sweep; equal scores form a single step.

    Accepts ``(score, is_anomalous)`` pairs or two parallel sequences. The
    area is accumulated in integers, so it equals the Mann-Whitney statistic
    ``P(s+ > s-) + P(s+ = s-) / 2`` exactly.
    """
    if labels is None:
        pairs = list(scores)
        scores = [s for s, _ in pairs]
        labels = [lab for _, lab in pairs]
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    P = int(y.sum())
    N = int(y.size - P)
    if P == 0 or N == 0:
        raise ValueError("ROC needs at least one positive and one negative label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.r_[0, np.cumsum(y)[last]].astype(np.int64)
    fp = np.r_[0, np.cumsum(~y)[last]].astype(np.int64)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return RocCurve(fp / N, tp / P, twice_area / (2 * P * N))


def generalization_gap(spec: SyntheticSpec, T_values, trials: int = 50,
                       gamma: float | None = None, model: np.ndarray | None = None,
                       seed: int = 0) -> dict[int, np.ndarray]:
    """|true MSE - empirical MSE| of a fixed model over samples of T intervals.

    The true loss of ``model`` under the stationary matrix ``pibar`` is
    ``MSE(model, pibar) + mean(pibar * (1 - pibar))``. The empirical loss
    depends on a sample only through its entrywise counts, which are drawn
    directly as Binomial(T, pibar).
    """
    pibar = regime_matrices(spec)[0] if len(spec.regimes) == 1 else \
        generate_synthetic(spec).pi_bar
    if gamma is None:
        gamma = float(np.linalg.svd(pibar, compute_uv=False).sum())
    pi = pibar if model is None else np.asarray(model, dtype=np.float64)
    if np.linalg.svd(pi, compute_uv=False).sum() > gamma * (1 + 1e-9):
        raise ValueError("model trace norm exceeds gamma")
    nm = pi.size
    true_loss = np.mean((pi - pibar) ** 2) + np.mean(pibar * (1.0 - pibar))
    sq = np.sum(pi ** 2)
    out = {}
    for T in T_values:
        rng = np.random.default_rng([seed, int(T)])
        gaps = np.empty(trials)
        for k in range(trials):
            avg = rng.binomial(int(T), pibar) / T
            emp = (sq - 2.0 * np.sum(pi * avg) + np.sum(avg)) / nm
            gaps[k] = abs(true_loss - emp)
        out[int(T)] = gaps
    return out


def gap_spec(n: int = 40, m: int = 40, rank: int = 3, seed: int = 0) -> SyntheticSpec:
    """Stationary single-regime spec used for the generalization-gap check."""
    return SyntheticSpec(n=n, m=m, rank=rank, T=1, seed=seed, density=0.2,
                         regimes=((1.0 / rank,) * rank,), loading_power=1.0)


@dataclass
class ExperimentResult:
    """Per-method combined ROC plus per-run AUC rows for the report."""

    curves: dict[tuple, RocCurve] = field(default_factory=dict)
    rows: list[tuple] = field(default_factory=list)

    def auc(self, param, method) -> float:
        return self.curves[(param, method)].auc

    def write_report(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run_id", "param", "method", "auc"])
            for row in self.rows:
                w.writerow(row)
            for (param, method), curve in sorted(self.curves.items(), key=str):
                w.writerow(["combined", param, method, repr(curve.auc)])

    def write_roc_points(self, directory) -> None:
        """gnuplot-friendly ``fpr tpr`` columns, one file per (param, method)."""
        from pathlib import Path
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for (param, method), curve in self.curves.items():
            name = f"roc_{param}_{method}.dat".replace("/", "_")
            with open(directory / name, "w") as fh:
                fh.write(f"# fpr tpr  auc={curve.auc!r}\n")
                for x, y in curve.points:
                    fh.write(f"{x!r} {y!r}\n")


@dataclass
class Setup:
    data: SyntheticData
    pipeline: TrainedPipeline
    test: Dataset
    test_regime: np.ndarray
    clean_lls: list

    @property
    def shape(self) -> tuple[int, int]:
        return self.pipeline.model.n, self.pipeline.model.m


def prepare(spec: SyntheticSpec, config: TrainConfig | None = None,
            train_fraction: float = 0.5) -> Setup:
    """Generate data, train on the leading part, precompute clean test LLs."""
    data = generate_synthetic(spec)
    train_d, test_d = split_chronological(data.dataset, train_fraction)
    cfg = config or TrainConfig(seed=spec.seed, features=SYNTHETIC_FEATURES)
    p = train(train_d, cfg)
    lls = [folded_log_likelihood(b, p.model, p.folding) for b in test_d]
    return Setup(data, p, test_d, data.regime[len(train_d):], lls)


def _run_scores(setup: Setup, intervals, lls):
    scored = score_sequence(intervals, lls, setup.pipeline)
    tlr = np.array([s.deviation for s in scored])
    mean = mean_baseline_score([ll.value for ll in lls], setup.pipeline.s2_mean_ll)
    return tlr, mean


def _combine(result, param, per_method):
    for method, (scores, labels) in per_method.items():
        result.curves[(param, method)] = roc_auc(np.concatenate(scores), np.concatenate(labels))


def run_injection_experiment(setup: Setup, epsilons, repetitions: int = 25,
                             seed: int = 0) -> ExperimentResult:
    result = ExperimentResult()
    p = setup.pipeline
    T = len(setup.test)
    for eps in epsilons:
        rng = np.random.default_rng([seed, int(round(-np.log10(eps) * 1000))])
        acc = {"TLR": ([], []), "MEAN": ([], [])}
        for rep in range(repetitions):
            a = int(rng.integers(T))
            intervals = list(setup.test.intervals)
            lls = list(setup.clean_lls)
            intervals[a] = inject_random_accesses(intervals[a], eps, rng, setup.shape)
            lls[a] = folded_log_likelihood(intervals[a], p.model, p.folding)
            labels = np.zeros(T, dtype=bool)
            labels[a] = True
            tlr, mean = _run_scores(setup, intervals, lls)
            for method, s in (("TLR", tlr), ("MEAN", mean)):
                acc[method][0].append(s)
                acc[method][1].append(labels)
                result.rows.append((f"eps{eps:g}-{rep}", f"{eps:g}", method,
                                    repr(roc_auc(s, labels).auc)))
        _combine(result, f"{eps:g}", acc)
    return result


def run_swap_experiment(setup: Setup, repetitions: int = 25, seed: int = 0,
                        cross_regime: bool = True) -> ExperimentResult:
    """Swap one random pair per run; both swapped intervals are the positives."""
    result = ExperimentResult()
    p = setup.pipeline
    rng = np.random.default_rng([seed, 7])
    reg = setup.test_regime
    pos = np.arange(len(setup.test))
    acc = {"TLR": ([], []), "MEAN": ([], [])}
    for rep in range(repetitions):
        if cross_regime and len(np.unique(reg)) > 1:
            a = int(rng.choice(pos[reg == 0]))
            b = int(rng.choice(pos[reg == 1]))
        else:
            r0 = reg[int(rng.integers(pos.size))]
            a, b = (int(x) for x in rng.choice(pos[reg == r0], size=2, replace=False))
        ids = setup.test.ids
        swapped = swap_intervals(setup.test, ids[a], ids[b])
        lls = list(setup.clean_lls)
        lls[a], lls[b] = lls[b], lls[a]
        labels = np.zeros(pos.size, dtype=bool)
        labels[[a, b]] = True
        tlr, mean = _run_scores(setup, swapped.intervals, lls)
        for method, s in (("TLR", tlr), ("MEAN", mean)):
            acc[method][0].append(s)
            acc[method][1].append(labels)
            result.rows.append((f"swap-{rep}", f"{ids[a]}<->{ids[b]}", method,
                                repr(roc_auc(s, labels).auc)))
    _combine(result, "swap", acc)
    return result
