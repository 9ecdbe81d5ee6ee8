"""Sparse binary interval matrices, datasets and the COO CSV format.

An interval is stored as two parallel, lexicographically sorted index
arrays (users, objects); every listed pair is an access (value 1) and
everything else is 0.

COO CSV layout, one access per line::

    interval_id,user_id,object_id

All fields are non-negative base-10 integers. Lines starting with ``#``
are ignored. The optional timestamp sidecar has lines
``interval_id,timestamp`` with the timestamp in seconds since the epoch;
intervals listed there but absent from the access file load as empty.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CannotSplitError, EmptyDatasetError, ParseError

COO_HEADER = "# interval_id,user_id,object_id"


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class IntervalMatrix:
    """Binary user x object access matrix of a single time interval."""

    interval_id: int
    users: np.ndarray
    objects: np.ndarray
    n_users: int
    n_objects: int
    timestamp: float | None = None

    def __post_init__(self):
        users = _frozen(self.users)
        objects = _frozen(self.objects)
        if users.shape != objects.shape or users.ndim != 1:
            raise ValueError("users and objects must be equal-length 1-d arrays")
        if self.interval_id < 0:
            raise ValueError(f"negative interval id {self.interval_id}")
        if users.size:
            if users.min() < 0 or objects.min() < 0:
                raise ValueError("negative user or object id")
            if users.max() >= self.n_users or objects.max() >= self.n_objects:
                raise ValueError("entry outside declared dimensions")
            key = users * max(self.n_objects, 1) + objects
            if np.any(np.diff(key) <= 0):
                raise ValueError("entries must be sorted and free of duplicates")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "objects", objects)

    @classmethod
    def from_pairs(cls, interval_id, pairs, n_users=None, n_objects=None, timestamp=None):
        """Build from an iterable of (user, object) pairs; duplicates are dropped."""
        arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs,
                         dtype=np.int64).reshape(-1, 2)
        if arr.size and arr.min() < 0:
            raise ValueError("negative user or object id")
        arr = np.unique(arr, axis=0) if arr.size else arr
        if n_users is None:
            n_users = int(arr[:, 0].max()) + 1 if arr.size else 0
        if n_objects is None:
            n_objects = int(arr[:, 1].max()) + 1 if arr.size else 0
        return cls(int(interval_id), arr[:, 0], arr[:, 1], int(n_users), int(n_objects),
                   None if timestamp is None else float(timestamp))

    @property
    def nnz(self) -> int:
        return int(self.users.size)

    @property
    def entries(self) -> set[tuple[int, int]]:
        return set(zip(self.users.tolist(), self.objects.tolist()))

    def with_entries(self, users, objects) -> "IntervalMatrix":
        """Copy with a new entry set; dimensions grow to fit, id and timestamp kept."""
        pairs = np.column_stack([np.asarray(users, np.int64), np.asarray(objects, np.int64)])
        n = max(self.n_users, int(pairs[:, 0].max()) + 1 if pairs.size else 0)
        m = max(self.n_objects, int(pairs[:, 1].max()) + 1 if pairs.size else 0)
        return IntervalMatrix.from_pairs(self.interval_id, pairs, n, m, self.timestamp)

    def to_csr(self, shape=None) -> sp.csr_matrix:
        shape = shape or (self.n_users, self.n_objects)
        data = np.ones(self.nnz)
        return sp.csr_matrix((data, (self.users, self.objects)), shape=shape)

    def to_dense(self, shape=None) -> np.ndarray:
        shape = shape or (self.n_users, self.n_objects)
        out = np.zeros(shape)
        out[self.users, self.objects] = 1.0
        return out


@dataclass(frozen=True)
class Dataset:
    """Chronologically ordered sequence of interval matrices."""

    intervals: tuple[IntervalMatrix, ...] = ()
    global_n: int = field(init=False)
    global_m: int = field(init=False)

    def __post_init__(self):
        intervals = tuple(self.intervals)
        ids = [b.interval_id for b in intervals]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("intervals must be strictly ordered by interval_id")
        object.__setattr__(self, "intervals", intervals)
        object.__setattr__(self, "global_n", max((b.n_users for b in intervals), default=0))
        object.__setattr__(self, "global_m", max((b.n_objects for b in intervals), default=0))

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Dataset(self.intervals[idx])
        return self.intervals[idx]

    @property
    def ids(self) -> list[int]:
        return [b.interval_id for b in self.intervals]

    def subset(self, positions: Iterable[int]) -> "Dataset":
        """Dataset of the intervals at the given positions, kept in time order."""
        return Dataset(tuple(self.intervals[p] for p in sorted(positions)))

    def by_id(self, interval_id: int) -> IntervalMatrix:
        for b in self.intervals:
            if b.interval_id == interval_id:
                return b
        raise KeyError(interval_id)


@dataclass(frozen=True)
class AveragedMatrix:
    """Entrywise mean of the intervals of a dataset, stored sparse."""

    values: sp.csr_matrix
    source_count: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def toarray(self) -> np.ndarray:
        return self.values.toarray()


def _loadtxt(fh, dtype):
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "loadtxt: input contained no data")
        return np.loadtxt(fh, delimiter=",", comments="#", dtype=dtype, ndmin=2)


def _read_int_table(path, ncols):
    try:
        with open(path) as fh:
            table = _loadtxt(fh, np.int64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if table.size == 0:
        return np.empty((0, ncols), dtype=np.int64)
    if table.shape[1] != ncols:
        raise ParseError(f"{path}: expected {ncols} columns, got {table.shape[1]}")
    if table.min() < 0:
        bad = int(np.argwhere(table < 0)[0, 0])
        raise ParseError(f"{path}: negative id in data row {bad + 1}")
    return table


def _read_timestamps(path) -> dict[int, float]:
    try:
        with open(path) as fh:
            table = _loadtxt(fh, np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if table.size == 0:
        return {}
    if table.shape[1] != 2:
        raise ParseError(f"{path}: expected interval_id,timestamp")
    ids = table[:, 0]
    if np.any(ids < 0) or np.any(ids != np.floor(ids)):
        raise ParseError(f"{path}: interval ids must be non-negative integers")
    return {int(i): float(ts) for i, ts in table}


def load_dataset(path, format: str = "coo_csv", timestamps_path=None) -> Dataset:
    """Read a COO CSV access log (and optional timestamp sidecar) into a Dataset."""
    if format != "coo_csv":
        raise ValueError(f"unsupported format {format!r}")
    table = _read_int_table(path, 3)
    stamps = _read_timestamps(timestamps_path) if timestamps_path else {}
    if table.shape[0] == 0 and not stamps:
        raise EmptyDatasetError(f"{path}: no accesses found")

    table = np.unique(table, axis=0)  # sorts by (interval, user, object) and dedups
    ids, starts = np.unique(table[:, 0], return_index=True)
    bounds = list(starts) + [table.shape[0]]
    by_id = {}
    for t, a, b in zip(ids.tolist(), bounds[:-1], bounds[1:]):
        by_id[t] = (table[a:b, 1], table[a:b, 2])
    empty = np.empty(0, dtype=np.int64)
    intervals = []
    for t in sorted(set(by_id) | set(stamps)):
        users, objects = by_id.get(t, (empty, empty))
        n = int(users.max()) + 1 if users.size else 0
        m = int(objects.max()) + 1 if objects.size else 0
        intervals.append(IntervalMatrix(t, users, objects, n, m, stamps.get(t)))
    return Dataset(tuple(intervals))


def save_dataset(d: Dataset, path, timestamps_path=None) -> None:
    """Write a Dataset in COO CSV form; timestamps go to the sidecar if given."""
    with open(path, "w") as fh:
        fh.write(COO_HEADER + "\n")
        for b in d:
            for u, o in zip(b.users.tolist(), b.objects.tolist()):
                fh.write(f"{b.interval_id},{u},{o}\n")
    if timestamps_path is not None:
        with open(timestamps_path, "w") as fh:
            fh.write("# interval_id,timestamp\n")
            for b in d:
                ts = "" if b.timestamp is None else repr(b.timestamp)
                if ts:
                    fh.write(f"{b.interval_id},{ts}\n")


def split_chronological(d: Dataset, fraction_s1: float = 0.5) -> tuple[Dataset, Dataset]:
    """Split into a leading part of ``ceil(fraction * T)`` intervals and the rest."""
    if not 0.0 < fraction_s1 < 1.0:
        raise ValueError("fraction_s1 must lie in (0, 1)")
    T = len(d)
    if T < 2:
        raise CannotSplitError(f"need at least 2 intervals to split, got {T}")
    # tolerate float noise such as 0.1 * 30 == 3.0000000000000004
    t1 = math.ceil(fraction_s1 * T - 1e-9)
    t1 = min(max(t1, 1), T - 1)
    return d[:t1], d[t1:]


def average_matrix(s1: Dataset) -> AveragedMatrix:
    """Entrywise mean ``(1/T1) * sum_t B_t`` on the global dimensions of ``s1``."""
    if len(s1) == 0:
        raise EmptyDatasetError("cannot average an empty dataset")
    shape = (s1.global_n, s1.global_m)
    rows = np.concatenate([b.users for b in s1])
    cols = np.concatenate([b.objects for b in s1])
    counts = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=shape).tocsr()
    counts.sum_duplicates()
    counts.eliminate_zeros()
    counts.sort_indices()
    counts.data = counts.data / len(s1)
    return AveragedMatrix(counts, len(s1))


def dataset_from_dense(mats: Sequence[np.ndarray], start_id: int = 0, timestamps=None) -> Dataset:
    """Convenience constructor from dense 0/1 arrays (used by tests and the harness)."""
    out = []
    for k, a in enumerate(mats):
        a = np.asarray(a)
        r, c = np.nonzero(a)
        ts = None if timestamps is None else timestamps[k]
        out.append(IntervalMatrix(start_id + k, r, c, a.shape[0], a.shape[1], ts))
    return Dataset(tuple(out))
