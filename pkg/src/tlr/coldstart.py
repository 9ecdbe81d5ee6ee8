"""Cold start: score intervals that mention users or objects unseen in training.

Each new user is projected into latent space through V (using only its
accesses to known objects) and takes over the probability row of the
training user closest to it there. New objects are handled symmetrically
through U. Only ids that actually occur in an interval are folded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .data import AveragedMatrix, IntervalMatrix
from .errors import DimensionError
from .likelihood import LogLikelihood
from .lowrank import ModelMatrix


@dataclass(frozen=True)
class FoldingIndex:
    """Latent rows of training users (``G = avg V``) and objects (``H = avg^T U``)."""

    G: np.ndarray
    H: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for name in ("G", "H", "U", "V"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.G.shape[0] != self.U.shape[0] or self.H.shape[0] != self.V.shape[0]:
            raise DimensionError("latent tables do not match model dimensions")
        if not self.G.shape[1] == self.H.shape[1] == self.U.shape[1] == self.V.shape[1]:
            raise DimensionError("latent tables do not match model rank")

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]


def build_folding_index(b: AveragedMatrix, model: ModelMatrix) -> FoldingIndex:
    if b.shape != (model.n, model.m):
        raise DimensionError(f"averaged matrix {b.shape} vs model {(model.n, model.m)}")
    U, V = model.factors.U, model.factors.V
    G = np.asarray(b.values @ V)
    H = np.asarray(b.values.T @ U)
    return FoldingIndex(G, H, U, V)


def _latent_sums(basis, members, owners, queries):
    """Row-sum of ``basis[members]`` grouped by owner, for each query owner."""
    out = np.zeros((len(queries), basis.shape[1]))
    if members.size:
        pos = np.searchsorted(queries, owners)
        np.add.at(out, pos, basis[members])
    return out


def fold_users(user_ids, users, objects, idx: FoldingIndex) -> np.ndarray:
    """Training-user substitutes for each id in sorted ``user_ids``.

    ``users``/``objects`` are the interval's entries; columns beyond the
    training objects are ignored when projecting.
    """
    if idx.n == 0:
        raise DimensionError("folding index has no users")
    user_ids = np.asarray(user_ids, dtype=np.int64)
    sel = np.isin(users, user_ids) & (objects < idx.m)
    proj = _latent_sums(idx.V, objects[sel], users[sel], user_ids)
    return _accel.nearest_rows(idx.G, proj)


def fold_objects(object_ids, users, objects, idx: FoldingIndex) -> np.ndarray:
    """Training-object substitutes for each id in sorted ``object_ids``."""
    if idx.m == 0:
        raise DimensionError("folding index has no objects")
    object_ids = np.asarray(object_ids, dtype=np.int64)
    sel = np.isin(objects, object_ids) & (users < idx.n)
    proj = _latent_sums(idx.U, users[sel], objects[sel], object_ids)
    return _accel.nearest_rows(idx.H, proj)


def fold_user(access_row, idx: FoldingIndex) -> int:
    """Nearest training user for one access row given as object indices."""
    cols = np.unique(np.asarray(access_row, dtype=np.int64))
    users = np.zeros(cols.size, dtype=np.int64)
    return int(fold_users([0], users, cols, idx)[0])


def fold_object(access_col, idx: FoldingIndex) -> int:
    """Nearest training object for one access column given as user indices."""
    rows = np.unique(np.asarray(access_col, dtype=np.int64))
    objects = np.zeros(rows.size, dtype=np.int64)
    return int(fold_objects([0], rows, objects, idx)[0])


def folded_log_likelihood(b: IntervalMatrix, model: ModelMatrix,
                          idx: FoldingIndex) -> LogLikelihood:
    """Log-likelihood under the model extended by nearest-neighbour rows/columns.

    Equivalent to appending, per new user (object), a copy of its substitute's
    probability row (column) and summing over the enlarged matrix, without
    ever materialising it.
    """
    n, m = model.n, model.m
    users, objects = b.users, b.objects
    new_u = np.unique(users[users >= n])
    new_o = np.unique(objects[objects >= m])
    row_sums, col_sums, zero_total = model.zero_sums

    map_u = fold_users(new_u, users, objects, idx) if new_u.size else np.empty(0, np.int64)
    map_o = fold_objects(new_o, users, objects, idx) if new_o.size else np.empty(0, np.int64)

    r = users
    c = objects
    if new_u.size:
        r = users.copy()
        hit = users >= n
        r[hit] = map_u[np.searchsorted(new_u, users[hit])]
    if new_o.size:
        c = objects.copy()
        hit = objects >= m
        c[hit] = map_o[np.searchsorted(new_o, objects[hit])]

    zeros = zero_total + row_sums[map_u].sum() + col_sums[map_o].sum()
    if new_u.size and new_o.size:
        cr = np.repeat(map_u, map_o.size)
        cc = np.tile(map_o, map_u.size)
        p = np.clip(_accel.entry_values(model.scaled_users, model.factors.V, cr, cc),
                    model.clip_low, 1.0 - model.clip_low)
        zeros += np.log1p(-p).sum()

    odds = _accel.log_odds_sum(model.scaled_users, model.factors.V, r, c, model.clip_low)
    return LogLikelihood(float(zeros + odds), (n + new_u.size) * (m + new_o.size),
                         int(new_u.size), int(new_o.size))
