"""Sparse rating and label containers plus input validation helpers.

Unobserved cells are simply absent: a cell is observed exactly when it appears
among the stored entries, so no sentinel value can leak into computations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DataError",
    "MalformedLineError",
    "DuplicateEntryError",
    "OutOfScaleError",
    "SparseRatings",
    "SparseLabels",
    "check_ratings",
    "check_labels",
]


class DataError(ValueError):
    """Input data is malformed or inconsistent."""


class MalformedLineError(DataError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


class DuplicateEntryError(DataError):
    pass


class OutOfScaleError(DataError):
    pass


@dataclass
class _SparseGrid:
    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    user_ids: tuple[str, ...] | None = field(default=None, compare=False)
    item_ids: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.intp).reshape(-1)
        self.items = np.asarray(self.items, dtype=np.intp).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        n = self.values.size
        if self.users.size != n or self.items.size != n:
            raise DataError("users, items and values must have equal length")
        if n:
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise DataError(f"user index out of range [0, {self.n_users})")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise DataError(f"item index out of range [0, {self.n_items})")
            if not np.all(np.isfinite(self.values)):
                raise DataError("values must be finite")
            flat = self.users.astype(np.int64) * self.n_items + self.items
            uniq, counts = np.unique(flat, return_counts=True)
            if uniq.size != n:
                u, v = divmod(int(uniq[counts > 1][0]), self.n_items)
                raise DuplicateEntryError(f"duplicate entry for (user={u}, item={v})")
        if self.user_ids is not None and len(self.user_ids) != self.n_users:
            raise DataError("user_ids must have one entry per user")
        if self.item_ids is not None and len(self.item_ids) != self.n_items:
            raise DataError("item_ids must have one entry per item")

    def __len__(self) -> int:
        return self.values.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_users, self.n_items

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(u), int(v), float(x)) for u, v, x in zip(self.users, self.items, self.values)]

    def to_dense(self, fill: float = np.nan) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=float)
        out[self.users, self.items] = self.values
        return out

    def mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.users, self.items] = True
        return out


@dataclass
class SparseRatings(_SparseGrid):
    """Observed ``(user, item, score)`` triplets on an ``n_users x n_items`` grid."""

    scale: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        super().__post_init__()
        lo, hi = self.scale
        if lo > hi:
            raise DataError(f"invalid rating scale {self.scale}")
        bad = (self.values < lo) | (self.values > hi)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise OutOfScaleError(
                f"score {self.values[i]:g} at (user={self.users[i]}, item={self.items[i]}) outside scale [{lo:g}, {hi:g}]"
            )

    @property
    def scores(self) -> np.ndarray:
        return self.values

    @classmethod
    def from_entries(cls, n_users, n_items, entries: Sequence[tuple[int, int, float]], scale=(1.0, 5.0), **ids):
        arr = np.asarray(entries, dtype=float).reshape(-1, 3)
        return cls(n_users, n_items, arr[:, 0], arr[:, 1], arr[:, 2], scale=scale, **ids)

    @classmethod
    def from_dense(cls, R, scale=(1.0, 5.0)) -> "SparseRatings":
        """NaN cells of ``R`` are unobserved."""
        R = np.asarray(R, dtype=float)
        if R.ndim != 2:
            raise DataError("rating matrix must be 2-D")
        u, v = np.nonzero(~np.isnan(R))
        return cls(R.shape[0], R.shape[1], u, v, R[u, v], scale=scale)

    def subset(self, idx) -> "SparseRatings":
        idx = np.asarray(idx, dtype=np.intp)
        return SparseRatings(
            self.n_users, self.n_items, self.users[idx], self.items[idx], self.values[idx],
            user_ids=self.user_ids, item_ids=self.item_ids, scale=self.scale,
        )


@dataclass
class SparseLabels(_SparseGrid):
    """Observed like (1) / dislike (0) labels."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all((self.values == 0) | (self.values == 1)):
            raise DataError("labels must be 0 or 1")

    @property
    def labels(self) -> np.ndarray:
        return self.values

    @classmethod
    def from_entries(cls, n_users, n_items, entries, **ids):
        arr = np.asarray(entries, dtype=float).reshape(-1, 3)
        return cls(n_users, n_items, arr[:, 0], arr[:, 1], arr[:, 2], **ids)

    @classmethod
    def from_dense(cls, L) -> "SparseLabels":
        L = np.asarray(L, dtype=float)
        if L.ndim != 2:
            raise DataError("label matrix must be 2-D")
        u, v = np.nonzero(~np.isnan(L))
        return cls(L.shape[0], L.shape[1], u, v, L[u, v])

    @classmethod
    def empty(cls, n_users, n_items) -> "SparseLabels":
        return cls(n_users, n_items, [], [], [])


def check_ratings(X, scale=(1.0, 5.0)) -> SparseRatings:
    """Accept a :class:`SparseRatings` or a dense array with NaN for unknown cells."""
    if isinstance(X, SparseRatings):
        return X
    if hasattr(X, "toarray"):  # scipy sparse: stored cells are observed
        coo = X.tocoo()
        return SparseRatings(coo.shape[0], coo.shape[1], coo.row, coo.col, coo.data, scale=scale)
    return SparseRatings.from_dense(X, scale=scale)


def check_labels(Y, shape: tuple[int, int]) -> SparseLabels:
    if Y is None:
        return SparseLabels.empty(*shape)
    if not isinstance(Y, SparseLabels):
        Y = SparseLabels.from_dense(Y)
    if Y.shape != shape:
        raise DataError(f"labels have shape {Y.shape}, ratings {shape}")
    return Y
