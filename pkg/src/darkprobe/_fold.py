"""Mergeable integer-key counters used by the streaming aggregations."""

from __future__ import annotations

import numpy as np


class KeyCounts:
    """Multiset of ``uint64`` keys.

    Updates append per-batch ``(unique keys, counts)`` blocks; blocks are
    reduced lazily so each update costs one ``np.unique`` over the batch.
    ``merge`` concatenates blocks, which makes partial folds combinable in
    any order.
    """

    _COMPACT_EVERY = 32

    def __init__(self):
        self._keys: list[np.ndarray] = []
        self._counts: list[np.ndarray] = []

    def add(self, keys: np.ndarray, weights: np.ndarray | None = None) -> None:
        keys = np.asarray(keys, dtype=np.uint64)
        if not len(keys):
            return
        uniq, inverse = np.unique(keys, return_inverse=True)
        counts = np.bincount(inverse, weights=weights, minlength=len(uniq))
        self._keys.append(uniq)
        self._counts.append(counts.astype(np.int64))
        if len(self._keys) >= self._COMPACT_EVERY:
            self._compact()

    def merge(self, other: "KeyCounts") -> "KeyCounts":
        out = KeyCounts()
        out._keys = self._keys + other._keys
        out._counts = self._counts + other._counts
        out._compact()
        return out

    def _compact(self) -> None:
        if len(self._keys) <= 1:
            return
        keys = np.concatenate(self._keys)
        counts = np.concatenate(self._counts)
        uniq, inverse = np.unique(keys, return_inverse=True)
        self._keys = [uniq]
        self._counts = [np.bincount(inverse, weights=counts, minlength=len(uniq)).astype(np.int64)]

    def items(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted unique keys and their counts."""
        self._compact()
        if not self._keys:
            return np.empty(0, dtype=np.uint64), np.empty(0, dtype=np.int64)
        return self._keys[0], self._counts[0]

    def total(self) -> int:
        return int(sum(int(c.sum()) for c in self._counts))
