"""Fenwick (binary indexed) tree for dynamic weighted index sampling.

The event engine proposes collision partners with probability proportional
to particle speed; speeds change at every accepted collision, so the
structure must support O(log N) weight updates and O(log N) sampling by
prefix-sum descent.
"""

from __future__ import annotations

import numpy as np


class FenwickSampler:
    """Nonnegative weights w_0..w_{n-1} with prefix-sum sampling."""

    __slots__ = ("n", "tree", "weights")

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1:
            raise ValueError("weights must be one-dimensional")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        self.n = len(w)
        self.weights = w.copy()
        # tree[i] holds the sum of w over the block ending at index i (1-based)
        tree = np.zeros(self.n + 1)
        tree[1:] = w
        for i in range(1, self.n + 1):
            j = i + (i & -i)
            if j <= self.n:
                tree[j] += tree[i]
        self.tree = tree

    @property
    def total(self) -> float:
        i = self.n
        s = 0.0
        while i > 0:
            s += self.tree[i]
            i -= i & -i
        return s

    def get(self, i: int) -> float:
        return self.weights[i]

    def update(self, i: int, w: float) -> None:
        if w < 0.0 or not np.isfinite(w):
            raise ValueError("weights must be finite and nonnegative")
        delta = w - self.weights[i]
        self.weights[i] = w
        j = i + 1
        tree = self.tree
        n = self.n
        while j <= n:
            tree[j] += delta
            j += j & -j

    def sample(self, u: float) -> int:
        """Index i with probability w_i / total; u is uniform on [0, 1)."""
        target = u * self.total
        if self.total <= 0.0:
            raise ValueError("cannot sample from an all-zero weight vector")
        idx = 0
        bitmask = 1 << (self.n.bit_length())
        tree = self.tree
        n = self.n
        while bitmask:
            nxt = idx + bitmask
            if nxt <= n and tree[nxt] <= target:
                idx = nxt
                target -= tree[nxt]
            bitmask >>= 1
        # idx is the count of full prefix blocks passed; clamp for the
        # float edge case target == total
        return min(idx, n - 1)
