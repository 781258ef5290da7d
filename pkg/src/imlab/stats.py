"""Streaming statistics: running moments, batch means, reservoir sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RunningStats:
    """Welford accumulator over a stream of equally shaped arrays."""

    count: int = 0
    mean: np.ndarray | float = 0.0
    m2: np.ndarray | float = 0.0

    def push(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    def extend(self, xs) -> None:
        for x in xs:
            self.push(x)

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else np.zeros_like(np.asarray(self.mean))

    def merge(self, other: "RunningStats") -> "RunningStats":
        """Combine two accumulators (parallel variance formula)."""
        if other.count == 0:
            return RunningStats(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningStats(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = np.asarray(other.mean) - np.asarray(self.mean)
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / n
        return RunningStats(n, mean, m2)


@dataclass
class BatchEstimate:
    mean: float
    stderr: float
    n_batches: int


def batch_means(samples: np.ndarray, n_batches: int = 30) -> BatchEstimate:
    """Mean and batch-means standard error of a ``(time, paths)`` array.

    Each path's series is cut into ``n_batches`` contiguous batches (a ragged
    tail is dropped); batch means from all paths are pooled.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T = x.shape[0]
    if T < n_batches:
        raise ValueError(f"need at least {n_batches} samples per path, got {T}")
    L = T // n_batches
    bm = x[: L * n_batches].reshape(n_batches, L, -1).mean(axis=1).ravel()
    return pooled_estimate(bm)


def pooled_estimate(batch_values: np.ndarray) -> BatchEstimate:
    bm = np.asarray(batch_values, dtype=float).ravel()
    n = bm.size
    se = float(np.std(bm, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return BatchEstimate(float(np.mean(bm)), se, n)


@dataclass
class Reservoir:
    """Uniform sample of fixed capacity from a stream (Algorithm R)."""

    capacity: int
    rng: np.random.Generator
    items: list = field(default_factory=list)
    seen: int = 0

    def offer(self, item) -> None:
        if self.capacity <= 0:
            self.seen += 1
            return
        if self.seen < self.capacity:
            self.items.append(item)
        else:
            j = int(self.rng.integers(0, self.seen + 1))
            if j < self.capacity:
                self.items[j] = item
        self.seen += 1

    def offer_many(self, items) -> None:
        for it in items:
            self.offer(it)
