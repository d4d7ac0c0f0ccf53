"""Mergeable ensemble statistics and the deterministic block runner.

Paths are processed in fixed chunks of ``CHUNK`` consecutive indices.  Chunk
results are merged by a pairwise tree in chunk order, so the reduction is
identical for any number of workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

CHUNK = 4096
WORKERS_ENV = "ENERGY_HJM_WORKERS"


@dataclass
class Moments:
    """Count, mean, sum of squared deviations, min and max of one quantity."""

    n: int
    mean: float
    m2: float
    lo: float
    hi: float

    @classmethod
    def of(cls, samples):
        x = np.asarray(samples, dtype=float).reshape(-1)
        if x.size == 0:
            return cls(0, 0.0, 0.0, math.inf, -math.inf)
        mean = float(np.mean(x))
        return cls(int(x.size), mean, float(np.sum((x - mean) ** 2)), float(x.min()), float(x.max()))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        return Moments(n, mean, m2, min(self.lo, other.lo), max(self.hi, other.hi))

    @property
    def variance(self):
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def se(self):
        return math.sqrt(self.variance / self.n) if self.n else math.nan


@dataclass
class EnsembleStats:
    """Named :class:`Moments`, keyed by ``(quantity, contract)``, in insertion order."""

    entries: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: dict):
        return cls({key: Moments.of(val) for key, val in samples.items()})

    def add(self, key, samples):
        m = Moments.of(samples)
        self.entries[key] = self.entries[key].merge(m) if key in self.entries else m

    def record_min(self, key, value):
        self.add(key, [value])

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        out = dict(self.entries)
        for key, m in other.entries.items():
            out[key] = out[key].merge(m) if key in out else m
        return EnsembleStats(out)

    def __getitem__(self, key):
        return self.entries[key]

    def __contains__(self, key):
        return key in self.entries

    def keys(self):
        return list(self.entries)

    def mean(self, key):
        return self.entries[key].mean

    def se(self, key):
        return self.entries[key].se

    def min(self, key):
        return self.entries[key].lo

    def max(self, key):
        return self.entries[key].hi

    def count(self, key):
        return self.entries[key].n

    def rows(self):
        """``(quantity, contract, mean, se, n)`` tuples in insertion order."""
        return [(q, c, m.mean, m.se, m.n) for (q, c), m in self.entries.items()]


def tree_merge(parts):
    """Pairwise reduction in list order."""
    parts = list(parts)
    if not parts:
        return EnsembleStats()
    while len(parts) > 1:
        nxt = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else 1
    return max(1, int(workers))


def chunks(n_paths, chunk=CHUNK):
    return [(s, min(chunk, n_paths - s)) for s in range(0, n_paths, chunk)]


def map_blocks(n_paths, fn, workers=None, chunk=CHUNK, reduce=True):
    """Apply ``fn(start, count)`` to every chunk and tree-merge the results."""
    jobs = chunks(n_paths, chunk)
    workers = resolve_workers(workers)
    if workers == 1 or len(jobs) == 1:
        results = [fn(s, c) for s, c in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: fn(*job), jobs))
    return tree_merge(results) if reduce else results
