"""Monte Carlo harness: per-path random streams, mergeable moments, parallel runs.

Each path draws from a Philox stream keyed by (master seed, path index,
substream), so a path never depends on which worker ran it.  Paths are
grouped into fixed-size blocks; block accumulators are merged in block
order, which makes the reported moments bit-identical for any worker count.
"""
from __future__ import annotations

import enum
import math
import multiprocessing as mp
import os
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

DEFAULT_Z = 3.0
BLOCK_SIZE = 64


class Substream(enum.IntEnum):
    NOISE = 0
    AUXILIARY = 1


class StreamKey(NamedTuple):
    master_seed: int
    path_index: int
    substream: int = Substream.NOISE


def bit_generator(key: StreamKey, *extra: int) -> np.random.Philox:
    """Counter-based generator keyed by the full stream key plus optional sub-indices."""
    spawn = (int(key.path_index), int(key.substream)) + tuple(int(e) for e in extra)
    seq = np.random.SeedSequence(int(key.master_seed), spawn_key=spawn)
    return np.random.Philox(seq)


def stream(master_seed: int, path_index: int,
           substream: int = Substream.NOISE) -> np.random.Generator:
    return np.random.Generator(bit_generator(StreamKey(master_seed, path_index, substream)))


class PathFailure(RuntimeError):
    """One or more paths raised; ``failures`` maps path index to the message."""

    def __init__(self, failures: dict[int, str]):
        self.failures = dict(sorted(failures.items()))
        head = ", ".join(f"{k}: {v}" for k, v in list(self.failures.items())[:5])
        super().__init__(f"{len(self.failures)} path(s) failed ({head})")


class Accumulator:
    """Count, mean and centred second moment of vector samples, mergeable."""

    __slots__ = ("count", "mean", "m2")

    def __init__(self, width: int = 1):
        self.count = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def push(self, value) -> None:
        v = np.atleast_1d(np.asarray(value, dtype=float))
        self.count += 1
        delta = v - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (v - self.mean)

    def merge(self, other: "Accumulator") -> "Accumulator":
        out = Accumulator(len(self.mean))
        n = self.count + other.count
        if n == 0:
            return out
        if self.count == 0:
            out.count, out.mean, out.m2 = other.count, other.mean.copy(), other.m2.copy()
            return out
        if other.count == 0:
            out.count, out.mean, out.m2 = self.count, self.mean.copy(), self.m2.copy()
            return out
        delta = other.mean - self.mean
        out.count = n
        out.mean = self.mean + delta * (other.count / n)
        out.m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / n)
        return out

    def result(self, z: float = DEFAULT_Z) -> list["EstimatorResult"]:
        if self.count == 0:
            raise ValueError("no samples")
        var = self.m2 / (self.count - 1) if self.count > 1 else np.zeros_like(self.m2)
        se = np.sqrt(np.maximum(var, 0.0) / self.count)
        return [EstimatorResult(float(m), float(s), self.count, z) for m, s in zip(self.mean, se)]


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    stderr: float
    n: int
    z: float = DEFAULT_Z

    def __post_init__(self):
        if not self.stderr >= 0.0:
            raise ValueError("standard error must be nonnegative")

    @property
    def ci_half_width(self) -> float:
        return self.z * self.stderr

    def to_dict(self) -> dict:
        return {"estimate": self.mean, "stderr": self.stderr, "n": self.n,
                "ci_half_width": self.ci_half_width}


def agreement_test(a: EstimatorResult, b: EstimatorResult, z: float = DEFAULT_Z):
    """Two-sample z-score of the difference of means; passes when z <= ``z``."""
    spread = math.sqrt(a.stderr ** 2 + b.stderr ** 2)
    gap = abs(a.mean - b.mean)
    if spread == 0.0:
        score = 0.0 if gap == 0.0 else math.inf
    else:
        score = gap / spread
    return score <= z, score


def default_workers() -> int:
    raw = os.environ.get("DCS_WORKERS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def _run_block(args):
    task, start, stop, seed, width = args
    acc = Accumulator(width)
    failures = {}
    for index in range(start, stop):
        try:
            acc.push(task(index, seed))
        except Exception as exc:
            failures[index] = f"{type(exc).__name__}: {exc}"
    return acc, failures


def run_blocks(task: Callable[[int, int], Sequence[float] | float], budget: int,
               master_seed: int, workers: int | None = None, width: int = 1,
               block_size: int = BLOCK_SIZE) -> Accumulator:
    """Evaluate ``task(path_index, master_seed)`` for every index and merge moments."""
    if budget < 2:
        raise ValueError("budget must be at least 2")
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(task, s, min(s + block_size, budget), master_seed, width)
            for s in range(0, budget, block_size)]
    if workers == 1 or len(jobs) == 1:
        parts = [_run_block(job) for job in jobs]
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(workers) as pool:
            parts = pool.map(_run_block, jobs, chunksize=1)
    total = Accumulator(width)
    failures = {}
    for acc, failed in parts:
        total = total.merge(acc)
        failures.update(failed)
    if failures:
        raise PathFailure(failures)
    return total


def run_estimator(task, budget: int, workers: int | None = None, master_seed: int = 0,
                  z: float = DEFAULT_Z) -> EstimatorResult:
    """Mean and standard error of a scalar per-path functional."""
    return run_blocks(task, budget, master_seed, workers).result(z)[0]


def _map_chunk(args):
    task, start, stop, seed = args
    return [task(index, seed) for index in range(start, stop)]


def map_paths(task: Callable[[int, int], object], budget: int, master_seed: int,
              workers: int | None = None, block_size: int = BLOCK_SIZE) -> list:
    """Per-path results of ``task(path_index, master_seed)`` in index order."""
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(task, s, min(s + block_size, budget), master_seed)
            for s in range(0, budget, block_size)]
    if workers == 1 or len(jobs) <= 1:
        parts = [_map_chunk(job) for job in jobs]
    else:
        with mp.get_context("fork").Pool(workers) as pool:
            parts = pool.map(_map_chunk, jobs, chunksize=1)
    return [item for part in parts for item in part]
