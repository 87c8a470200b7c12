"""Epoch-by-epoch batch ordering policies.

The boundary between two epochs is where sample re-exposure happens: under
fresh shuffling the expected number of samples shared by the last batch of
one epoch and the first batch of the next is B^2/N. The policies here span
the interesting range: fresh shuffles, a frozen order, an order that exactly
reverses every epoch (maximal boundary re-exposure), and i.i.d. sampling
with replacement (no epoch structure at all).
"""

from __future__ import annotations

import math

import numpy as np

from .problem import Batch

__all__ = [
    "EpochSchedule",
    "POLICIES",
    "batches_per_epoch",
    "expected_overlap",
    "boundary_overlap_mc",
]

POLICIES = ("shuffle", "fixed", "reverse", "replacement")


def batches_per_epoch(num_samples: int, batch_size: int) -> int:
    return math.ceil(num_samples / batch_size)


class EpochSchedule:
    """Yields batches for consecutive epochs under one ordering policy.

    Every epoch's batch list is materialized when the epoch begins, so the
    batch that will sit at any position is known at the epoch boundary (the
    trainer uses this to freeze its tracked batch). Permutation policies
    slice one epoch order into consecutive batches, with a short final batch
    when batch_size does not divide num_samples; the replacement policy
    draws ceil(N/B) independent uniform batches per nominal epoch.
    """

    def __init__(
        self,
        policy: str,
        num_samples: int,
        batch_size: int,
        seed: int,
        initial_shuffle: bool = False,
    ) -> None:
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}, expected one of {POLICIES}")
        if num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {num_samples}")
        if not 1 <= batch_size <= num_samples:
            raise ValueError(
                f"batch_size must lie in [1, {num_samples}], got {batch_size}"
            )
        self.policy = policy
        self.num_samples = num_samples
        self.batch_size = batch_size
        self.seed = seed
        self.initial_shuffle = initial_shuffle
        self.rng = np.random.default_rng(seed)
        self.epoch = 0
        self._order: np.ndarray | None = None
        self._batches: list[Batch] = []
        self._cursor = 0

    def _next_order(self) -> np.ndarray:
        n = self.num_samples
        if self.policy == "shuffle":
            return self.rng.permutation(n)
        if self.policy == "fixed":
            if self._order is None:
                if self.initial_shuffle:
                    return self.rng.permutation(n)
                return np.arange(n)
            return self._order
        if self.policy == "reverse":
            if self._order is None:
                if self.initial_shuffle:
                    return self.rng.permutation(n)
                return np.arange(n)
            return self._order[::-1].copy()
        raise AssertionError(self.policy)

    def _begin_epoch(self) -> None:
        self.epoch += 1
        n, b = self.num_samples, self.batch_size
        count = batches_per_epoch(n, b)
        if self.policy == "replacement":
            draws = self.rng.integers(0, n, size=count * b)
            self._batches = [
                Batch(indices=draws[k * b : (k + 1) * b]) for k in range(count)
            ]
        else:
            self._order = self._next_order()
            self._batches = [
                Batch(indices=self._order[k * b : min((k + 1) * b, n)])
                for k in range(count)
            ]
        self._cursor = 0

    def _exhausted(self) -> bool:
        return self._cursor >= len(self._batches)

    def next_batch(self) -> Batch:
        """The next batch, starting a new epoch whenever the last ran out."""
        if self._exhausted():
            self._begin_epoch()
        batch = self._batches[self._cursor]
        self._cursor += 1
        return batch

    def peek_epoch_batches(self) -> list[Batch]:
        """The current epoch's batches, starting a new epoch if the last ran out."""
        if self._exhausted():
            self._begin_epoch()
        return list(self._batches)

    def current_order(self) -> np.ndarray:
        """The realized sample order of the current epoch (permutation policies)."""
        if self.policy == "replacement":
            raise ValueError("replacement sampling has no epoch order")
        if self._order is None:
            self._begin_epoch()
        return self._order.copy()


def expected_overlap(num_samples: int, batch_size: int) -> float:
    """Expected shared-sample count between boundary batches, B^2/N.

    The last batch of one fresh permutation and the first batch of the next
    are independent uniform size-B subsets, so each of the B slots of one
    falls in the other with probability B/N.
    """
    if num_samples < 1:
        raise ValueError(f"num_samples must be >= 1, got {num_samples}")
    if not 1 <= batch_size <= num_samples:
        raise ValueError(
            f"batch_size must lie in [1, {num_samples}], got {batch_size}"
        )
    return batch_size * batch_size / num_samples


def boundary_overlap_mc(
    num_samples: int, batch_size: int, trials: int, seed: int = 0
) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the boundary-batch overlap.

    Each trial draws two independent permutations and counts the samples
    shared by the tail batch of the first and the head batch of the second.
    Runs in chunks so large trial counts stay in bounded memory.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n, b = num_samples, batch_size
    if not 1 <= b <= n:
        raise ValueError(f"batch_size must lie in [1, {n}], got {b}")
    rng = np.random.default_rng(seed)
    chunk = max(1, min(trials, 2_000_000 // max(n, 1)))
    counts = np.empty(trials)
    base = np.arange(n, dtype=np.int32)
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        tails = rng.permuted(np.broadcast_to(base, (k, n)), axis=1)[:, -b:]
        heads = rng.permuted(np.broadcast_to(base, (k, n)), axis=1)[:, :b]
        offset = (np.arange(k, dtype=np.int64) * n)[:, None]
        shared = np.isin(tails + offset, heads + offset)
        counts[done : done + k] = shared.sum(axis=1)
        done += k
    mean = float(np.mean(counts))
    se = float(np.std(counts, ddof=1) / np.sqrt(trials)) if trials > 1 else float("inf")
    return mean, se
