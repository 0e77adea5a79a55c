"""Synthetic classification data and the Dirichlet heterogeneity splitter."""

from __future__ import annotations

import numpy as np


class SplitError(ValueError):
    pass


def make_blobs(n: int, dim: int = 32, classes: int = 10, seed: int = 0,
               mean_scale: float = 1.0, noise: float = 1.6):
    """Gaussian-blob classification task with class-dependent means."""
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, mean_scale, (classes, dim))
    y = rng.integers(0, classes, size=n)
    x = means[y] + rng.normal(0.0, noise, (n, dim))
    return x, y


def make_dataset(train_n: int = 20_000, test_n: int = 4_000, dim: int = 32,
                 classes: int = 10, seed: int = 0, mean_scale: float = 1.0,
                 noise: float = 1.6):
    """(x_train, y_train, x_test, y_test) from one draw of class means."""
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, mean_scale, (classes, dim))
    def draw(count):
        labels = rng.integers(0, classes, size=count)
        return means[labels] + rng.normal(0.0, noise, (count, dim)), labels
    x_tr, y_tr = draw(train_n)
    x_te, y_te = draw(test_n)
    return x_tr, y_tr, x_te, y_te


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` by proportions; ties to lowest index."""
    raw = proportions * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short > 0:
        remainders = raw - counts
        # stable sort so equal remainders favor the lowest client index
        order = np.argsort(-remainders, kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(labels, num_clients: int, alpha: float, seed: int,
                        max_attempts: int = 100):
    """Label-skewed partition: per-class client proportions ~ Dir(alpha).

    Returns a list of sorted index arrays, one per client, disjoint and
    covering.  Partitions leaving any client empty are redrawn (the guarantee
    every client trains on something); SplitError after max_attempts.
    """
    labels = np.asarray(labels)
    if num_clients < 1:
        raise SplitError("need at least one client")
    if labels.size < num_clients:
        raise SplitError(f"{labels.size} samples cannot cover {num_clients} clients")
    classes = np.unique(labels)

    for attempt in range(max_attempts):
        rng = np.random.default_rng((seed, attempt))
        shards = [[] for _ in range(num_clients)]
        for cls in classes:
            idx = np.flatnonzero(labels == cls)
            rng.shuffle(idx)
            proportions = rng.dirichlet(np.full(num_clients, alpha))
            counts = _largest_remainder(proportions, idx.size)
            pos = 0
            for client, count in enumerate(counts):
                shards[client].extend(idx[pos:pos + count])
                pos += count
        if all(len(s) > 0 for s in shards):
            return [np.sort(np.asarray(s, dtype=np.int64)) for s in shards]
    raise SplitError(
        f"could not give every one of {num_clients} clients a sample "
        f"in {max_attempts} attempts (alpha={alpha})")


def label_entropy(labels, indices) -> float:
    """Shannon entropy (nats) of the label histogram over a shard."""
    values, counts = np.unique(np.asarray(labels)[indices], return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))
