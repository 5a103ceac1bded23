"""Synthetic bilingual tasks with a known ground-truth translation.

Source words are Gaussian vectors; the target language is a transformation
of the source (a rotation, or an invertible tanh warp) whose rows are then
shuffled, so the gold translation of source row ``i`` is target row
``perm[i]``. Both spaces go through the usual normalization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embio import EmbeddingSpace, SeedDictionary, normalize


@dataclass
class SyntheticTask:
    src: EmbeddingSpace
    tgt: EmbeddingSpace
    seed: SeedDictionary
    test: SeedDictionary
    gold: SeedDictionary  # every word


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def tanh_warp(x, rng, gain=3.0):
    """Two-layer invertible warp ``R2 tanh(gain * R1 x)`` with orthogonal R1, R2."""
    r1 = random_orthogonal(x.shape[1], rng)
    r2 = random_orthogonal(x.shape[1], rng)
    return np.tanh(gain * x @ r1.T) @ r2.T


def make_task(kind="orthogonal", n_words=2000, dim=50, noise=0.01, n_seed=500, n_test=500,
              seed=0, warp_gain=3.0) -> SyntheticTask:
    rng = np.random.default_rng(seed)
    x = normalize(EmbeddingSpace([f"s{i}" for i in range(n_words)],
                                 rng.normal(size=(n_words, dim)))).vectors
    if kind == "orthogonal":
        y = x @ random_orthogonal(dim, rng).T
    elif kind == "warp":
        y = tanh_warp(x, rng, warp_gain)
    else:
        raise ValueError(f"unknown task kind {kind!r}")
    if noise:
        y = y + rng.normal(scale=noise, size=y.shape)
    perm = rng.permutation(n_words)
    tgt_vectors = np.empty_like(y)
    tgt_vectors[perm] = y
    tgt = normalize(EmbeddingSpace([f"t{i}" for i in range(n_words)], tgt_vectors))
    src = EmbeddingSpace([f"s{i}" for i in range(n_words)], x)
    order = rng.permutation(n_words)
    seed_rows = np.sort(order[:n_seed])
    test_rows = np.sort(order[n_seed:n_seed + n_test])

    def pairs(rows):
        return SeedDictionary(np.stack([rows, perm[rows]], axis=1), "unique_1to1")

    return SyntheticTask(src, tgt, pairs(seed_rows), pairs(test_rows),
                         pairs(np.arange(n_words)))


def write_task(task: SyntheticTask, directory):
    """Write the task as embedding/dictionary text files (for the CLI)."""
    from pathlib import Path

    from .embio import save_dictionary, save_embeddings

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_embeddings(task.src, d / "src.vec")
    save_embeddings(task.tgt, d / "tgt.vec")
    save_dictionary(d / "seed.txt", task.seed.pairs, task.src, task.tgt)
    save_dictionary(d / "test.txt", task.test.pairs, task.src, task.tgt)
    return d
