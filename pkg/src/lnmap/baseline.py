"""Orthogonal Procrustes alignment and its self-learning loop."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .embio import EmbeddingSpace, SeedDictionary, save_dictionary
from .retrieval import induce_dictionary, precision_at_k
from .tensor import load_params, save_params

log = logging.getLogger(__name__)


@dataclass
class OrthogonalMap:
    W: np.ndarray

    def __call__(self, x):
        return np.asarray(x) @ self.W.T

    def save(self, path):
        save_params(path, [("procrustes.W", self.W)])

    @classmethod
    def load(cls, path):
        return cls(load_params(path)["procrustes.W"])


def procrustes_fit(X, Y) -> OrthogonalMap:
    """Orthogonal ``W`` minimizing ``||X W^T - Y||_F`` for row-aligned X, Y."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Y.shape}")
    k, d = X.shape
    if k < d:
        warnings.warn(f"only {k} pairs for dimension {d}; solution is not unique", stacklevel=2)
    try:
        u, _, vt = np.linalg.svd(Y.T @ X)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"SVD failed: {exc}") from exc
    return OrthogonalMap(u @ vt)


def procrustes_loop(src: EmbeddingSpace, tgt: EmbeddingSpace, seed_dict: SeedDictionary, cfg,
                    out_dir=None):
    """Self-learning with an orthogonal map in the original embedding space.

    Same schedule and convergence test as the neural trainer; the training
    step is a single Procrustes refit on the current dictionary.
    """
    from .trainer import RunDirectory, TrainingState, grow_dictionary

    run = RunDirectory(out_dir) if out_dir is not None else None
    if run:
        run.write_config(cfg)
        run.reset_history()
    state = TrainingState(seed_dict, SeedDictionary(seed_dict.pairs.copy()))
    x, y = src.vectors, tgt.vectors
    pool = cfg.induction_pool
    W = None
    while not state.converged and state.outer_iter < cfg.max_outer_iters:
        t0 = time.perf_counter()
        state.outer_iter += 1
        it = state.outer_iter
        pairs = state.dict_current.pairs
        W = procrustes_fit(x[pairs[:, 0]], y[pairs[:, 1]])
        induced = induce_dictionary(W(x[:pool]), y[:pool], cfg.csls_k)
        dict_next, selected = grow_dictionary(state.dict_orig, induced, it, cfg.increment)
        avg_sim = float(np.mean(selected.scores)) if len(selected) else float("nan")
        delta = abs(avg_sim - state.last_avg_similarity)
        # an unchanged dictionary means every later refit is identical
        unchanged = np.array_equal(dict_next.pairs, pairs)
        state.converged = bool((np.isfinite(delta) and delta < cfg.convergence_eps) or unchanged)
        state.last_avg_similarity = avg_sim
        state.dict_current = dict_next
        record = {
            "iter": it,
            "avg_sim": avg_sim if np.isfinite(avg_sim) else None,
            "induced_available": len(induced),
            "induced_selected": len(selected),
            "dict_size": len(dict_next),
            "updates": {"procrustes": 1},
            "converged": state.converged,
        }
        state.loss_history.append(record)
        if run:
            W.save(run.path / f"model_iter_{it}.bin")
            save_dictionary(run.path / f"dict_iter_{it}.txt", selected.pairs, src, tgt,
                            selected.scores)
            run.append_history(record, time.perf_counter() - t0)
    if W is None:
        pairs = seed_dict.pairs
        W = procrustes_fit(x[pairs[:, 0]], y[pairs[:, 1]])
    return W, state


def evaluate_orthogonal(W: OrthogonalMap, src: EmbeddingSpace, tgt: EmbeddingSpace,
                        gold: SeedDictionary, ks=(1, 5, 10), csls_k=10, method="csls"):
    return precision_at_k(W(src.vectors), tgt.vectors, gold, ks, csls_k, method=method)
