"""Cosine / CSLS scoring, mutual nearest neighbours and precision@k.

Everything here works on unit-normalized rows and processes query rows in
chunks, so a 15k x 15k induction never materializes the full score matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embio import SeedDictionary

CHUNK = 2048


def unit_rows(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(a, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ValueError(f"{name}: row {bad[0]} is all zeros")
    return a / norms[:, None]


def cosine_matrix(a, b):
    return unit_rows(a, "A") @ unit_rows(b, "B").T


def mean_topk_similarity(queries, pool, k, chunk=CHUNK):
    """For each (unit) query row, mean cosine to its ``k`` most similar pool rows."""
    if k > pool.shape[0]:
        raise ValueError(f"csls_k={k} exceeds pool size {pool.shape[0]}")
    out = np.empty(queries.shape[0])
    for s in range(0, queries.shape[0], chunk):
        sims = queries[s:s + chunk] @ pool.T
        if k < pool.shape[0]:
            sims = np.partition(sims, sims.shape[1] - k, axis=1)[:, -k:]
        out[s:s + chunk] = sims.mean(axis=1)
    return out


@dataclass
class SimilarityIndex:
    """Unit-normalized candidate rows plus their CSLS hubness penalties.

    ``r_target[j]`` is the mean cosine between candidate ``j`` and its
    ``csls_k`` closest rows of the query pool the index was built against.
    """

    target_codes: np.ndarray
    csls_k: int
    r_target: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, target_codes, query_pool, csls_k=10):
        tgt = unit_rows(target_codes, "target codes")
        pool = unit_rows(query_pool, "query pool")
        return cls(tgt, csls_k, mean_topk_similarity(tgt, pool, csls_k))

    def __len__(self):
        return self.target_codes.shape[0]


def _csls_chunks(query_codes, index: SimilarityIndex, chunk=CHUNK):
    q = unit_rows(query_codes, "query codes")
    r_src = mean_topk_similarity(q, index.target_codes, index.csls_k, chunk)
    for s in range(0, q.shape[0], chunk):
        sims = q[s:s + chunk] @ index.target_codes.T
        yield s, 2.0 * sims - r_src[s:s + chunk, None] - index.r_target[None, :]


def csls_scores(query_codes, index: SimilarityIndex) -> np.ndarray:
    """Full CSLS matrix ``2 cos(x, y) - r_src(x) - r_tgt(y)``."""
    return np.vstack([block for _, block in _csls_chunks(query_codes, index)])


@dataclass
class InducedPairs:
    pairs: np.ndarray   # (n, 2) source row, target row
    scores: np.ndarray  # CSLS, descending

    def __len__(self):
        return len(self.pairs)

    def top(self, n):
        return InducedPairs(self.pairs[:n], self.scores[:n])


def induce_dictionary(src_codes_mapped, tgt_codes, csls_k=10, chunk=CHUNK) -> InducedPairs:
    """Mutual CSLS nearest neighbours, sorted by descending score.

    CSLS penalties of each side are computed against the other side's pool,
    so the same score matrix ranks in both directions. Argmax ties go to the
    lowest index.
    """
    src = unit_rows(src_codes_mapped, "source codes")
    index = SimilarityIndex.build(tgt_codes, src, csls_k)
    n_src, n_tgt = src.shape[0], len(index)
    row_best = np.empty(n_src, dtype=np.int64)
    row_score = np.empty(n_src)
    col_best = np.zeros(n_tgt, dtype=np.int64)
    col_score = np.full(n_tgt, -np.inf)
    for s, block in _csls_chunks(src, index, chunk):
        row_best[s:s + len(block)] = block.argmax(axis=1)
        row_score[s:s + len(block)] = block.max(axis=1)
        cb = block.argmax(axis=0)
        cs = block[cb, np.arange(n_tgt)]
        better = cs > col_score
        col_best[better] = cb[better] + s
        col_score[better] = cs[better]
    src_ids = np.arange(n_src)
    mutual = col_best[row_best] == src_ids
    i = src_ids[mutual]
    j = row_best[mutual]
    scores = row_score[mutual]
    order = np.lexsort((i, -scores))
    return InducedPairs(np.stack([i[order], j[order]], axis=1), scores[order])


def top_k_indices(scores, k):
    """Column indices of the ``k`` best scores per row; ties -> lower index."""
    # argpartition is not stable at the k-th boundary, so sort outright
    return np.argsort(-scores, axis=1, kind="stable")[:, :min(k, scores.shape[1])]


@dataclass
class EvaluationReport:
    p_at: dict
    evaluated_count: int
    oov_count: int
    predictions: dict = field(repr=False)  # source row -> ranked target rows

    def to_json(self, src_words=None, tgt_words=None):
        preds = self.predictions
        if src_words is not None and tgt_words is not None:
            preds = {src_words[s]: [tgt_words[t] for t in ranked] for s, ranked in preds.items()}
        else:
            preds = {str(s): list(map(int, r)) for s, r in preds.items()}
        return {
            "p_at": {str(k): v for k, v in self.p_at.items()},
            "evaluated_count": self.evaluated_count,
            "oov_count": self.oov_count,
            "predictions": preds,
        }


def evaluate(model_or_map, src, tgt, gold: SeedDictionary, ks=(1, 5, 10), csls_k=10,
             method="csls") -> EvaluationReport:
    """Precision@k for a trained model (latent space) or an embedding-space map."""
    if hasattr(model_or_map, "map_source"):
        queries = model_or_map.map_source(src.vectors)
        targets = model_or_map.encode_target(tgt.vectors)
    else:
        queries = model_or_map(src.vectors)
        targets = tgt.vectors
    return precision_at_k(queries, targets, gold, ks, csls_k, method=method)


def precision_at_k(query_codes, target_codes, gold: SeedDictionary, ks=(1, 5, 10),
                   csls_k=10, query_pool=None, method="csls") -> EvaluationReport:
    """Precision@k of CSLS (or cosine) retrieval over all target rows.

    ``query_codes`` holds one row per source word (row ids as in ``gold``);
    the r_tgt penalty is computed against ``query_pool`` (defaults to all
    query rows). A hit at k is any gold target among the top k.
    """
    groups = gold.grouped()
    if not groups:
        raise ValueError("gold dictionary is empty")
    src_rows = np.fromiter(groups, dtype=np.int64)
    kmax = max(ks)
    queries = np.asarray(query_codes)[src_rows]
    if method == "csls":
        pool = query_codes if query_pool is None else query_pool
        index = SimilarityIndex.build(target_codes, pool, csls_k)
        blocks = _csls_chunks(queries, index)
    elif method == "cosine":
        tgt = unit_rows(target_codes)
        q = unit_rows(queries)
        blocks = ((s, q[s:s + CHUNK] @ tgt.T) for s in range(0, len(q), CHUNK))
    else:
        raise ValueError(f"unknown retrieval method {method!r}")
    ranked = np.empty((len(src_rows), kmax), dtype=np.int64)
    for s, block in blocks:
        ranked[s:s + len(block)] = top_k_indices(block, kmax)
    hits = {k: 0 for k in ks}
    predictions = {}
    for row, s in enumerate(src_rows.tolist()):
        gold_t = set(groups[s])
        predictions[s] = ranked[row].tolist()
        for k in ks:
            if gold_t.intersection(predictions[s][:k]):
                hits[k] += 1
    n = len(src_rows)
    return EvaluationReport({k: hits[k] / n for k in sorted(ks)}, n, len(gold.oov_sources),
                            predictions)
