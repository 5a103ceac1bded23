"""Embedding and dictionary files, plus the renorm/center/renorm pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

NORM_EPS = 1e-12


class EmbeddingFormatError(ValueError):
    pass


class DictionaryError(ValueError):
    pass


class ZeroNormError(ValueError):
    pass


@dataclass
class EmbeddingSpace:
    words: list[str]
    vectors: np.ndarray
    duplicates_skipped: int = 0
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise ValueError(
                f"{len(self.words)} words but vector matrix has shape {self.vectors.shape}"
            )
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("words must be unique")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def truncate(self, n: int) -> "EmbeddingSpace":
        return EmbeddingSpace(self.words[:n], self.vectors[:n].copy())


@dataclass
class SeedDictionary:
    """Aligned (source row, target row) pairs.

    ``skipped`` counts input lines dropped as out-of-vocabulary and
    ``oov_sources`` lists source tokens that lost every one of their pairs.
    """

    pairs: np.ndarray
    kind: str = "all_1toMany"
    skipped: int = 0
    oov_sources: tuple = ()

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return len(self.pairs)

    @property
    def src(self):
        return self.pairs[:, 0]

    @property
    def tgt(self):
        return self.pairs[:, 1]

    def grouped(self) -> dict[int, list[int]]:
        """Source row -> gold target rows, in first-seen order."""
        out: dict[int, list[int]] = {}
        for s, t in self.pairs.tolist():
            out.setdefault(s, []).append(t)
        return out

    def as_set(self) -> set:
        return set(map(tuple, self.pairs.tolist()))


def dedup_pairs(pairs) -> np.ndarray:
    """Drop repeated pairs, keeping first occurrences in order."""
    seen = set()
    out = []
    for p in map(tuple, np.asarray(pairs, dtype=np.int64).reshape(-1, 2).tolist()):
        if p not in seen:
            seen.add(p)
            out.append(p)
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def load_embeddings(path, max_vocab: int | None = None) -> EmbeddingSpace:
    """Read a text embedding file with a ``<count> <dim>`` header.

    Reading stops after ``max_vocab`` distinct tokens. Repeated tokens keep
    their first (most frequent) vector.
    """
    words: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dups = 0
    with open(path, encoding="utf-8", errors="surrogateescape") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise EmbeddingFormatError(f"{path}:1: malformed header {' '.join(header)!r}")
        count, dim = int(header[0]), int(header[1])
        if dim < 1:
            raise EmbeddingFormatError(f"{path}:1: dimension must be positive")
        limit = count if max_vocab is None else min(count, max_vocab)
        for lineno, line in enumerate(fh, start=2):
            if len(words) >= limit:
                break
            parts = line.rstrip().split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim + 1} fields, found {len(parts)}"
                )
            token = parts[0]
            if token in seen:
                dups += 1
                continue
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from None
            seen.add(token)
            words.append(token)
            rows.append(vec)
    if dups:
        log.warning("%s: skipped %d duplicate tokens", path, dups)
    vectors = np.vstack(rows) if rows else np.zeros((0, dim))
    space = EmbeddingSpace(words, vectors)
    space.duplicates_skipped = dups
    return space


def save_embeddings(space: EmbeddingSpace, path):
    with open(path, "w", encoding="utf-8", errors="surrogateescape") as fh:
        fh.write(f"{len(space)} {space.dim}\n")
        for word, vec in zip(space.words, space.vectors):
            fh.write(word + " " + " ".join(f"{v:.6g}" for v in vec) + "\n")


def renorm(vectors, words=None, step="renorm") -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        token = words[bad[0]] if words is not None else bad[0]
        raise ZeroNormError(f"{step}: row {bad[0]} ({token!r}) has zero norm")
    return vectors / norms[:, None]


def center(vectors) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    return vectors - vectors.mean(axis=0)


def normalize_steps(space: EmbeddingSpace) -> dict[str, np.ndarray]:
    """Run the pipeline, returning every intermediate matrix by step name."""
    first = renorm(space.vectors, space.words)
    centered = center(first)
    final = renorm(centered, space.words, "renorm after center")
    return {"renorm": first, "center": centered, "renorm2": final}


def normalize(space: EmbeddingSpace) -> EmbeddingSpace:
    """Unit-length rows, mean-center columns, unit-length rows again."""
    return EmbeddingSpace(list(space.words), normalize_steps(space)["renorm2"])


def load_dictionary(path, src: EmbeddingSpace, tgt: EmbeddingSpace) -> SeedDictionary:
    pairs = []
    skipped = 0
    sources: dict[str, None] = {}
    kept_sources: set[str] = set()
    with open(path, encoding="utf-8", errors="surrogateescape") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise DictionaryError(f"{path}:{lineno}: expected 'src tgt'")
            s, t = parts[0], parts[1]
            sources.setdefault(s)
            if s in src.index and t in tgt.index:
                pairs.append((src.index[s], tgt.index[t]))
                kept_sources.add(s)
            else:
                skipped += 1
    if not pairs:
        raise DictionaryError(f"{path}: no in-vocabulary pairs")
    oov = tuple(s for s in sources if s not in kept_sources)
    d = SeedDictionary(dedup_pairs(pairs), "all_1toMany", skipped, oov)
    if skipped:
        log.info("%s: skipped %d out-of-vocabulary lines", path, skipped)
    return d


def make_unique(d: SeedDictionary, n: int) -> SeedDictionary:
    """First target for each of the first ``n`` distinct source words."""
    first: dict[int, int] = {}
    for s, t in d.pairs.tolist():
        if s not in first:
            first[s] = t
    if n > len(first):
        raise DictionaryError(f"requested {n} sources but only {len(first)} are distinct")
    kept = list(first.items())[:n]
    return SeedDictionary(np.array(kept, dtype=np.int64), "unique_1to1")


def save_dictionary(path, pairs, src: EmbeddingSpace, tgt: EmbeddingSpace, scores=None):
    """Write ``src tgt`` lines, with an optional score column (6 decimals)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    with open(path, "w", encoding="utf-8", errors="surrogateescape") as fh:
        for k, (s, t) in enumerate(pairs.tolist()):
            line = f"{src.words[s]} {tgt.words[t]}"
            if scores is not None:
                line += f" {scores[k]:.6f}"
            fh.write(line + "\n")
