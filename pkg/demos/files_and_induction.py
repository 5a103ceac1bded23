"""
From text files to an induced dictionary
========================================

Write a small task to disk in the usual word2vec text layout, read it
back, fit the orthogonal map and harvest mutual nearest neighbours.
"""

import tempfile
from pathlib import Path

from lnmap import load_dictionary, load_embeddings, normalize
from lnmap.baseline import procrustes_fit
from lnmap.embio import save_dictionary
from lnmap.retrieval import induce_dictionary, precision_at_k
from lnmap.synthetic import make_task, write_task

workdir = Path(tempfile.mkdtemp())
write_task(make_task("warp", n_words=1500, dim=6, warp_gain=3.0, seed=1), workdir)
print(sorted(p.name for p in workdir.iterdir()))
print((workdir / "src.vec").read_text().splitlines()[0], "<- header: words and dimension")

src = normalize(load_embeddings(workdir / "src.vec"))
tgt = normalize(load_embeddings(workdir / "tgt.vec"))
seed = load_dictionary(workdir / "seed.txt", src, tgt)
test = load_dictionary(workdir / "test.txt", src, tgt)

W = procrustes_fit(src.vectors[seed.src], tgt.vectors[seed.tgt])

# the two retrieval rules side by side on the held-out pairs
for method in ("cosine", "csls"):
    print(method, precision_at_k(W(src.vectors), tgt.vectors, test, method=method).p_at)

induced = induce_dictionary(W(src.vectors), tgt.vectors, csls_k=10)
save_dictionary(workdir / "induced.txt", induced.pairs, src, tgt, induced.scores)
print(len(induced), "mutual pairs; best five:")
print("".join((workdir / "induced.txt").read_text().splitlines(keepends=True)[:5]), end="")
