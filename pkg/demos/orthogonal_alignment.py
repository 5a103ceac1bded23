"""
Aligning two rotated embedding spaces
=====================================

The target "language" is a noisy rotation of the source, so the orthogonal
baseline is already the right model. The latent mapper should match it.
"""

from lnmap.baseline import evaluate_orthogonal, procrustes_loop
from lnmap.retrieval import evaluate
from lnmap.synthetic import make_task
from lnmap.trainer import TrainingConfig, train

# 2000 words in 50 dimensions, 500 seed pairs and 500 held-out test pairs
task = make_task("orthogonal", n_words=2000, dim=50, noise=0.01, seed=0)
print(len(task.src.words), "words,", len(task.seed), "seed pairs,", len(task.test), "test pairs")

# small latent space and a large learning rate keep this under a minute
cfg = TrainingConfig(lr=0.1, ae_epochs=20, map_epochs_per_iter=10, latent_dim=64,
                     hidden_dim=64, mapper_hidden=64, increment=2000, induction_pool=2000,
                     max_outer_iters=10)

W, _ = procrustes_loop(task.src, task.tgt, task.seed, cfg)
print("Procrustes P@k", evaluate_orthogonal(W, task.src, task.tgt, task.test).p_at)

model, state, curves = train(task.src, task.tgt, task.seed, cfg)
print("autoencoder loss", round(curves["src"][0], 4), "->", round(curves["src"][-1], 4))
for rec in state.loss_history:
    print("iter", rec["iter"], "dict", rec["dict_size"], "map loss", round(rec["l_map"], 5))
print("LNMap P@k", evaluate(model, task.src, task.tgt, task.test).p_at)
