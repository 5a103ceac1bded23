import numpy as np
import pytest

from lnmap.model import (
    Dims,
    LatentMapModel,
    ae_pretrain_loss,
    backtranslation_loss,
    mapping_loss,
    reconstruction_loss,
)

# parameter groups each training step may touch
UPDATE_SETS = {
    "map": {"mapper_fwd", "ae_src.enc"},
    "bt": {"mapper_fwd", "mapper_bwd"},
    "rec": {"mapper_fwd", "mapper_bwd", "ae_src.enc", "ae_src.dec", "ae_tgt.enc", "ae_tgt.dec"},
}

LOSSES = {"map": mapping_loss, "bt": backtranslation_loss, "rec": reconstruction_loss}


def small_model(seed=0, input_dim=5, hidden=6, latent=4, mapper_hidden=5, **kw):
    return LatentMapModel(Dims(input_dim, hidden, latent, mapper_hidden),
                          rng=np.random.default_rng(seed), **kw)


def unit_batch(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def loss_closure(model, kind, x, y):
    if kind == "ae_src":
        return lambda: ae_pretrain_loss(model.ae_src, x)
    if kind == "ae_tgt":
        return lambda: ae_pretrain_loss(model.ae_tgt, y)
    fn = LOSSES[kind]
    return lambda: fn(model, x, y)


def fd_params(model, kind):
    """Parameters a loss differentiates: its update set, trainable only."""
    groups = model.groups()
    if kind == "ae_src":
        names = {"ae_src.enc", "ae_src.dec"}
    elif kind == "ae_tgt":
        names = {"ae_tgt.enc", "ae_tgt.dec"}
    else:
        names = UPDATE_SETS[kind]
    return [p for g in sorted(names) for p in groups[g] if p.trainable]


def nonzero_groups(model):
    return {name for name, ps in model.groups().items() if any(np.any(p.grad != 0) for p in ps)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_csls(src, tgt, k):
    """Scalar-loop CSLS matrix; shares no code with the library."""
    def unit(v):
        n = sum(a * a for a in v) ** 0.5
        return [a / n for a in v]

    s = [unit(list(r)) for r in src]
    t = [unit(list(r)) for r in tgt]
    cos = [[sum(a * b for a, b in zip(u, v)) for v in t] for u in s]
    r_src = [sum(sorted(row, reverse=True)[:k]) / k for row in cos]
    r_tgt = [sum(sorted((cos[i][j] for i in range(len(s))), reverse=True)[:k]) / k
             for j in range(len(t))]
    return np.array([[2 * cos[i][j] - r_src[i] - r_tgt[j] for j in range(len(t))]
                     for i in range(len(s))])


def brute_mutual_nn(scores):
    """Mutual best pairs by double argmax (first index wins ties)."""
    pairs = []
    for i in range(scores.shape[0]):
        j = int(np.argmax(scores[i]))
        if int(np.argmax(scores[:, j])) == i:
            pairs.append((i, j))
    return set(pairs)


# (criterion, passed, detail) rows filled by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
