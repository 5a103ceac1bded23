import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lnmap.baseline import OrthogonalMap, evaluate_orthogonal, procrustes_fit, procrustes_loop
from lnmap.embio import EmbeddingSpace, SeedDictionary, normalize
from lnmap.synthetic import random_orthogonal
from lnmap.trainer import TrainingConfig


def orthogonality_error(w):
    return np.max(np.abs(w.T @ w - np.eye(w.shape[0])))


class TestFit:
    def test_identity(self, rng):
        x = rng.normal(size=(20, 4))
        np.testing.assert_allclose(procrustes_fit(x, x).W, np.eye(4), atol=1e-12)

    def test_exact_recovery(self, rng):
        q = random_orthogonal(10, rng)
        x = rng.normal(size=(200, 10))
        w = procrustes_fit(x, x @ q.T).W
        assert np.max(np.abs(w - q)) < 1e-8

    def test_sign_flip(self):
        x = np.eye(3)
        y = x @ np.diag([1.0, -1.0, 1.0])
        np.testing.assert_allclose(procrustes_fit(x, y).W, np.diag([1.0, -1.0, 1.0]), atol=1e-12)

    def test_beats_random_orthogonal_candidates(self, rng):
        x = rng.normal(size=(60, 5))
        y = x @ random_orthogonal(5, rng).T + 0.1 * rng.normal(size=(60, 5))
        best = np.linalg.norm(procrustes_fit(x, y)(x) - y)
        for _ in range(100):
            q = random_orthogonal(5, rng)
            assert best <= np.linalg.norm(x @ q.T - y) + 1e-12

    def test_underdetermined_warns(self, rng):
        x = rng.normal(size=(2, 5))
        with pytest.warns(UserWarning, match="not unique"):
            w = procrustes_fit(x, x).W
        assert orthogonality_error(w) < 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            procrustes_fit(np.eye(3), np.eye(2))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_always_orthogonal(self, d, seed):
        rng = np.random.default_rng(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            w = procrustes_fit(rng.normal(size=(d + 3, d)), rng.normal(size=(d + 3, d))).W
        assert orthogonality_error(w) < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_equivariant(self, d, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(3 * d, d)), rng.normal(size=(3 * d, d))
        a, b = random_orthogonal(d, rng), random_orthogonal(d, rng)
        w = procrustes_fit(x, y).W
        w2 = procrustes_fit(x @ a.T, y @ b.T).W
        np.testing.assert_allclose(w2, b @ w @ a.T, atol=1e-9)

    def test_save_load(self, tmp_path, rng):
        m = OrthogonalMap(random_orthogonal(4, rng))
        m.save(tmp_path / "w.bin")
        assert OrthogonalMap.load(tmp_path / "w.bin").W.tobytes() == m.W.tobytes()


def spaces(rng, n=80, d=6):
    vecs = rng.normal(size=(n, d))
    src = normalize(EmbeddingSpace([f"s{i}" for i in range(n)], vecs))
    return src


class TestLoop:
    def test_zero_increment_keeps_seed(self, rng, tmp_path):
        src = spaces(rng)
        seed = SeedDictionary([(i, i) for i in range(20)])
        cfg = TrainingConfig(increment=0, induction_pool=80, csls_k=3)
        w, state = procrustes_loop(src, src, seed, cfg, out_dir=tmp_path)
        assert state.outer_iter == 1 and state.converged
        assert state.dict_current.as_set() == seed.as_set()
        lines = (tmp_path / "history.jsonl").read_text().splitlines()
        assert [json.loads(line)["dict_size"] for line in lines] == [20]
        assert (tmp_path / "model_iter_1.bin").exists()

    def test_identical_spaces(self, rng):
        src = spaces(rng)
        seed = SeedDictionary([(i, i) for i in range(10)])
        cfg = TrainingConfig(increment=30, induction_pool=80, csls_k=3, max_outer_iters=5)
        w, state = procrustes_loop(src, src, seed, cfg)
        np.testing.assert_allclose(w.W, np.eye(6), atol=1e-10)
        gold = SeedDictionary([(i, i) for i in range(80)])
        assert evaluate_orthogonal(w, src, src, gold, ks=(1,), csls_k=3).p_at[1] == 1.0
        assert all(i == j for i, j in state.dict_current.pairs.tolist())

    def test_recovers_rotation(self, rng):
        src = spaces(rng, n=200, d=8)
        q = random_orthogonal(8, rng)
        tgt = EmbeddingSpace(src.words, src.vectors @ q.T)
        seed = SeedDictionary([(i, i) for i in range(20)])
        cfg = TrainingConfig(increment=50, induction_pool=200, csls_k=5, max_outer_iters=4)
        w, state = procrustes_loop(src, tgt, seed, cfg)
        assert np.max(np.abs(w.W - q)) < 1e-8
        assert len(state.loss_history) <= 4
