import json
from importlib import resources

import jsonschema
import pytest

from lnmap.cli import main
from lnmap.synthetic import make_task, write_task

SMALL = {"lr": 0.1, "batch_size": 32, "ae_epochs": 2, "map_epochs_per_iter": 2,
         "latent_dim": 8, "hidden_dim": 8, "mapper_hidden": 8, "increment": 20,
         "induction_pool": 100, "csls_k": 3, "max_outer_iters": 2}


def schema(name):
    return json.loads(resources.files("lnmap").joinpath("schemas", name).read_text())


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_task(make_task("orthogonal", n_words=120, dim=6, n_seed=30, n_test=30, seed=2), root)
    (root / "config.json").write_text(json.dumps(SMALL))
    return root


def common(data):
    return ["--src-emb", str(data / "src.vec"), "--tgt-emb", str(data / "tgt.vec"),
            "--config", str(data / "config.json")]


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", *common(data), "--dict", str(data / "seed.txt"),
                 "--eval-dict", str(data / "test.txt"), "--out-dir", str(out)])
    assert code == 0
    return out


def test_pretrain_deterministic(data, tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["pretrain", *common(data), "--out-dir", str(tmp_path / name)]) == 0
    assert "pretrained" in capsys.readouterr().out
    for name in ("pretrain_src.bin", "pretrain_tgt.bin", "config.json", "pretrain_curves.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(manifest["inputs"]["src_emb"]["sha256"]) == 64


def test_train_with_pretrained(data, tmp_path):
    assert main(["pretrain", *common(data), "--out-dir", str(tmp_path / "p")]) == 0
    code = main(["train", *common(data), "--dict", str(data / "seed.txt"),
                 "--pretrained", str(tmp_path / "p"), "--out-dir", str(tmp_path / "t")])
    assert code == 0
    assert (tmp_path / "t" / "pretrain_src.bin").read_bytes() == \
        (tmp_path / "p" / "pretrain_src.bin").read_bytes()


def test_train_report(trained):
    report = json.loads((trained / "report.json").read_text())
    jsonschema.validate(report, schema("report.schema.json"))
    assert set(report["p_at"]) == {"1", "5", "10"}
    for name in ("model.bin", "history.jsonl", "manifest.json", "checkpoint/state.json"):
        assert (trained / name).exists()


@pytest.mark.parametrize("retrieval", ["csls", "cosine"])
def test_evaluate_reparses(data, trained, tmp_path, retrieval, capsys):
    out = tmp_path / "r.json"
    code = main(["evaluate", *common(data), "--model", str(trained / "model.bin"),
                 "--eval-dict", str(data / "test.txt"), "--report", str(out),
                 "--retrieval", retrieval])
    assert code == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, schema("report.schema.json"))
    assert report["retrieval"] == retrieval
    assert "P@1" in capsys.readouterr().out


def test_evaluate_matches_training_report(data, trained, tmp_path):
    out = tmp_path / "r.json"
    main(["evaluate", *common(data), "--model", str(trained / "model.bin"),
          "--eval-dict", str(data / "test.txt"), "--report", str(out)])
    assert json.loads(out.read_text())["p_at"] == \
        json.loads((trained / "report.json").read_text())["p_at"]


def test_induce_top_n(data, trained, tmp_path):
    out = tmp_path / "pairs.txt"
    assert main(["induce", *common(data), "--model", str(trained / "model.bin"),
                 "--output", str(out), "--top-n", "5"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 5
    scores = [float(line.split()[2]) for line in lines]
    assert scores == sorted(scores, reverse=True)


def test_procrustes_train_evaluate_induce(data, tmp_path):
    run = tmp_path / "p"
    assert main(["train", *common(data), "--procrustes", "--dict", str(data / "seed.txt"),
                 "--eval-dict", str(data / "test.txt"), "--out-dir", str(run)]) == 0
    assert json.loads((run / "report.json").read_text())["p_at"]["1"] > 0.9
    assert main(["induce", *common(data), "--model", str(run / "model.bin"),
                 "--output", str(tmp_path / "i.txt")]) == 0


def test_ablate_synthetic(data, tmp_path, capsys):
    out = tmp_path / "abl"
    code = main(["ablate", "--synthetic", "orthogonal", "--config", str(data / "config.json"),
                 "--out-dir", str(out)])
    assert code == 0
    payload = json.loads((out / "ablation.json").read_text())
    jsonschema.validate(payload, schema("ablation.schema.json"))
    assert [r["variant"] for r in payload["rows"]] == \
        ["full", "no_rec", "no_bt", "linear_mapper", "procrustes", "linear_ae"]
    table = (out / "ablation.md").read_text()
    assert table.count("\n") == 8
    assert capsys.readouterr().out == table


class TestExitCodes:
    def test_missing_file(self, data, tmp_path):
        assert main(["pretrain", "--src-emb", str(tmp_path / "nope.vec"),
                     "--tgt-emb", str(data / "tgt.vec"), "--out-dir", str(tmp_path)]) == 2

    def test_bad_flag(self):
        assert main(["train", "--bogus"]) == 2

    def test_no_command(self):
        assert main([]) == 2

    def test_invalid_config_value(self, data, tmp_path):
        assert main(["pretrain", *common(data), "--batch-size", "0",
                     "--out-dir", str(tmp_path)]) == 2

    def test_unknown_config_key(self, data, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"learning_rate": 0.1}))
        assert main(["pretrain", "--src-emb", str(data / "src.vec"), "--tgt-emb",
                     str(data / "tgt.vec"), "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2

    def test_malformed_embeddings(self, data, tmp_path, capsys):
        bad = tmp_path / "bad.vec"
        bad.write_text("2 3\na 1 0 0\nb 1 0\n")
        assert main(["pretrain", "--src-emb", str(bad), "--tgt-emb", str(data / "tgt.vec"),
                     "--out-dir", str(tmp_path / "o")]) == 2
        assert ":3:" in capsys.readouterr().err

    def test_empty_dictionary(self, data, tmp_path):
        d = tmp_path / "d.txt"
        d.write_text("zzz yyy\n")
        assert main(["train", *common(data), "--dict", str(d), "--out-dir", str(tmp_path)]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_numeric_failure(self, data, tmp_path):
        assert main(["pretrain", *common(data), "--linear-ae", "--lr", "1e6", "--ae-epochs", "5",
                     "--out-dir", str(tmp_path)]) == 3

    def test_ablate_needs_inputs(self, tmp_path):
        assert main(["ablate", "--out-dir", str(tmp_path)]) == 2
