"""Command-line interface: pretrain, train, evaluate, induce, ablate.

Exit codes: 0 ok, 2 usage/input error, 3 numeric failure, 4 internal error.
Human-readable tables go to stdout; structured output only to files.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .baseline import OrthogonalMap, procrustes_loop
from .embio import (
    DictionaryError,
    EmbeddingFormatError,
    ZeroNormError,
    load_dictionary,
    load_embeddings,
    normalize,
    save_dictionary,
)
from .model import LatentMapModel
from .retrieval import evaluate
from .tensor import NonFiniteError, load_params
from .trainer import (
    RunDirectory,
    TrainingConfig,
    build_model,
    induce,
    load_autoencoder,
    pretrain_autoencoders,
    run_self_training,
)

log = logging.getLogger("lnmap")

REPORT_SCHEMA = "lnmap-report/1"
ABLATION_SCHEMA = "lnmap-ablation/1"

# flag dest -> TrainingConfig field
CONFIG_FLAGS = {
    "max_vocab": "max_vocab",
    "latent_dim": "latent_dim",
    "hidden_dim": "hidden_dim",
    "mapper_hidden": "mapper_hidden",
    "batch_size": "batch_size",
    "lr": "lr",
    "ae_epochs": "ae_epochs",
    "map_epochs": "map_epochs_per_iter",
    "increment": "increment",
    "k_freq": "induction_pool",
    "csls_k": "csls_k",
    "lambda_bt": "lambda_bt",
    "lambda_rec": "lambda_rec",
    "linear_ae": "linear_ae",
    "linear_mapper": "linear_mapper",
    "procrustes": "procrustes_only",
    "no_bt": "no_bt",
    "no_rec": "no_rec",
    "seed": "seed",
    "max_iters": "max_outer_iters",
    "pretrain_vocab": "pretrain_vocab",
    "eps": "convergence_eps",
}

ABLATIONS = [
    ("full", {}),
    ("no_rec", {"no_rec": True}),
    ("no_bt", {"no_bt": True}),
    ("linear_mapper", {"linear_mapper": True}),
    ("procrustes", {"procrustes_only": True}),
    ("linear_ae", {"linear_ae": True}),
]


class UsageError(Exception):
    pass


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _add_config_flags(p):
    g = p.add_argument_group("training configuration")
    g.add_argument("--config", help="JSON file with configuration keys; flags override it")
    g.add_argument("--max-vocab", type=int)
    g.add_argument("--latent-dim", type=int)
    g.add_argument("--hidden-dim", type=int)
    g.add_argument("--mapper-hidden", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--ae-epochs", type=int)
    g.add_argument("--map-epochs", type=int, help="mapper epochs per outer iteration")
    g.add_argument("--increment", type=int, help="dictionary growth per iteration (C)")
    g.add_argument("--k-freq", type=int, help="most frequent words used for induction (K)")
    g.add_argument("--csls-k", type=int)
    g.add_argument("--lambda-bt", type=float)
    g.add_argument("--lambda-rec", type=float)
    g.add_argument("--pretrain-vocab", type=int)
    g.add_argument("--eps", type=float, help="convergence threshold on average similarity")
    g.add_argument("--max-iters", type=int)
    g.add_argument("--seed", type=int)
    for flag in ("--linear-ae", "--linear-mapper", "--procrustes", "--no-bt", "--no-rec"):
        g.add_argument(flag, action="store_true", default=None)


def resolve_config(args) -> TrainingConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        raw = json.loads(path.read_text())
        for key, val in raw.items():
            key = key.lstrip("-").replace("-", "_")
            values[CONFIG_FLAGS.get(key, key)] = val
    for dest, field in CONFIG_FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            values[field] = val
    try:
        return TrainingConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _require_files(*paths):
    for p in paths:
        if p is None:
            continue
        if not Path(p).is_file():
            raise UsageError(f"file not found: {p}")


def _load_spaces(args, cfg):
    src = normalize(load_embeddings(args.src_emb, cfg.max_vocab))
    tgt = normalize(load_embeddings(args.tgt_emb, cfg.max_vocab))
    return src, tgt


def write_manifest(out_dir, cfg, inputs, started):
    manifest = {
        "tool": "lnmap",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {name: {"path": str(p), "sha256": sha256(p)} for name, p in inputs.items() if p},
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def report_json(report, src, tgt, extra=None):
    d = {"schema": REPORT_SCHEMA, **report.to_json(src.words, tgt.words)}
    if extra:
        d.update(extra)
    return d


def print_report(report, title="evaluation"):
    print(f"{title}")
    print(f"  evaluated {report.evaluated_count}  oov {report.oov_count}")
    for k, v in report.p_at.items():
        print(f"  P@{k:<3d} {100 * v:6.2f}")


def load_any_model(path):
    arrays = load_params(path)
    if "procrustes.W" in arrays:
        return OrthogonalMap(arrays["procrustes.W"])
    return LatentMapModel.load(path)


def cmd_pretrain(args):
    cfg = resolve_config(args)
    _require_files(args.src_emb, args.tgt_emb)
    started = _now()
    src, tgt = _load_spaces(args, cfg)
    model = build_model(cfg, src.dim, tgt.dim)
    curves = pretrain_autoencoders(model, src, tgt, cfg)
    run = RunDirectory(args.out_dir)
    run.write_config(cfg)
    run.save_pretrain(model)
    (run.path / "pretrain_curves.json").write_text(json.dumps(curves) + "\n")
    write_manifest(run.path, cfg, {"src_emb": args.src_emb, "tgt_emb": args.tgt_emb}, started)
    if curves["src"]:
        print(f"pretrained: final loss src {curves['src'][-1]:.6f} tgt {curves['tgt'][-1]:.6f}")
    else:
        print("pretraining skipped (0 epochs)")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    _require_files(args.src_emb, args.tgt_emb, args.dict, args.eval_dict)
    if args.pretrained and not cfg.procrustes_only:
        for side in ("src", "tgt"):
            _require_files(Path(args.pretrained) / f"pretrain_{side}.bin")
    started = _now()
    src, tgt = _load_spaces(args, cfg)
    seed_dict = load_dictionary(args.dict, src, tgt)
    gold = load_dictionary(args.eval_dict, src, tgt) if args.eval_dict else None
    run = RunDirectory(args.out_dir)
    if cfg.procrustes_only:
        final, state = procrustes_loop(src, tgt, seed_dict, cfg, out_dir=run.path)
        final.save(run.path / "model.bin")
    else:
        model = build_model(cfg, src.dim, tgt.dim)
        if args.pretrained:
            load_autoencoder(model.ae_src, Path(args.pretrained) / "pretrain_src.bin")
            load_autoencoder(model.ae_tgt, Path(args.pretrained) / "pretrain_tgt.bin")
        else:
            pretrain_autoencoders(model, src, tgt, cfg)
        run.write_config(cfg)
        run.save_pretrain(model)
        final, state = run_self_training(model, src, tgt, seed_dict, cfg, out_dir=run.path)
        final.save(run.path / "model.bin")
    last = state.loss_history[-1] if state.loss_history else {}
    print(f"finished after {state.outer_iter} iterations "
          f"({'converged' if state.converged else 'iteration limit'}); "
          f"dictionary size {len(state.dict_current)}; updates {last.get('updates')}")
    if gold is not None:
        report = evaluate(final, src, tgt, gold, csls_k=cfg.csls_k)
        (run.path / "report.json").write_text(
            json.dumps(report_json(report, src, tgt), indent=2) + "\n")
        print_report(report)
    write_manifest(run.path, cfg, {"src_emb": args.src_emb, "tgt_emb": args.tgt_emb,
                                   "dict": args.dict, "eval_dict": args.eval_dict}, started)
    return 0


def cmd_evaluate(args):
    cfg = resolve_config(args)
    _require_files(args.src_emb, args.tgt_emb, args.model, args.eval_dict)
    src, tgt = _load_spaces(args, cfg)
    gold = load_dictionary(args.eval_dict, src, tgt)
    model = load_any_model(args.model)
    report = evaluate(model, src, tgt, gold, csls_k=cfg.csls_k, method=args.retrieval)
    out = Path(args.report) if args.report else Path(args.model).with_name("report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report_json(report, src, tgt, {"retrieval": args.retrieval}),
                              indent=2) + "\n")
    print_report(report)
    return 0


def cmd_induce(args):
    cfg = resolve_config(args)
    _require_files(args.src_emb, args.tgt_emb, args.model)
    if args.top_n is not None and args.top_n < 0:
        raise UsageError("--top-n must be non-negative")
    src, tgt = _load_spaces(args, cfg)
    model = load_any_model(args.model)
    if isinstance(model, OrthogonalMap):
        from .retrieval import induce_dictionary
        pool = cfg.induction_pool
        induced = induce_dictionary(model(src.vectors[:pool]), tgt.vectors[:pool], cfg.csls_k)
    else:
        induced = induce(model, src, tgt, cfg)
    if args.top_n is not None:
        induced = induced.top(args.top_n)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    save_dictionary(args.output, induced.pairs, src, tgt, induced.scores)
    if len(induced) == 0:
        log.warning("no mutual nearest neighbours found; wrote an empty dictionary")
    print(f"wrote {len(induced)} pairs to {args.output}")
    return 0


def run_ablation(src, tgt, seed_dict, gold, base_cfg: TrainingConfig, variants=ABLATIONS):
    rows = []
    for name, overrides in variants:
        cfg = TrainingConfig.from_dict({**base_cfg.to_dict(), **overrides})
        try:
            if cfg.procrustes_only:
                final, state = procrustes_loop(src, tgt, seed_dict, cfg)
            else:
                model = build_model(cfg, src.dim, tgt.dim)
                pretrain_autoencoders(model, src, tgt, cfg)
                final, state = run_self_training(model, src, tgt, seed_dict, cfg)
            report = evaluate(final, src, tgt, gold, csls_k=cfg.csls_k)
            rows.append({"variant": name, "status": "ok",
                         "p_at": {str(k): v for k, v in report.p_at.items()},
                         "iterations": state.outer_iter, "converged": state.converged})
        except Exception as exc:  # a failed variant must not sink the table
            log.error("variant %s failed: %s", name, exc)
            rows.append({"variant": name, "status": "failed", "error": str(exc),
                         "p_at": None, "iterations": None, "converged": None})
    return rows


def ablation_markdown(rows):
    lines = ["| variant | P@1 | P@5 | P@10 | iterations |", "|---|---|---|---|---|"]
    for r in rows:
        if r["status"] == "ok":
            p = r["p_at"]
            lines.append(f"| {r['variant']} | {100 * p['1']:.1f} | {100 * p['5']:.1f} | "
                         f"{100 * p['10']:.1f} | {r['iterations']} |")
        else:
            lines.append(f"| {r['variant']} | failed | | | |")
    return "\n".join(lines) + "\n"


def cmd_ablate(args):
    cfg = resolve_config(args)
    if args.synthetic is None:
        if not (args.src_emb and args.tgt_emb and args.dict and args.eval_dict):
            raise UsageError("ablate needs --synthetic or all of --src-emb/--tgt-emb/--dict/--eval-dict")
        _require_files(args.src_emb, args.tgt_emb, args.dict, args.eval_dict)
        src, tgt = _load_spaces(args, cfg)
        seed_dict = load_dictionary(args.dict, src, tgt)
        gold = load_dictionary(args.eval_dict, src, tgt)
        source = {"src_emb": args.src_emb, "tgt_emb": args.tgt_emb}
    else:
        from .synthetic import make_task
        task_kw = {"kind": args.synthetic, "seed": args.task_seed}
        if args.synthetic == "warp":
            task_kw.update(dim=6, warp_gain=6.0)
        task = make_task(**task_kw)
        src, tgt, seed_dict, gold = task.src, task.tgt, task.seed, task.test
        source = {"synthetic": task_kw}
    rows = run_ablation(src, tgt, seed_dict, gold, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = ablation_markdown(rows)
    (out / "ablation.md").write_text(table)
    (out / "ablation.json").write_text(json.dumps(
        {"schema": ABLATION_SCHEMA, "source": source, "config": cfg.to_dict(), "rows": rows},
        indent=2) + "\n")
    print(table, end="")
    return 0 if any(r["status"] == "ok" for r in rows) else 3


def build_parser():
    parser = argparse.ArgumentParser(prog="lnmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the two autoencoders")
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="self-training run (or --procrustes baseline)")
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--dict", required=True, help="seed dictionary")
    p.add_argument("--eval-dict", help="evaluate on this dictionary after training")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pretrained", help="run directory of a previous 'pretrain'")
    p.add_argument("--pretrain-inline", action="store_true",
                   help="pretrain inside this run (default when --pretrained is absent)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="precision@k of a saved model")
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--eval-dict", required=True)
    p.add_argument("--report", help="report path (default: report.json next to the model)")
    p.add_argument("--retrieval", choices=["csls", "cosine"], default="csls")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("induce", help="write mutual-NN translation pairs")
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--top-n", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("ablate", help="run the six ablation variants")
    p.add_argument("--synthetic", choices=["orthogonal", "warp"])
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--src-emb")
    p.add_argument("--tgt-emb")
    p.add_argument("--dict")
    p.add_argument("--eval-dict")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, EmbeddingFormatError, DictionaryError, ZeroNormError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
