"""Autoencoder pretraining and the iterative self-training loop."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embio import EmbeddingSpace, SeedDictionary, dedup_pairs, save_dictionary
from .model import (
    Autoencoder,
    Dims,
    LatentMapModel,
    ae_pretrain_loss,
    backtranslation_loss,
    mapping_loss,
    reconstruction_loss,
)
from .retrieval import InducedPairs, induce_dictionary
from .tensor import NonFiniteError, SgdOptimizer, load_params, save_params

log = logging.getLogger(__name__)

STATE_FORMAT = "lnmap-state/1"


@dataclass
class TrainingConfig:
    batch_size: int = 128
    lr: float = 1e-4
    ae_lr: float | None = None  # None -> same as lr
    lr_decay: float = 0.95
    decay_every: int = 1
    ae_epochs: int = 25
    map_epochs_per_iter: int = 100
    increment: int = 2000
    induction_pool: int = 15000
    pretrain_vocab: int = 200000
    convergence_eps: float = 1e-6
    max_outer_iters: int = 50
    seed: int = 0
    lambda_bt: float = 1.0
    lambda_rec: float = 1.0
    csls_k: int = 10
    latent_dim: int = 400
    hidden_dim: int = 400
    mapper_hidden: int = 400
    max_vocab: int | None = None
    symmetric_losses: bool = True
    linear_ae: bool = False
    linear_mapper: bool = False
    procrustes_only: bool = False
    no_bt: bool = False
    no_rec: bool = False

    def __post_init__(self):
        for name in ("batch_size", "map_epochs_per_iter", "induction_pool", "pretrain_vocab",
                     "max_outer_iters", "csls_k", "latent_dim", "hidden_dim", "mapper_hidden",
                     "decay_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("ae_epochs", "increment"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be positive")
        if self.lr < 0 or (self.ae_lr is not None and self.ae_lr < 0):
            raise ValueError("learning rates must be non-negative")
        if self.max_vocab is not None and self.max_vocab < 1:
            raise ValueError("max_vocab must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dims(self, input_dim=300):
        return Dims(input_dim, self.hidden_dim, self.latent_dim, self.mapper_hidden)


@dataclass
class TrainingState:
    dict_orig: SeedDictionary
    dict_current: SeedDictionary
    outer_iter: int = 0
    last_avg_similarity: float = float("nan")
    lr_effective: float = 0.0
    completed_iterations: int = 0
    loss_history: list = field(default_factory=list)
    converged: bool = False
    rng_state: dict | None = None

    def to_json(self):
        return {
            "format": STATE_FORMAT,
            "outer_iter": self.outer_iter,
            "dict_orig": self.dict_orig.pairs.tolist(),
            "dict_current": self.dict_current.pairs.tolist(),
            "last_avg_similarity": self.last_avg_similarity,
            "lr_effective": self.lr_effective,
            "completed_iterations": self.completed_iterations,
            "loss_history": self.loss_history,
            "converged": self.converged,
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_json(cls, d):
        if d.get("format") != STATE_FORMAT:
            raise ValueError(f"unsupported state format {d.get('format')!r}")
        return cls(
            dict_orig=SeedDictionary(np.array(d["dict_orig"], dtype=np.int64)),
            dict_current=SeedDictionary(np.array(d["dict_current"], dtype=np.int64)),
            outer_iter=d["outer_iter"],
            last_avg_similarity=d["last_avg_similarity"],
            lr_effective=d["lr_effective"],
            completed_iterations=d["completed_iterations"],
            loss_history=d["loss_history"],
            converged=d["converged"],
            rng_state=d["rng_state"],
        )


def rng_for(seed, stream):
    """Independent generator per purpose so stages do not perturb each other."""
    return np.random.default_rng([seed, stream])


def build_model(cfg: TrainingConfig, src_dim, tgt_dim) -> LatentMapModel:
    return LatentMapModel(cfg.dims(src_dim), linear_ae=cfg.linear_ae,
                          linear_mapper=cfg.linear_mapper, lambda_bt=cfg.lambda_bt,
                          lambda_rec=cfg.lambda_rec, symmetric_losses=cfg.symmetric_losses,
                          rng=rng_for(cfg.seed, 0), src_input_dim=src_dim, tgt_input_dim=tgt_dim)


def minibatches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[s:s + batch_size] for s in range(0, n, batch_size)]


def pretrain_autoencoder(ae: Autoencoder, data, cfg: TrainingConfig, rng) -> list[float]:
    rows = data[: min(cfg.pretrain_vocab, len(data))]
    opt = SgdOptimizer(cfg.lr if cfg.ae_lr is None else cfg.ae_lr, 1.0)
    params = ae.parameters()
    curve = []
    for epoch in range(cfg.ae_epochs):
        total = 0.0
        for b, idx in enumerate(minibatches(len(rows), cfg.batch_size, rng)):
            try:
                loss = ae_pretrain_loss(ae, rows[idx])
                opt.step(params, batch_id=b)
            except NonFiniteError as exc:
                raise NonFiniteError(f"{ae.prefix} pretraining diverged at epoch {epoch}: {exc}") from exc
            total += loss * len(idx)
        curve.append(total / len(rows))
    return curve


def pretrain_autoencoders(model: LatentMapModel, src: EmbeddingSpace, tgt: EmbeddingSpace,
                          cfg: TrainingConfig) -> dict[str, list[float]]:
    """Train both autoencoders independently on their own embeddings."""
    return {
        "src": pretrain_autoencoder(model.ae_src, src.vectors, cfg, rng_for(cfg.seed, 1)),
        "tgt": pretrain_autoencoder(model.ae_tgt, tgt.vectors, cfg, rng_for(cfg.seed, 2)),
    }


def ae_named(ae: Autoencoder):
    ps = ae.parameters()
    weights = [p for p in ps if ".prelu" not in p.name]
    slopes = [p for p in ps if ".prelu" in p.name]
    return [(p.name, p.value) for p in weights + slopes]


def load_autoencoder(ae: Autoencoder, path):
    arrays = load_params(path)
    for p in ae.parameters():
        if arrays[p.name].shape != p.value.shape:
            raise ValueError(f"{p.name}: stored shape {arrays[p.name].shape} != {p.value.shape}")
        p.value[...] = arrays[p.name]


def grow_dictionary(dict_orig: SeedDictionary, induced: InducedPairs, outer_iter, increment):
    """Seed pairs first, then the best ``outer_iter * increment`` induced pairs.

    Returns the merged dictionary and the selected induced pairs.
    """
    selected = induced.top(min(outer_iter * increment, len(induced)))
    merged = dedup_pairs(np.vstack([dict_orig.pairs, selected.pairs]))
    return SeedDictionary(merged, "all_1toMany"), selected


def induce(model: LatentMapModel, src: EmbeddingSpace, tgt: EmbeddingSpace, cfg) -> InducedPairs:
    xs = model.map_source(src.vectors[: cfg.induction_pool])
    ys = model.encode_target(tgt.vectors[: cfg.induction_pool])
    return induce_dictionary(xs, ys, cfg.csls_k)


def _train_epochs(model, x, y, pairs, cfg, opt, rng):
    groups = model.groups()
    map_params = groups["mapper_fwd"] + groups["ae_src.enc"]
    bt_params = groups["mapper_fwd"] + groups["mapper_bwd"]
    rec_params = model.parameters()
    sums = {"map": 0.0, "bt": 0.0, "rec": 0.0}
    updates = {"map": 0, "bt": 0, "rec": 0}
    rows = 0
    for _ in range(cfg.map_epochs_per_iter):
        for b, idx in enumerate(minibatches(len(pairs), cfg.batch_size, rng)):
            xb = x[pairs[idx, 0]]
            yb = y[pairs[idx, 1]]
            sums["map"] += mapping_loss(model, xb, yb) * len(idx)
            opt.step(map_params, b)
            updates["map"] += 1
            if not cfg.no_bt:
                sums["bt"] += backtranslation_loss(model, xb, yb, weight=model.lambda_bt) * len(idx)
                opt.step(bt_params, b)
                updates["bt"] += 1
            if not cfg.no_rec:
                sums["rec"] += reconstruction_loss(model, xb, yb, weight=model.lambda_rec) * len(idx)
                opt.step(rec_params, b)
                updates["rec"] += 1
            rows += len(idx)
    losses = {k: v / rows for k, v in sums.items()}
    return losses, updates


class RunDirectory:
    """Artifacts of one run; all writes go through here."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    def write_config(self, cfg: TrainingConfig, extra=None):
        d = cfg.to_dict()
        if extra:
            d.update(extra)
        (self.path / "config.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")

    def save_pretrain(self, model):
        save_params(self.path / "pretrain_src.bin", ae_named(model.ae_src))
        save_params(self.path / "pretrain_tgt.bin", ae_named(model.ae_tgt))

    def append_history(self, record, wall_time):
        with open(self.path / "history.jsonl", "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        with open(self.path / "timing.jsonl", "a") as fh:
            fh.write(json.dumps({"iter": record["iter"], "wall_time": wall_time}) + "\n")

    def reset_history(self):
        for name in ("history.jsonl", "timing.jsonl"):
            (self.path / name).unlink(missing_ok=True)


def run_self_training(model: LatentMapModel, src: EmbeddingSpace, tgt: EmbeddingSpace,
                      seed_dict: SeedDictionary, cfg: TrainingConfig,
                      state: TrainingState | None = None, out_dir=None,
                      stop_after: int | None = None):
    """Iterate: train on the dictionary, induce mutual-NN pairs, grow, test convergence.

    ``state`` resumes a previous run (see :func:`resume`). ``stop_after``
    returns early after that many outer iterations of this call, which is
    how checkpoint/resume is exercised.
    """
    if len(seed_dict) == 0:
        raise ValueError("seed dictionary is empty")
    run = RunDirectory(out_dir) if out_dir is not None else None
    rng = rng_for(cfg.seed, 3)
    opt = SgdOptimizer(cfg.lr, cfg.lr_decay, cfg.decay_every)
    if state is None:
        state = TrainingState(seed_dict, SeedDictionary(seed_dict.pairs.copy()))
        if run:
            run.reset_history()
    else:
        rng.bit_generator.state = state.rng_state
        opt.completed_iterations = state.completed_iterations
    x, y = src.vectors, tgt.vectors
    done_here = 0
    while not state.converged and state.outer_iter < cfg.max_outer_iters:
        if stop_after is not None and done_here >= stop_after:
            break
        t0 = time.perf_counter()
        state.outer_iter += 1
        it = state.outer_iter
        state.lr_effective = opt.lr_eff
        try:
            losses, updates = _train_epochs(model, x, y, state.dict_current.pairs, cfg, opt, rng)
        except NonFiniteError as exc:
            raise NonFiniteError(f"outer iteration {it}: {exc}") from exc
        induced = induce(model, src, tgt, cfg)
        dict_next, selected = grow_dictionary(state.dict_orig, induced, it, cfg.increment)
        if len(selected) == 0:
            log.warning("iteration %d: no induced pairs, continuing with the seed dictionary", it)
            avg_sim = float("nan")
        else:
            avg_sim = float(np.mean(selected.scores))
        delta = abs(avg_sim - state.last_avg_similarity)
        state.converged = bool(np.isfinite(delta) and delta < cfg.convergence_eps)
        state.last_avg_similarity = avg_sim
        state.dict_current = dict_next
        opt.end_iteration()
        state.completed_iterations = opt.completed_iterations
        state.rng_state = rng.bit_generator.state
        record = {
            "iter": it,
            "l_map": losses["map"],
            "l_bt": losses["bt"],
            "l_rec": losses["rec"],
            "l_total": losses["map"] + model.lambda_bt * losses["bt"] + model.lambda_rec * losses["rec"],
            "avg_sim": None if not np.isfinite(avg_sim) else avg_sim,
            "induced_available": len(induced),
            "induced_selected": len(selected),
            "dict_size": len(dict_next),
            "lr_eff": state.lr_effective,
            "updates": updates,
            "converged": state.converged,
        }
        state.loss_history.append(record)
        log.info("iter %d: map %.5f bt %.5f rec %.5f avg_sim %s dict %d", it, losses["map"],
                 losses["bt"], losses["rec"], record["avg_sim"], len(dict_next))
        if run:
            model.save(run.path / f"model_iter_{it}.bin")
            save_dictionary(run.path / f"dict_iter_{it}.txt", selected.pairs, src, tgt,
                            selected.scores)
            run.append_history(record, time.perf_counter() - t0)
            checkpoint(model, state, run.path / "checkpoint")
        done_here += 1
    return model, state


def checkpoint(model: LatentMapModel, state: TrainingState, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model.save(path / "model.bin")
    (path / "state.json").write_text(json.dumps(state.to_json()))


def resume(path, lambda_bt=1.0, lambda_rec=1.0, symmetric_losses=True):
    """Load a checkpoint directory written by :func:`checkpoint`."""
    path = Path(path)
    state = TrainingState.from_json(json.loads((path / "state.json").read_text()))
    model = LatentMapModel.load(path / "model.bin", lambda_bt, lambda_rec, symmetric_losses)
    return model, state


def train(src: EmbeddingSpace, tgt: EmbeddingSpace, seed_dict: SeedDictionary,
          cfg: TrainingConfig, out_dir=None):
    """Build, pretrain and self-train a model (or the Procrustes baseline)."""
    if cfg.procrustes_only:
        from .baseline import procrustes_loop
        return procrustes_loop(src, tgt, seed_dict, cfg, out_dir=out_dir)
    model = build_model(cfg, src.dim, tgt.dim)
    curves = pretrain_autoencoders(model, src, tgt, cfg)
    if out_dir is not None:
        run = RunDirectory(out_dir)
        run.write_config(cfg)
        run.save_pretrain(model)
    model, state = run_self_training(model, src, tgt, seed_dict, cfg, out_dir=out_dir)
    return model, state, curves
