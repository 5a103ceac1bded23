"""Autoencoders, latent mappers and the training losses.

Every loss zeroes all model gradients first and then back-propagates only
into the parameter groups it is allowed to update, so after a call the
non-zero gradients identify exactly the update set of that step.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .tensor import (
    Affine,
    Identity,
    NonFiniteError,
    PReLU,
    Sequential,
    ShapeError,
    Tanh,
    load_params,
    save_params,
    zero_grad,
)


@dataclass
class Dims:
    input_dim: int = 300
    hidden_dim: int = 400
    latent_dim: int = 400
    mapper_hidden: int = 400


class Autoencoder:
    """Three-layer encoder and decoder without biases.

    Hidden layers use PReLU, the encoder output is linear and the decoder
    output is tanh. With ``linear=True`` every activation becomes the identity
    (PReLU slopes frozen at 1) and the layer count is unchanged.
    """

    def __init__(self, prefix, input_dim, hidden_dim, latent_dim, linear=False, rng=None,
                 prelu_init=0.25):
        rng = np.random.default_rng() if rng is None else rng
        self.prefix = prefix
        self.linear = linear

        def act(name):
            if linear:
                return PReLU(name, 1.0, trainable=False)
            return PReLU(name, prelu_init)

        self.encoder = Sequential(f"{prefix}.enc", [
            Affine(f"{prefix}.enc.1", input_dim, hidden_dim, rng),
            act(f"{prefix}.enc.prelu1"),
            Affine(f"{prefix}.enc.2", hidden_dim, hidden_dim, rng),
            act(f"{prefix}.enc.prelu2"),
            Affine(f"{prefix}.enc.3", hidden_dim, latent_dim, rng),
        ])
        self.decoder = Sequential(f"{prefix}.dec", [
            Affine(f"{prefix}.dec.3", latent_dim, hidden_dim, rng),
            act(f"{prefix}.dec.prelu1"),
            Affine(f"{prefix}.dec.2", hidden_dim, hidden_dim, rng),
            act(f"{prefix}.dec.prelu2"),
            Affine(f"{prefix}.dec.1", hidden_dim, input_dim, rng),
            Identity() if linear else Tanh(),
        ])

    @property
    def input_dim(self):
        return self.encoder.layers[0].in_dim

    @property
    def latent_dim(self):
        return self.encoder.layers[-1].out_dim

    def encode(self, x):
        return self.encoder.predict(x)

    def decode(self, z):
        return self.decoder.predict(z)

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()


class Mapper:
    """latent -> hidden (tanh) -> latent (linear)."""

    def __init__(self, name, latent_dim, hidden_dim, linear=False, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.linear = linear
        self.net = Sequential(name, [
            Affine(f"{name}.1", latent_dim, hidden_dim, rng),
            Identity() if linear else Tanh(),
            Affine(f"{name}.2", hidden_dim, latent_dim, rng),
        ])

    def __call__(self, z):
        return self.net.predict(z)

    def parameters(self):
        return self.net.parameters()


class LatentMapModel:
    def __init__(self, dims: Dims | None = None, linear_ae=False, linear_mapper=False,
                 lambda_bt=1.0, lambda_rec=1.0, symmetric_losses=True, rng=None,
                 src_input_dim=None, tgt_input_dim=None):
        dims = dims or Dims()
        if lambda_bt < 0 or lambda_rec < 0:
            raise ValueError("loss weights must be non-negative")
        rng = np.random.default_rng() if rng is None else rng
        self.dims = dims
        self.lambda_bt = lambda_bt
        self.lambda_rec = lambda_rec
        self.symmetric_losses = symmetric_losses
        src_in = src_input_dim or dims.input_dim
        tgt_in = tgt_input_dim or dims.input_dim
        self.ae_src = Autoencoder("ae_src", src_in, dims.hidden_dim, dims.latent_dim, linear_ae, rng)
        self.ae_tgt = Autoencoder("ae_tgt", tgt_in, dims.hidden_dim, dims.latent_dim, linear_ae, rng)
        self.mapper_fwd = Mapper("mapper_fwd", dims.latent_dim, dims.mapper_hidden, linear_mapper, rng)
        self.mapper_bwd = Mapper("mapper_bwd", dims.latent_dim, dims.mapper_hidden, linear_mapper, rng)
        if self.ae_src.latent_dim != self.ae_tgt.latent_dim:
            raise ShapeError("source and target latent dimensions differ")

    @property
    def linear_ae(self):
        return self.ae_src.linear

    @property
    def linear_mapper(self):
        return self.mapper_fwd.linear

    def groups(self) -> dict[str, list]:
        return {
            "ae_src.enc": self.ae_src.encoder.parameters(),
            "ae_src.dec": self.ae_src.decoder.parameters(),
            "ae_tgt.enc": self.ae_tgt.encoder.parameters(),
            "ae_tgt.dec": self.ae_tgt.decoder.parameters(),
            "mapper_fwd": self.mapper_fwd.parameters(),
            "mapper_bwd": self.mapper_bwd.parameters(),
        }

    def parameters(self):
        return [p for ps in self.groups().values() for p in ps]

    def manifest(self):
        """Parameters in persistence order: weights first, then PReLU slopes."""
        weights, slopes = [], []
        for p in self.parameters():
            (slopes if ".prelu" in p.name else weights).append(p)
        return weights + slopes

    def zero_grad(self):
        zero_grad(self.parameters())

    def map_source(self, x):
        """Source embeddings -> codes in the target latent space."""
        return self.mapper_fwd(self.ae_src.encode(x))

    def encode_target(self, y):
        return self.ae_tgt.encode(y)

    def copy(self):
        return copy.deepcopy(self)

    def save(self, path):
        named = [(p.name, p.value) for p in self.manifest()]
        named.append(("meta.linear_flags", np.array([float(self.linear_ae), float(self.linear_mapper)])))
        save_params(path, named)

    @classmethod
    def load(cls, path, lambda_bt=1.0, lambda_rec=1.0, symmetric_losses=True):
        arrays = load_params(path)
        flags = arrays.get("meta.linear_flags", np.zeros(2))
        enc1 = arrays["ae_src.enc.1"]
        dims = Dims(
            input_dim=enc1.shape[1],
            hidden_dim=enc1.shape[0],
            latent_dim=arrays["ae_src.enc.3"].shape[0],
            mapper_hidden=arrays["mapper_fwd.1"].shape[0],
        )
        model = cls(dims, linear_ae=bool(flags[0]), linear_mapper=bool(flags[1]),
                    lambda_bt=lambda_bt, lambda_rec=lambda_rec,
                    symmetric_losses=symmetric_losses,
                    src_input_dim=enc1.shape[1],
                    tgt_input_dim=arrays["ae_tgt.enc.1"].shape[1],
                    rng=np.random.default_rng(0))
        model.load_arrays(arrays)
        return model

    def load_arrays(self, arrays):
        for p in self.manifest():
            if p.name not in arrays:
                raise KeyError(f"parameter {p.name} missing from file")
            if arrays[p.name].shape != p.value.shape:
                raise ShapeError(f"{p.name}: stored shape {arrays[p.name].shape} != {p.value.shape}")
        for p in self.manifest():
            p.value[...] = arrays[p.name]


def _check_pair(x, y):
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"batch length mismatch: {x.shape[0]} source rows vs {y.shape[0]} target rows")


def _sq_loss(pred, target):
    """Mean over rows of the squared L2 error, and its gradient w.r.t. pred."""
    k = pred.shape[0]
    diff = pred - target
    loss = float(np.sum(diff * diff) / k)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return loss, (2.0 / k) * diff


def ae_pretrain_loss(ae: Autoencoder, batch, backward=True, weight=1.0):
    if not backward:
        return _sq_loss(ae.decode(ae.encode(batch)), batch)[0]
    zero_grad(ae.parameters())
    z, te = ae.encoder.forward(batch)
    xh, td = ae.decoder.forward(z)
    loss, g = _sq_loss(xh, batch)
    ae.encoder.backward(te, ae.decoder.backward(td, weight * g))
    return loss


def mapping_loss(model: LatentMapModel, src_batch, tgt_batch, backward=True, weight=1.0):
    """Squared distance between mapped source codes and target codes.

    Target codes come from the current target encoder but are treated as
    constants.
    """
    _check_pair(src_batch, tgt_batch)
    zy = model.ae_tgt.encode(tgt_batch)
    if not backward:
        return _sq_loss(model.map_source(src_batch), zy)[0]
    model.zero_grad()
    zx, te = model.ae_src.encoder.forward(src_batch)
    m, tm = model.mapper_fwd.net.forward(zx)
    loss, g = _sq_loss(m, zy)
    model.ae_src.encoder.backward(te, model.mapper_fwd.net.backward(tm, weight * g))
    return loss


def _round_trip(first, second, z, backward, weight):
    if not backward:
        return _sq_loss(second.net.predict(first.net.predict(z)), z)[0]
    a, ta = first.net.forward(z)
    b, tb = second.net.forward(a)
    loss, g = _sq_loss(b, z)
    first.net.backward(ta, second.net.backward(tb, weight * g))
    return loss


def backtranslation_loss(model: LatentMapModel, src_batch, tgt_batch, backward=True, weight=1.0):
    """Round trip through both mappers on frozen codes, in each direction."""
    _check_pair(src_batch, tgt_batch)
    if backward:
        model.zero_grad()
    zx = model.ae_src.encode(src_batch)
    loss = _round_trip(model.mapper_fwd, model.mapper_bwd, zx, backward, weight)
    if model.symmetric_losses:
        zy = model.ae_tgt.encode(tgt_batch)
        loss += _round_trip(model.mapper_bwd, model.mapper_fwd, zy, backward, weight)
    return loss


def _reconstruct(ae, first, second, x, backward, weight):
    if not backward:
        return _sq_loss(ae.decode(second(first(ae.encode(x)))), x)[0]
    z, te = ae.encoder.forward(x)
    a, ta = first.net.forward(z)
    b, tb = second.net.forward(a)
    xh, td = ae.decoder.forward(b)
    loss, g = _sq_loss(xh, x)
    g = ae.decoder.backward(td, weight * g)
    g = first.net.backward(ta, second.net.backward(tb, g))
    ae.encoder.backward(te, g)
    return loss


def reconstruction_loss(model: LatentMapModel, src_batch, tgt_batch, backward=True, weight=1.0):
    """Decode the back-translated code and compare with the input embedding."""
    _check_pair(src_batch, tgt_batch)
    if backward:
        model.zero_grad()
    loss = _reconstruct(model.ae_src, model.mapper_fwd, model.mapper_bwd, src_batch, backward, weight)
    if model.symmetric_losses:
        loss += _reconstruct(model.ae_tgt, model.mapper_bwd, model.mapper_fwd, tgt_batch,
                             backward, weight)
    return loss


def total_loss(model: LatentMapModel, src_batch, tgt_batch) -> float:
    return (mapping_loss(model, src_batch, tgt_batch, backward=False)
            + model.lambda_bt * backtranslation_loss(model, src_batch, tgt_batch, backward=False)
            + model.lambda_rec * reconstruction_loss(model, src_batch, tgt_batch, backward=False))


def combine_losses(l_map, l_bt, l_rec, lambda_bt=1.0, lambda_rec=1.0):
    return l_map + lambda_bt * l_bt + lambda_rec * l_rec
