"""Small dense numerics core: bias-free layers, manual backprop, SGD.

Matrices are plain float64 ``numpy.ndarray`` objects laid out row-major
(batch x features).  Every forward pass that will be differentiated returns
a *tape* holding the cached activations; ``backward`` consumes that tape and
accumulates parameter gradients.  Because the tape is an explicit value, one
network can appear several times inside a single loss (the mappers do).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

MAGIC = b"LNMAP001"


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when a loss, activation or gradient stops being finite."""


class TapeError(RuntimeError):
    pass


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    trainable: bool = True

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


class Affine:
    """``out = x @ W.T`` with no bias term."""

    def __init__(self, name: str, in_dim: int, out_dim: int, rng=None, weight=None):
        if weight is None:
            rng = np.random.default_rng() if rng is None else rng
            weight = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(out_dim, in_dim))
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (out_dim, in_dim):
            raise ShapeError(f"{name}: weight shape {weight.shape} != {(out_dim, in_dim)}")
        self.weight = Parameter(name, weight)

    @property
    def in_dim(self):
        return self.weight.value.shape[1]

    @property
    def out_dim(self):
        return self.weight.value.shape[0]

    def parameters(self):
        return [self.weight]

    def predict(self, x):
        return affine_forward(self.weight.value, x, self.weight.name)

    def forward(self, x):
        return self.predict(x), x

    def backward(self, cache, grad_out):
        self.weight.grad += grad_out.T @ cache
        return grad_out @ self.weight.value


def affine_forward(weight: np.ndarray, batch: np.ndarray, name: str = "affine") -> np.ndarray:
    if batch.ndim != 2 or batch.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"{name}: batch shape {batch.shape} incompatible with weight shape {weight.shape}"
        )
    return batch @ weight.T


class PReLU:
    """Parametric ReLU with a single learnable slope for the whole layer.

    A frozen PReLU with slope 1 is exactly the identity; the linear
    autoencoder variant uses that so its parameter manifest matches the
    non-linear one.
    """

    def __init__(self, name: str, slope: float = 0.25, trainable: bool = True):
        self.slope = Parameter(name, np.array([slope]), trainable=trainable)

    def parameters(self):
        return [self.slope]

    def predict(self, x):
        a = self.slope.value[0]
        return np.where(x > 0, x, a * x)

    def forward(self, x):
        return self.predict(x), x

    def backward(self, cache, grad_out):
        neg = cache <= 0
        if self.slope.trainable:
            self.slope.grad[0] += np.sum(grad_out * cache * neg)
        return np.where(neg, self.slope.value[0] * grad_out, grad_out)


class Tanh:
    def parameters(self):
        return []

    def predict(self, x):
        return np.tanh(x)

    def forward(self, x):
        out = np.tanh(x)
        return out, out

    def backward(self, cache, grad_out):
        return grad_out * (1.0 - cache * cache)


class Identity:
    def parameters(self):
        return []

    def predict(self, x):
        return x

    def forward(self, x):
        return x, None

    def backward(self, cache, grad_out):
        return grad_out


class Tape:
    __slots__ = ("owner", "caches", "batch_rows")

    def __init__(self, owner, caches, batch_rows):
        self.owner = owner
        self.caches = caches
        self.batch_rows = batch_rows


class Sequential:
    def __init__(self, name: str, layers: Sequence, check_finite: bool = False):
        self.name = name
        self.layers = list(layers)
        self.check_finite = check_finite

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def predict(self, x):
        """Forward pass without caching (safe on frozen snapshots)."""
        for layer in self.layers:
            x = layer.predict(x)
        return x

    __call__ = predict

    def forward(self, x):
        caches = []
        rows = x.shape[0]
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
            if self.check_finite and not np.all(np.isfinite(x)):
                raise NonFiniteError(f"{self.name}: non-finite activation")
        return x, Tape(self, caches, rows)

    def backward(self, tape, grad_out):
        if not isinstance(tape, Tape) or tape.owner is not self:
            raise TapeError(f"{self.name}: backward called without a matching forward")
        if grad_out.shape[0] != tape.batch_rows:
            raise TapeError(
                f"{self.name}: upstream gradient has {grad_out.shape[0]} rows, "
                f"forward saw {tape.batch_rows}"
            )
        for layer, cache in zip(reversed(self.layers), reversed(tape.caches)):
            grad_out = layer.backward(cache, grad_out)
        return grad_out


def zero_grad(params: Iterable[Parameter]):
    for p in params:
        p.zero_grad()


class SgdOptimizer:
    """Plain SGD with a step decay counted in outer iterations.

    ``lr_eff = lr * decay_factor ** (completed_iterations // decay_every)``
    """

    def __init__(self, learning_rate: float, decay_factor: float = 0.95, decay_every: int = 1):
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if decay_every < 1:
            raise ValueError("decay_every must be a positive integer")
        self.learning_rate = learning_rate
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.completed_iterations = 0
        self.step_count = 0

    @property
    def lr_eff(self) -> float:
        return self.learning_rate * self.decay_factor ** (self.completed_iterations // self.decay_every)

    def end_iteration(self):
        self.completed_iterations += 1

    def step(self, params: Iterable[Parameter], batch_id=None):
        params = [p for p in params if p.trainable]
        for p in params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient in {p.name} (batch {batch_id})")
        lr = self.lr_eff
        for p in params:
            p.value -= lr * p.grad
        self.step_count += 1


def sgd_step(opt: SgdOptimizer, params, batch_id=None):
    opt.step(params, batch_id)


@dataclass
class GradCheckReport:
    max_error: float
    per_parameter: dict
    failures: list  # (parameter name, flat index, analytic, numeric)
    tol: float

    @property
    def passed(self) -> bool:
        return not self.failures


def fd_gradient_check(
    params: Sequence[Parameter],
    loss_and_grad: Callable[[], float],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_and_grad`` must zero the gradients, evaluate the loss and run the
    backward pass, returning the scalar loss. The error measure per
    coordinate is ``|a - f| / (1 + |f|)``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"h={h} outside [1e-7, 1e-3]")
    params = list(params)
    loss_and_grad()
    analytic = {p.name: p.grad.copy() for p in params}
    per_param = {}
    failures = []
    for p in params:
        flat = p.value.reshape(-1)
        a_flat = analytic[p.name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_and_grad()
            flat[i] = orig - h
            down = loss_and_grad()
            flat[i] = orig
            f = (up - down) / (2 * h)
            err = abs(a_flat[i] - f) / (1.0 + abs(f))
            worst = max(worst, err)
            if err > tol:
                failures.append((p.name, i, float(a_flat[i]), float(f)))
        per_param[p.name] = worst
    # leave gradients consistent with the unperturbed parameters
    loss_and_grad()
    max_err = max(per_param.values(), default=0.0)
    return GradCheckReport(max_err, per_param, failures, tol)


def save_params(path, named: Sequence[tuple[str, np.ndarray]]):
    """Write arrays in the ``LNMAP001`` binary layout, in the given order."""
    chunks = [MAGIC]
    for name, arr in named:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    out = {}
    pos = len(MAGIC)
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(data):
                raise ValueError("truncated payload")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            out[name] = arr.astype(np.float64)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: corrupt parameter file ({exc})") from exc
    return out
