"""Contractive autoencoder in plain numpy, 64-bit throughout.

The model is a stack of dense layers with a 16-dim bottleneck. Training
minimizes, per sample, the squared reconstruction error plus lam times the
squared Frobenius norm of the Jacobian of the bottleneck with respect to
the input. The penalty and all gradients are exact: the Jacobian is built
by chaining per-layer Jacobians (diagonal activation derivative times the
weight matrix) from the bottleneck side, and its gradient contributions
are derived in closed form. Everything is verified against central finite
differences in the test suite before anything downstream trusts it.

The optimizer classes at the bottom are shared with the downstream
per-pixel classifiers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DivergenceError
from .tiles import TileId

ACTIVATION_CODES = {"identity": 0, "sigmoid": 1, "tanh": 2}
_CODE_TO_ACTIVATION = {v: k for k, v in ACTIVATION_CODES.items()}

_MAGIC = b"CAE1"
_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("layer weight/bias shapes inconsistent")


@dataclass
class CaeModel:
    encoder: list[Layer]
    decoder: list[Layer]

    def __post_init__(self) -> None:
        chain = self.encoder + self.decoder
        if not chain:
            raise ValueError("model has no layers")
        for prev, nxt in zip(chain, chain[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError("layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.encoder[0].weight.shape[1]

    @property
    def bottleneck_dim(self) -> int:
        return self.encoder[-1].weight.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-3  # contractive coefficient
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TemporalEmbedding:
    """Bottleneck vector of one tile."""

    values: np.ndarray
    tile: TileId


def init_model(
    input_dim: int,
    hidden_dims: Sequence[int],
    bottleneck_dim: int = 16,
    seed: int = 0,
    hidden_activation: str = "sigmoid",
) -> CaeModel:
    """Symmetric encoder/decoder; weights uniform in +-1/sqrt(fan_in).

    The decoder mirrors the encoder dimensions and ends in an identity
    output layer so reconstructions are unbounded.
    """
    if input_dim < 1 or bottleneck_dim < 1 or any(d < 1 for d in hidden_dims):
        raise ValueError("all layer dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    enc_dims = [input_dim, *hidden_dims, bottleneck_dim]
    dec_dims = list(reversed(enc_dims))

    def make(in_dim: int, out_dim: int, activation: str) -> Layer:
        bound = 1.0 / np.sqrt(in_dim)
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        return Layer(weight, np.zeros(out_dim), activation)

    encoder = [
        make(enc_dims[i], enc_dims[i + 1], hidden_activation)
        for i in range(len(enc_dims) - 1)
    ]
    decoder = [
        make(dec_dims[i], dec_dims[i + 1],
             "identity" if i == len(dec_dims) - 2 else hidden_activation)
        for i in range(len(dec_dims) - 1)
    ]
    return CaeModel(encoder, decoder)


# --- activations -----------------------------------------------------------

def _act(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return a
    if kind == "sigmoid":
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out
    return np.tanh(a)


def _act_prime(h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return np.ones_like(h)
    if kind == "sigmoid":
        return h * (1.0 - h)
    return 1.0 - h * h


def _act_second(h: np.ndarray, d: np.ndarray, kind: str) -> np.ndarray:
    # Second derivative expressed through the activation value and d = act'.
    if kind == "identity":
        return np.zeros_like(h)
    if kind == "sigmoid":
        return d * (1.0 - 2.0 * h)
    return -2.0 * h * d


def _forward(layers: list[Layer], x: np.ndarray) -> list[np.ndarray]:
    """Activations after each layer; index 0 is the input itself."""
    hs = [x]
    for layer in layers:
        hs.append(_act(hs[-1] @ layer.weight.T + layer.bias, layer.activation))
    return hs


def _as_batch(model: CaeModel, x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected vectors of dim {dim}, got shape {np.shape(x)}")
    return arr, single


def encode(model: CaeModel, x: np.ndarray) -> np.ndarray:
    """Bottleneck representation; accepts one vector or a batch."""
    batch, single = _as_batch(model, x, model.input_dim)
    z = _forward(model.encoder, batch)[-1]
    return z[0] if single else z


def decode(model: CaeModel, z: np.ndarray) -> np.ndarray:
    """Reconstruction from a bottleneck vector or batch."""
    batch, single = _as_batch(model, z, model.bottleneck_dim)
    out = _forward(model.decoder, batch)[-1]
    return out[0] if single else out


# --- contractive penalty ---------------------------------------------------

def _encoder_jacobian_chain(
    model: CaeModel, hs: list[np.ndarray]
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Suffix products K[l] = D_E W_E ... D_l W_l for a batch.

    hs are encoder activations from _forward. Returns (ks, ds) where
    ks[l] has shape (batch, bottleneck, in_dim_of_layer_l); ks[E] is the
    identity and ks[0] is the full Jacobian. ds[l] are activation
    derivatives at layer l.
    """
    n_layers = len(model.encoder)
    batch = hs[0].shape[0]
    m = model.bottleneck_dim
    ds = [
        _act_prime(hs[l + 1], model.encoder[l].activation) for l in range(n_layers)
    ]
    ks: list[Optional[np.ndarray]] = [None] * (n_layers + 1)
    ks[n_layers] = np.broadcast_to(np.eye(m), (batch, m, m))
    for l in range(n_layers - 1, -1, -1):
        kd = ks[l + 1] * ds[l][:, np.newaxis, :]
        ks[l] = kd @ model.encoder[l].weight
    return ks, ds  # type: ignore[return-value]


def contractive_penalty(model: CaeModel, x: np.ndarray):
    """Squared Frobenius norm of the encoder Jacobian at x.

    Returns a scalar for a single vector, an array for a batch.
    """
    batch, single = _as_batch(model, x, model.input_dim)
    hs = _forward(model.encoder, batch)
    ks, _ = _encoder_jacobian_chain(model, hs)
    p = np.sum(ks[0] ** 2, axis=(1, 2))
    return float(p[0]) if single else p


def _penalty_grads(
    model: CaeModel, hs: list[np.ndarray], ks: list[np.ndarray], ds: list[np.ndarray]
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Per-sample penalties and summed parameter gradients of the penalty.

    Reverse accumulation through the Jacobian product. Each layer's weight
    takes a direct term (it appears in the product) plus a chain term
    through the pre-activations that feed the activation derivatives.
    """
    n_layers = len(model.encoder)
    p = np.sum(ks[0] ** 2, axis=(1, 2))

    grads = [
        (np.zeros_like(layer.weight), np.zeros_like(layer.bias))
        for layer in model.encoder
    ]
    # hbar = dP/dK[l]; u[l] = dP/d(pre-activation of layer l) via ds[l].
    hbar = 2.0 * ks[0]
    us: list[np.ndarray] = []
    for l in range(n_layers):
        w = model.encoder[l].weight
        t = hbar @ w.T  # (batch, m, out_l)
        grad_d = np.sum(ks[l + 1] * t, axis=1)
        kd = ks[l + 1] * ds[l][:, np.newaxis, :]
        m = kd.shape[1]
        grads[l][0][...] += (
            kd.reshape(-1, kd.shape[2]).T @ hbar.reshape(-1, hbar.shape[2])
        )
        s2 = _act_second(hs[l + 1], ds[l], model.encoder[l].activation)
        us.append(s2 * grad_d)
        hbar = t * ds[l][:, np.newaxis, :]

    v = us[n_layers - 1]
    for l in range(n_layers - 1, -1, -1):
        if l < n_layers - 1:
            v = us[l] + (v @ model.encoder[l + 1].weight) * ds[l]
        grads[l][0][...] += v.T @ hs[l]
        grads[l][1][...] += v.sum(axis=0)
    return p, grads


# --- loss and gradients ----------------------------------------------------

def loss(model: CaeModel, batch: np.ndarray, lam: float = 0.0) -> float:
    """Mean over the batch of ||x - decode(encode(x))||^2 + lam * penalty."""
    xs, _ = _as_batch(model, np.atleast_2d(np.asarray(batch, dtype=np.float64)),
                      model.input_dim)
    if xs.shape[0] == 0:
        raise ValueError("empty batch")
    recon = _forward(model.decoder, _forward(model.encoder, xs)[-1])[-1]
    value = float(np.mean(np.sum((recon - xs) ** 2, axis=1)))
    if lam != 0.0:
        value += lam * float(np.mean(contractive_penalty(model, xs)))
    return value


@dataclass
class ModelGrads:
    encoder: list[tuple[np.ndarray, np.ndarray]]
    decoder: list[tuple[np.ndarray, np.ndarray]]


def _loss_and_grad(
    model: CaeModel, xs: np.ndarray, lam: float
) -> tuple[float, ModelGrads]:
    batch = xs.shape[0]
    enc_hs = _forward(model.encoder, xs)
    dec_hs = _forward(model.decoder, enc_hs[-1])
    recon = dec_hs[-1]
    residual = recon - xs
    loss_val = float(np.mean(np.sum(residual**2, axis=1)))

    enc_grads = [
        (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.encoder
    ]
    dec_grads = [
        (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.decoder
    ]

    # Reconstruction term by reverse accumulation.
    delta = 2.0 * residual / batch
    for l in range(len(model.decoder) - 1, -1, -1):
        layer = model.decoder[l]
        da = delta * _act_prime(dec_hs[l + 1], layer.activation)
        dec_grads[l][0][...] = da.T @ dec_hs[l]
        dec_grads[l][1][...] = da.sum(axis=0)
        delta = da @ layer.weight
    for l in range(len(model.encoder) - 1, -1, -1):
        layer = model.encoder[l]
        da = delta * _act_prime(enc_hs[l + 1], layer.activation)
        enc_grads[l][0][...] = da.T @ enc_hs[l]
        enc_grads[l][1][...] = da.sum(axis=0)
        delta = da @ layer.weight

    if lam != 0.0:
        ks, ds = _encoder_jacobian_chain(model, enc_hs)
        p, pen_grads = _penalty_grads(model, enc_hs, ks, ds)
        loss_val += lam * float(np.mean(p))
        scale = lam / batch
        for (gw, gb), (pw, pb) in zip(enc_grads, pen_grads):
            gw += scale * pw
            gb += scale * pb
    return loss_val, ModelGrads(enc_grads, dec_grads)


def grad(model: CaeModel, batch: np.ndarray, lam: float = 0.0) -> ModelGrads:
    """Gradient of loss() with respect to every parameter."""
    xs, _ = _as_batch(model, np.atleast_2d(np.asarray(batch, dtype=np.float64)),
                      model.input_dim)
    if xs.shape[0] == 0:
        raise ValueError("empty batch")
    return _loss_and_grad(model, xs, lam)[1]


def model_parameters(model: CaeModel) -> list[np.ndarray]:
    """Flat list of parameter arrays (views; mutating them updates the model)."""
    params: list[np.ndarray] = []
    for layer in model.encoder + model.decoder:
        params.append(layer.weight)
        params.append(layer.bias)
    return params


def _flat_grads(grads: ModelGrads) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for gw, gb in grads.encoder + grads.decoder:
        out.append(gw)
        out.append(gb)
    return out


# --- optimizers (shared with the downstream classifiers) -------------------

class Sgd:
    def __init__(self, params: list[np.ndarray], learning_rate: float):
        self.params = params
        self.lr = learning_rate

    def step(self, grads: list[np.ndarray]) -> None:
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    def __init__(
        self,
        params: list[np.ndarray],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def make_optimizer(name: str, params: list[np.ndarray], learning_rate: float):
    if name == "sgd":
        return Sgd(params, learning_rate)
    if name == "adam":
        return Adam(params, learning_rate)
    raise ValueError(f"unknown optimizer {name!r}")


# --- training ---------------------------------------------------------------

def train(
    model: CaeModel, data: np.ndarray, config: TrainConfig
) -> tuple[CaeModel, list[float]]:
    """Minibatch training; deterministic for a fixed seed and config.

    Returns the trained model (updated in place) and per-epoch mean loss.
    Aborts with DivergenceError as soon as a batch loss is non-finite.
    """
    xs = np.asarray(data, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("dataset must be a non-empty 2-D array")
    if xs.shape[1] != model.input_dim:
        raise ValueError(
            f"dataset dim {xs.shape[1]} != model input dim {model.input_dim}"
        )
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config.optimizer, model_parameters(model), config.learning_rate)
    n = xs.shape[0]
    history: list[float] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            xb = xs[perm[start : start + config.batch_size]]
            loss_val, grads = _loss_and_grad(model, xb, config.lam)
            if not np.isfinite(loss_val):
                raise DivergenceError(
                    f"training diverged at epoch {epoch + 1} "
                    f"(lr={config.learning_rate}, optimizer={config.optimizer}): "
                    f"batch loss {loss_val}"
                )
            opt.step(_flat_grads(grads))
            total += loss_val * xb.shape[0]
        history.append(total / n)
    return model, history


# --- serialization ----------------------------------------------------------

def save_model(model: CaeModel, path) -> None:
    """Versioned little-endian binary: magic CAE1, dims, float64 parameters."""
    parts = [_MAGIC, struct.pack("<HHH", _VERSION, len(model.encoder), len(model.decoder))]
    for layer in model.encoder + model.decoder:
        out_dim, in_dim = layer.weight.shape
        parts.append(struct.pack("<IIB", out_dim, in_dim, ACTIVATION_CODES[layer.activation]))
    for layer in model.encoder + model.decoder:
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> CaeModel:
    blob = Path(path).read_bytes()
    view = memoryview(blob)

    def take(nbytes: int) -> memoryview:
        nonlocal view
        if len(view) < nbytes:
            raise DataError(f"model file {path} truncated")
        chunk, view = view[:nbytes], view[nbytes:]
        return chunk

    if bytes(take(4)) != _MAGIC:
        raise DataError(f"{path} is not a model file (bad magic)")
    version, n_enc, n_dec = struct.unpack("<HHH", take(6))
    if version != _VERSION:
        raise DataError(f"unsupported model version {version}")
    if n_enc < 1 or n_dec < 1:
        raise DataError("model file declares an empty encoder or decoder")
    shapes = []
    for _ in range(n_enc + n_dec):
        out_dim, in_dim, code = struct.unpack("<IIB", take(9))
        if code not in _CODE_TO_ACTIVATION:
            raise DataError(f"unknown activation code {code}")
        shapes.append((out_dim, in_dim, _CODE_TO_ACTIVATION[code]))
    layers = []
    for out_dim, in_dim, activation in shapes:
        w = np.frombuffer(take(8 * out_dim * in_dim), dtype="<f8").reshape(out_dim, in_dim)
        b = np.frombuffer(take(8 * out_dim), dtype="<f8")
        layers.append(Layer(w.copy(), b.copy(), activation))
    if len(view):
        raise DataError(f"model file {path} has {len(view)} trailing bytes")
    return CaeModel(layers[:n_enc], layers[n_enc:])
