"""Fully connected autoencoder with hand-written reverse mode.

The encoder ends in a ``bounded`` activation, a scaled logistic mapping
into ``[margin, 1 - margin]``, so latent codes always live inside the
support of the Fourier density model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "ACTIVATIONS",
    "PRESETS",
    "LayerSpec",
    "Layer",
    "NetworkParams",
    "Tape",
    "AdamState",
    "mirrored_specs",
    "preset_specs",
    "init_params",
    "forward",
    "encode",
    "decode",
    "reconstruction_loss",
    "backward",
    "adam_init",
    "adam_step",
    "minibatches",
    "pretrain",
]

ACTIVATIONS = ("relu", "tanh", "identity", "bounded")

# name -> (hidden widths from input to bottleneck, hidden activation, latent dim)
PRESETS = {
    "toy3d": ((128, 64, 32), "relu", 2),
    "mnist": ((128, 64), "relu", 32),
    "fmnist": ((256, 128, 64, 32), "relu", 16),
    "thyroid": ((12, 4), "tanh", 2),
    "kddcup": ((60, 30, 20), "tanh", 10),
    "kddcup_rev": ((60, 30, 20), "tanh", 10),
    "arrhythmia": ((64,), "tanh", 32),
}


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError(f"layer widths must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Layer:
    W: np.ndarray  # (in_width, out_width)
    b: np.ndarray  # (out_width,)
    spec: LayerSpec

    def copy(self) -> "Layer":
        return Layer(self.W.copy(), self.b.copy(), self.spec)


@dataclass
class NetworkParams:
    encoder: list[Layer]
    decoder: list[Layer]
    margin: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.margin <= 0.1:
            raise ValueError(f"bound margin must lie in (0, 0.1], got {self.margin}")
        _check_chain([l.spec for l in self.encoder], [l.spec for l in self.decoder])

    @property
    def input_width(self) -> int:
        return self.encoder[0].spec.in_width

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].spec.out_width

    @property
    def layers(self) -> list[Layer]:
        return self.encoder + self.decoder

    def arrays(self) -> list[np.ndarray]:
        """Learnable arrays in a fixed order: W, b per layer, encoder first."""
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "NetworkParams":
        it = iter(arrays)
        enc = [Layer(next(it), next(it), l.spec) for l in self.encoder]
        dec = [Layer(next(it), next(it), l.spec) for l in self.decoder]
        return NetworkParams(enc, dec, self.margin)

    def copy(self) -> "NetworkParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


def _check_chain(enc: Sequence[LayerSpec], dec: Sequence[LayerSpec]) -> None:
    if not enc or not dec:
        raise ValueError("encoder and decoder need at least one layer each")
    specs = list(enc) + list(dec)
    for i in range(len(specs) - 1):
        a, b = specs[i], specs[i + 1]
        if a.out_width != b.in_width:
            raise ValueError(
                f"layer {i} -> {i + 1}: out_width {a.out_width} does not match "
                f"in_width {b.in_width}"
            )


def mirrored_specs(n_in: int, hidden: Sequence[int], latent: int, activation: str = "relu"):
    """Encoder/decoder specs with a mirrored decoder and bounded bottleneck."""
    widths = [n_in, *hidden, latent]
    enc = [
        LayerSpec(widths[i], widths[i + 1], activation if i < len(widths) - 2 else "bounded")
        for i in range(len(widths) - 1)
    ]
    back = widths[::-1]
    dec = [
        LayerSpec(back[i], back[i + 1], activation if i < len(back) - 2 else "identity")
        for i in range(len(back) - 1)
    ]
    return enc, dec


def preset_specs(name: str, n_in: int, latent: int | None = None):
    if name not in PRESETS:
        raise ValueError(f"unknown architecture preset {name!r}; choose from {sorted(PRESETS)}")
    hidden, act, D = PRESETS[name]
    return mirrored_specs(n_in, hidden, D if latent is None else latent, act)


def init_params(
    specs_enc: Sequence[LayerSpec],
    specs_dec: Sequence[LayerSpec],
    seed,
    margin: float = 0.01,
    unit_init: bool = False,
    require_bounded: bool = True,
) -> NetworkParams:
    """Uniform weights, zero biases.

    The default range is ``[-s, s]`` with ``s = min(1, sqrt(6 / (in + out)))``;
    ``unit_init`` uses ``[-1, 1]`` for every layer.
    """
    _check_chain(specs_enc, specs_dec)
    if require_bounded and specs_enc[-1].activation != "bounded":
        raise ValueError("the final encoder layer must use the 'bounded' activation")
    rng = np.random.default_rng(seed)

    def make(spec: LayerSpec) -> Layer:
        s = 1.0 if unit_init else min(1.0, np.sqrt(6.0 / (spec.in_width + spec.out_width)))
        W = rng.uniform(-s, s, size=(spec.in_width, spec.out_width))
        return Layer(W, np.zeros(spec.out_width), spec)

    enc = [make(s) for s in specs_enc]
    dec = [make(s) for s in specs_dec]
    return NetworkParams(enc, dec, margin)


def _activate(a: np.ndarray, kind: str, margin: float) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    if kind == "bounded":
        return margin + (1.0 - 2.0 * margin) * _sigmoid(a)
    return a


def _activate_grad(a: np.ndarray, kind: str, margin: float) -> np.ndarray:
    if kind == "relu":
        return (a > 0.0).astype(a.dtype)
    if kind == "tanh":
        return 1.0 - np.tanh(a) ** 2
    if kind == "bounded":
        s = _sigmoid(a)
        return (1.0 - 2.0 * margin) * s * (1.0 - s)
    return np.ones_like(a)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class Tape:
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    n_encoder: int = 0
    params_id: int = 0


def _run(layers: Sequence[Layer], H: np.ndarray, margin: float, tape: Tape | None) -> np.ndarray:
    for layer in layers:
        A = H @ layer.W + layer.b
        if tape is not None:
            tape.inputs.append(H)
            tape.preacts.append(A)
        H = _activate(A, layer.spec.activation, margin)
    return H


def forward(params: NetworkParams, X) -> tuple[np.ndarray, np.ndarray, Tape]:
    """Encode and decode ``X``; the tape keeps what ``backward`` needs."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_width:
        raise ValueError(f"expected inputs with {params.input_width} columns, got shape {X.shape}")
    tape = Tape(n_encoder=len(params.encoder), params_id=id(params))
    Z = _run(params.encoder, X, params.margin, tape)
    Xr = _run(params.decoder, Z, params.margin, tape)
    return Z, Xr, tape


def encode(params: NetworkParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_width:
        raise ValueError(f"expected inputs with {params.input_width} columns, got shape {X.shape}")
    return _run(params.encoder, X, params.margin, None)


def decode(params: NetworkParams, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != params.latent_dim:
        raise ValueError(f"expected latent codes with {params.latent_dim} columns, got shape {Z.shape}")
    return _run(params.decoder, Z, params.margin, None)


def reconstruction_loss(X, Xr) -> float:
    """Mean over rows of the squared Euclidean reconstruction error."""
    X = np.asarray(X, dtype=np.float64)
    Xr = np.asarray(Xr, dtype=np.float64)
    if X.shape != Xr.shape or X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"shape mismatch: {X.shape} vs {Xr.shape}")
    return float(np.sum((X - Xr) ** 2) / X.shape[0])


def backward(params: NetworkParams, tape: Tape, dL_dXr, dL_dZ) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse pass.

    ``dL_dXr`` is the loss sensitivity at the decoder output and ``dL_dZ``
    an extra sensitivity injected at the bottleneck.  Returns gradients in
    the order of :meth:`NetworkParams.arrays` and the input gradient.
    """
    layers = params.layers
    if tape.params_id != id(params) or len(tape.preacts) != len(layers) or tape.n_encoder != len(params.encoder):
        raise ValueError("tape does not belong to these parameters")
    G = np.asarray(dL_dXr, dtype=np.float64)
    dZ = np.asarray(dL_dZ, dtype=np.float64)
    if G.shape != tape.preacts[-1].shape or dZ.shape != tape.preacts[tape.n_encoder - 1].shape:
        raise ValueError("sensitivity shapes do not match the recorded forward pass")
    grads: list[np.ndarray] = [None] * (2 * len(layers))  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        if i == tape.n_encoder - 1:
            G = G + dZ
        layer = layers[i]
        dA = G * _activate_grad(tape.preacts[i], layer.spec.activation, params.margin)
        grads[2 * i] = tape.inputs[i].T @ dA
        grads[2 * i + 1] = dA.sum(axis=0)
        G = dA @ layer.W.T
    return grads, G


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(arrays: Sequence[np.ndarray]) -> AdamState:
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch in adam_step: {p.shape}, {g.shape}, {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def minibatches(n: int, batch: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless stream of index batches; reshuffled at the start of each epoch."""
    if n < 1 or batch < 1:
        raise ValueError("need at least one row and a positive batch size")
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            yield perm[start:start + batch]


def batches_per_epoch(n: int, batch: int) -> int:
    return -(-n // batch)


def reconstruction_step(params: NetworkParams, X: np.ndarray):
    """Reconstruction loss on ``X`` and its parameter gradients."""
    Z, Xr, tape = forward(params, X)
    dXr = 2.0 * (Xr - X) / X.shape[0]
    grads, _ = backward(params, tape, dXr, np.zeros_like(Z))
    return reconstruction_loss(X, Xr), grads


def pretrain(
    params: NetworkParams,
    X_train,
    epochs: int,
    lr: float = 1e-3,
    batch: int = 500,
    seed=0,
    history: list | None = None,
) -> NetworkParams:
    """Fit the autoencoder to the reconstruction loss alone with Adam.

    Epoch-mean training losses are appended to ``history`` when given.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("pretraining needs a non-empty (M, N) training set")
    if epochs == 0:
        return params
    rng = np.random.default_rng(seed)
    batches = minibatches(X.shape[0], batch, rng)
    arrays = params.arrays()
    state = adam_init(arrays)
    per_epoch = batches_per_epoch(X.shape[0], batch)
    for _ in range(epochs):
        total = 0.0
        for _ in range(per_epoch):
            idx = next(batches)
            loss, grads = reconstruction_step(params, X[idx])
            arrays, state = adam_step(arrays, grads, state, lr)
            params = params.with_arrays(arrays)
            total += loss * len(idx)
        if history is not None:
            history.append(total / X.shape[0])
    return params
