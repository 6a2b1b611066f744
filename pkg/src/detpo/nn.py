"""Small fully connected networks with hand-written backprop.

All parameters of a net live in one flat float64 vector; per-layer weight
and bias arrays are views into it, so optimiser steps and target blending
are single vector operations. Weights are stored ``(fan_in, fan_out)`` and
inputs are row batches ``(batch, fan_in)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "MlpNet",
    "Tape",
    "GradientSet",
    "Adam",
    "NonFiniteError",
    "soft_update",
    "save_net",
    "load_net",
    "save_nets",
    "load_nets",
]

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("linear", "scaled_tanh")
MAGIC = b"DETPO-MLP 1\n"


class NonFiniteError(FloatingPointError):
    """Raised when NaN/Inf shows up in gradients or parameters."""


class MlpNet:
    def __init__(self, layer_sizes: Sequence[int], hidden_activation: str = "relu",
                 output_activation: str = "linear", output_scale: float = 1.0,
                 rng: Optional[np.random.Generator] = None, final_layer_scale: float = 1.0,
                 params: Optional[np.ndarray] = None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output widths")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.output_scale = float(output_scale)
        self.version = 0

        shapes = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        self._shapes = shapes
        n = sum(int(np.prod(s)) for s in shapes)
        if params is None:
            self.params = np.zeros(n)
            self._bind()
            if rng is not None:
                self._init(rng, final_layer_scale)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (n,):
                raise ValueError(f"expected {n} parameters, got {params.shape}")
            self.params = params.copy()
            self._bind()

    def _bind(self):
        self.weights, self.biases = [], []
        offset = 0
        for i, shape in enumerate(self._shapes):
            size = int(np.prod(shape))
            view = self.params[offset:offset + size].reshape(shape)
            (self.weights if i % 2 == 0 else self.biases).append(view)
            offset += size

    def _init(self, rng, final_layer_scale):
        # uniform(+-1/sqrt(fan_in)); the last layer optionally shrunk
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            bound = 1.0 / np.sqrt(W.shape[0])
            if i == len(self.weights) - 1:
                bound *= final_layer_scale
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def in_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_width(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpNet":
        return MlpNet(self.layer_sizes, self.hidden_activation, self.output_activation,
                      self.output_scale, params=self.params)

    def congruent(self, other: "MlpNet") -> bool:
        return (self.layer_sizes == other.layer_sizes
                and self.hidden_activation == other.hidden_activation
                and self.output_activation == other.output_activation
                and self.output_scale == other.output_scale)

    def touch(self):
        """Mark parameters as changed; outstanding tapes become stale."""
        self.version += 1

    def forward(self, x) -> tuple[np.ndarray, "Tape"]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.in_width:
            raise ValueError(f"input width {x.shape[1]} != {self.in_width}")
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            pre.append(z)
            if i < last:
                h = np.maximum(z, 0.0) if self.hidden_activation == "relu" else np.tanh(z)
            elif self.output_activation == "scaled_tanh":
                h = self.output_scale * np.tanh(z)
            else:
                h = z
            acts.append(h)
        tape = Tape(self, self.version, acts, pre, single)
        return (h[0] if single else h), tape

    def __call__(self, x) -> np.ndarray:
        """Forward pass without recording a tape."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_width:
            raise ValueError(f"input width {x.shape[-1]} != {self.in_width}")
        h = x
        ws, bs = self.weights, self.biases
        last = len(ws) - 1
        relu = self.hidden_activation == "relu"
        for i in range(last):
            z = h @ ws[i] + bs[i]
            h = np.maximum(z, 0.0) if relu else np.tanh(z)
        z = h @ ws[last] + bs[last]
        if self.output_activation == "scaled_tanh":
            return self.output_scale * np.tanh(z)
        return z

    def backward(self, tape: "Tape", output_grad, need_params: bool = True) -> "GradientSet":
        """Gradients of ``sum(output * output_grad)`` w.r.t. parameters and input.

        With ``need_params=False`` only the input gradient is computed.
        """
        if tape.net is not self or tape.version != self.version:
            raise ValueError("stale tape: network changed since the forward pass")
        g = np.asarray(output_grad, dtype=np.float64)
        if tape.single:
            g = g[None, :]
        grads = np.zeros_like(self.params)
        gW, gb = _views(grads, self._shapes) if need_params else (None, None)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            a_out = tape.acts[i + 1]
            if i == last:
                if self.output_activation == "scaled_tanh":
                    t = a_out / self.output_scale
                    g = g * self.output_scale * (1.0 - t * t)
            elif self.hidden_activation == "relu":
                g = g * (tape.pre[i] > 0.0)
            else:
                g = g * (1.0 - a_out * a_out)
            if need_params:
                gW[i][...] = tape.acts[i].T @ g
                gb[i][...] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return GradientSet(grads, g[0] if tape.single else g)

    def state_header(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "hidden_activation": self.hidden_activation,
                "output_activation": self.output_activation, "output_scale": self.output_scale,
                "dtype": "<f8", "n_params": self.n_params}


def _views(flat, shapes):
    ws, bs = [], []
    offset = 0
    for i, shape in enumerate(shapes):
        size = int(np.prod(shape))
        (ws if i % 2 == 0 else bs).append(flat[offset:offset + size].reshape(shape))
        offset += size
    return ws, bs


@dataclass
class Tape:
    net: MlpNet
    version: int
    acts: list
    pre: list
    single: bool


@dataclass
class GradientSet:
    params: np.ndarray
    inputs: np.ndarray

    def views(self, net: MlpNet):
        return _views(self.params, net._shapes)


class Adam:
    """Bias-corrected adaptive-moment optimiser over a net's flat parameters."""

    def __init__(self, net: MlpNet, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros_like(net.params)
        self.v = np.zeros_like(net.params)
        self.t = 0

    def step(self, net: MlpNet, grads: GradientSet) -> None:
        g = grads.params
        if g.shape != self.m.shape:
            raise ValueError("gradient shape does not match optimiser state")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        net.params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        net.touch()


def soft_update(target: MlpNet, source: MlpNet, tau: float) -> None:
    """``target <- tau * source + (1 - tau) * target``, in place."""
    if not target.congruent(source):
        raise ValueError("soft_update needs congruent networks")
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if tau == 1.0:
        target.params[...] = source.params
    else:
        target.params *= 1.0 - tau
        target.params += tau * source.params
    target.touch()


# Checkpoint layout: MAGIC line, one line of JSON header, then the flat
# parameter vector as little-endian float64 (per layer: W row-major
# (fan_in, fan_out), then b).

def _write_net(fh, net: MlpNet):
    fh.write(MAGIC)
    fh.write(json.dumps(net.state_header(), sort_keys=True).encode() + b"\n")
    fh.write(net.params.astype("<f8").tobytes())


def _read_net(fh) -> MlpNet:
    if fh.readline() != MAGIC:
        raise ValueError("not a network checkpoint")
    header = json.loads(fh.readline())
    n = int(header["n_params"])
    raw = fh.read(8 * n)
    if len(raw) != 8 * n:
        raise ValueError("truncated network checkpoint")
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return MlpNet(header["layer_sizes"], header["hidden_activation"], header["output_activation"],
                  header["output_scale"], params=params)


def save_net(path, net: MlpNet) -> None:
    with open(path, "wb") as fh:
        _write_net(fh, net)


def load_net(path) -> MlpNet:
    with open(path, "rb") as fh:
        return _read_net(fh)


def save_nets(path, nets: dict) -> None:
    """Several named nets in one file, in the order given."""
    with open(path, "wb") as fh:
        fh.write(json.dumps(list(nets)).encode() + b"\n")
        for net in nets.values():
            _write_net(fh, net)


def load_nets(path) -> dict:
    with open(path, "rb") as fh:
        names = json.loads(fh.readline())
        return {name: _read_net(fh) for name in names}
