"""Bias-free MLP with manual forward/backward passes.

The network is a chain of weight matrices W^1..W^{L+1} with an elementwise
activation between them and none after the last:

    h^1 = W^1 xi,   x^l = phi(h^l),   h^{l+1} = W^{l+1} x^l,   f = h^{L+1}

Shapes: W^1 is (n, d_in), hidden W^l are (n, n), W^{L+1} is (d_out, n).
Batches are stored row-wise, so the code computes h = x @ W^T.

A `NetworkState` keeps the current weights plus a frozen copy of the
initialization (never mutated), which is what the update decomposition
Delta h = (Delta W) x + W_0 (Delta x) is measured against.

Checkpoint format (`save_weights`/`load_weights`): 8-byte magic b"WLNET01\\n",
uint32 little-endian layer count, then per layer uint32 LE (rows, cols),
then the concatenated row-major float64 LE payloads in layer order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .params import ParamSpec
from .rng import Rng, gaussian_matrix
from . import params as _params

CHECKPOINT_MAGIC = b"WLNET01\n"

_SQRT_PI = float(np.sqrt(np.pi))

# Abramowitz-Stegun 7.1.26 rational approximation, max abs error 1.5e-7.
_ERF_P = 0.3275911
_ERF_A = (0.254829592, -0.284496736, 1.421413741, -1.453152027, 1.061405429)


def erf(x: np.ndarray) -> np.ndarray:
    """Vectorized erf via a documented rational approximation.

    Absolute error is at most 1.5e-7; adequate for the sigma-gelu activation
    whose tests allow that headroom.
    """
    x = np.asarray(x, dtype=np.float64)
    sign = np.sign(x)
    ax = np.abs(x)
    t = 1.0 / (1.0 + _ERF_P * ax)
    poly = t * (
        _ERF_A[0]
        + t * (_ERF_A[1] + t * (_ERF_A[2] + t * (_ERF_A[3] + t * _ERF_A[4])))
    )
    return sign * (1.0 - poly * np.exp(-ax * ax))


class Relu:
    name = "relu"

    def value(self, h: np.ndarray) -> np.ndarray:
        return np.maximum(h, 0.0)

    def prime(self, h: np.ndarray) -> np.ndarray:
        # Derivative at exactly 0 is 0, consistent with sparsity counting.
        return (h > 0.0).astype(np.float64)


class Identity:
    name = "identity"

    def value(self, h: np.ndarray) -> np.ndarray:
        return h

    def prime(self, h: np.ndarray) -> np.ndarray:
        return np.ones_like(h)


class SigmaGelu:
    """Smoothed ReLU: x/2 * (1 + erf(x/sigma)) + sigma * exp(-(x/sigma)^2) / (2 sqrt(pi)).

    The exponential term makes the derivative collapse to the clean form
    (1 + erf(x/sigma)) / 2.
    """

    name = "sigma_gelu"

    def __init__(self, sigma: float = 1.0):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)

    def value(self, h: np.ndarray) -> np.ndarray:
        z = h / self.sigma
        return 0.5 * h * (1.0 + erf(z)) + self.sigma * np.exp(-z * z) / (2.0 * _SQRT_PI)

    def prime(self, h: np.ndarray) -> np.ndarray:
        return 0.5 * (1.0 + erf(h / self.sigma))


def sigma_gelu(x, sigma: float):
    """Functional form of the sigma-gelu activation."""
    return SigmaGelu(sigma).value(np.asarray(x, dtype=np.float64))


def sigma_gelu_prime(x, sigma: float):
    """Derivative of sigma-gelu: (1 + erf(x/sigma)) / 2."""
    return SigmaGelu(sigma).prime(np.asarray(x, dtype=np.float64))


def make_activation(name: str, sigma: float = 1.0):
    if name == "relu":
        return Relu()
    if name == "identity":
        return Identity()
    if name == "sigma_gelu":
        return SigmaGelu(sigma)
    raise ValueError(f"unknown activation {name!r}")


def layer_dims(depth: int, width: int, d_in: int, d_out: int) -> list[tuple[int, int]]:
    """(rows, cols) per weight matrix; depth counts weight matrices."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth == 1:
        return [(d_out, d_in)]
    dims = [(width, d_in)]
    dims += [(width, width)] * (depth - 2)
    dims.append((d_out, width))
    return dims


@dataclass
class NetworkState:
    """Current and initial weights of one MLP, owned by a single run."""

    weights: list
    weights_0: list
    activation: object
    width: int
    d_in: int
    d_out: int
    diverged: bool = field(default=False)

    @property
    def depth(self) -> int:
        return len(self.weights)

    def delta_w(self, layer: int) -> np.ndarray:
        """Accumulated update W_t - W_0 for one layer (0-based)."""
        return self.weights[layer] - self.weights_0[layer]


def init_network(
    rng: Rng,
    spec: ParamSpec,
    width: int,
    d_in: int,
    d_out: int,
    activation=None,
) -> NetworkState:
    """Sample initial weights per the parameterization's variances.

    Each layer draws from its own RNG stream so diagnostics or extra layers
    never shift other layers' draws.
    """
    activation = activation if activation is not None else Relu()
    dims = layer_dims(spec.depth, width, d_in, d_out)
    weights = []
    for i, (rows, cols) in enumerate(dims):
        var = _params.scaled_init_variance(spec, i, width, fan_in=cols)
        weights.append(gaussian_matrix(rng.split("init", i), rows, cols, var))
    frozen = [w.copy() for w in weights]
    for w in frozen:
        w.setflags(write=False)
    return NetworkState(
        weights=weights,
        weights_0=frozen,
        activation=activation,
        width=width,
        d_in=d_in,
        d_out=d_out,
    )


@dataclass
class ForwardTrace:
    """Cached per-layer pre-activations and activations for one batch.

    xs[0] is the input batch; xs[l] = phi(hs[l-1]) for hidden layers;
    hs[-1] are the logits (no activation after the output layer).
    """

    xs: list
    hs: list
    diverged: bool

    @property
    def logits(self) -> np.ndarray:
        return self.hs[-1]


def forward(net: NetworkState, batch: np.ndarray) -> ForwardTrace:
    """Run the batch through the net, caching the full trace.

    Non-finite logits set the trace's diverged flag instead of raising, so
    divergent regimes can be measured rather than crashed on.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.d_in:
        raise ValueError(
            f"batch must be (samples, {net.d_in}), got {batch.shape}"
        )
    xs = [batch]
    hs = []
    act = net.activation
    # Overflow to inf is an expected, measured outcome in divergent regimes;
    # the diverged flag is the signal, not a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        for i, w in enumerate(net.weights):
            h = xs[-1] @ w.T
            hs.append(h)
            if i < net.depth - 1:
                xs.append(act.value(h))
    diverged = not bool(np.isfinite(hs[-1]).all())
    return ForwardTrace(xs=xs, hs=hs, diverged=diverged)


def backward(net: NetworkState, trace: ForwardTrace, chi: np.ndarray) -> list:
    """Gradients of the (mean-over-batch) loss w.r.t. every weight matrix.

    `chi` must be the gradient of the scalar loss w.r.t. the logits, shape
    (samples, d_out); the batch mean is already inside chi, so this is a
    pure chain rule pass and is exactly linear in chi.
    """
    chi = np.asarray(chi, dtype=np.float64)
    if chi.shape != trace.hs[-1].shape:
        raise ValueError(
            f"chi shape {chi.shape} must match logits shape {trace.hs[-1].shape}"
        )
    act = net.activation
    grads: list = [None] * net.depth
    g = chi  # gradient w.r.t. the current layer's pre-activations h^l
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in range(net.depth - 1, -1, -1):
            grads[layer] = g.T @ trace.xs[layer]
            if layer > 0:
                g = (g @ net.weights[layer]) * act.prime(trace.hs[layer - 1])
    return grads


def save_weights(path, weights) -> None:
    """Write weights in the flat binary checkpoint format (see module doc)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(weights)))
        for w in weights:
            rows, cols = w.shape
            fh.write(struct.pack("<II", rows, cols))
        for w in weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_weights(path) -> list:
    """Read a checkpoint; validates magic, header, and payload size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    off = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    shapes = []
    for _ in range(count):
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        if rows < 1 or cols < 1:
            raise ValueError(f"{path}: invalid layer shape {rows}x{cols}")
        shapes.append((rows, cols))
    expected = off + sum(r * c * 8 for r, c in shapes)
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size {len(raw)} does not match header ({expected})"
        )
    weights = []
    for rows, cols in shapes:
        n = rows * cols * 8
        arr = np.frombuffer(raw[off : off + n], dtype="<f8").reshape(rows, cols)
        weights.append(arr.astype(np.float64))
        off += n
    return weights
