"""Small fully-connected Q-network with hand-written backprop and Adam."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "mecoffload.mlp"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is missing, corrupt, or of the wrong kind."""


class Mlp:
    """tanh hidden layers, identity output. ``weights[l]`` has shape (in, out).

    All parameters live in one flat float64 buffer; ``weights`` and ``biases``
    are views into it, ordered [W0, b0, W1, b1, ...].
    """

    def __init__(self, dims, flat: np.ndarray | None = None):
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise ValueError(f"invalid layer dims {self.dims}")
        size = sum(i * o + o for i, o in zip(self.dims[:-1], self.dims[1:]))
        self.buffer = np.zeros(size) if flat is None else np.array(flat, dtype=np.float64)
        if self.buffer.shape != (size,):
            raise ValueError(f"flat parameters must have length {size}")
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        pos = 0
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            self.weights.append(self.buffer[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
            self.biases.append(self.buffer[pos:pos + fan_out])
            pos += fan_out

    @property
    def num_parameters(self) -> int:
        return self.buffer.size

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.dims, self.buffer)

    def flat(self) -> np.ndarray:
        return self.buffer.copy()

    def set_flat(self, flat: np.ndarray) -> None:
        self.buffer[...] = flat


@dataclass
class OptimizerState:
    """Adam moments for every parameter array of one network."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, mlp: Mlp, learning_rate: float = 5e-3) -> "OptimizerState":
        return cls(np.zeros_like(mlp.buffer), np.zeros_like(mlp.buffer),
                   learning_rate=learning_rate)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    activations: list[np.ndarray] = field(default_factory=list)


def init(dims, seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    mlp = Mlp(dims)
    rng = np.random.default_rng(seed)
    for w in mlp.weights:
        fan_in, fan_out = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return mlp


def _check_input(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != mlp.dims[0]:
        raise ValueError(f"expected inputs of width {mlp.dims[0]}, got shape {x.shape}")
    return x


def forward(mlp: Mlp, x, cache: ForwardCache | None = None) -> np.ndarray:
    """Q-values for a batch of inputs, shape (batch, dims[-1])."""
    h = _check_input(mlp, x)
    if cache is not None:
        cache.inputs = h
        cache.activations = []
    last = len(mlp.weights) - 1
    for layer, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if layer < last:
            h = np.tanh(h)
            if cache is not None:
                cache.activations.append(h)
    return h


def mse_loss(mlp: Mlp, x, actions, targets) -> float:
    q = forward(mlp, x)
    actions = np.asarray(actions, dtype=np.int64)
    err = q[np.arange(len(actions)), actions] - np.asarray(targets, dtype=np.float64)
    return float(np.mean(err ** 2))


def backward(mlp: Mlp, x, actions, targets) -> tuple[list[np.ndarray], float]:
    """Gradients of mean((Q(x, a) - target)^2) w.r.t. every parameter.

    Returns ``(grads, loss)`` with ``grads`` ordered like ``mlp.parameters()``.
    Only the taken action's output unit receives error.
    """
    cache = ForwardCache(inputs=None)
    q = forward(mlp, x, cache)
    n = q.shape[0]
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    if actions.shape != (n,) or targets.shape != (n,):
        raise ValueError(f"actions/targets must have shape ({n},)")
    rows = np.arange(n)
    err = q[rows, actions] - targets
    delta = np.zeros_like(q)
    delta[rows, actions] = 2.0 * err / n

    grads: list[np.ndarray] = []
    for layer in range(len(mlp.weights) - 1, -1, -1):
        below = cache.activations[layer - 1] if layer > 0 else cache.inputs
        grads.append(delta.sum(axis=0))
        grads.append(below.T @ delta)
        if layer > 0:
            delta = (delta @ mlp.weights[layer].T) * (1.0 - below ** 2)
    grads.reverse()  # now [dW0, db0, dW1, db1, ...]
    return grads, float(np.mean(err ** 2))


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.ravel(g) for g in grads])


def apply_update(mlp: Mlp, state: OptimizerState, grads, learning_rate: float | None = None) -> Mlp:
    """One Adam step in place.

    ``grads`` is either the list from :func:`backward` or a flat vector.
    Raises FloatingPointError on non-finite gradients.
    """
    if isinstance(grads, np.ndarray) and grads.ndim == 1:
        g = grads
    else:
        params = mlp.parameters()
        if len(grads) != len(params):
            raise ValueError("gradient list does not match network parameters")
        for gi, p in zip(grads, params):
            if np.shape(gi) != p.shape:
                raise ValueError(f"gradient shape {np.shape(gi)} != parameter shape {p.shape}")
        g = flatten_grads(grads)
    if g.shape != mlp.buffer.shape:
        raise ValueError("gradient size does not match network parameters")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    if learning_rate is not None:
        state.learning_rate = learning_rate
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    step_size = state.learning_rate / (1.0 - b1 ** state.step)
    denom = np.sqrt(state.v / (1.0 - b2 ** state.step))
    denom += state.eps
    mlp.buffer -= step_size * state.m / denom
    if not np.all(np.isfinite(mlp.buffer)):
        raise FloatingPointError("parameters became non-finite")
    return mlp


def save(mlp: Mlp, path_or_file, **extra) -> None:
    """Write dims and flat parameters (float64, exact) to an ``.npz`` checkpoint.

    ``extra`` holds scalar metadata (e.g. schedule counters) stored alongside.
    """
    arrays = {
        "format": np.array(CHECKPOINT_FORMAT),
        "version": np.array(CHECKPOINT_VERSION),
        "dims": np.array(mlp.dims, dtype=np.int64),
        "params": mlp.flat(),
    }
    for key, value in extra.items():
        arrays[f"meta_{key}"] = np.asarray(value)
    np.savez(path_or_file, **arrays)


def load(path_or_file) -> tuple[Mlp, dict]:
    try:
        with np.load(path_or_file, allow_pickle=False) as data:
            if str(data["format"]) != CHECKPOINT_FORMAT:
                raise CheckpointError(f"not a network checkpoint: {data['format']}")
            if int(data["version"]) != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {int(data['version'])}")
            dims = tuple(int(d) for d in data["dims"])
            flat = np.array(data["params"], dtype=np.float64)
            meta = {k[5:]: data[k].item() for k in data.files if k.startswith("meta_")}
    except CheckpointError:
        raise
    except Exception as exc:  # OSError, KeyError, zipfile.BadZipFile, ...
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    try:
        mlp = Mlp(dims, flat)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint parameters do not match dims {dims}: {exc}") from exc
    return mlp, meta


def to_bytes(mlp: Mlp, **extra) -> bytes:
    buf = io.BytesIO()
    save(mlp, buf, **extra)
    return buf.getvalue()
