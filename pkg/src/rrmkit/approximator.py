"""Small feedforward networks used as Q-function approximators.

Networks map a feature vector to one value per action. Hidden layers use
tanh or relu; the output layer is linear. Training minimizes a masked mean
squared error with plain gradient descent, full-batch by default.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DimensionError, DivergenceError, EmptyBatchError

_ACT_IDS = {"tanh": _kernels.ACT_TANH, "relu": _kernels.ACT_RELU}


@dataclass(frozen=True)
class NetConfig:
    """Architecture of one network: widths, hidden activation, init seed."""

    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.output_dim < 1:
            raise ValueError(f"output_dim must be >= 1, got {self.output_dim}")
        if not self.hidden_layers:
            raise ValueError("hidden_layers must be non-empty")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError(f"hidden layer widths must be >= 1: {self.hidden_layers}")
        if self.activation not in _ACT_IDS:
            raise ValueError(f"activation must be one of {sorted(_ACT_IDS)}, "
                             f"got {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.output_dim)


class NetworkWeights:
    """Per-layer (weight matrix, bias vector) pairs plus the hidden activation.

    Weight matrices are (fan_out, fan_in); shapes must chain from one layer
    to the next. Instances are treated as immutable values: operations
    return new objects rather than mutating.
    """

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]],
                 activation: str = "tanh"):
        if activation not in _ACT_IDS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.layers = [(np.asarray(W, dtype=np.float64),
                        np.asarray(b, dtype=np.float64)) for W, b in layers]
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        prev_out = None
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise DimensionError(
                    f"layer {i}: weight {W.shape} and bias {b.shape} do not form "
                    f"a (fan_out x fan_in, fan_out) pair")
            if prev_out is not None and W.shape[1] != prev_out:
                raise DimensionError(
                    f"layer {i}: fan_in {W.shape[1]} != previous fan_out {prev_out}")
            prev_out = W.shape[0]
        if not all(np.all(np.isfinite(W)) and np.all(np.isfinite(b))
                   for W, b in self.layers):
            raise ValueError("weights must be finite")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def dims(self) -> np.ndarray:
        """Layer widths as int64 array: [input, hidden..., output]."""
        return np.array([self.input_dim] + [W.shape[0] for W, _ in self.layers],
                        dtype=np.int64)

    def to_flat(self) -> np.ndarray:
        """Pack into the flat vector layout the kernels operate on."""
        parts = []
        for W, b in self.layers:
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, theta: np.ndarray, dims: Sequence[int],
                  activation: str) -> "NetworkWeights":
        dims = list(dims)
        layers = []
        off = 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            W = theta[off:off + fan_out * fan_in].reshape(fan_out, fan_in).copy()
            off += fan_out * fan_in
            b = theta[off:off + fan_out].copy()
            off += fan_out
            layers.append((W, b))
        if off != theta.shape[0]:
            raise DimensionError(
                f"flat vector has {theta.shape[0]} entries, dims {dims} need {off}")
        return cls(layers, activation)

    def __eq__(self, other):
        if not isinstance(other, NetworkWeights):
            return NotImplemented
        return (self.activation == other.activation
                and len(self.layers) == len(other.layers)
                and all(np.array_equal(W1, W2) and np.array_equal(b1, b2)
                        for (W1, b1), (W2, b2) in zip(self.layers, other.layers)))


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine map applied to net inputs: (x - shift) / scale."""

    shift: np.ndarray
    scale: np.ndarray
    method: str = "minmax"

    def __post_init__(self):
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        if self.method not in ("minmax", "zscore"):
            raise ValueError(f"method must be minmax or zscore, got {self.method!r}")
        if self.shift.shape != self.scale.shape or self.shift.ndim != 1:
            raise DimensionError("shift and scale must be 1-D and equal length")
        if np.any(self.scale <= 0):
            raise ValueError("scale must be strictly positive for every feature")

    @property
    def dim(self) -> int:
        return self.shift.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, data: np.ndarray, method: str = "minmax") -> "Normalizer":
        """Fit shift/scale to a (n_samples, n_features) array.

        Degenerate (constant) features get scale 1 so the map stays invertible.
        """
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0:
            raise DimensionError("need a non-empty 2-D (samples x features) array")
        if method == "minmax":
            lo = data.min(axis=0)
            span = data.max(axis=0) - lo
            return cls(lo, np.where(span > 0, span, 1.0), method)
        if method == "zscore":
            std = data.std(axis=0)
            return cls(data.mean(axis=0), np.where(std > 0, std, 1.0), method)
        raise ValueError(f"unknown method {method!r}")

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected {self.dim} features, got {x.shape[-1]}")
        return (x - self.shift) / self.scale

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.shift


@dataclass(frozen=True)
class FitConfig:
    """Inner-loop training hyperparameters (MSE loss).

    batch is "full" or "mini"; mini-batch shuffling is seeded by `seed` so
    training stays reproducible.
    """

    epochs: int = 300
    learning_rate: float = 0.01
    batch: str = "full"
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch not in ("full", "mini"):
            raise ValueError(f"batch must be full or mini, got {self.batch!r}")
        if self.batch == "mini" and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def init_weights(config: NetConfig) -> NetworkWeights:
    """Initialize weights uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    Deterministic for a given config seed.
    """
    rng = np.random.default_rng(config.seed)
    layers = []
    dims = config.dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((W, b))
    return NetworkWeights(layers, config.activation)


def _as_batch(weights: NetworkWeights, inputs) -> np.ndarray:
    X = np.asarray(inputs, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != weights.input_dim:
        raise DimensionError(
            f"input has {X.shape[-1] if X.ndim else 0} features, "
            f"net expects {weights.input_dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs must be finite")
    return X if not squeeze else X


def forward(weights: NetworkWeights, inputs) -> np.ndarray:
    """Evaluate the net. 1-D input gives a 1-D Q-vector; 2-D gives a batch."""
    X = np.asarray(inputs, dtype=np.float64)
    single = X.ndim == 1
    X2 = _as_batch(weights, X)
    out = _kernels.net_forward(weights.to_flat(), weights.dims,
                               _ACT_IDS[weights.activation],
                               np.ascontiguousarray(X2))
    return out[0] if single else out


def _check_training_arrays(weights, inputs, targets, masks):
    X = np.asarray(inputs, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatchError("training batch is empty")
    if X.shape[1] != weights.input_dim:
        raise DimensionError(f"inputs have {X.shape[1]} features, "
                             f"net expects {weights.input_dim}")
    if T.shape != (X.shape[0], weights.output_dim):
        raise DimensionError(f"targets shape {T.shape} does not match "
                             f"(batch, output_dim)=({X.shape[0]}, {weights.output_dim})")
    if masks is None:
        M = np.ones_like(T)
    else:
        M = np.asarray(masks, dtype=np.float64)
        if M.shape != T.shape:
            raise DimensionError(f"mask shape {M.shape} != target shape {T.shape}")
    return (np.ascontiguousarray(X), np.ascontiguousarray(T),
            np.ascontiguousarray(M))


def gradient(weights: NetworkWeights, inputs, targets, masks=None) -> NetworkWeights:
    """Gradient of the mean masked squared error, in NetworkWeights shape.

    The mask zeroes the loss on outputs other than the taken action; a None
    mask trains every output.
    """
    X, T, M = _check_training_arrays(weights, inputs, targets, masks)
    g, _ = _kernels.net_grad(weights.to_flat(), weights.dims,
                             _ACT_IDS[weights.activation], X, T, M)
    return NetworkWeights.from_flat(g, weights.dims, weights.activation)


def masked_mse(weights: NetworkWeights, inputs, targets, masks=None) -> float:
    """Mean masked squared error of the net on a batch."""
    X, T, M = _check_training_arrays(weights, inputs, targets, masks)
    _, loss = _kernels.net_grad(weights.to_flat(), weights.dims,
                                _ACT_IDS[weights.activation], X, T, M)
    return float(loss)


def fit(weights: NetworkWeights, inputs, targets, masks,
        config: FitConfig) -> tuple[NetworkWeights, np.ndarray]:
    """Run `config.epochs` gradient steps; return (new weights, loss history).

    The loss history holds the pre-update loss of every epoch. Raises
    DivergenceError naming the epoch if the loss leaves the finite range.
    """
    X, T, M = _check_training_arrays(weights, inputs, targets, masks)
    theta = weights.to_flat()
    act = _ACT_IDS[weights.activation]
    if config.batch == "full":
        theta, losses, diverged = _kernels.net_fit_full(
            theta, weights.dims, act, X, T, M, config.epochs, config.learning_rate)
    else:
        rng = np.random.default_rng(config.seed)
        order = np.empty((config.epochs, X.shape[0]), dtype=np.int64)
        for e in range(config.epochs):
            order[e] = rng.permutation(X.shape[0])
        theta, losses, diverged = _kernels.net_fit_minibatch(
            theta, weights.dims, act, X, T, M, config.learning_rate,
            order, config.batch_size)
    if diverged >= 0:
        raise DivergenceError(f"training loss became non-finite at epoch {diverged}",
                              epoch=int(diverged))
    return NetworkWeights.from_flat(theta, weights.dims, weights.activation), losses
