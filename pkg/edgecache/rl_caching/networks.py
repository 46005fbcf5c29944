"""
Small fully-connected networks with manual backpropagation.

Rectified-linear hidden layers, identity output. Parameters are float64
numpy arrays; the gradient code is checked against central finite
differences in the test suite.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import InvalidParameterError, ShapeError


@dataclass
class MlpParams:
    """Layer weights (fan_in, fan_out) and biases (fan_out,)."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("An MLP needs one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"Layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"Layer {i} expects {w.shape[0]} inputs, previous layer gives "
                    f"{self.weights[i - 1].shape[1]}"
                )

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def tensors(self) -> List[np.ndarray]:
        """Parameters in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> 'MlpParams':
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors())

    @classmethod
    def from_tensors(cls, tensors: Sequence[np.ndarray]) -> 'MlpParams':
        return cls(list(tensors[0::2]), list(tensors[1::2]))


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, zero_last: bool = False) -> MlpParams:
    """
    Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero biases.

    zero_last zeroes the output layer so a softmax head starts uniform.
    """
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"Invalid layer sizes {list(sizes)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if zero_last:
        weights[-1][:] = 0.0
    return MlpParams(weights, biases)


def _as_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"Expected input of width {params.input_dim}, got shape {x.shape}")
    return x


def mlp_forward(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Batched forward pass.

    Returns:
        (output of shape (B, out), layer inputs needed by mlp_backward)
    """
    h = _as_batch(params, x)
    layer_inputs = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(h)
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
    return h, layer_inputs


def mlp_backward(params: MlpParams, layer_inputs: List[np.ndarray], grad_out: np.ndarray) -> List[np.ndarray]:
    """Gradients in tensors() order given dLoss/dOutput."""
    grads = [None] * (2 * len(params.weights))
    g = grad_out
    for i in range(len(params.weights) - 1, -1, -1):
        h = layer_inputs[i]
        grads[2 * i] = h.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            # h is the ReLU output of layer i - 1; zero where it was clipped
            g = (g @ params.weights[i].T) * (h > 0)
    return grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


@dataclass
class AdamState:
    """First/second moment accumulators per tensor and the shared step count."""
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, tensors: Sequence[np.ndarray]) -> 'AdamState':
        return cls([np.zeros_like(t) for t in tensors], [np.zeros_like(t) for t in tensors], 0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(tensors: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    correction1 = 1.0 - ADAM_BETA1 ** state.t
    correction2 = 1.0 - ADAM_BETA2 ** state.t
    for param, grad, m, v in zip(tensors, grads, state.m, state.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)


def polyak_update(target: MlpParams, source: MlpParams, tau: float) -> MlpParams:
    """target <- (1 - tau) * target + tau * source, in place."""
    if not 0 < tau <= 1:
        raise InvalidParameterError(f"tau must be in (0, 1], got {tau}")
    if target.sizes != source.sizes:
        raise ShapeError(f"Target sizes {target.sizes} differ from source sizes {source.sizes}")
    for t, s in zip(target.tensors(), source.tensors()):
        t *= 1.0 - tau
        t += tau * s
    return target
