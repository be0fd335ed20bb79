"""Dense feedforward networks with hand-written backpropagation, plus Adam.

Parameters live in one flat float64 vector.  For each layer ``l`` (fan_in ->
fan_out) the vector holds the weight matrix of shape ``(fan_in, fan_out)`` in
row-major order, followed by the bias of length ``fan_out``; layers appear in
input-to-output order.  Layer views returned by :meth:`Mlp.layers` share
memory with the flat vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("identity", "tanh")


def num_params(layer_sizes: Sequence[int]) -> int:
    return sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


def unflatten(params: np.ndarray, layer_sizes: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat parameter vector into ``(W, b)`` views, one per layer."""
    if params.shape != (num_params(layer_sizes),):
        raise ValueError(
            f"parameter vector has shape {params.shape}, expected ({num_params(layer_sizes)},)"
        )
    out = []
    offset = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


def flatten(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers]).astype(np.float64)


class Mlp:
    """Fully connected network: ReLU on hidden layers, identity or tanh on the output."""

    def __init__(self, layer_sizes: Sequence[int], output_activation: str = "identity",
                 params: np.ndarray | None = None, rng: np.random.Generator | None = None):
        layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        if output_activation not in ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {ACTIVATIONS}, got {output_activation!r}")
        self.layer_sizes = layer_sizes
        self.output_activation = output_activation
        if params is None:
            params = self._init_params(rng if rng is not None else np.random.default_rng())
        params = np.array(params, dtype=np.float64)
        if params.shape != (num_params(layer_sizes),):
            raise ValueError(f"expected {num_params(layer_sizes)} parameters, got shape {params.shape}")
        self.params = params

    def _init_params(self, rng: np.random.Generator) -> np.ndarray:
        # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike
        chunks = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, fan_in * fan_out))
            chunks.append(rng.uniform(-bound, bound, fan_out))
        return np.concatenate(chunks)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def size(self) -> int:
        return self.params.size

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unflatten(self.params, self.layer_sizes)

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.output_activation, params=self.params.copy())

    def same_architecture(self, other: "Mlp") -> bool:
        return (self.layer_sizes == other.layer_sizes
                and self.output_activation == other.output_activation)

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.input_dim:
            raise ValueError(f"input has shape {x.shape}, network expects last dimension {self.input_dim}")
        return x2, single

    def _forward_cache(self, x: np.ndarray):
        pre = []
        acts = [x]
        h = x
        layers = self.layers()
        for i, (w, b) in enumerate(layers):
            z = h @ w + b
            pre.append(z)
            if i < len(layers) - 1:
                h = np.maximum(z, 0.0)
            elif self.output_activation == "tanh":
                h = np.tanh(z)
            else:
                h = z
            acts.append(h)
        return pre, acts

    def forward(self, x) -> np.ndarray:
        """Evaluate the network on one input vector or a ``(batch, input_dim)`` array."""
        x2, single = self._check_input(x)
        out = self._forward_cache(x2)[1][-1]
        return out[0] if single else out

    __call__ = forward

    def backward(self, x, output_grad) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(param_grad, input_grad)`` for the given output cotangent.

        For batched input, ``param_grad`` is summed over the batch and
        ``input_grad`` keeps one row per sample.  The forward pass is recomputed.
        """
        _, pullback = self.vjp(x)
        return pullback(output_grad)

    def vjp(self, x):
        """Forward pass plus a pullback ``g -> (param_grad | None, input_grad)``.

        ``pullback(g, param_grad=False)`` skips the weight gradients.
        """
        x2, single = self._check_input(x)
        pre, acts = self._forward_cache(x2)
        out = acts[-1]

        def pullback(output_grad, param_grad: bool = True):
            g = np.asarray(output_grad, dtype=np.float64)
            g2 = g[None, :] if single and g.ndim == 1 else g
            if g2.shape != (x2.shape[0], self.output_dim):
                raise ValueError(f"output_grad has shape {g.shape}, expected batch x {self.output_dim}")
            layers = self.layers()
            grad = np.empty_like(self.params) if param_grad else None
            grad_layers = unflatten(grad, self.layer_sizes) if param_grad else None
            delta = g2 * (1.0 - out ** 2) if self.output_activation == "tanh" else g2
            for i in range(len(layers) - 1, -1, -1):
                if param_grad:
                    gw, gb = grad_layers[i]
                    np.matmul(acts[i].T, delta, out=gw)
                    gb[...] = delta.sum(axis=0)
                delta = delta @ layers[i][0].T
                if i > 0:
                    delta = delta * (pre[i - 1] > 0.0)
            return grad, (delta[0] if single else delta)

        return (out[0] if single else out), pullback


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def backward(net: Mlp, x, output_grad) -> tuple[np.ndarray, np.ndarray]:
    return net.backward(x, output_grad)


@dataclass
class AdamState:
    """Moment estimates for one parameter vector."""

    size: int
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: np.ndarray = field(default=None)  # type: ignore[assignment]
    second_moment: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.size)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.size)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam descent step.  Inputs are not modified."""
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.first_moment.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.first_moment.shape}"
        )
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient entry at index {int(bad[0])}: {grad[bad[0]]}")
    step = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(state.size, state.learning_rate, state.beta1, state.beta2,
                          state.epsilon, step, m, v)
    return new_params, new_state
