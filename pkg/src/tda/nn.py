"""Minimal numpy MLP with manual backpropagation and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tda.errors import ValidationError


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


@dataclass
class MlpBlock:
    """Stack of dense layers, leaky-rectified after every layer.

    When ``linear_last`` is set the final layer is left linear. Weights are
    stored as (out, in) matrices.
    """

    weights: list
    biases: list
    slope: float = 0.01
    linear_last: bool = False

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("block needs one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValidationError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValidationError(
                    f"layer {i} expects {W.shape[1]} inputs, previous layer emits {self.weights[i - 1].shape[0]}"
                )

    @property
    def in_width(self):
        return self.weights[0].shape[1]

    @property
    def out_width(self):
        return self.weights[-1].shape[0]

    @property
    def widths(self):
        return [self.in_width] + [W.shape[0] for W in self.weights]

    def _activates(self, i):
        return not (self.linear_last and i == len(self.weights) - 1)

    def forward(self, x):
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ W.T + b
            if self._activates(i):
                x = leaky_relu(x, self.slope)
        return x

    def forward_cached(self, x, dropout=0.0, rng=None):
        """Forward pass keeping what ``backward`` needs.

        With ``dropout > 0`` activated outputs are masked (inverted dropout)
        using ``rng``.
        """
        cache = []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            pre = x @ W.T + b
            mask = None
            if self._activates(i):
                out = leaky_relu(pre, self.slope)
                if dropout > 0:
                    mask = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
                    out = out * mask
            else:
                out = pre
            cache.append((x, pre, mask))
            x = out
        return x, cache

    def backward(self, cache, grad_out):
        """Return ``(layer_grads, grad_input)``; layer_grads is a list of (dW, db)."""
        grads = [None] * len(self.weights)
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            x, pre, mask = cache[i]
            if mask is not None:
                g = g * mask
            if self._activates(i):
                g = g * leaky_relu_grad(pre, self.slope)
            grads[i] = (g.T @ x, g.sum(axis=0))
            g = g @ self.weights[i]
        return grads, g

    def parameters(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b

    def copy(self):
        return MlpBlock(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.slope,
            self.linear_last,
        )


def init_block(rng, widths, slope=0.01, linear_last=False) -> MlpBlock:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    ``widths`` lists the input width followed by every layer's output width.
    """
    if len(widths) < 2 or any(int(w) < 1 for w in widths):
        raise ValidationError(f"invalid layer widths {widths}")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpBlock(weights, biases, slope, linear_last)


@dataclass
class AdamState:
    """First/second moment accumulators, kept per block.

    Each block has its own step counter so bias correction only advances
    for blocks that actually received a gradient.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    slots: dict = field(default_factory=dict)

    def _slot(self, name, block):
        if name not in self.slots:
            self.slots[name] = {
                "t": 0,
                "m": [np.zeros_like(p) for p in block.parameters()],
                "v": [np.zeros_like(p) for p in block.parameters()],
            }
        return self.slots[name]

    def step(self, name, block, layer_grads):
        """Apply one bias-corrected Adam update to ``block`` in place."""
        slot = self._slot(name, block)
        slot["t"] += 1
        t = slot["t"]
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        flat = [g for pair in layer_grads for g in pair]
        for p, g, m, v in zip(block.parameters(), flat, slot["m"], slot["v"]):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def squared_error_loss(x, x_hat):
    """Per-sample sum of squared errors averaged over the batch, and its gradient."""
    diff = x_hat - x
    n = x.shape[0]
    loss = float(np.sum(diff * diff) / n)
    return loss, 2.0 * diff / n
