"""Neural building blocks and loss helpers on top of the autodiff engine."""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    clip,
    log,
    matmul,
    power,
    relu,
    smooth_l1,
    tmean,
    tsum,
)

_PROB_EPS = 1e-12


def he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Scaled normal init; variance 2/fan_in suits ReLU stacks."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


class Linear:
    """y = x @ w + b with float64 parameters."""

    def __init__(self, weight: Tensor, bias: Tensor | None = None):
        self.weight = weight
        self.bias = bias

    @staticmethod
    def create(rng: np.random.Generator, fan_in: int, fan_out: int, zero: bool = False) -> "Linear":
        w = np.zeros((fan_in, fan_out)) if zero else he_init(rng, fan_in, fan_out)
        return Linear(
            Tensor(w, requires_grad=True),
            Tensor(np.zeros(fan_out), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        named = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            named[f"{prefix}.bias"] = self.bias
        return named


class MLP:
    """Linear layers with ReLU between them; the last layer stays linear."""

    def __init__(self, layers: list[Linear]):
        if not layers:
            raise ValueError("MLP needs at least one layer")
        self.layers = layers

    @staticmethod
    def create(rng: np.random.Generator, dims: list[int], zero_last: bool = False) -> "MLP":
        if len(dims) < 2:
            raise ValueError("MLP needs input and output dimensions")
        layers = []
        for i in range(len(dims) - 1):
            zero = zero_last and i == len(dims) - 2
            layers.append(Linear.create(rng, dims[i], dims[i + 1], zero=zero))
        return MLP(layers)

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            named.update(layer.tensors(f"{prefix}.{i}"))
        return named


def mlp_forward(mlp: MLP, x: Tensor) -> Tensor:
    if x.data.shape[-1] != mlp.layers[0].weight.data.shape[0]:
        raise ValueError(
            f"input width {x.data.shape[-1]} does not match "
            f"first layer fan-in {mlp.layers[0].weight.data.shape[0]}"
        )
    return mlp(x)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    return tmean(power(pred - Tensor(np.asarray(target, dtype=float)), 2.0))


def bce_loss(prob: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on probabilities.

    Probabilities are clamped away from 0/1 so saturated sigmoids cannot
    produce infinities; at exact labels the loss is exactly zero.
    """
    y = Tensor(np.asarray(target, dtype=float))
    p = clip(prob, _PROB_EPS, 1.0 - _PROB_EPS)
    one = Tensor(1.0)
    return -tmean(y * log(p) + (one - y) * log(one - p))


def cross_entropy_loss(probs: Tensor, class_indices: np.ndarray) -> Tensor:
    """Mean multi-class cross-entropy: -log p of the labeled class.

    ``probs`` is (N, C) of class probabilities, ``class_indices`` (N,)
    integer labels.
    """
    idx = np.asarray(class_indices, dtype=int)
    n, c = probs.data.shape
    if idx.shape != (n,):
        raise ValueError(f"expected {n} class labels, got shape {idx.shape}")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), idx] = 1.0
    picked = tsum(clip(probs, _PROB_EPS, 1.0) * Tensor(onehot), axis=1)
    return -tmean(log(picked))


def smooth_l1_loss(diff: Tensor) -> Tensor:
    """Mean smooth-L1 of an elementwise difference tensor."""
    return tmean(smooth_l1(diff))
