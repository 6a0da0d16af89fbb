"""Parameter containers shared by the encoders, backbone and heads."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .numerics import Tensor, gelu, matmul


def param(data, dtype, name=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False, name=name)


def normal_param(gen: np.random.Generator, shape, std: float, dtype, name=None) -> Tensor:
    return param(gen.normal(0.0, std, size=shape), dtype, name)


class Linear:
    """y = x @ weight + bias, weight stored (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, gen: np.random.Generator, dtype=np.float32, std=None, name=""):
        std = std if std is not None else 1.0 / np.sqrt(d_in)
        self.d_in, self.d_out = d_in, d_out
        self.weight = normal_param(gen, (d_in, d_out), std, dtype, f"{name}.weight")
        self.bias = param(np.zeros(d_out), dtype, f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"linear layer expects width {self.d_in}, got {x.shape[-1]}")
        return matmul(x, self.weight) + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    def __init__(self, sizes, gen: np.random.Generator, dtype=np.float32, name=""):
        self.layers = [Linear(a, b, gen, dtype, name=f"{name}.{i}") for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = gelu(layer(x))
        return self.layers[-1](x)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def set_trainable(params, flag: bool) -> None:
    for p in params:
        p.requires_grad = flag
        p.grad = None
