"""Parameter containers and the seeded uniform fan-in initializer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import GRUParams, GridTensor


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> GridTensor:
    """Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(float(fan_in))
    data = rng.uniform(-bound, bound, size=shape)
    return GridTensor(data.astype(dtype), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype) -> GridTensor:
    return GridTensor(np.zeros(shape, dtype=dtype), requires_grad=True, dtype=dtype)


@dataclass
class ConvLayer:
    """One convolution layer's weight and bias."""
    w: GridTensor
    b: GridTensor

    def tensors(self):
        yield "w", self.w
        yield "b", self.b


@dataclass
class LinearLayer:
    w: GridTensor
    b: GridTensor

    def tensors(self):
        yield "w", self.w
        yield "b", self.b


def conv2d_layer(rng, cin: int, cout: int, k: int, dtype, zero: bool = False) -> ConvLayer:
    if zero:
        return ConvLayer(zeros_param((cout, cin, k, k), dtype), zeros_param((cout,), dtype))
    fan_in = cin * k * k
    return ConvLayer(uniform_fan_in(rng, (cout, cin, k, k), fan_in, dtype),
                     uniform_fan_in(rng, (cout,), fan_in, dtype))


def conv3d_layer(rng, cin: int, cout: int, kt: int, k: int, dtype) -> ConvLayer:
    fan_in = cin * kt * k * k
    return ConvLayer(uniform_fan_in(rng, (cout, cin, kt, k, k), fan_in, dtype),
                     uniform_fan_in(rng, (cout,), fan_in, dtype))


def linear_layer(rng, n_in: int, n_out: int, dtype) -> LinearLayer:
    return LinearLayer(uniform_fan_in(rng, (n_out, n_in), n_in, dtype),
                       uniform_fan_in(rng, (n_out,), n_in, dtype))


def gru_layer(rng, n_in: int, hidden: int, dtype) -> GRUParams:
    def w(n):
        return uniform_fan_in(rng, (hidden, n), n, dtype)

    def b():
        return uniform_fan_in(rng, (hidden,), hidden, dtype)

    return GRUParams(wz=w(n_in), uz=w(hidden), bz=b(),
                     wr=w(n_in), ur=w(hidden), br=b(),
                     wn=w(n_in), un=w(hidden), bn=b())
