from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (
    Parameter,
    ShapeMismatch,
    Tensor,
    add,
    avgpool2d,
    concat,
    conv2d,
    linear,
    mul,
    sigmoid,
    tanh,
)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Container that discovers parameters on attributes, lists and submodules."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for v in value:
                    if isinstance(v, Module):
                        yield from v.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name: str):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


class Conv2d(Module):
    """3x3 "same" convolution; ``stride`` is an int or a (sW, sH) pair."""

    def __init__(self, in_channels: int, out_channels: int, stride=1, *, rng, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        fan_in, fan_out = in_channels * 9, out_channels * 9
        self.weight = Parameter(
            glorot_uniform(rng, (out_channels, in_channels, 3, 3), fan_in, fan_out, dtype)
        )
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class AvgPool2d(Module):
    def forward(self, x: Tensor) -> Tensor:
        return avgpool2d(x)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, *, rng, dtype=np.float32):
        self.weight = Parameter(
            glorot_uniform(rng, (out_features, in_features), in_features, out_features, dtype)
        )
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, weight: Tensor, bias: Tensor):
    """One LSTM step; ``weight`` is (4k, d+k) over concat(x, h_prev), gates ordered i, f, g, o.

    Works on single vectors or on (B, d) batches.
    """
    k = h_prev.shape[-1]
    if weight.shape[0] != 4 * k or weight.shape[1] != x.shape[-1] + k:
        raise ShapeMismatch(f"lstm weight {weight.shape} for input {x.shape}, hidden {h_prev.shape}")
    if c_prev.shape != h_prev.shape:
        raise ShapeMismatch(f"cell state {c_prev.shape} vs hidden {h_prev.shape}")
    z = linear(concat([x, h_prev], axis=-1), weight, bias)
    i = sigmoid(z[..., 0:k])
    f = sigmoid(z[..., k : 2 * k])
    g = tanh(z[..., 2 * k : 3 * k])
    o = sigmoid(z[..., 3 * k : 4 * k])
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


class LSTMCell(Module):
    def __init__(self, input_size: int, hidden_size: int, *, rng, dtype=np.float32):
        self.input_size = input_size
        self.hidden_size = hidden_size
        k = hidden_size
        self.weight = Parameter(
            glorot_uniform(rng, (4 * k, input_size + k), input_size + k, 4 * k, dtype)
        )
        b = np.zeros(4 * k, dtype=dtype)
        b[k : 2 * k] = 1.0  # forget gate
        self.bias = Parameter(b)

    def forward(self, x: Tensor, h: Tensor, c: Tensor):
        return lstm_cell(x, h, c, self.weight, self.bias)


class LSTM(Module):
    """Runs an :class:`LSTMCell` over a (B, T, d) sequence and returns the last hidden state."""

    def __init__(self, input_size: int, hidden_size: int, *, rng, dtype=np.float32):
        self.cell = LSTMCell(input_size, hidden_size, rng=rng, dtype=dtype)
        self.steps_run = 0

    def forward(self, seq: Tensor) -> Tensor:
        b, t, _ = seq.shape
        dtype = self.cell.weight.dtype
        h = Tensor(np.zeros((b, self.cell.hidden_size), dtype=dtype))
        c = Tensor(np.zeros((b, self.cell.hidden_size), dtype=dtype))
        for step in range(t):
            h, c = self.cell(seq[:, step, :], h, c)
        self.steps_run = t
        return h
