"""
`hieraseg` parameter containers and basic layers.
"""

from __future__ import annotations

import logging
from typing import Iterator, Mapping

import numpy as np

from hieraseg.exceptions import ShapeError, ValidationError

from . import ops
from .tensor import Tensor

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A leaf tensor owned by a Module; `frozen` parameters never train."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.frozen = False

    def __repr__(self):
        flag = ", frozen" if self.frozen else ""
        return f"Parameter(shape={self.shape}{flag})"


class Module:
    """
    Base class for layers and networks.

    Parameters and sub-modules are discovered from instance attributes (also
    inside lists and dicts), in attribute insertion order, so parameter names
    and ordering are deterministic.
    """

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, param in self._walk(prefix):
            if id(param) not in seen:
                seen.add(id(param))
                yield name, param

    def _walk(self, prefix: str) -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk_value(f"{prefix}{name}", value)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.frozen]

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def freeze(self) -> "Module":
        for param in self.parameters():
            param.frozen = True
            param.requires_grad = False
            param.grad = None
        return self

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise ValidationError(
                f"State mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}"
            )
        for name, value in state.items():
            if name not in own:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != own[name].shape:
                raise ShapeError(f"load_state_dict[{name}]", own[name].shape, value.shape)
            own[name].data = value.copy()


def _walk_value(name: str, value) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value._walk(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_value(f"{name}.{i}", item)
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk_value(f"{name}.{key}", item)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        bias: bool = True,
    ):
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, kernel_size, kernel_size))
        )
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.in_channels = in_channels
        self.out_channels = out_channels

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ShapeError("conv2d (channels)", x.shape, self.weight.shape)
        return ops.conv2d(x, self.weight, self.bias)


class Linear(Module):
    """Applies to the last axis; weight is stored (in, out)."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        gain: float = 1.0,
    ):
        self.weight = Parameter(rng.normal(0.0, gain / np.sqrt(in_features), (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError("linear", x.shape, self.weight.shape)
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class Scalar(Module):
    """A single learnable scalar (fusion and gating weights)."""

    def __init__(self, value: float):
        self.value = Parameter(np.asarray(float(value)))

    def forward(self, x) -> Tensor:
        return ops.mul(x, self.value)

    def set(self, value: float) -> None:
        self.value.data = np.asarray(float(value))

    def __float__(self):
        return float(self.value.data)


