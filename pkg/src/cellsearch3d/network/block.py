"""Minimal container for parameterised network pieces."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..autodiff import KERNEL, Parameter, ops


class Block:
    """Anything holding Parameters or sub-Blocks in its attributes.

    Parameters are discovered by walking instance attributes (including
    lists and dicts) in insertion order; shared Parameters are reported once,
    under the first name they are reached by.
    """

    def __call__(self, *args):
        return self.forward(*args)

    def forward(self, *args):
        raise NotImplementedError

    def _children(self, prefix: str):
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen = set()
        for name, p in self._children(prefix):
            if p.uid not in seen:
                seen.add(p.uid)
                yield name, p

    def parameters(self, kind: str | None = None) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if kind is None or p.kind == kind]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _walk(value, name):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Block):
        yield from value._children(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}")


def uniform_weight(rng: np.random.Generator, shape, fan_in: int) -> Parameter:
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, shape), KERNEL)


def gn_groups(channels: int) -> int:
    return 4 if channels % 4 == 0 else 1


class GroupNorm(Block):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.groups = gn_groups(channels)
        self.eps = eps
        self.gamma = Parameter(np.ones(channels), KERNEL)
        self.beta = Parameter(np.zeros(channels), KERNEL)

    def forward(self, x):
        return ops.group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class Conv(Block):
    def __init__(self, cin, cout, k, rng, stride=1, dilation=1, padding=None, bias=False):
        self.stride, self.dilation = stride, dilation
        self.padding = dilation * (k - 1) // 2 if padding is None else padding
        self.weight = uniform_weight(rng, (cout, cin, k, k, k), cin * k ** 3)
        self.bias = Parameter(np.zeros(cout), KERNEL) if bias else None

    def forward(self, x):
        return ops.conv3d(x, self.weight, self.stride, self.dilation, self.padding, bias=self.bias)


class ConvGN(Block):
    """Convolution followed by group normalization, no activation."""

    def __init__(self, cin, cout, k, rng, stride=1):
        self.conv = Conv(cin, cout, k, rng, stride=stride)
        self.norm = GroupNorm(cout)

    def forward(self, x):
        return self.norm(self.conv(x))
