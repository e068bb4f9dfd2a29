"""Concrete candidate operations for the three hybrid-module families.

Every candidate keeps the channel count. Downward ones halve each spatial
extent, upward ones double it, normal ones preserve it. Convolutional
candidates are conv -> GN -> ReLU; squeeze-excitation variants gate the
activated output.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import KERNEL, Parameter, ops
from .block import Block, GroupNorm, uniform_weight

SE_REDUCTION = 2
DILATION = 2
SE_HIDDEN_BIAS = 1.0  # the squeezed input is non-negative; a zero bias often starts the ReLU dead


def se_reduction(channels: int) -> int:
    return SE_REDUCTION if channels % SE_REDUCTION == 0 else 1


class SEGate(Block):
    def __init__(self, channels: int, rng):
        hidden = channels // se_reduction(channels)
        self.w1 = uniform_weight(rng, (hidden, channels), channels)
        self.b1 = Parameter(np.full(hidden, SE_HIDDEN_BIAS), KERNEL)
        self.w2 = uniform_weight(rng, (channels, hidden), hidden)
        self.b2 = Parameter(np.zeros(channels), KERNEL)

    def forward(self, x):
        return ops.se_gate(x, self.w1, self.b1, self.w2, self.b2)


class ConvOp(Block):
    def __init__(self, c, rng, stride=1, dilation=1, se=False):
        self.stride, self.dilation = stride, dilation
        self.padding = dilation
        self.weight = uniform_weight(rng, (c, c, 3, 3, 3), c * 27)
        self.norm = GroupNorm(c)
        self.se = SEGate(c, rng) if se else None

    def forward(self, x):
        y = ops.relu(self.norm(ops.conv3d(x, self.weight, self.stride, self.dilation, self.padding)))
        return self.se(y) if self.se is not None else y


class DepConvOp(Block):
    def __init__(self, c, rng, stride=1):
        self.stride = stride
        self.depthwise = uniform_weight(rng, (c, 1, 3, 3, 3), 27)
        self.pointwise = uniform_weight(rng, (c, c, 1, 1, 1), c)
        self.norm = GroupNorm(c)

    def forward(self, x):
        y = ops.depthwise_separable_conv3d(x, self.depthwise, self.pointwise, self.stride, 1, 1)
        return ops.relu(self.norm(y))


class UpConvOp(Block):
    def __init__(self, c, rng, dilation=1, se=False):
        self.dilation = dilation
        self.weight = uniform_weight(rng, (c, c, 3, 3, 3), c * 27)
        self.norm = GroupNorm(c)
        self.se = SEGate(c, rng) if se else None

    def forward(self, x):
        # padding = dilation keeps the output exactly twice the input with output_padding 1
        y = ops.conv3d_transposed(x, self.weight, 2, self.dilation, self.dilation, 1)
        y = ops.relu(self.norm(y))
        return self.se(y) if self.se is not None else y


class UpDepConvOp(Block):
    def __init__(self, c, rng):
        self.depthwise = uniform_weight(rng, (c, 1, 3, 3, 3), 27)
        self.pointwise = uniform_weight(rng, (c, c, 1, 1, 1), c)
        self.norm = GroupNorm(c)

    def forward(self, x):
        y = ops.depthwise_conv3d_transposed(x, self.depthwise, 2, 1, 1, 1)
        return ops.relu(self.norm(ops.conv3d(y, self.pointwise)))


class PoolOp(Block):
    def __init__(self, mode):
        self.mode = mode

    def forward(self, x):
        return ops.pool3d(x, self.mode, 3, 2, 1)


class IdentityOp(Block):
    """Only the GN + ReLU tail of the convolutional candidates."""

    def __init__(self, c):
        self.norm = GroupNorm(c)

    def forward(self, x):
        return ops.relu(self.norm(x))


BUILDERS = {
    "d_conv": lambda c, rng: ConvOp(c, rng, stride=2),
    "d_dil_conv": lambda c, rng: ConvOp(c, rng, stride=2, dilation=DILATION),
    "d_dep_conv": lambda c, rng: DepConvOp(c, rng, stride=2),
    "d_se_conv": lambda c, rng: ConvOp(c, rng, stride=2, se=True),
    "max_pool": lambda c, rng: PoolOp("max"),
    "avg_pool": lambda c, rng: PoolOp("avg"),
    "u_conv": lambda c, rng: UpConvOp(c, rng),
    "u_dil_conv": lambda c, rng: UpConvOp(c, rng, dilation=DILATION),
    "u_dep_conv": lambda c, rng: UpDepConvOp(c, rng),
    "u_se_conv": lambda c, rng: UpConvOp(c, rng, se=True),
    "conv": lambda c, rng: ConvOp(c, rng),
    "dil_conv": lambda c, rng: ConvOp(c, rng, dilation=DILATION),
    "dep_conv": lambda c, rng: DepConvOp(c, rng),
    "se_conv": lambda c, rng: ConvOp(c, rng, se=True),
    "identity": lambda c, rng: IdentityOp(c),
}


def build_op(name: str, channels: int, rng: np.random.Generator) -> Block:
    try:
        return BUILDERS[name](channels, rng)
    except KeyError:
        raise ValueError(f"unknown candidate operation {name!r}") from None
