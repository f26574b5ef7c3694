"""Composable layers over the tape engine, with a named-parameter registry.

Parameter names are attribute paths ("encoder.stages.0.conv1.weight") and
key optimizer state and checkpoint files. Running statistics live in a
separate buffer registry so checkpoints capture them too.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .autodiff import DTYPE, Parameter, Tensor, relu
from .rng import SeededRng


class Module:
    """Base class: children and parameters are discovered from attributes."""

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        setattr(self, name, value)

    def children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        params: dict[str, Parameter] = {}
        for name, value in self.__dict__.items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                value.name = path
                params[path] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(prefix=path + "."))
        return params

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        buffers: dict[str, np.ndarray] = {}
        for name in self._buffers:
            buffers[f"{prefix}{name}"] = self._buffers[name]
        for name, child in self.children():
            buffers.update(child.named_buffers(prefix=f"{prefix}{name}."))
        return buffers

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers flattened to name -> array (checkpoint view)."""
        state = {name: p.data for name, p in self.named_parameters().items()}
        state.update(self.named_buffers())
        return state

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def requires_grad_(self, flag: bool):
        for p in self.named_parameters().values():
            p.requires_grad = flag
        return self

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None


def he_normal(rng: SeededRng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    std = math.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(DTYPE)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: SeededRng, bias: bool = True):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (out_dim, in_dim), in_dim))
        if bias:
            # uniform fan-in bound keeps outputs away from exact zero, where
            # row normalization downstream is singular
            bound = 1.0 / math.sqrt(in_dim)
            self.bias = Parameter(rng.uniform(-bound, bound, size=out_dim).astype(DTYPE))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        k: int,
        rng: SeededRng,
        stride: int = 1,
        padding: int = 0,
    ):
        super().__init__()
        fan_in = in_channels * k * k
        self.weight = Parameter(he_normal(rng, (out_channels, in_channels, k, k), fan_in))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """Batch normalization for 2-D or 4-D inputs; channel axis is axis 1."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=DTYPE))
        self.beta = Parameter(np.zeros(channels, dtype=DTYPE))
        self.register_buffer("running_mean", np.zeros(channels, dtype=DTYPE))
        self.register_buffer("running_var", np.ones(channels, dtype=DTYPE))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return relu(x)


class MaxPool2d(Module):
    def __init__(self, k: int, stride: int):
        super().__init__()
        self.k = k
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ops.max_pool2d(x, self.k, self.stride)


class GlobalAvgPool(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ops.global_avg_pool(x)


class Sequential(Module):
    def __init__(self, *modules: Module):
        super().__init__()
        self._n = len(modules)
        for i, m in enumerate(modules):
            setattr(self, str(i), m)

    def forward(self, x):
        for i in range(self._n):
            x = getattr(self, str(i))(x)
        return x


class ResidualBlock(Module):
    """Two 3x3 convs with batchnorm; 1x1 projection skip when shape changes."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: SeededRng):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1)
        self.bn2 = BatchNorm(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.skip_conv = Conv2d(in_channels, out_channels, 1, rng, stride=stride)
            self.skip_bn = BatchNorm(out_channels)
        else:
            self.skip_conv = None
            self.skip_bn = None

    def forward(self, x: Tensor) -> Tensor:
        main = self.bn2(self.conv2(relu(self.bn1(self.conv1(x)))))
        shortcut = self.skip_bn(self.skip_conv(x)) if self.skip_conv is not None else x
        return relu(main + shortcut)
