"""Siamese model: shared encoder, projector and predictor heads, and the
symmetric negative-cosine loss with stop-gradient on the target branch.

Weight sharing is structural: both views run through one parameter set.
The printed loss couples each predictor output to the opposing projection;
the projection enters as a constant (stop-gradient), which is what keeps
the architecture from collapsing without negative pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ContractError,
    DimensionError,
    Parameter,
    Tensor,
    add,
    mul,
    stop_gradient,
    tmean,
    tsum,
)
from .layers import (
    BatchNorm,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    Module,
    ReLU,
    ResidualBlock,
    Sequential,
)
from .ops import l2_normalize
from .rng import SeededRng


@dataclass(frozen=True)
class EncoderConfig:
    """Residual-stack encoder shape; expresses both desk and full scale."""

    input_channels: int = 1
    stage_widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1)
    feature_dim: int = 128
    stem_stride: int = 2
    stem_pool: bool = True

    def __post_init__(self):
        if len(self.stage_widths) != len(self.blocks_per_stage):
            raise ContractError("stage_widths and blocks_per_stage lengths differ")
        if self.feature_dim != self.stage_widths[-1]:
            raise ContractError(
                f"feature_dim {self.feature_dim} != last stage width {self.stage_widths[-1]}"
            )

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": list(self.blocks_per_stage),
            "feature_dim": self.feature_dim,
            "stem_stride": self.stem_stride,
            "stem_pool": self.stem_pool,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        d = dict(d)
        d["stage_widths"] = tuple(d["stage_widths"])
        d["blocks_per_stage"] = tuple(d["blocks_per_stage"])
        return EncoderConfig(**d)


TINY_ENCODER = EncoderConfig(
    stage_widths=(8, 16), blocks_per_stage=(1, 1), feature_dim=16,
    stem_stride=1, stem_pool=False,
)


class Encoder(Module):
    """Stem conv + residual stages + global average pooling."""

    def __init__(self, config: EncoderConfig, rng: SeededRng):
        super().__init__()
        self.config = config
        w0 = config.stage_widths[0]
        self.stem_conv = Conv2d(config.input_channels, w0, 3, rng,
                                stride=config.stem_stride, padding=1)
        self.stem_bn = BatchNorm(w0)
        self.stem_relu = ReLU()
        self.stem_pool = MaxPool2d(2, 2) if config.stem_pool else None
        blocks = []
        in_ch = w0
        for stage_idx, (width, n_blocks) in enumerate(
            zip(config.stage_widths, config.blocks_per_stage)
        ):
            for block_idx in range(n_blocks):
                stride = 2 if (stage_idx > 0 and block_idx == 0) else 1
                blocks.append(ResidualBlock(in_ch, width, stride, rng))
                in_ch = width
        self.stages = Sequential(*blocks)
        self.pool = GlobalAvgPool()

    def forward(self, x: Tensor) -> Tensor:
        h = self.stem_relu(self.stem_bn(self.stem_conv(x)))
        if self.stem_pool is not None:
            h = self.stem_pool(h)
        return self.pool(self.stages(h))


class Projector(Module):
    """Two-layer MLP; the final layer carries batchnorm without relu."""

    def __init__(self, in_dim: int, proj_dim: int, rng: SeededRng):
        super().__init__()
        self.net = Sequential(
            Linear(in_dim, proj_dim, rng, bias=False),
            BatchNorm(proj_dim),
            ReLU(),
            Linear(proj_dim, proj_dim, rng, bias=False),
            BatchNorm(proj_dim),
        )

    def forward(self, x):
        return self.net(x)


class Predictor(Module):
    """Two-layer bottleneck MLP predicting the opposing projection."""

    def __init__(self, proj_dim: int, hidden: int, rng: SeededRng):
        super().__init__()
        self.net = Sequential(
            Linear(proj_dim, hidden, rng, bias=False),
            BatchNorm(hidden),
            ReLU(),
            Linear(hidden, proj_dim, rng, bias=True),
        )

    def forward(self, x):
        return self.net(x)


class SimSiamModel(Module):
    def __init__(self, encoder_config: EncoderConfig, proj_dim: int, seed: int,
                 pred_hidden: int | None = None):
        super().__init__()
        if pred_hidden is None:
            pred_hidden = max(proj_dim // 4, 1)
        rng = SeededRng(seed).substream(0xF0)
        self.encoder = Encoder(encoder_config, rng)
        self.projector = Projector(encoder_config.feature_dim, proj_dim, rng)
        self.predictor = Predictor(proj_dim, pred_hidden, rng)
        self.encoder_config = encoder_config
        self.proj_dim = proj_dim
        self.pred_hidden = pred_hidden

    def meta(self) -> dict:
        return {
            "encoder_config": self.encoder_config.to_dict(),
            "proj_dim": self.proj_dim,
            "pred_hidden": self.pred_hidden,
        }


class ProbeHead(Module):
    """Single linear layer on frozen features; zero-initialized (convex fit)."""

    def __init__(self, feature_dim: int, n_labels: int):
        super().__init__()
        self.weight = Parameter(np.zeros((n_labels, feature_dim), dtype=np.float32))
        self.bias = Parameter(np.zeros(n_labels, dtype=np.float32))
        self.feature_dim = feature_dim
        self.n_labels = n_labels

    def forward(self, x: Tensor) -> Tensor:
        from .ops import linear

        return linear(x, self.weight, self.bias)


def forward_views(model: SimSiamModel, x1: Tensor, x2: Tensor):
    """(p1, p2, z1, z2) for a pair of view batches through shared weights."""
    if x1.shape != x2.shape:
        raise DimensionError(f"view shapes differ: {x1.shape} vs {x2.shape}")
    z1 = model.projector(model.encoder(x1))
    z2 = model.projector(model.encoder(x2))
    p1 = model.predictor(z1)
    p2 = model.predictor(z2)
    return p1, p2, z1, z2


def _half_cosine(p: Tensor, z: Tensor) -> Tensor:
    zn = l2_normalize(stop_gradient(z))
    pn = l2_normalize(p)
    return tmean(tsum(mul(pn, zn), axis=1))


def simsiam_loss(p1: Tensor, p2: Tensor, z1: Tensor, z2: Tensor) -> Tensor:
    """-1/2 cos(p1, sg(z2)) - 1/2 cos(p2, sg(z1)), batch-averaged; in [-1, 1]."""
    if p1.shape != z2.shape or p2.shape != z1.shape:
        raise DimensionError(
            f"prediction/projection shapes differ: {p1.shape}, {z2.shape}"
        )
    return mul(add(_half_cosine(p1, z2), _half_cosine(p2, z1)), -0.5)


def encode(model: SimSiamModel, x: Tensor) -> Tensor:
    """Backbone features f(x) only; requires eval mode for determinism."""
    if model.training:
        raise ContractError("encode requires the model in eval mode")
    return model.encoder(x)


def collapse_metric(z: np.ndarray) -> float:
    """Mean over dimensions of the per-dimension std of row-normalized z.

    Isotropic embeddings give about 1/sqrt(D); a collapsed representation
    drives this to 0.
    """
    z = z.data if isinstance(z, Tensor) else np.asarray(z)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ContractError(f"collapse_metric needs a (N>=2, D) matrix, got {z.shape}")
    z64 = z.astype(np.float64)
    norms = np.maximum(np.linalg.norm(z64, axis=1, keepdims=True), 1e-12)
    zn = z64 / norms
    return float(zn.std(axis=0).mean())
