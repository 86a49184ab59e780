"""Networks: the multi-scale generator, discriminator, and score predictors.

The generator has one head conv, a scale-aware residual block per upscaling
factor, a residual module whose weights are shared by all three factors, a
per-factor chain of upscaling modules (residual block, expansion conv,
pixel shuffle), and a per-factor tail conv. The x2/x4/x8 chains hold one,
two, and three upscaling modules.

Parameters are float32 for training and float64 for gradient-check tests;
pass ``dtype`` at construction. Initialization is uniform with fan-in
scaling, drawn from the generator you supply, so models are reproducible
from a seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .image import resize_matrix
from .losses import ScoreDistribution, mean_score  # noqa: F401  (part of this module's surface)

__all__ = [
    "EusrConfig", "EusrModel", "DiscriminatorModel", "ScorePredictorModel",
    "ScoreDistribution", "mean_score", "multipass_x4", "SCALES",
]

SCALES = (2, 4, 8)
_UPSCALE_STEPS = {2: 1, 4: 2, 8: 3}


def _he_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class _Conv:
    """3x3 (or kxk) convolution layer holding its weight and bias tensors."""

    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, *,
                 rng: np.random.Generator, dtype):
        self.stride = stride
        self.pad = (k - 1) // 2
        self.weight = Tensor(_he_uniform((cout, cin, k, k), cin * k * k, rng, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class _Dense:
    def __init__(self, fin: int, fout: int, *, rng: np.random.Generator, dtype):
        self.weight = Tensor(_he_uniform((fin, fout), fin, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(fout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dense(x, self.weight, self.bias)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class _ResBlock:
    """conv3 -> relu -> conv3, scaled, plus the block input."""

    def __init__(self, channels: int, scaling: float, *, rng, dtype):
        self.scaling = scaling
        self.conv1 = _Conv(channels, channels, rng=rng, dtype=dtype)
        self.conv2 = _Conv(channels, channels, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv2(ad.relu(self.conv1(x)))
        if self.scaling != 1.0:
            h = ad.scale(h, self.scaling)
        return ad.add(x, h)

    def params(self):
        out = {}
        for i, conv in enumerate((self.conv1, self.conv2)):
            for k, v in conv.params().items():
                out[f"conv{i + 1}.{k}"] = v
        return out


class _UpscaleModule:
    """Residual block(s), expansion conv to 4C, then 2x pixel shuffle."""

    def __init__(self, channels: int, blocks: int, scaling: float, *, rng, dtype):
        self.blocks = [_ResBlock(channels, scaling, rng=rng, dtype=dtype) for _ in range(blocks)]
        self.expand = _Conv(channels, channels * 4, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return ad.pixel_shuffle(self.expand(x), 2)

    def params(self):
        out = {}
        for i, block in enumerate(self.blocks):
            for k, v in block.params().items():
                out[f"block{i}.{k}"] = v
        for k, v in self.expand.params().items():
            out[f"expand.{k}"] = v
        return out


class _SharedModule:
    """Residual blocks and a closing conv behind a module-level skip."""

    def __init__(self, channels: int, blocks: int, scaling: float, *, rng, dtype):
        self.blocks = [_ResBlock(channels, scaling, rng=rng, dtype=dtype) for _ in range(blocks)]
        self.close = _Conv(channels, channels, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for block in self.blocks:
            h = block(h)
        return ad.add(x, self.close(h))

    def params(self):
        out = {}
        for i, block in enumerate(self.blocks):
            for k, v in block.params().items():
                out[f"block{i}.{k}"] = v
        for k, v in self.close.params().items():
            out[f"close.{k}"] = v
        return out


@dataclass(frozen=True)
class EusrConfig:
    """Generator hyperparameters. Defaults are the desk scale; the reference
    scale uses 64 channels and 32 shared blocks."""

    channels: int = 16
    shared_blocks: int = 4
    upscale_blocks: int = 1
    residual_scaling: float = 1.0

    def __post_init__(self):
        if self.channels < 4:
            raise ValueError(f"channels must be >= 4, got {self.channels}")
        if self.shared_blocks < 1 or self.upscale_blocks < 1:
            raise ValueError("block counts must be >= 1")
        if not 0.0 < self.residual_scaling <= 1.0:
            raise ValueError(f"residual_scaling must be in (0, 1], got {self.residual_scaling}")


class EusrModel:
    """Multi-scale upscaler with a weight-shared trunk.

    ``forward(x, scale)`` runs one pass through the selected path and
    increments ``forward_count`` (the multipass contract is tested against
    that counter).
    """

    def __init__(self, config: EusrConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        c, s = config.channels, config.residual_scaling
        self.head = _Conv(3, c, rng=rng, dtype=dtype)
        self.aware = {f: _ResBlock(c, s, rng=rng, dtype=dtype) for f in SCALES}
        self.shared = _SharedModule(c, config.shared_blocks, s, rng=rng, dtype=dtype)
        self.chains = {f: [_UpscaleModule(c, config.upscale_blocks, s, rng=rng, dtype=dtype)
                           for _ in range(_UPSCALE_STEPS[f])] for f in SCALES}
        self.tails = {f: _Conv(c, 3, rng=rng, dtype=dtype) for f in SCALES}
        self.forward_count = 0

    def forward(self, x: Tensor, scale: int) -> Tensor:
        if scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {scale}")
        if x.ndim != 4 or x.shape[1] != 3:
            raise ad.ShapeError(f"forward: expected (N, 3, H, W), got {x.shape}")
        if x.shape[2] < 8 or x.shape[3] < 8:
            raise ad.ShapeError(f"forward: spatial size must be >= 8, got {x.shape[2:]}")
        self.forward_count += 1
        f = self.head(x)
        f = self.aware[scale](f)
        f = self.shared(f)
        for module in self.chains[scale]:
            f = module(f)
        return self.tails[scale](f)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, v in self.head.params().items():
            out[f"head.{k}"] = v
        for f in SCALES:
            for k, v in self.aware[f].params().items():
                out[f"aware.x{f}.{k}"] = v
        for k, v in self.shared.params().items():
            out[f"shared.{k}"] = v
        for f in SCALES:
            for i, module in enumerate(self.chains[f]):
                for k, v in module.params().items():
                    out[f"up.x{f}.{i}.{k}"] = v
        for f in SCALES:
            for k, v in self.tails[f].params().items():
                out[f"tail.x{f}.{k}"] = v
        return out


def multipass_x4(model: EusrModel, x: Tensor, enabled: bool = True):
    """Three 4x-equivalent outputs from one input batch.

    Route A is the x4 path, route B applies the x2 path twice, route C runs
    the x8 path and halves it bicubicly (through fixed, differentiable
    resampling weights). Exactly four generator forwards when enabled; one
    (route A only) when disabled.
    """
    if not enabled:
        return (model.forward(x, 4),)
    a = model.forward(x, 4)
    b = model.forward(model.forward(x, 2), 2)
    c8 = model.forward(x, 8)
    m_h = resize_matrix(c8.shape[2], c8.shape[2] // 2)
    m_w = resize_matrix(c8.shape[3], c8.shape[3] // 2)
    c = ad.resample_axis(ad.resample_axis(c8, m_h, axis=2), m_w, axis=3)
    return a, b, c


class DiscriminatorModel:
    """Conv ladder (widths w..16w, alternating stride 1/2) into two dense
    layers and a sigmoid. Leaky slope 0.2 everywhere; no normalization."""

    def __init__(self, width: int = 8, input_size: int = 48, fc_units: int = 64,
                 *, rng: np.random.Generator, dtype=np.float32):
        if width < 1 or fc_units < 1:
            raise ValueError("width and fc_units must be >= 1")
        if input_size < 32:
            raise ValueError(f"input_size must be >= 32, got {input_size}")
        self.width = width
        self.input_size = input_size
        self.convs = []
        spatial = input_size
        cin = 3
        for i, mult in enumerate((1, 1, 2, 2, 4, 4, 8, 8, 16, 16)):
            stride = 2 if i % 2 == 1 else 1
            cout = width * mult
            self.convs.append(_Conv(cin, cout, stride=stride, rng=rng, dtype=dtype))
            if stride == 2:
                spatial = (spatial - 1) // 2 + 1
            cin = cout
        self.final_spatial = spatial
        self.flat = cin * spatial * spatial
        self.fc1 = _Dense(self.flat, fc_units, rng=rng, dtype=dtype)
        self.fc2 = _Dense(fc_units, 1, rng=rng, dtype=dtype)

    def logits(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ad.ShapeError(f"discriminator: expected (N, 3, H, W), got {x.shape}")
        if x.shape[2] != self.input_size or x.shape[3] != self.input_size:
            raise ad.ShapeError(
                f"discriminator: configured for {self.input_size}px inputs, got {x.shape[2:]}")
        h = x
        for conv in self.convs:
            h = ad.leaky_relu(conv(h), 0.2)
        h = ad.reshape(h, (x.shape[0], self.flat))
        h = ad.leaky_relu(self.fc1(h), 0.2)
        return self.fc2(h)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.sigmoid(self.logits(x))

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.convs):
            for k, v in conv.params().items():
                out[f"conv{i}.{k}"] = v
        for name, layer in (("fc1", self.fc1), ("fc2", self.fc2)):
            for k, v in layer.params().items():
                out[f"{name}.{k}"] = v
        return out


class ScorePredictorModel:
    """Small quality-score network: stride-2 conv backbone, global average
    pooling into a representation of ``repr_length`` features, then a dense
    head softmaxed over the ten score bins."""

    MIN_INPUT = 8

    def __init__(self, repr_length: int = 64, *, rng: np.random.Generator, dtype=np.float32):
        if repr_length < 8 or repr_length % 4 != 0:
            raise ValueError(f"repr_length must be a multiple of 4, >= 8; got {repr_length}")
        self.repr_length = repr_length
        widths = [repr_length // 4, repr_length // 2, repr_length]
        self.convs = []
        cin = 3
        for cout in widths:
            self.convs.append(_Conv(cin, cout, stride=2, rng=rng, dtype=dtype))
            cin = cout
        self.head = _Dense(repr_length, 10, rng=rng, dtype=dtype)
        self.forward_count = 0

    def forward(self, x: Tensor):
        """Returns (score distribution (N, 10), representation (N, R))."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ad.ShapeError(f"predictor: expected (N, 3, H, W), got {x.shape}")
        if x.shape[2] < self.MIN_INPUT or x.shape[3] < self.MIN_INPUT:
            raise ad.ShapeError(
                f"predictor: input must be >= {self.MIN_INPUT}px, got {x.shape[2:]}")
        self.forward_count += 1
        h = x
        for conv in self.convs:
            h = ad.relu(conv(h))
        rep = ad.global_avg_pool(h)
        dist = ad.softmax(self.head(rep))
        return dist, rep

    def __call__(self, x: Tensor):
        return self.forward(x)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.convs):
            for k, v in conv.params().items():
                out[f"backbone.conv{i}.{k}"] = v
        for k, v in self.head.params().items():
            out[f"head.{k}"] = v
        return out

    def head_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters().items() if k.startswith("head.")}

    def backbone_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters().items() if k.startswith("backbone.")}

    def freeze(self) -> None:
        for p in self.named_parameters().values():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.named_parameters().values():
            p.requires_grad = True

    @property
    def frozen(self) -> bool:
        return all(not p.requires_grad for p in self.named_parameters().values())
