"""The three networks: conditional generator, inverse decoder, patch discriminator.

The generator encodes a young face to quarter-resolution features, injects a
spatially broadcast +-1 occupation one-hot cube at the bottleneck, runs a
stack of residual blocks, and decodes back to image resolution through two
bilinear-upsample stages and a tanh head. The decoder is the same pipeline
with no condition channels. The discriminator is a fully convolutional patch
classifier whose final units see a 70x70 window at full scale; it receives
the occupation as extra +-1 input planes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Padding, Tensor, reflect_pad, zero_pad
from .errors import ConfigurationError, DimensionError, DomainError, UsageError

WEIGHT_STD = 0.02
LEAKY_SLOPE = 0.2

# One-sided padding so 3x3 stride-2 halving satisfies exact output arithmetic
# on even inputs (symmetric padding cannot).
_DOWN_PAD = Padding("reflect", (1, 0), (1, 0))

# Discriminator (kernel, stride) chain; the analytic receptive field of the
# final stage must come out at 70 input pixels.
_DISC_CHAIN = ((4, 2), (4, 2), (4, 2), (4, 1), (4, 1))


@dataclass(frozen=True)
class NetworkShape:
    """Layer widths for one model family instance."""

    image_size: int
    conditions: int
    encoder_widths: tuple[int, int, int]
    residual_width: int
    upsample_widths: tuple[int, int]
    disc_widths: tuple[int, int, int, int]
    residual_blocks: int = 12

    def __post_init__(self):
        if self.image_size % 4:
            raise ConfigurationError(
                f"image_size must be divisible by 4, got {self.image_size}"
            )
        if self.conditions < 1:
            raise ConfigurationError("at least one occupation condition is required")
        if self.residual_blocks != 12:
            raise ConfigurationError("the generator carries exactly 12 residual blocks")

    @property
    def bottleneck_width(self) -> int:
        return self.encoder_widths[-1]

    @property
    def bottleneck_size(self) -> int:
        return self.image_size // 4


def desk_shape(conditions: int = 3, image_size: int = 64) -> NetworkShape:
    """Desk-scale widths: the full-scale stack shrunk 4x per layer."""
    return NetworkShape(
        image_size=image_size,
        conditions=conditions,
        encoder_widths=(16, 64, 128),
        residual_width=32,
        upsample_widths=(16, 8),
        disc_widths=(16, 32, 64, 128),
    )


def full_shape(conditions: int = 5, image_size: int = 256) -> NetworkShape:
    return NetworkShape(
        image_size=image_size,
        conditions=conditions,
        encoder_widths=(64, 256, 512),
        residual_width=128,
        upsample_widths=(64, 32),
        disc_widths=(64, 128, 256, 512),
    )


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor

    def detached(self) -> "ConvParams":
        return ConvParams(self.weight.detach(), self.bias.detach())


@dataclass
class ConvUnit:
    """One convolution plus optional instance-norm affine."""

    conv: ConvParams
    gamma: Tensor | None = None
    beta: Tensor | None = None

    def detached(self) -> "ConvUnit":
        return ConvUnit(
            self.conv.detached(),
            None if self.gamma is None else self.gamma.detach(),
            None if self.beta is None else self.beta.detach(),
        )


@dataclass
class TranslatorParams:
    """Generator or decoder parameters; ``conditions`` is 0 for the decoder."""

    conditions: int
    encoder: list[ConvUnit]
    merge: ConvUnit
    residual: list[tuple[ConvUnit, ConvUnit]]
    upsample: list[ConvUnit]
    head: ConvUnit

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        for i, unit in enumerate(self.encoder):
            yield from _unit_tensors(f"encoder.{i}", unit)
        yield from _unit_tensors("merge", self.merge)
        for i, (a, b) in enumerate(self.residual):
            yield from _unit_tensors(f"residual.{i}.a", a)
            yield from _unit_tensors(f"residual.{i}.b", b)
        for i, unit in enumerate(self.upsample):
            yield from _unit_tensors(f"upsample.{i}", unit)
        yield from _unit_tensors("head", self.head)

    def detached(self) -> "TranslatorParams":
        return TranslatorParams(
            self.conditions,
            [u.detached() for u in self.encoder],
            self.merge.detached(),
            [(a.detached(), b.detached()) for a, b in self.residual],
            [u.detached() for u in self.upsample],
            self.head.detached(),
        )


@dataclass
class DiscriminatorParams:
    conditions: int
    stages: list[ConvUnit]
    final: ConvParams

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        for i, unit in enumerate(self.stages):
            yield from _unit_tensors(f"stage.{i}", unit)
        yield ("final.weight", self.final.weight)
        yield ("final.bias", self.final.bias)

    def detached(self) -> "DiscriminatorParams":
        return DiscriminatorParams(
            self.conditions, [u.detached() for u in self.stages], self.final.detached()
        )


@dataclass
class ModelSet:
    generator: TranslatorParams
    decoder: TranslatorParams
    discriminator: DiscriminatorParams
    shape: NetworkShape

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        for prefix, params in (
            ("gen", self.generator),
            ("dec", self.decoder),
            ("disc", self.discriminator),
        ):
            for name, tensor in params.named_tensors():
                yield f"{prefix}.{name}", tensor


def _unit_tensors(prefix: str, unit: ConvUnit) -> Iterator[tuple[str, Tensor]]:
    yield (f"{prefix}.conv.weight", unit.conv.weight)
    yield (f"{prefix}.conv.bias", unit.conv.bias)
    if unit.gamma is not None:
        yield (f"{prefix}.norm.gamma", unit.gamma)
        yield (f"{prefix}.norm.beta", unit.beta)


def parameter_count(params) -> int:
    return sum(t.data.size for _, t in params.named_tensors())


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _init_conv(rng, cout: int, cin: int, k: int) -> ConvParams:
    weight = Tensor(
        rng.normal(0.0, WEIGHT_STD, size=(cout, cin, k, k)).astype(np.float32),
        requires_grad=True,
    )
    bias = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
    return ConvParams(weight, bias)


def _init_unit(rng, cout: int, cin: int, k: int, norm: bool = True) -> ConvUnit:
    conv = _init_conv(rng, cout, cin, k)
    if not norm:
        return ConvUnit(conv)
    gamma = Tensor(np.ones(cout, dtype=np.float32), requires_grad=True)
    beta = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
    return ConvUnit(conv, gamma, beta)


def init_translator(shape: NetworkShape, conditioned: bool, seed) -> TranslatorParams:
    rng = np.random.default_rng(seed)
    c1, c2, c3 = shape.encoder_widths
    rw = shape.residual_width
    u1, u2 = shape.upsample_widths
    conditions = shape.conditions if conditioned else 0
    encoder = [
        _init_unit(rng, c1, 3, 7),
        _init_unit(rng, c2, c1, 3),
        _init_unit(rng, c3, c2, 3),
    ]
    # No norm on the merge projection: the condition cube is spatially
    # constant per channel, so an instance norm right after this conv would
    # subtract the condition's contribution exactly. The bare conv + ReLU
    # turns the per-channel shift into a clipping pattern that survives the
    # norms downstream.
    merge = _init_unit(rng, rw, c3 + conditions, 3, norm=False)
    if conditions:
        # Start condition-neutral: a fresh model must produce identical
        # outputs for every occupation until training couples them in.
        merge.conv.weight.data[:, c3:] = 0.0
    residual = [
        (_init_unit(rng, rw, rw, 3), _init_unit(rng, rw, rw, 3))
        for _ in range(shape.residual_blocks)
    ]
    upsample = [_init_unit(rng, u1, rw, 3), _init_unit(rng, u2, u1, 3)]
    head = _init_unit(rng, 3, u2, 7)
    return TranslatorParams(conditions, encoder, merge, residual, upsample, head)


def init_discriminator(shape: NetworkShape, seed) -> DiscriminatorParams:
    rng = np.random.default_rng(seed)
    d1, d2, d3, d4 = shape.disc_widths
    stages = [
        _init_unit(rng, d1, 3 + shape.conditions, 4, norm=False),
        _init_unit(rng, d2, d1, 4),
        _init_unit(rng, d3, d2, 4),
        _init_unit(rng, d4, d3, 4),
    ]
    final = _init_conv(rng, 1, d4, 4)
    return DiscriminatorParams(shape.conditions, stages, final)


def init_models(shape: NetworkShape, seed: int) -> ModelSet:
    return ModelSet(
        generator=init_translator(shape, True, [seed, 0]),
        decoder=init_translator(shape, False, [seed, 1]),
        discriminator=init_discriminator(shape, [seed, 2]),
        shape=shape,
    )


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def _conv_norm_act(unit: ConvUnit, x: Tensor, stride: int, padding: Padding, act: str) -> Tensor:
    h = ad.conv2d(x, unit.conv.weight, unit.conv.bias, stride=stride, padding=padding)
    if unit.gamma is not None:
        h = ad.instance_norm(h, unit.gamma, unit.beta)
    if act == "relu":
        return ad.relu(h)
    if act == "leaky":
        return ad.leaky_relu(h, LEAKY_SLOPE)
    if act == "tanh":
        return ad.tanh(h)
    return h


def encode(params: TranslatorParams, y: Tensor) -> Tensor:
    """Three-conv encoder: 7x7 stride 1, then two 3x3 stride-2 halvings."""
    if y.data.ndim != 4 or y.data.shape[1] != 3:
        raise DimensionError(f"encoder expects (N, 3, H, W) input, got {y.data.shape}")
    if y.data.shape[2] % 4 or y.data.shape[3] % 4:
        raise ConfigurationError(
            f"encoder input spatial size {y.data.shape[2]}x{y.data.shape[3]} "
            f"must be divisible by 4"
        )
    h = _conv_norm_act(params.encoder[0], y, 1, reflect_pad(3), "relu")
    h = _conv_norm_act(params.encoder[1], h, 2, _DOWN_PAD, "relu")
    return _conv_norm_act(params.encoder[2], h, 2, _DOWN_PAD, "relu")


def condition_cube(occupation: int, conditions: int, height: int, width: int, batch: int = 1) -> Tensor:
    """+-1 spatial broadcast of the one-hot occupation label.

    Channel ``occupation - 1`` is all +1, every other channel all -1,
    matching the +-1 remapping applied to image pixels.
    """
    if not 1 <= occupation <= conditions:
        raise DomainError(
            f"occupation index {occupation} outside 1..{conditions}"
        )
    cube = np.full((batch, conditions, height, width), -1.0, dtype=np.float32)
    cube[:, occupation - 1] = 1.0
    return Tensor(cube)


def _decode_tail(params: TranslatorParams, h: Tensor) -> Tensor:
    h = _conv_norm_act(params.merge, h, 1, reflect_pad(1), "relu")
    for a, b in params.residual:
        r = _conv_norm_act(a, h, 1, reflect_pad(1), "relu")
        r = _conv_norm_act(b, r, 1, reflect_pad(1), "relu")
        h = ad.add(h, r)
    for unit in params.upsample:
        h = ad.bilinear_upsample2x(h)
        h = _conv_norm_act(unit, h, 1, reflect_pad(1), "relu")
    return _conv_norm_act(params.head, h, 1, reflect_pad(3), "tanh")


def generate(params: TranslatorParams, y: Tensor, occupation: int) -> Tensor:
    """Age ``y`` under one occupation condition; output shape equals input."""
    if params.conditions == 0:
        raise UsageError("these parameters carry no condition channels; use reconstruct")
    feat = encode(params, y)
    cube = condition_cube(
        occupation, params.conditions, feat.data.shape[2], feat.data.shape[3],
        batch=feat.data.shape[0],
    )
    return _decode_tail(params, ad.concat_channels(feat, cube))


def reconstruct(params: TranslatorParams, image: Tensor) -> Tensor:
    """Map an aged image back toward its young source (cycle direction)."""
    if params.conditions != 0:
        raise UsageError("these parameters expect a condition; use generate")
    return _decode_tail(params, encode(params, image))


def discriminate(params: DiscriminatorParams, image: Tensor, occupation: int) -> Tensor:
    """Patch realism scores for ``image`` presented under one occupation."""
    if image.data.ndim != 4 or image.data.shape[1] != 3:
        raise DimensionError(f"discriminator expects (N, 3, H, W), got {image.data.shape}")
    n, _, height, width = image.data.shape
    cond = condition_cube(occupation, params.conditions, height, width, batch=n)
    h = ad.concat_channels(image, cond)
    h = _conv_norm_act(params.stages[0], h, 2, zero_pad(1), "leaky")
    h = _conv_norm_act(params.stages[1], h, 2, zero_pad(1), "leaky")
    h = _conv_norm_act(params.stages[2], h, 2, zero_pad(1), "leaky")
    h = _conv_norm_act(params.stages[3], h, 1, zero_pad(1), "leaky")
    return ad.conv2d(h, params.final.weight, params.final.bias, stride=1, padding=zero_pad(1))


def receptive_field() -> int:
    """Input-pixel receptive field of one final discriminator unit."""
    rf = 1
    for k, s in reversed(_DISC_CHAIN):
        rf = (rf - 1) * s + k
    return rf


def score_map_size(image_size: int) -> int:
    """Spatial size of the discriminator output for a square input."""
    size = image_size
    for k, s in _DISC_CHAIN:
        if (size + 2 - k) % s:
            raise ConfigurationError(
                f"discriminator stride arithmetic fails at input size {image_size}"
            )
        size = (size + 2 - k) // s + 1
    return size
