"""Encoder, feature projections, context aggregation, classifier and the segmentation loss.

The encoder is a small three-block stride-2 network so features sit at 1/8 of
the input resolution. Everything downstream of it works on single
``C x h x w`` maps (batch size one).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import ops
from .attention import ChannelPair, SpatialPair
from .init import kaiming_uniform
from .tensor import ContractError, DimensionError, Tensor

IGNORE = 255


class DataError(ValueError):
    """Label content inconsistent with the model (e.g. class index out of range)."""


@dataclass
class Conv:
    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    @classmethod
    def create(cls, cin, cout, k, rng, stride=1, padding=0) -> "Conv":
        return cls(kaiming_uniform((cout, cin, k, k), rng), Tensor(np.zeros(cout)), stride, padding)

    @classmethod
    def from_matrix(cls, w: np.ndarray, b: Optional[np.ndarray] = None) -> "Conv":
        """1x1 convolution with the given ``C_out x C_in`` matrix."""
        w = np.asarray(w, dtype=float)
        b = np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=float)
        return cls(Tensor(w[:, :, None, None].copy()), Tensor(b))


ENCODER_WIDTHS = (8, 16)


@dataclass
class EncoderParams:
    blocks: list  # three stride-2 3x3 Convs

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator, in_channels: int = 3) -> "EncoderParams":
        widths = (in_channels, *ENCODER_WIDTHS, channels)
        return cls([Conv.create(widths[i], widths[i + 1], 3, rng, stride=2, padding=1)
                    for i in range(3)])


def extract_features(image: Tensor, p: EncoderParams) -> Tensor:
    if image.ndim != 3:
        raise DimensionError(f"image must be CxHxW, got {image.shape}")
    _, h, w = image.shape
    if h % 8 or w % 8:
        raise ContractError(f"image size {h}x{w} is not divisible by 8")
    x = image
    for conv in p.blocks:
        x = ops.leaky_relu(conv(x), 0.2)
    return x


def match_sizes(f_s: Tensor, f_t: Tensor) -> tuple[Tensor, Tensor]:
    """Resize the spatially larger map down to the smaller one's size."""
    if f_s.shape[0] != f_t.shape[0]:
        raise DimensionError(f"channel counts differ: {f_s.shape} vs {f_t.shape}")
    (_, hs, ws), (_, ht, wt) = f_s.shape, f_t.shape
    if (hs, ws) == (ht, wt):
        return f_s, f_t
    if hs * ws > ht * wt:
        return ops.bilinear_resize(f_s, ht, wt), f_t
    return f_s, ops.bilinear_resize(f_t, hs, ws)


@dataclass
class ProjectionParams:
    conv_a: Conv
    conv_b: Conv

    @classmethod
    def create(cls, channels: int, rng) -> "ProjectionParams":
        return cls(Conv.create(channels, channels, 1, rng), Conv.create(channels, channels, 1, rng))


def project(f_s: Tensor, f_t: Tensor, p: ProjectionParams) -> tuple[SpatialPair, ChannelPair]:
    return (SpatialPair(p.conv_a(f_s), p.conv_a(f_t)),
            ChannelPair(p.conv_b(f_s), p.conv_b(f_t)))


@dataclass
class AggregationParams:
    conv_z: Conv  # C x 2C x 1 x 1

    @classmethod
    def create(cls, channels: int, rng) -> "AggregationParams":
        return cls(Conv.create(2 * channels, channels, 1, rng))


def aggregate(a: Tensor, b: Tensor, p: AggregationParams) -> Tensor:
    return p.conv_z(ops.concat_channels(a, b))


@dataclass
class ClassifierParams:
    conv_g: Conv  # L x C x 1 x 1

    @classmethod
    def create(cls, channels: int, num_classes: int, rng) -> "ClassifierParams":
        return cls(Conv.create(channels, num_classes, 1, rng, ))


@dataclass
class SegOutput:
    """Per-pixel class distribution, ``L x H x W``, kept in both linear and log form."""

    prob: Tensor
    log_prob: Tensor

    @classmethod
    def from_logits(cls, logits: Tensor) -> "SegOutput":
        return cls(ops.softmax(logits, axis=0), ops.log_softmax(logits, axis=0))

    @classmethod
    def from_probs(cls, probs) -> "SegOutput":
        p = probs if isinstance(probs, Tensor) else Tensor(probs)
        return cls(p, ops.log(p))

    @property
    def num_classes(self) -> int:
        return self.prob.shape[0]

    def argmax(self) -> np.ndarray:
        return self.prob.data.argmax(axis=0).astype(np.uint8)


def classify(z: Tensor, p: ClassifierParams, out_h: int, out_w: int) -> SegOutput:
    logits = p.conv_g(z)
    if out_h < logits.shape[1] or out_w < logits.shape[2]:
        raise ContractError(f"output size {out_h}x{out_w} smaller than features {logits.shape[1:]}")
    return SegOutput.from_logits(ops.bilinear_resize(logits, out_h, out_w))


def segmentation_loss(pred: SegOutput, label: np.ndarray) -> Tensor:
    """Cross-entropy averaged over non-IGNORE pixels; 0 when nothing is labelled."""
    label = np.asarray(label)
    n_cls = pred.num_classes
    bad = (label != IGNORE) & ((label >= n_cls) | (label < 0))
    if bad.any():
        raise DataError(f"label value {int(label[bad][0])} outside [0, {n_cls})")
    return ops.nll_loss(pred.log_prob, label, IGNORE)


OUTPUT_NAMES = ("z_s", "z_t", "a_s", "a_t", "b_s", "b_t")


class SixOutputs(NamedTuple):
    z_s: SegOutput
    z_t: SegOutput
    a_s: SegOutput
    a_t: SegOutput
    b_s: SegOutput
    b_t: SegOutput


def total_seg_loss(outputs: SixOutputs, y_s: np.ndarray, y_t: np.ndarray,
                   weights: Sequence[float] = (1.0,) * 6) -> tuple[Tensor, dict]:
    """Sum of the six per-output losses; source outputs use ``y_s``, target ones ``y_t``.

    Returns the total and a name -> float dict of the unweighted terms.
    """
    total = None
    parts = {}
    for name, out, w in zip(OUTPUT_NAMES, outputs, weights):
        term = segmentation_loss(out, y_s if name.endswith("_s") else y_t)
        parts[name] = term.item()
        weighted = term if w == 1.0 else ops.mul(term, w)
        total = weighted if total is None else ops.add(total, weighted)
    return total, parts
