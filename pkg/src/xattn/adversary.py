"""Patch discriminators on segmentation probability maps and the adversarial losses.

Discriminators see softmax outputs (``L x H x W``) and emit a grid of raw
logits; sigmoid cross-entropy is applied inside the losses. Source outputs
are labelled real (1), target outputs fake (0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import ops
from .segnet import Conv, SegOutput
from .tensor import DimensionError, Tensor

BASE_WIDTHS = (64, 128, 256, 512, 1)
KERNEL, STRIDE, PADDING, SLOPE = 4, 2, 1, 0.2


def disc_widths(multiplier: float = 1.0) -> tuple:
    """Per-layer widths; the final single-logit layer never scales."""
    return tuple(max(1, int(round(w * multiplier))) for w in BASE_WIDTHS[:-1]) + (1,)


@dataclass
class DiscriminatorParams:
    layers: list  # five Convs, k=4, s=2, p=1

    @property
    def in_channels(self) -> int:
        return self.layers[0].weight.shape[1]

    @classmethod
    def create(cls, in_channels: int, rng: np.random.Generator,
               width_multiplier: float = 1.0) -> "DiscriminatorParams":
        widths = (in_channels, *disc_widths(width_multiplier))
        return cls([Conv.create(widths[i], widths[i + 1], KERNEL, rng, STRIDE, PADDING)
                    for i in range(5)])


def patch_grid_size(n: int, layers: int = 5) -> int:
    for _ in range(layers):
        n = ops.conv_output_size(n, KERNEL, STRIDE, PADDING)
    return n


def discriminate(d: DiscriminatorParams, seg: Union[SegOutput, Tensor]) -> Tensor:
    x = seg.prob if isinstance(seg, SegOutput) else seg
    if x.ndim != 3 or x.shape[0] != d.in_channels:
        raise DimensionError(f"discriminator expects {d.in_channels} channels, got {x.shape}")
    last = len(d.layers) - 1
    for i, conv in enumerate(d.layers):
        x = conv(x)
        if i < last:
            x = ops.leaky_relu(x, SLOPE)
    return x


def _bce_real(logits: Tensor) -> Tensor:
    # -log sigmoid(x) = softplus(-x)
    return ops.mean(ops.softplus(ops.mul(logits, -1.0)))


def _bce_fake(logits: Tensor) -> Tensor:
    # -log(1 - sigmoid(x)) = softplus(x)
    return ops.mean(ops.softplus(logits))


def adv_loss_d(d: DiscriminatorParams, src_out, tgt_out) -> Tensor:
    """Discriminator side: classify source as real and target as fake."""
    return ops.add(_bce_real(discriminate(d, src_out)), _bce_fake(discriminate(d, tgt_out)))


def adv_loss_g(d: DiscriminatorParams, tgt_out) -> Tensor:
    """Non-saturating generator side: make target outputs look real."""
    return _bce_real(discriminate(d, tgt_out))


ADV_PAIRS = (("d1", "z_s", "z_t"), ("d2", "a_s", "a_t"), ("d3", "b_s", "b_t"))


def total_adv_loss(discs: Sequence[Optional[DiscriminatorParams]], outputs,
                   side: str = "g") -> tuple[Optional[Tensor], dict]:
    """Sum over the (up to) three discriminators.

    ``discs`` is ``(d1, d2, d3)`` with ``None`` for a dropped term. D1 judges
    the aggregated outputs, D2 the spatial-attention outputs, D3 the channel
    ones. ``side`` is ``"g"`` (target outputs only) or ``"d"``.
    """
    if side not in ("g", "d"):
        raise ValueError("side must be 'g' or 'd'")
    total = None
    parts = {}
    named = outputs._asdict()
    for d, (name, src, tgt) in zip(discs, ADV_PAIRS):
        if d is None:
            continue
        if side == "g":
            term = adv_loss_g(d, named[tgt])
        else:
            term = adv_loss_d(d, named[src], named[tgt])
        parts[name] = term.item()
        total = term if total is None else ops.add(total, term)
    return total, parts
