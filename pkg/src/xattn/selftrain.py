"""Confidence-thresholded pseudo-labels for unlabeled target images."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelBundle, predict_target
from .segnet import IGNORE
from .tensor import Tensor


@dataclass(frozen=True)
class PseudoLabelConfig:
    confidence_threshold: float = 0.9
    rounds: int = 1

    def __post_init__(self):
        if not 0.0 < self.confidence_threshold <= 1.0:
            raise ValueError(f"confidence threshold {self.confidence_threshold} not in (0, 1]")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")


def labels_from_probs(prob: np.ndarray, threshold: float) -> np.ndarray:
    """Argmax class where the top probability reaches ``threshold``, else IGNORE."""
    prob = np.asarray(prob)
    label = prob.argmax(axis=0).astype(np.uint8)
    label[prob.max(axis=0) < threshold] = IGNORE
    return label


def generate_pseudo_labels(model: ModelBundle, tgt_images: Sequence[Tensor], cfg: PseudoLabelConfig,
                           partners: Sequence[Tensor]) -> list[np.ndarray]:
    """Pseudo-label each target image; image ``i`` is paired with ``partners[i % len(partners)]``.

    Pure inference: no tape is active, parameters are untouched.
    """
    if not partners:
        raise ValueError("at least one source partner image is required")
    out = []
    for i, x_t in enumerate(tgt_images):
        prob = predict_target(model, x_t, partners[i % len(partners)])
        out.append(labels_from_probs(prob, cfg.confidence_threshold))
    return out


def ignore_fraction(labels: Sequence[np.ndarray]) -> float:
    total = sum(l.size for l in labels)
    return sum(int((l == IGNORE).sum()) for l in labels) / total if total else 0.0
