"""Procedural two-domain street scenes and IoU metrics.

A scene has a sky band on top, a road band at the bottom, buildings standing
on the road edge and vehicles on the road. Layout depends only on the scene
seed; a :class:`DomainStyle` decides how classes are painted, so the same seed
yields the same label map in every domain.
"""

from __future__ import annotations

import colorsys
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .segnet import IGNORE
from .tensor import DimensionError, Tensor

CLASSES = ("background", "road", "sky", "building", "vehicle")
BACKGROUND, ROAD, SKY, BUILDING, VEHICLE = range(5)
NUM_CLASSES = len(CLASSES)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    height: int = 64
    width: int = 64
    buildings: tuple = (1, 4)
    vehicles: tuple = (1, 3)

    def __post_init__(self):
        if self.height % 8 or self.width % 8 or self.height <= 0 or self.width <= 0:
            raise ValueError(f"scene size {self.height}x{self.width} must be positive multiples of 8")


@dataclass(frozen=True)
class DomainStyle:
    domain: str
    colors: tuple  # one RGB triple in [0, 1] per class
    illumination: float = 0.0
    noise: float = 0.03
    hue_rotation: float = 0.0  # degrees
    object_jitter: float = 0.06


SOURCE_STYLE = DomainStyle(
    domain="source",
    colors=((0.30, 0.55, 0.25),   # background: grass
            (0.45, 0.45, 0.48),   # road
            (0.45, 0.70, 0.95),   # sky
            (0.65, 0.40, 0.30),   # building
            (0.85, 0.15, 0.15)),  # vehicle
    illumination=0.0, noise=0.03, hue_rotation=0.0,
)

TARGET_STYLE = DomainStyle(
    domain="target",
    colors=SOURCE_STYLE.colors,
    illumination=-0.12, noise=0.08, hue_rotation=55.0,
)


def _rotate_hue(rgb: np.ndarray, degrees: float) -> np.ndarray:
    if not degrees:
        return rgb
    h, l, s = colorsys.rgb_to_hls(*rgb)
    return np.array(colorsys.hls_to_rgb((h + degrees / 360.0) % 1.0, l, s))


def scene_layout(spec: SceneSpec) -> tuple[np.ndarray, list]:
    """Label map plus a list of ``(mask, class)`` object regions for per-object shading."""
    rng = np.random.default_rng([spec.seed, 0])
    h, w = spec.height, spec.width
    label = np.full((h, w), BACKGROUND, dtype=np.uint8)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]

    horizon = int(rng.uniform(0.25, 0.42) * h)
    road_top = int(rng.uniform(0.58, 0.72) * h)
    label[:horizon] = SKY
    label[road_top:] = ROAD

    objects = []
    for _ in range(rng.integers(spec.buildings[0], spec.buildings[1] + 1)):
        bw = int(rng.uniform(0.12, 0.3) * w)
        x0 = int(rng.integers(0, max(1, w - bw)))
        top = int(rng.uniform(0.08, 0.9) * horizon) if horizon else 0
        bottom = road_top - int(rng.integers(0, max(1, (road_top - horizon) // 3)))
        mask = (rows >= top) & (rows < bottom) & (cols >= x0) & (cols < x0 + bw)
        label[mask] = BUILDING
        objects.append((mask, BUILDING))
    for _ in range(rng.integers(spec.vehicles[0], spec.vehicles[1] + 1)):
        ry = rng.uniform(0.035, 0.07) * h
        rx = rng.uniform(0.07, 0.14) * w
        cy = rng.uniform(road_top + ry * 0.6, h - ry * 0.6)
        cx = rng.uniform(rx, w - rx)
        mask = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
        label[mask] = VEHICLE
        objects.append((mask, VEHICLE))
    return label, objects


def generate_scene(spec: SceneSpec, style: DomainStyle) -> tuple[Tensor, np.ndarray]:
    """Render ``(image 3xHxW in [0, 1], label HxW uint8)``; deterministic in (seed, style)."""
    label, objects = scene_layout(spec)
    rng = np.random.default_rng([spec.seed, 1, zlib.crc32(style.domain.encode())])
    palette = np.stack([_rotate_hue(np.asarray(c, dtype=float), style.hue_rotation)
                        for c in style.colors])
    img = palette[label].copy()  # H x W x 3
    for mask, cls in objects:
        shade = rng.normal(0.0, style.object_jitter, size=3)
        img[mask] = np.clip(palette[cls] + shade, 0.0, 1.0)
    # vertical illumination gradient and texture noise
    grad = np.linspace(0.04, -0.04, spec.height)[:, None, None]
    img = img + style.illumination + grad + rng.normal(0.0, style.noise, size=img.shape)
    # quantised to 8 bits so a PPM round trip is lossless
    img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return Tensor(img.transpose(2, 0, 1).copy()), label


def scene_seeds(base_seed: int, split: str, n: int) -> list[int]:
    code = {"source": 1, "target": 2, "eval": 3}[split]
    ss = np.random.SeedSequence([base_seed, code])
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64)] if n else []


@dataclass
class Split:
    images: list
    labels: list
    seeds: list = field(default_factory=list)


def make_split(base_seed: int, split: str, n: int, style: DomainStyle,
               height: int = 64, width: int = 64) -> Split:
    seeds = scene_seeds(base_seed, split, n)
    imgs, labels = [], []
    for s in seeds:
        img, lab = generate_scene(SceneSpec(s, height, width), style)
        imgs.append(img)
        labels.append(lab)
    return Split(imgs, labels, seeds)


@dataclass
class Benchmark:
    source: Split
    target: Split  # labels kept for reference only, never used in training
    eval: Split


def make_benchmark(base_seed: int = 0, n_source: int = 200, n_target: int = 200, n_eval: int = 50,
                   height: int = 64, width: int = 64,
                   source_style: DomainStyle = SOURCE_STYLE,
                   target_style: DomainStyle = TARGET_STYLE) -> Benchmark:
    return Benchmark(
        make_split(base_seed, "source", n_source, source_style, height, width),
        make_split(base_seed, "target", n_target, target_style, height, width),
        make_split(base_seed, "eval", n_eval, target_style, height, width),
    )


# ---------------------------------------------------------------------------
# metrics

@dataclass
class IoUReport:
    per_class_iou: list  # float, or None where the class never occurs
    miou: float

    def as_rows(self, names: Sequence[str] = CLASSES):
        for i, v in enumerate(self.per_class_iou):
            yield (names[i] if i < len(names) else str(i)), v


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    """``cm[t, p]`` counts pixels of true class t predicted as p; IGNORE truth is skipped."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} differ in size")
    keep = truth != IGNORE
    if keep.any() and (truth[keep].max() >= num_classes or pred[keep].max() >= num_classes):
        raise ValueError(f"class index outside [0, {num_classes})")
    t = truth[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    return np.bincount(t * num_classes + p, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> IoUReport:
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + fp + fn
    per = [float(tp[c] / denom[c]) if denom[c] > 0 else None for c in range(cm.shape[0])]
    defined = [v for v in per if v is not None]
    return IoUReport(per, float(np.mean(defined)) if defined else float("nan"))


def compute_iou(pred: np.ndarray, truth: np.ndarray, num_classes: int = NUM_CLASSES) -> IoUReport:
    return iou_from_confusion(confusion_matrix(pred, truth, num_classes))
