"""Alternating min-max training: segmentation update, then discriminator update."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ops
from .adversary import total_adv_loss
from .config import RunConfig
from .model import ModelBundle, forward_pair, init_model, predict_target
from .optim import SGD, Adam, poly_lr
from .scenegen import Benchmark, IoUReport, confusion_matrix, iou_from_confusion
from .segnet import IGNORE, OUTPUT_NAMES, SegOutput, SixOutputs, total_seg_loss
from .selftrain import PseudoLabelConfig, generate_pseudo_labels
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, term: str, value: float, iteration: Optional[int] = None):
        self.term, self.value, self.iteration = term, value, iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite loss term {term!r} = {value}{where}")


@dataclass
class AdversarialConfig:
    lambda_adv: float = 0.001
    lr_seg: float = 2.5e-4
    lr_attn: float = 1e-4
    lr_disc: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    betas: tuple = (0.9, 0.99)
    max_iter: int = 0  # horizon of the polynomial decay; 0 disables decay
    seg_weights: tuple = (1.0,) * 6
    train_discriminators: bool = True

    def __post_init__(self):
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be non-negative")

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "AdversarialConfig":
        return cls(cfg.lambda_adv, cfg.lr_seg, cfg.lr_attn, cfg.lr_disc, cfg.momentum,
                   cfg.weight_decay, cfg.poly_power, (cfg.adam_beta1, cfg.adam_beta2),
                   cfg.iterations, cfg.seg_weight_list)


class Optimizers:
    """Momentum SGD for segmentation (attention projections on their own rate), Adam for D."""

    def __init__(self, model: ModelBundle, cfg: AdversarialConfig):
        seg = model.seg_parameters()
        self.attn_names = [n for n in seg if n.startswith("sam.")]
        self.body_names = [n for n in seg if not n.startswith("sam.")]
        self.body = SGD([seg[n] for n in self.body_names], cfg.momentum, cfg.weight_decay)
        self.attn = SGD([seg[n] for n in self.attn_names], cfg.momentum, cfg.weight_decay)
        disc = model.disc_parameters()
        self.disc_names = list(disc)
        self.disc = Adam([disc[n] for n in self.disc_names], cfg.betas)


@dataclass
class StepReport:
    iteration: int
    seg: dict
    adv_g: dict
    adv_d: dict
    lr_seg: float
    lr_attn: float
    lr_disc: float
    seg_loss: float
    seg_leaves: frozenset = field(default_factory=frozenset)
    disc_leaves: frozenset = field(default_factory=frozenset)


def _check_finite(parts: dict, prefix: str, it: int) -> None:
    for k, v in parts.items():
        if not math.isfinite(v):
            raise TrainingError(f"{prefix}{k}", v, it)


def _detached(outputs: SixOutputs) -> SixOutputs:
    return SixOutputs(*(SegOutput(o.prob.detach(), o.log_prob.detach()) for o in outputs))


def train_step(model: ModelBundle, batch, cfg: AdversarialConfig, opt: Optimizers,
               iteration: int = 0) -> StepReport:
    """One alternating update on ``batch = (x_s, y_s, x_t, y_t_pseudo)``."""
    x_s, y_s, x_t, y_t = batch
    seg_params = model.seg_parameters()
    discs = model.active_discs()

    with Tape() as tape:
        tape.watch(*seg_params.values())
        fwd = forward_pair(model, x_s, x_t)
        seg_total, seg_parts = total_seg_loss(fwd.outputs, y_s, y_t, cfg.seg_weights)
        if cfg.lambda_adv > 0:
            adv_g, g_parts = total_adv_loss(discs, fwd.outputs, "g")
            objective = ops.add(seg_total, ops.mul(adv_g, cfg.lambda_adv)) if adv_g is not None else seg_total
        else:
            objective = seg_total
    if cfg.lambda_adv == 0:
        # reported only; contributes nothing to the segmentation update
        _, g_parts = total_adv_loss(discs, _detached(fwd.outputs), "g")
    _check_finite(seg_parts, "seg.", iteration)
    _check_finite(g_parts, "adv_g.", iteration)

    tape.backward(objective)
    lr_seg = poly_lr(cfg.lr_seg, iteration, cfg.max_iter, cfg.poly_power)
    lr_attn = poly_lr(cfg.lr_attn, iteration, cfg.max_iter, cfg.poly_power)
    opt.body.step([tape.grad(seg_params[n]).data for n in opt.body_names], lr_seg)
    opt.attn.step([tape.grad(seg_params[n]).data for n in opt.attn_names], lr_attn)
    seg_leaves = frozenset(n for n, t in seg_params.items() if t.tracked(tape))

    detached = _detached(fwd.outputs)
    disc_params = model.disc_parameters()
    active_names = [n for n in opt.disc_names if discs[int(n[1]) - 1] is not None]
    lr_disc = cfg.lr_disc if cfg.train_discriminators else 0.0
    with Tape() as dtape:
        dtape.watch(*(disc_params[n] for n in active_names))
        adv_d, d_parts = total_adv_loss(discs, detached, "d")
    _check_finite(d_parts, "adv_d.", iteration)
    if adv_d is not None and cfg.train_discriminators:
        dtape.backward(adv_d)
        grads = [dtape.grad(disc_params[n]).data if n in active_names else np.zeros_like(disc_params[n].data)
                 for n in opt.disc_names]
        opt.disc.step(grads, lr_disc)
    disc_leaves = frozenset(active_names)

    return StepReport(iteration, seg_parts, g_parts, d_parts, lr_seg, lr_attn, lr_disc,
                      seg_total.item(), seg_leaves, disc_leaves)


# ---------------------------------------------------------------------------
# full runs

CSV_FIELDS = (["iteration"] + [f"seg_{n}" for n in OUTPUT_NAMES]
              + ["adv_d_d1", "adv_d_d2", "adv_d_d3", "adv_g_d1", "adv_g_d2", "adv_g_d3"]
              + ["lr_seg", "lr_attn", "lr_disc"])


def report_row(r: StepReport) -> list:
    row = [r.iteration] + [repr(r.seg[n]) for n in OUTPUT_NAMES]
    for parts in (r.adv_d, r.adv_g):
        row += [repr(parts[k]) if k in parts else "" for k in ("d1", "d2", "d3")]
    return row + [repr(r.lr_seg), repr(r.lr_attn), repr(r.lr_disc)]


def model_from_config(cfg: RunConfig) -> ModelBundle:
    return init_model(cfg.seed, cfg.channels, cfg.reduced_channels, cfg.num_classes,
                      cfg.lambda_s, cfg.lambda_t, cfg.xi_s, cfg.xi_t,
                      cfg.enable_cdsam, cfg.enable_cdcam, cfg.shared_qk, cfg.disc_width)


def pseudo_label_iterations(cfg: RunConfig) -> list[int]:
    """Iterations at which target pseudo-labels are (re)generated."""
    if not cfg.use_pseudo_labels or cfg.pseudo_rounds == 0 or cfg.iterations == 0:
        return []
    start = int(round(cfg.pseudo_start * cfg.iterations))
    span = cfg.iterations - start
    its = sorted({start + (k * span) // cfg.pseudo_rounds for k in range(cfg.pseudo_rounds)})
    return [i for i in its if i < cfg.iterations]


@dataclass
class RunResult:
    model: ModelBundle
    reports: list
    pseudo_labels: Optional[list] = None


def run_training(cfg: RunConfig, bench: Benchmark, log_path: Optional[str] = None,
                 model: Optional[ModelBundle] = None) -> RunResult:
    """Train from scratch (or from ``model``) for ``cfg.iterations`` alternating steps.

    Target pseudo-labels start out fully IGNORE and are produced by the
    current model at the iterations given by :func:`pseudo_label_iterations`.
    """
    model = model or model_from_config(cfg)
    acfg = AdversarialConfig.from_run(cfg)
    opt = Optimizers(model, acfg)
    rng = np.random.default_rng([cfg.seed, 17])
    src, tgt = bench.source, bench.target
    h = w = cfg.image_size
    pseudo = [np.full((h, w), IGNORE, dtype=np.uint8) for _ in tgt.images]
    regen = set(pseudo_label_iterations(cfg))
    plcfg = PseudoLabelConfig(cfg.pseudo_threshold, cfg.pseudo_rounds)

    writer = fh = None
    if log_path:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
    reports = []
    try:
        for it in range(cfg.iterations):
            if it in regen:
                pseudo = generate_pseudo_labels(model, tgt.images, plcfg, src.images)
                log.info("iteration %d: regenerated %d pseudo-labels", it, len(pseudo))
            i = int(rng.integers(len(src.images)))
            j = int(rng.integers(len(tgt.images)))
            batch = (src.images[i], src.labels[i], tgt.images[j], pseudo[j])
            r = train_step(model, batch, acfg, opt, it)
            reports.append(r)
            if writer:
                writer.writerow(report_row(r))
    finally:
        if fh:
            fh.close()
    return RunResult(model, reports, pseudo)


def evaluate(model: ModelBundle, images: Sequence[Tensor], labels: Sequence[np.ndarray],
             partners: Sequence[Tensor], workers: int = 1) -> IoUReport:
    """Target-domain IoU of ``argmax G(Z_t)``; image ``i`` pairs with ``partners[i % n]``.

    Confusion counts are integers, so the threaded reduction is order independent.
    """
    n_cls = model.num_classes

    def one(i):
        prob = predict_target(model, images[i], partners[i % len(partners)])
        return confusion_matrix(prob.argmax(axis=0), labels[i], n_cls)

    cm = np.zeros((n_cls, n_cls), dtype=np.int64)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            for part in pool.map(one, range(len(images))):
                cm += part
    else:
        for i in range(len(images)):
            cm += one(i)
    return iou_from_confusion(cm)
