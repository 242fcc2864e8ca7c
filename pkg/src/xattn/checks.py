"""Finite-difference gradient suite over every differentiable op and the full model chain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .adversary import DiscriminatorParams, adv_loss_d, adv_loss_g
from .attention import CamParams, SamParams, cd_cam, cd_sam
from .gradcheck import finite_diff_check
from .model import forward_pair, init_model
from .segnet import IGNORE, SegOutput, total_seg_loss
from .tensor import Tensor

TOLERANCE = 1e-4


@dataclass
class GradCheck:
    name: str
    fn: Callable[..., Tensor]
    inputs: Sequence[Tensor]
    tol: float = TOLERANCE


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tol


def _weighted(op, weight):
    """Reduce ``op``'s output to a scalar with fixed random weights."""
    w = Tensor(weight)
    return lambda *xs: ops.sum(ops.mul(op(*xs), w))


def op_checks(seed: int = 0) -> list[GradCheck]:
    rng = np.random.default_rng(seed)
    r = lambda *s: Tensor(rng.normal(size=s))  # noqa: E731
    w = lambda *s: rng.normal(size=s)  # noqa: E731
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)))
    labels = rng.integers(0, 4, size=(3, 3))
    labels[0, 0] = IGNORE

    def nll(x):
        return ops.nll_loss(ops.log_softmax(x, axis=0), labels)

    def conv_plain(x, k):
        return ops.conv2d(x, k)

    def conv_full(x, k, b):
        return ops.conv2d(x, k, b, stride=2, padding=1)

    def stack_take(a, b):
        s = ops.stack([a, b])
        return ops.add(ops.mul(ops.take(s, 0), 2.0), ops.take(s, 1))

    return [
        GradCheck("add", _weighted(ops.add, w(3, 4)), [r(3, 4), r(1, 4)]),
        GradCheck("sub", _weighted(ops.sub, w(3, 4)), [r(3, 4), r(3, 1)]),
        GradCheck("mul", _weighted(ops.mul, w(3, 4)), [r(3, 4), r(3, 4)]),
        GradCheck("exp", _weighted(ops.exp, w(3, 4)), [r(3, 4)]),
        GradCheck("log", _weighted(ops.log, w(3, 4)), [pos]),
        GradCheck("leaky_relu", _weighted(ops.leaky_relu, w(3, 4)),
                  [Tensor(rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)))]),
        GradCheck("softplus", _weighted(ops.softplus, w(3, 4)), [r(3, 4)]),
        GradCheck("reshape", _weighted(lambda x: ops.reshape(x, (4, 3)), w(4, 3)), [r(3, 4)]),
        GradCheck("transpose", _weighted(ops.transpose, w(4, 3)), [r(3, 4)]),
        GradCheck("concat_channels", _weighted(ops.concat_channels, w(5, 2, 2)), [r(2, 2, 2), r(3, 2, 2)]),
        GradCheck("stack_take", _weighted(stack_take, w(2, 3)), [r(2, 3), r(2, 3)]),
        GradCheck("sum_axis", _weighted(lambda x: ops.sum(x, axis=0), w(4)), [r(3, 4)]),
        GradCheck("mean", lambda x: ops.mean(ops.mul(x, x)), [r(3, 4)]),
        GradCheck("matmul", _weighted(ops.matmul, w(3, 2)), [r(3, 4), r(4, 2)]),
        GradCheck("softmax_rows", _weighted(lambda x: ops.softmax(x, axis=1), w(3, 4)), [r(3, 4)]),
        GradCheck("softmax_cols", _weighted(lambda x: ops.softmax(x, axis=0), w(3, 4)), [r(3, 4)]),
        GradCheck("log_softmax", _weighted(lambda x: ops.log_softmax(x, axis=0), w(4, 3, 3)), [r(4, 3, 3)]),
        GradCheck("nll_loss", nll, [r(4, 3, 3)]),
        GradCheck("conv2d", _weighted(conv_plain, w(3, 3, 3)), [r(2, 5, 5), r(3, 2, 3, 3)]),
        GradCheck("conv2d_stride_pad_bias", _weighted(conv_full, w(3, 3, 3)),
                  [r(2, 6, 6), r(3, 2, 4, 4), r(3)]),
        GradCheck("conv2d_1x1", _weighted(conv_plain, w(3, 4, 4)), [r(2, 4, 4), r(3, 2, 1, 1)]),
        GradCheck("bilinear_down", _weighted(lambda x: ops.bilinear_resize(x, 3, 2), w(2, 3, 2)), [r(2, 5, 4)]),
        GradCheck("bilinear_up", _weighted(lambda x: ops.bilinear_resize(x, 8, 7), w(2, 8, 7)), [r(2, 3, 2)]),
    ]


def attention_checks(seed: int = 0) -> list[GradCheck]:
    rng = np.random.default_rng(seed + 1)
    c, cr, h, w = 3, 2, 3, 2
    r = lambda *s: Tensor(rng.normal(size=s))  # noqa: E731
    ws, wt = rng.normal(size=(c, h, w)), rng.normal(size=(c, h, w))

    def sam_loss(a_s, a_t, q, k, v):
        p = SamParams(q, k, v, 0.7, 1.3)
        o_s, o_t = cd_sam(a_s, a_t, p)
        return ops.add(ops.sum(ops.mul(o_s, Tensor(ws))), ops.sum(ops.mul(o_t, Tensor(wt))))

    def cam_loss(b_s, b_t):
        o_s, o_t = cd_cam(b_s, b_t, CamParams(0.6, 1.4))
        return ops.add(ops.sum(ops.mul(o_s, Tensor(ws))), ops.sum(ops.mul(o_t, Tensor(wt))))

    return [
        GradCheck("cd_sam", sam_loss, [r(c, h, w), r(c, h, w), r(cr, c, 1, 1), r(cr, c, 1, 1), r(c, c, 1, 1)]),
        GradCheck("cd_cam", cam_loss, [r(c, h, w), r(c, h, w)]),
    ]


def chain_check(seed: int = 0, size: int = 8, name: str = "full_chain") -> GradCheck:
    """Encoder -> projections -> both attention modules -> aggregation -> classifier -> losses."""
    model = init_model(seed, channels=4, reduced=2, num_classes=3, disc_width=0.0625)
    rng = np.random.default_rng(seed + 2)
    x_s = Tensor(rng.uniform(size=(3, size, size)))
    x_t = Tensor(rng.uniform(size=(3, size, size)))
    y_s = rng.integers(0, 3, size=(size, size)).astype(np.uint8)
    y_t = rng.integers(0, 3, size=(size, size)).astype(np.uint8)
    y_t[: size // 2] = IGNORE
    params = model.seg_parameters()
    names = list(params)

    def loss(*ts):
        # rebind so the tape sees the watched tensors
        _bind(model, dict(zip(names, ts)))
        fwd = forward_pair(model, x_s, x_t)
        total, _ = total_seg_loss(fwd.outputs, y_s, y_t)
        return total

    return GradCheck(name, loss, [Tensor(params[n].data.copy()) for n in names])


def _bind(model, tensors: dict) -> None:
    for i, conv in enumerate(model.encoder.blocks):
        conv.weight, conv.bias = tensors[f"enc{i}.w"], tensors[f"enc{i}.b"]
    model.proj.conv_a.weight, model.proj.conv_a.bias = tensors["proj_a.w"], tensors["proj_a.b"]
    model.proj.conv_b.weight, model.proj.conv_b.bias = tensors["proj_b.w"], tensors["proj_b.b"]
    model.sam.w_q = tensors["sam.q"]
    model.sam.w_k = tensors.get("sam.k", tensors["sam.q"])
    model.sam.w_v = tensors["sam.v"]
    model.agg.conv_z.weight, model.agg.conv_z.bias = tensors["agg.w"], tensors["agg.b"]
    model.cls.conv_g.weight, model.cls.conv_g.bias = tensors["cls.w"], tensors["cls.b"]


def adversarial_check(seed: int = 0) -> list[GradCheck]:
    """Discriminator losses w.r.t. both the probability maps and the first-layer weights."""
    rng = np.random.default_rng(seed + 3)
    d = DiscriminatorParams.create(3, rng, width_multiplier=0.0625)

    def probs():
        return Tensor(rng.normal(size=(3, 32, 32)))

    def loss_d(ls, lt, w0):
        d.layers[0].weight = w0
        return adv_loss_d(d, SegOutput.from_logits(ls), SegOutput.from_logits(lt))

    def loss_g(lt, w0):
        d.layers[0].weight = w0
        return adv_loss_g(d, SegOutput.from_logits(lt))

    w0 = d.layers[0].weight
    return [
        GradCheck("adv_loss_d", loss_d, [probs(), probs(), Tensor(w0.data.copy())]),
        GradCheck("adv_loss_g", loss_g, [probs(), Tensor(w0.data.copy())]),
    ]


def linear_check(seed: int = 0) -> GradCheck:
    """A purely linear graph; central differences are exact up to rounding."""
    rng = np.random.default_rng(seed + 4)
    a = Tensor(rng.normal(size=(3, 4)))
    wt = Tensor(rng.normal(size=(2, 4)))

    def f(x, y):
        z = ops.add(ops.mul(ops.matmul(x, ops.transpose(wt)), 3.0), y)
        return ops.sum(ops.mul(ops.reshape(z, (6,)), Tensor(np.arange(6.0))))

    return GradCheck("linear_subgraph", f, [a, Tensor(rng.normal(size=(3, 2)))], tol=1e-8)


def default_suite(seed: int = 0) -> list[GradCheck]:
    return (op_checks(seed) + attention_checks(seed)
            + [chain_check(seed, 8, "full_chain_8x8"), chain_check(seed, 16, "full_chain_16x16")]
            + adversarial_check(seed) + [linear_check(seed)])


def run_checks(checks: Sequence[GradCheck], eps: float = 1e-5) -> list[CheckResult]:
    out = []
    for c in checks:
        try:
            err = finite_diff_check(c.fn, c.inputs, eps)
        except (ArithmeticError, ValueError) as exc:  # a crashing check counts as failed
            err = float("inf")
            c.name = f"{c.name} ({exc})"
        out.append(CheckResult(c.name, err, c.tol))
    return out
