"""Bidirectional cross-domain attention between a source and a target feature map.

Spatial attention compares every source position with every target position
through learned query/key projections; channel attention compares channel
maps directly. In both cases the energy matrix is indexed
``[source, target]``: forward (source-to-target) maps normalize over the target
index, backward (target-to-source) maps over the source index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import ops
from .init import kaiming_uniform
from .tensor import DimensionError, Tensor


class SpatialPair(NamedTuple):
    a_s: Tensor
    a_t: Tensor


class ChannelPair(NamedTuple):
    b_s: Tensor
    b_t: Tensor


@dataclass
class SamParams:
    w_q: Tensor  # C_r x C x 1 x 1, applied to the source map
    w_k: Tensor  # C_r x C x 1 x 1, applied to the target map
    w_v: Tensor  # C x C x 1 x 1, shared by both domains
    lambda_s: float = 1.0
    lambda_t: float = 1.0

    def __post_init__(self):
        if self.w_q.shape != self.w_k.shape:
            raise DimensionError(f"query/key weights differ: {self.w_q.shape} vs {self.w_k.shape}")
        cr, c = self.w_q.shape[:2]
        if cr > c:
            raise DimensionError(f"reduced width {cr} exceeds channel count {c}")
        if self.lambda_s < 0 or self.lambda_t < 0:
            raise ValueError("lambda_s and lambda_t must be non-negative")


@dataclass
class CamParams:
    xi_s: float = 1.0
    xi_t: float = 1.0

    def __post_init__(self):
        if self.xi_s < 0 or self.xi_t < 0:
            raise ValueError("xi_s and xi_t must be non-negative")


def _check_pair(a: Tensor, b: Tensor) -> None:
    if a.ndim != 3 or a.shape != b.shape:
        raise DimensionError(f"source/target feature maps must share CxHxW, got {a.shape} and {b.shape}")


def _flat(t: Tensor) -> Tensor:
    c = t.shape[0]
    return ops.reshape(t, (c, -1))


def spatial_energy(a_s: Tensor, a_t: Tensor, p: SamParams):
    """Return ``(phi, v_s, v_t)`` with ``phi = Q^T K`` of shape ``N x N``."""
    _check_pair(a_s, a_t)
    q = _flat(ops.conv2d(a_s, p.w_q))
    k = _flat(ops.conv2d(a_t, p.w_k))
    phi = ops.matmul(ops.transpose(q), k)
    v_s = _flat(ops.conv2d(a_s, p.w_v))
    v_t = _flat(ops.conv2d(a_t, p.w_v))
    return phi, v_s, v_t


def spatial_forward_attention(phi: Tensor) -> Tensor:
    """Source-to-target map: each row (source position) sums to one."""
    return ops.softmax(phi, axis=1)


def spatial_backward_attention(phi: Tensor) -> Tensor:
    """Target-to-source map: each column (target position) sums to one."""
    return ops.softmax(phi, axis=0)


@dataclass
class SamResult:
    a_s: Tensor
    a_t: Tensor
    gamma_st: Tensor
    gamma_ts: Tensor


def cd_sam_full(a_s: Tensor, a_t: Tensor, p: SamParams) -> SamResult:
    phi, v_s, v_t = spatial_energy(a_s, a_t, p)
    g_st = spatial_forward_attention(phi)
    g_ts = spatial_backward_attention(phi)
    shape = a_s.shape
    # A_s'[c, i] = A_s[c, i] + lambda_s * sum_j G_st[i, j] V_t[c, j]
    ctx_s = ops.reshape(ops.matmul(v_t, ops.transpose(g_st)), shape)
    # A_t'[c, j] = A_t[c, j] + lambda_t * sum_i V_s[c, i] G_ts[i, j]
    ctx_t = ops.reshape(ops.matmul(v_s, g_ts), shape)
    out_s = ops.add(a_s, ops.mul(ctx_s, p.lambda_s))
    out_t = ops.add(a_t, ops.mul(ctx_t, p.lambda_t))
    return SamResult(out_s, out_t, g_st, g_ts)


def cd_sam(a_s: Tensor, a_t: Tensor, p: SamParams) -> tuple[Tensor, Tensor]:
    r = cd_sam_full(a_s, a_t, p)
    return r.a_s, r.a_t


def channel_energy(b_s: Tensor, b_t: Tensor) -> Tensor:
    """``theta[i, j] = <source channel i, target channel j>``, shape ``C x C``."""
    _check_pair(b_s, b_t)
    return ops.matmul(_flat(b_s), ops.transpose(_flat(b_t)))


def channel_forward_attention(theta: Tensor) -> Tensor:
    return ops.softmax(theta, axis=1)


def channel_backward_attention(theta: Tensor) -> Tensor:
    return ops.softmax(theta, axis=0)


@dataclass
class CamResult:
    b_s: Tensor
    b_t: Tensor
    psi_st: Tensor
    psi_ts: Tensor


def cd_cam_full(b_s: Tensor, b_t: Tensor, p: CamParams) -> CamResult:
    theta = channel_energy(b_s, b_t)
    psi_st = channel_forward_attention(theta)
    psi_ts = channel_backward_attention(theta)
    shape = b_s.shape
    fs, ft = _flat(b_s), _flat(b_t)
    ctx_s = ops.reshape(ops.matmul(psi_st, ft), shape)
    ctx_t = ops.reshape(ops.matmul(ops.transpose(psi_ts), fs), shape)
    out_s = ops.add(b_s, ops.mul(ctx_s, p.xi_s))
    out_t = ops.add(b_t, ops.mul(ctx_t, p.xi_t))
    return CamResult(out_s, out_t, psi_st, psi_ts)


def cd_cam(b_s: Tensor, b_t: Tensor, p: CamParams) -> tuple[Tensor, Tensor]:
    r = cd_cam_full(b_s, b_t, p)
    return r.b_s, r.b_t


def init_sam_params(channels: int, reduced: int, rng: np.random.Generator,
                    lambda_s: float = 1.0, lambda_t: float = 1.0,
                    shared_qk: bool = False) -> SamParams:
    w_q = kaiming_uniform((reduced, channels, 1, 1), rng)
    w_k = w_q if shared_qk else kaiming_uniform((reduced, channels, 1, 1), rng)
    w_v = kaiming_uniform((channels, channels, 1, 1), rng)
    return SamParams(w_q, w_k, w_v, lambda_s, lambda_t)


def attention_maps(a_s: Tensor, a_t: Tensor, b_s: Tensor, b_t: Tensor,
                   sam: Optional[SamParams]) -> dict[str, np.ndarray]:
    """All four normalized maps as arrays, for inspection and export."""
    out = {}
    if sam is not None:
        phi, _, _ = spatial_energy(a_s, a_t, sam)
        out["gamma_st"] = spatial_forward_attention(phi).data
        out["gamma_ts"] = spatial_backward_attention(phi).data
    theta = channel_energy(b_s, b_t)
    out["psi_st"] = channel_forward_attention(theta).data
    out["psi_ts"] = channel_backward_attention(theta).data
    return out
