"""The full segmentation model: encoder, projections, cross-attention, aggregation,
classifier and three discriminators, plus the paired source/target forward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import ops
from .adversary import DiscriminatorParams
from .attention import CamParams, SamParams, cd_cam_full, cd_sam_full, init_sam_params
from .segnet import (AggregationParams, ClassifierParams, EncoderParams, ProjectionParams,
                     SixOutputs, aggregate, classify, extract_features, match_sizes, project)
from .tensor import Tensor


@dataclass
class ModelBundle:
    encoder: EncoderParams
    proj: ProjectionParams
    sam: SamParams
    cam: CamParams
    agg: AggregationParams
    cls: ClassifierParams
    discs: list  # [D1, D2, D3]
    enable_cdsam: bool = True
    enable_cdcam: bool = True

    @property
    def channels(self) -> int:
        return self.agg.conv_z.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.cls.conv_g.weight.shape[0]

    def seg_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.encoder.blocks):
            out[f"enc{i}.w"], out[f"enc{i}.b"] = conv.weight, conv.bias
        out["proj_a.w"], out["proj_a.b"] = self.proj.conv_a.weight, self.proj.conv_a.bias
        out["proj_b.w"], out["proj_b.b"] = self.proj.conv_b.weight, self.proj.conv_b.bias
        out["sam.q"] = self.sam.w_q
        if self.sam.w_k is not self.sam.w_q:
            out["sam.k"] = self.sam.w_k
        out["sam.v"] = self.sam.w_v
        out["agg.w"], out["agg.b"] = self.agg.conv_z.weight, self.agg.conv_z.bias
        out["cls.w"], out["cls.b"] = self.cls.conv_g.weight, self.cls.conv_g.bias
        return out

    def disc_parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, d in enumerate(self.discs, start=1):
            for i, conv in enumerate(d.layers):
                out[f"d{k}.{i}.w"], out[f"d{k}.{i}.b"] = conv.weight, conv.bias
        return out

    def parameters(self) -> dict[str, Tensor]:
        return {**self.seg_parameters(), **self.disc_parameters()}

    def load_parameters(self, tensors: dict[str, Tensor]) -> None:
        own = self.parameters()
        missing = sorted(set(own) - set(tensors))
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {', '.join(missing)}")
        for name, t in own.items():
            if tensors[name].shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {tensors[name].shape} != model {t.shape}")
            t.data = tensors[name].data.copy()

    def active_discs(self) -> list[Optional[DiscriminatorParams]]:
        """D2 is dropped without spatial attention, D3 without channel attention."""
        d1, d2, d3 = self.discs
        return [d1, d2 if self.enable_cdsam else None, d3 if self.enable_cdcam else None]


def init_model(seed: int, channels: int = 16, reduced: Optional[int] = None, num_classes: int = 5,
               lambda_s: float = 1.0, lambda_t: float = 1.0, xi_s: float = 1.0, xi_t: float = 1.0,
               enable_cdsam: bool = True, enable_cdcam: bool = True, shared_qk: bool = False,
               disc_width: float = 1.0) -> ModelBundle:
    rng = np.random.default_rng(seed)
    reduced = max(1, channels // 4) if reduced is None else reduced
    return ModelBundle(
        encoder=EncoderParams.create(channels, rng),
        proj=ProjectionParams.create(channels, rng),
        sam=init_sam_params(channels, reduced, rng, lambda_s, lambda_t, shared_qk),
        cam=CamParams(xi_s, xi_t),
        agg=AggregationParams.create(channels, rng),
        cls=ClassifierParams.create(channels, num_classes, rng),
        discs=[DiscriminatorParams.create(num_classes, rng, disc_width) for _ in range(3)],
        enable_cdsam=enable_cdsam,
        enable_cdcam=enable_cdcam,
    )


class PairForward(NamedTuple):
    outputs: SixOutputs
    features: dict  # name -> Tensor (f_s, f_t, a_s, a_t, b_s, b_t, a_s', ...)
    attention: dict  # name -> Tensor, only for enabled modules


def forward_pair(model: ModelBundle, x_s: Tensor, x_t: Tensor) -> PairForward:
    """Run source image ``x_s`` and target image ``x_t`` through the whole model.

    A disabled attention module passes its features through unchanged.
    """
    h_s, w_s = x_s.shape[1:]
    h_t, w_t = x_t.shape[1:]
    f_s, f_t = match_sizes(extract_features(x_s, model.encoder), extract_features(x_t, model.encoder))
    (a_s, a_t), (b_s, b_t) = project(f_s, f_t, model.proj)
    attn = {}
    if model.enable_cdsam:
        r = cd_sam_full(a_s, a_t, model.sam)
        a_s2, a_t2 = r.a_s, r.a_t
        attn["gamma_st"], attn["gamma_ts"] = r.gamma_st, r.gamma_ts
    else:
        a_s2, a_t2 = a_s, a_t
    if model.enable_cdcam:
        r = cd_cam_full(b_s, b_t, model.cam)
        b_s2, b_t2 = r.b_s, r.b_t
        attn["psi_st"], attn["psi_ts"] = r.psi_st, r.psi_ts
    else:
        b_s2, b_t2 = b_s, b_t
    z_s = aggregate(a_s2, b_s2, model.agg)
    z_t = aggregate(a_t2, b_t2, model.agg)

    def head(z, h, w):
        return classify(z, model.cls, h, w)

    outputs = SixOutputs(
        head(z_s, h_s, w_s), head(z_t, h_t, w_t),
        head(a_s2, h_s, w_s), head(a_t2, h_t, w_t),
        head(b_s2, h_s, w_s), head(b_t2, h_t, w_t),
    )
    feats = dict(f_s=f_s, f_t=f_t, a_s=a_s, a_t=a_t, b_s=b_s, b_t=b_t,
                 a_s2=a_s2, a_t2=a_t2, b_s2=b_s2, b_t2=b_t2, z_s=z_s, z_t=z_t)
    return PairForward(outputs, feats, attn)


def predict_target(model: ModelBundle, x_t: Tensor, partner: Tensor) -> np.ndarray:
    """``L x H x W`` class probabilities for a target image, paired with a source image."""
    return forward_pair(model, partner, x_t).outputs.z_t.prob.data
