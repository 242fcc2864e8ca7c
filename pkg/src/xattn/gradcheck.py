"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, Tape, Tensor


def analytic_gradients(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    with Tape() as tape:
        tape.watch(*inputs)
        out = f(*inputs)
    if out.size != 1:
        raise ContractError(f"function must return a scalar, got shape {out.shape}")
    tape.backward(out)
    return [tape.grad(t).data.copy() for t in inputs]


def _scalar(f, inputs) -> float:
    out = f(*inputs)
    if out.size != 1:
        raise ContractError(f"function must return a scalar, got shape {out.shape}")
    return out.item()


def finite_diff_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max over every input coordinate of ``|analytic - central| / max(1, |analytic|)``.

    Input data is perturbed in place and restored afterwards.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    for t in inputs:
        if not t.data.flags.c_contiguous or not t.data.flags.writeable:
            t.data = np.array(t.data, order="C")
    analytic = analytic_gradients(f, inputs)
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = _scalar(f, inputs)
            flat[k] = orig - eps
            fm = _scalar(f, inputs)
            flat[k] = orig
            numeric = (fp - fm) / (2 * eps)
            err = abs(gflat[k] - numeric) / max(1.0, abs(gflat[k]))
            worst = max(worst, err)
    return worst
