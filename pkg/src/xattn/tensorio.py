"""Binary tensor files and directory checkpoints.

File layout: ``b"XTEN"``, little-endian ``u32`` rank, ``rank`` little-endian
``u32`` extents, then the row-major payload as little-endian ``f64``.
A checkpoint is a directory holding one such file per tensor plus
``index.txt`` with ``name<TAB>file`` lines in a stable order.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"XTEN"
INDEX = "index.txt"


class FormatError(ValueError):
    pass


def tensor_to_bytes(t: Tensor) -> bytes:
    shape = t.shape
    header = MAGIC + struct.pack(f"<I{len(shape)}I", len(shape), *shape)
    return header + np.ascontiguousarray(t.data, dtype="<f8").tobytes()


def tensor_from_bytes(buf: bytes) -> Tensor:
    if buf[:4] != MAGIC:
        raise FormatError("missing XTEN magic")
    (rank,) = struct.unpack_from("<I", buf, 4)
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(buf) - offset != 8 * count:
        raise FormatError(f"payload holds {len(buf) - offset} bytes, expected {8 * count}")
    data = np.frombuffer(buf, dtype="<f8", offset=offset, count=count).astype(np.float64)
    return Tensor(data.reshape(shape))


def save_tensor(path: str, t: Tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def load_tensor(path: str) -> Tensor:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def save_checkpoint(directory: str, tensors: Mapping[str, Tensor]) -> None:
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name in sorted(tensors):
        fname = name.replace("/", "_") + ".xten"
        save_tensor(os.path.join(directory, fname), tensors[name])
        lines.append(f"{name}\t{fname}\n")
    with open(os.path.join(directory, INDEX), "w") as fh:
        fh.writelines(lines)


def load_checkpoint(directory: str) -> dict[str, Tensor]:
    index = os.path.join(directory, INDEX)
    if not os.path.exists(index):
        raise FileNotFoundError(f"no checkpoint index at {index}")
    out = {}
    with open(index) as fh:
        for line in fh:
            if not line.strip():
                continue
            name, fname = line.rstrip("\n").split("\t")
            out[name] = load_tensor(os.path.join(directory, fname))
    return out
