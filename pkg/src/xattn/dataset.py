"""On-disk benchmark layout: PPM images, PGM labels and a tab-separated manifest.

    <root>/manifest.txt            split, seed, image file, label file (one scene per line)
    <root>/<split>/<nnnn>.ppm
    <root>/<split>/<nnnn>.pgm
"""

from __future__ import annotations

import os

from .netpbm import image_to_rgb8, read_pgm, read_ppm, rgb8_to_image, write_pgm, write_ppm
from .scenegen import Benchmark, Split
from .segnet import DataError

MANIFEST = "manifest.txt"
SPLITS = ("source", "target", "eval")


def write_dataset(root: str, bench: Benchmark) -> str:
    lines = []
    for name in SPLITS:
        split = getattr(bench, name)
        if split.images:
            os.makedirs(os.path.join(root, name), exist_ok=True)
        for i, (img, lab, seed) in enumerate(zip(split.images, split.labels, split.seeds)):
            img_rel = f"{name}/{i:04d}.ppm"
            lab_rel = f"{name}/{i:04d}.pgm"
            write_ppm(os.path.join(root, img_rel), image_to_rgb8(img))
            write_pgm(os.path.join(root, lab_rel), lab)
            lines.append(f"{name}\t{seed}\t{img_rel}\t{lab_rel}\n")
    os.makedirs(root, exist_ok=True)
    path = os.path.join(root, MANIFEST)
    with open(path, "w") as fh:
        fh.writelines(lines)
    return path


def read_manifest(root: str) -> list[tuple[str, int, str, str]]:
    path = os.path.join(root, MANIFEST)
    if not os.path.isfile(path):
        raise DataError(f"no dataset manifest at {path}")
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4 or parts[0] not in SPLITS:
                raise DataError(f"{path}:{n}: malformed manifest line")
            rows.append((parts[0], int(parts[1]), parts[2], parts[3]))
    return rows


def read_dataset(root: str) -> Benchmark:
    splits = {name: Split([], [], []) for name in SPLITS}
    for name, seed, img_rel, lab_rel in read_manifest(root):
        try:
            img = rgb8_to_image(read_ppm(os.path.join(root, img_rel)))
            lab = read_pgm(os.path.join(root, lab_rel))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read scene {img_rel}: {exc}") from exc
        if lab.shape != img.shape[1:]:
            raise DataError(f"{lab_rel}: label size {lab.shape} does not match image {img.shape[1:]}")
        s = splits[name]
        s.images.append(img)
        s.labels.append(lab)
        s.seeds.append(seed)
    return Benchmark(splits["source"], splits["target"], splits["eval"])
