"""Command-line entry point: synth | train | eval | attn | gradcheck.

Exit codes: 0 success, 2 config or argument error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from . import checks
from .attention import attention_maps
from .config import ConfigError, RunConfig, load_config, save_config
from .dataset import read_dataset, write_dataset
from .model import forward_pair
from .netpbm import NetpbmError, colorize, heatmap_to_gray, read_ppm, rgb8_to_image, write_pgm, write_ppm
from .scenegen import CLASSES, make_benchmark
from .segnet import DataError
from .tensorio import FormatError, load_checkpoint, save_checkpoint, save_tensor
from .tensor import Tensor
from .trainer import TrainingError, evaluate, model_from_config, run_training

log = logging.getLogger("xattn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ArgumentError(ConfigError):
    pass


def worker_count() -> int:
    raw = os.environ.get("XATTN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"XATTN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("XATTN_THREADS must be >= 1")
    return n


def resolve_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    cfg.validate()
    return cfg


def _echo_config(out: str, cfg: RunConfig) -> None:
    os.makedirs(out, exist_ok=True)
    save_config(os.path.join(out, "config.txt"), cfg)


def _load_model(cfg: RunConfig, checkpoint: str):
    model = model_from_config(cfg)
    try:
        tensors = load_checkpoint(checkpoint)
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {exc.filename or checkpoint}") from exc
    try:
        model.load_parameters(tensors)
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint {checkpoint} does not fit the configured model: {exc}") from exc
    return model


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(cfg: RunConfig, out: str) -> int:
    bench = make_benchmark(cfg.seed, cfg.n_source, cfg.n_target, cfg.n_eval, cfg.image_size, cfg.image_size)
    path = write_dataset(out, bench)
    _echo_config(out, cfg)
    n = len(bench.source.images) + len(bench.target.images) + len(bench.eval.images)
    print(f"wrote {n} scenes to {out} (manifest {path})")
    return EXIT_OK


def write_pseudo_labels(out: str, labels, target_files: Sequence[str]) -> None:
    os.makedirs(out, exist_ok=True)
    lines = []
    for i, lab in enumerate(labels):
        name = f"{i:04d}.pgm"
        write_pgm(os.path.join(out, name), lab)
        lines.append(f"{target_files[i] if i < len(target_files) else i}\t{name}\n")
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        fh.writelines(lines)


def cmd_train(cfg: RunConfig, out: str) -> int:
    bench = read_dataset(cfg.data_dir)
    if not bench.source.images:
        raise DataError(f"dataset at {cfg.data_dir} has no source images")
    if not bench.target.images:
        raise DataError(f"dataset at {cfg.data_dir} has no target images")
    for img in bench.source.images + bench.target.images:
        if img.shape[1:] != (cfg.image_size, cfg.image_size):
            raise DataError(f"dataset image size {img.shape[1:]} differs from image_size {cfg.image_size}")
    _echo_config(out, cfg)
    result = run_training(cfg, bench, log_path=os.path.join(out, "train_log.csv"))
    save_checkpoint(os.path.join(out, "checkpoint"), result.model.parameters())
    if cfg.use_pseudo_labels:
        files = [f"target/{i:04d}.ppm" for i in range(len(bench.target.images))]
        write_pseudo_labels(os.path.join(out, "pseudo_labels"), result.pseudo_labels, files)
    print(f"trained {cfg.iterations} iterations; checkpoint in {os.path.join(out, 'checkpoint')}")
    return EXIT_OK


def write_iou_csv(path: str, report) -> None:
    with open(path, "w") as fh:
        fh.write("class,iou\n")
        for name, v in report.as_rows(CLASSES):
            fh.write(f"{name},{'' if v is None else repr(v)}\n")
        fh.write(f"mean,{report.miou!r}\n")


def cmd_eval(cfg: RunConfig, checkpoint: str, out: str) -> int:
    model = _load_model(cfg, checkpoint)
    bench = read_dataset(cfg.data_dir)
    if not bench.eval.images:
        raise DataError(f"dataset at {cfg.data_dir} has no eval split")
    partners = bench.source.images or bench.eval.images
    report = evaluate(model, bench.eval.images, bench.eval.labels, partners, workers=worker_count())
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "eval.csv")
    write_iou_csv(path, report)
    for name, v in report.as_rows(CLASSES):
        print(f"{name:<12s} {'undefined' if v is None else f'{v:.4f}'}")
    print(f"{'mIoU':<12s} {report.miou:.4f}")
    return EXIT_OK


def parse_position(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"position must look like ROW,COL, got {text!r}") from None
    return r, c


def _read_image(path: str) -> Tensor:
    try:
        return rgb8_to_image(read_ppm(path))
    except (OSError, NetpbmError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def cmd_attn(cfg: RunConfig, checkpoint: str, out: str, src_image: Optional[str], tgt_image: Optional[str],
             src_pos: Sequence[tuple], tgt_pos: Sequence[tuple]) -> int:
    model = _load_model(cfg, checkpoint)
    if src_image is None or tgt_image is None:
        bench = read_dataset(cfg.data_dir)
        if not bench.source.images or not bench.eval.images:
            raise DataError("attn needs --src-image/--tgt-image or a dataset with source and eval scenes")
    x_s = _read_image(src_image) if src_image else bench.source.images[0]
    x_t = _read_image(tgt_image) if tgt_image else bench.eval.images[0]
    fwd = forward_pair(model, x_s, x_t)
    f = fwd.features
    h, w = f["a_s"].shape[1:]
    for r, c in list(src_pos) + list(tgt_pos):
        if not (0 <= r < h and 0 <= c < w):
            raise ArgumentError(f"position ({r}, {c}) outside the {h}x{w} feature map")
    maps = attention_maps(f["a_s"], f["a_t"], f["b_s"], f["b_t"], model.sam)
    os.makedirs(out, exist_ok=True)
    index = []

    def emit(name, m):
        write_pgm(os.path.join(out, name + ".pgm"), heatmap_to_gray(m))
        save_tensor(os.path.join(out, name + ".xten"), Tensor(m))
        index.append(f"{name}\t{name}.pgm\t{name}.xten\n")

    for r, c in src_pos:
        # where source position (r, c) looks in the target map
        emit(f"gamma_st_r{r}_c{c}", maps["gamma_st"][r * w + c].reshape(h, w))
    for r, c in tgt_pos:
        emit(f"gamma_ts_r{r}_c{c}", maps["gamma_ts"][:, r * w + c].reshape(h, w))
    emit("psi_st", maps["psi_st"])
    emit("psi_ts", maps["psi_ts"])
    write_pgm(os.path.join(out, "target_pred.pgm"), fwd.outputs.z_t.argmax())
    write_ppm(os.path.join(out, "target_pred.ppm"), colorize(fwd.outputs.z_t.argmax()))
    with open(os.path.join(out, "index.txt"), "w") as fh:
        fh.writelines(index)
    print(f"wrote {len(index)} attention maps to {out}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, extra: Sequence[checks.GradCheck] = ()) -> int:
    results = checks.run_checks(checks.default_suite(cfg.seed) + list(extra))
    failed = 0
    for r in results:
        status = "ok" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{status:<4s} {r.name:<28s} {r.error:.3e} (tol {r.tol:.0e})")
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xattn", description="Cross-domain attention segmentation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True, checkpoint=False):
        sp.add_argument("--config", metavar="PATH", help="key = value run configuration")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        if out:
            sp.add_argument("--out", metavar="DIR", help="output directory")
        if checkpoint:
            sp.add_argument("--checkpoint", metavar="PATH", required=True, help="checkpoint directory")
        return sp

    common(sub.add_parser("synth", help="render the synthetic two-domain dataset"))
    common(sub.add_parser("train", help="adversarial training with cross-domain attention"))
    common(sub.add_parser("eval", help="per-class IoU on the target eval split"), checkpoint=True)
    sp = common(sub.add_parser("attn", help="export attention heatmaps"), checkpoint=True)
    sp.add_argument("--src-image", metavar="PPM")
    sp.add_argument("--tgt-image", metavar="PPM")
    sp.add_argument("--src-pos", type=parse_position, action="append", default=[], metavar="ROW,COL",
                    help="source feature position; exports its row of the source-to-target map")
    sp.add_argument("--tgt-pos", type=parse_position, action="append", default=[], metavar="ROW,COL",
                    help="target feature position; exports its column of the target-to-source map")
    common(sub.add_parser("gradcheck", help="finite-difference gradient suite"), out=False)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        worker_count()
        if args.command == "synth":
            return cmd_synth(cfg, args.out or cfg.data_dir)
        if args.command == "train":
            return cmd_train(cfg, args.out or cfg.out_dir)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.out or cfg.out_dir)
        if args.command == "attn":
            return cmd_attn(cfg, args.checkpoint, args.out or os.path.join(cfg.out_dir, "attention"),
                            args.src_image, args.tgt_image, args.src_pos, args.tgt_pos)
        return cmd_gradcheck(cfg)
    except ConfigError as exc:
        kind = "argument" if isinstance(exc, ArgumentError) else "config"
        print(f"xattn: {kind} error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"xattn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, NetpbmError) as exc:
        print(f"xattn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"xattn: data error: {exc.filename or ''} {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
