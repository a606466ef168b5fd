"""Command-line surface: pretrain, train, compress, decompress, eval, rd, selftest.

Failures print a single ``error: <kind>: <message>`` line on stderr and exit
non-zero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

THREAD_VARS = ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _limit_threads() -> None:
    n = os.environ.get("VCN_THREADS")
    if n:
        for var in THREAD_VARS:
            os.environ.setdefault(var, n)


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value training config file")
    p.add_argument("--data", help="key = value dataset config (train_dir, val_dir, patch_stride, seed)")
    p.add_argument("--path", dest="framework", choices=("scic", "dnnc"))
    p.add_argument("--mode", choices=("full", "low"))
    p.add_argument("--K", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--m", type=int, help="batch size")
    p.add_argument("--qf", type=int)
    p.add_argument("--n", dest="n_maps", type=int, help="DNNC feature-map count")
    p.add_argument("--beta", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=int, help="SCIC channel width (128 in the reference architecture)")
    p.add_argument("--lr", type=float)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--patch-stride", dest="patch_stride", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vcnet", description="Virtual-codec supervised re-sampling compression")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="fit the RSN/IDN autoencoder (no quantization)")
    _train_flags(p)
    p.add_argument("--out", required=True, help="training checkpoint (rsn, idn, vcn)")

    p = sub.add_parser("train", help="alternating IDN / VCN / RSN training")
    _train_flags(p)
    p.add_argument("--init", help="training checkpoint from `pretrain`; pretrains when absent")
    p.add_argument("--out", required=True, help="inference checkpoint (rsn, idn)")
    p.add_argument("--report", help="training report CSV")

    p = sub.add_parser("compress", help="image -> bitstream")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ckpt", help="inference checkpoint; without one the image is coded directly")
    p.add_argument("--path", choices=("scic", "dnnc"), help="must agree with the checkpoint when both are given")
    p.add_argument("--qf", type=int, help="quality factor (defaults to the checkpoint's, or 50)")

    p = sub.add_parser("decompress", help="bitstream -> image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ckpt")

    p = sub.add_parser("eval", help="PSNR / SSIM of an image pair")
    p.add_argument("reference")
    p.add_argument("test")

    p = sub.add_parser("rd", help="rate-distortion sweep (CSV, optional SVG)")
    p.add_argument("--methods", default="jpeg-like", help="comma list of jpeg-like, scic, dnnc")
    p.add_argument("--qf", type=_ints, default=None, help="SCIC / jpeg-like quality factors")
    p.add_argument("--n", type=_ints, default=[], help="DNNC feature-map counts")
    p.add_argument("--images", help="directory of PGM images (default: bundled test split)")
    p.add_argument("--ckpt-dir", help="directory holding scic_qf<QF>.ckpt / dnnc_n<N>.ckpt")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--svg", help="also write an SVG line plot here")

    sub.add_parser("selftest", help="run the built-in oracle checks")
    return ap


def _train_config(args):
    from .config import read_kv
    from .trainer import TrainConfig

    kv = read_kv(args.config) if args.config else {}
    names = {f.name for f in fields(TrainConfig)}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            kv[name] = str(value)
    return TrainConfig.from_mapping(kv)


def _data(args):
    from .dataset import DatasetConfig

    return DatasetConfig.from_file(args.data) if args.data else DatasetConfig()


def cmd_pretrain(args) -> int:
    from .trainer import pretrain_autoencoder, prepare_data, training_checkpoint

    cfg = _train_config(args)
    train_set, _ = prepare_data(cfg, _data(args))
    nets = pretrain_autoencoder(cfg, train_set)
    Path(args.out).write_bytes(training_checkpoint(nets, cfg))
    print(f"pretrained {len(train_set)} patches -> {args.out}")
    return 0


def cmd_train(args) -> int:
    from .networks import load_checkpoint, unprefixed
    from .quantizer import QuantizerSpec
    from .trainer import build_nets, inference_checkpoint, prepare_data, train

    cfg = _train_config(args)
    train_set, val_set = prepare_data(cfg, _data(args))
    nets = None
    if args.init:
        tensors, meta = load_checkpoint(args.init)
        nets = build_nets(cfg)
        for role in ("rsn", "idn", "vcn"):
            getattr(nets, role).load_state(unprefixed(role, tensors))
        if cfg.framework == "dnnc":
            nets.spec = QuantizerSpec(float(meta["y_min"]), float(meta["y_max"]), int(meta["beta"]))
    nets, report = train(cfg, train_set, val_set, nets)
    Path(args.out).write_bytes(inference_checkpoint(nets, cfg))
    report.checkpoints.append(str(args.out))
    if args.report:
        report.write_csv(args.report)
    print(f"trained K={cfg.K} in {report.wall_clock:.1f}s -> {args.out}")
    return 0


def cmd_compress(args) -> int:
    from .dataset import load_image
    from .pipeline import InferenceModel, baseline_compress

    img = load_image(args.input)
    if args.ckpt:
        model = InferenceModel.load(args.ckpt)
        if args.path and model.framework != args.path:
            raise ValueError(f"checkpoint is {model.framework}, --path asked for {args.path}")
        stream = model.compress(img, args.qf)
    else:
        if args.path == "dnnc":
            raise ValueError("the dnnc path needs --ckpt")
        stream = baseline_compress(img, args.qf or 50)
    data = stream.to_bytes()
    Path(args.output).write_bytes(data)
    print(f"{len(data)} bytes, {8 * len(data) / (img.width * img.height):.4f} bpp")
    return 0


def cmd_decompress(args) -> int:
    from .dataset import write_pgm
    from .pipeline import InferenceModel, baseline_decompress

    data = Path(args.input).read_bytes()
    img = InferenceModel.load(args.ckpt).decompress(data) if args.ckpt else baseline_decompress(data)
    write_pgm(args.output, img)
    print(f"{img.width}x{img.height} -> {args.output}")
    return 0


def cmd_eval(args) -> int:
    from .dataset import read_pgm
    from .metrics import psnr, ssim_metric

    a, b = read_pgm(args.reference), read_pgm(args.test)
    print(f"psnr {psnr(a, b):.4f}")
    print(f"ssim {ssim_metric(a, b):.6f}")
    return 0


def cmd_rd(args) -> int:
    from .dataset import bundled_corpus, load_dir
    from .rd import PAPER_QFS, rd_sweep, to_csv, write_svg

    images = load_dir(args.images) if args.images else bundled_corpus("test")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    result = rd_sweep(images, methods, args.qf or PAPER_QFS, args.n, args.ckpt_dir)
    for method, knob in result.missing:
        print(f"missing checkpoint: {method} knob {knob}", file=sys.stderr)
    text = to_csv(result.records)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.svg:
        write_svg(args.svg, result.records)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run

    return 0 if run(verbose=True) else 1


COMMANDS = {
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "eval": cmd_eval,
    "rd": cmd_rd,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    _limit_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: file-not-found: {exc.filename or exc}", file=sys.stderr)
    except Exception as exc:  # one machine-parsable line per failure
        kind = type(exc).__name__
        msg = str(exc).replace("\n", " ")
        print(f"error: {kind}: {msg}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
