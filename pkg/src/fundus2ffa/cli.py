"""Command-line entry point: ``fundus2ffa <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data_pipeline as dp
from .config import RunConfig, dump_config, load_config
from .errors import DataError, NumericFault, ParameterError
from .image_core import read_png, write_png
from .metrics import SSIMParams, evaluate_dataset
from .saliency import SaliencyConfig, compute_saliency, saliency_to_visual, write_raw_map

log = logging.getLogger("fundus2ffa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text):
    """'512' or '360x288' -> int or (w, h)."""
    try:
        if "x" in text:
            w, h = text.lower().split("x")
            return int(w), int(h)
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or WxH, got {text!r}")


# ----------------------------------------------------------- subcommands


def cmd_synth(args):
    pairs = dp.synth_phantom_pairs(args.n, args.size, args.seed)
    dp.write_pairs(pairs, args.out)
    dp.write_manifest(
        Path(args.out) / "synth_manifest.json",
        {"n": args.n, "size": args.size, "seed": args.seed, "sources": [p.source_id for p in pairs]},
    )
    log.info("wrote %d phantom pairs to %s", len(pairs), args.out)
    return EXIT_OK


def cmd_preprocess(args):
    problems = []
    exclude = dp.read_exclusion_list(args.exclude) if args.exclude else ()
    pairs = dp.ingest_pairs(args.pairs_dir, exclude, problems)
    if not pairs:
        print("no pairs found", file=sys.stderr)
        return EXIT_DATA
    split = dp.split_dataset(pairs, args.split_ratio, args.seed)
    out = Path(args.out)
    stride = args.stride if args.stride is not None else args.patch
    for side in ("train", "test"):
        patches = [q for p in getattr(split, side) for q in dp.preprocess_pair(p, args.patch, stride, args.roi)]
        setattr(split, side, patches)
        dp.write_pairs(patches, out / side)
    params = {"patch": args.patch, "stride": stride, "roi": args.roi, "exclude": sorted(exclude),
              "rejected": problems}
    dp.write_manifest(out / "manifest.json", dp.dataset_manifest(split, params))
    log.info("%d train / %d test patches written to %s", len(split.train), len(split.test), out)
    for msg in problems:
        print(f"rejected: {msg}", file=sys.stderr)
    return EXIT_DATA if problems else EXIT_OK


def cmd_saliency(args):
    cfg = SaliencyConfig(median_kernel=args.median, gaussian_kernel=args.gaussian, gaussian_sigma=args.sigma, a=args.a)
    smap = compute_saliency(read_png(args.input, channels=1), cfg)
    write_png(args.out, saliency_to_visual(smap, color=args.color))
    if args.raw:
        write_raw_map(args.raw, smap)
    return EXIT_OK


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.epochs is not None:
        overrides["train.epochs"] = args.epochs
        if cfg.train.decay_start_epoch >= args.epochs:
            overrides["train.decay_start_epoch"] = args.epochs // 2
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    return cfg.override(**overrides) if overrides else cfg


def cmd_train(args):
    from .checkpoint import load_checkpoint
    from .trainer import Trainer, fit

    run = _run_config(args)
    data = Path(args.data)
    train_root = data / "train" if (data / "train").is_dir() else data
    problems = []
    train_pairs = dp.ingest_pairs(train_root, problems=problems)
    test_pairs = dp.ingest_pairs(data / "test", problems=problems) if (data / "test").is_dir() else []
    if not train_pairs:
        print(f"no training pairs found under {train_root}", file=sys.stderr)
        return EXIT_DATA
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(run))
    trainer = Trainer(run.train, run.generator, run.discriminator, run.features)
    if args.resume:
        meta, tensors = load_checkpoint(args.resume)
        trainer.load_state(tensors, args.resume)
        trainer.epoch = int(meta["epoch"])
        trainer.iteration = int(meta["iteration"])
        log.info("resuming after epoch %d", trainer.epoch)
    fit(trainer, train_pairs, test_pairs, out, run.to_dict(), run.ssim)
    return EXIT_OK


def cmd_translate(args):
    from .trainer import load_generator, translate

    gen = load_generator(args.checkpoint)
    src = Path(args.input)
    if src.is_dir():
        inputs = sorted(src.glob("*" + dp.STRUCT_SUFFIX)) or sorted(src.glob("*.png"))
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        jobs = [(f, out_dir / f.name.replace(dp.STRUCT_SUFFIX, dp.FFA_SUFFIX)) for f in inputs]
        if not jobs:
            print(f"no input images in {src}", file=sys.stderr)
            return EXIT_DATA
    else:
        jobs = [(src, Path(args.out))]
    for f, dst in jobs:
        write_png(dst, translate(gen, read_png(f, channels=gen.cfg.in_channels)))
    return EXIT_OK


def cmd_evaluate(args):
    report = evaluate_dataset(args.pred_dir, args.ref_dir, SSIMParams(mode=args.ssim_mode), ref_glob=args.ref_glob)
    if args.report:
        Path(args.report).write_text(report.to_csv())
    sys.stdout.write(report.summary())
    if not report.rows or report.errors:
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="fundus2ffa", description="Saliency-guided fundus-to-angiography translation.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    s = sub.add_parser("synth", help="generate synthetic phantom pairs", formatter_class=fmt)
    s.add_argument("--n", type=int, default=8, help="number of pairs")
    s.add_argument("--size", type=int, default=256, help="image side in pixels (>= 64)")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--out", required=True, help="output root (pairs go to OUT/synthetic/)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="ingest aligned pairs, split, cut patches", formatter_class=fmt)
    s.add_argument("--pairs-dir", required=True, help="root/<category>/<id>_struct.png + <id>_ffa.png")
    s.add_argument("--out", required=True, help="output root for train/, test/ and manifest.json")
    s.add_argument("--patch", type=_size, default=512, help="patch size, N or WxH")
    s.add_argument("--stride", type=_size, default=None, help="patch stride, N or WxH (default: patch size)")
    s.add_argument("--roi", choices=("none", "circle"), default="none", help="mask patches with a circular ROI")
    s.add_argument("--split-ratio", type=float, default=0.8, help="train fraction per category")
    s.add_argument("--seed", type=int, default=0, help="split seed")
    s.add_argument("--exclude", default=None, help="text file with one source id per line to drop")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("saliency", help="compute the local saliency map of an angiography image", formatter_class=fmt)
    s.add_argument("--input", required=True, help="input PNG (converted to grayscale)")
    s.add_argument("--out", required=True, help="visualisation PNG")
    s.add_argument("--a", type=float, default=1.0, help="contrast factor")
    s.add_argument("--median", type=int, default=51, help="background median kernel size")
    s.add_argument("--gaussian", type=int, default=7, help="denoising Gaussian kernel size")
    s.add_argument("--sigma", type=float, default=1.5, help="denoising Gaussian sigma")
    s.add_argument("--color", action="store_true", help="render with a diverging colour ramp")
    s.add_argument("--raw", default=None, help="also write the signed map as raw float32")
    s.set_defaults(func=cmd_saliency)

    s = sub.add_parser("train", help="train generator and discriminator", formatter_class=fmt)
    s.add_argument("--data", required=True, help="preprocess output (with train/ and optional test/)")
    s.add_argument("--config", default=None, help="JSON run config; flags override it")
    s.add_argument("--out-dir", required=True, help="run directory")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    s.add_argument("--seed", type=int, default=None, help="override train.seed")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="generate angiography from structure images", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True, help="training checkpoint")
    s.add_argument("--input", required=True, help="structure PNG or directory of *_struct.png")
    s.add_argument("--out", required=True, help="output PNG or directory")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("evaluate", help="PSNR/SSIM of predictions against references", formatter_class=fmt)
    s.add_argument("--pred-dir", required=True, help="directory of predicted PNGs")
    s.add_argument("--ref-dir", required=True, help="directory of reference PNGs (matched by filename)")
    s.add_argument("--ref-glob", default="*.png", help="which files in --ref-dir count as references")
    s.add_argument("--ssim-mode", choices=("global", "windowed"), default="global", help="SSIM statistics")
    s.add_argument("--report", default=None, help="write per-image rows as CSV here")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
