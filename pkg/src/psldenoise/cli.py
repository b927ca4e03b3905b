"""Command-line entry point: ``psl simulate|train|baseline-train|denoise|evaluate``.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import METHODS, ExperimentConfig, load_config, write_resolved
from .errors import ConfigError, DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("psldenoise")


def _manifests(cfg: ExperimentConfig):
    from .imageio import DatasetManifest

    data = cfg.data_path()
    return (DatasetManifest.read(data / "ndct_manifest.jsonl"),
            DatasetManifest.read(data / "ldct_manifest.jsonl"))


def _pairs(cfg: ExperimentConfig, split: str):
    ndct, ldct = _manifests(cfg)
    nd, ld = ndct.select(split), ldct.select(split)
    if len(nd) != len(ld):
        raise DataError(f"{split} split: {len(ld)} LDCT vs {len(nd)} NDCT images")
    return [(Path(r["path"]).stem, ld.load(i).pixels, nd.load(i).pixels)
            for i, r in enumerate(ld.records)]


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    from .simulator import make_paired_dataset

    out = cfg.data_path()
    ndct, ldct = make_paired_dataset(cfg.simulation, out)
    write_resolved(cfg, out)
    print(f"wrote {len(ndct)} NDCT and {len(ldct)} LDCT images to {out}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    from .trainer import train

    _, ldct = _manifests(cfg)
    images = ldct.select("train")
    if len(images) == 0:
        raise DataError("no training images in the LDCT manifest")
    val = _pairs(cfg, "val")
    out = cfg.out_path() / "psl"
    write_resolved(cfg, out)
    _, history = train(images, cfg.network, cfg.loss, cfg.train, out,
                       val_pairs=[(ld, nd) for _, ld, nd in val] or None,
                       resume_from=args.resume, stop_at=args.stop_at)
    if history:
        print(f"iteration {history[-1]['iter']}: loss {history[-1]['total']:.6f}; checkpoint in {out}")
    return EXIT_OK


def cmd_baseline_train(cfg: ExperimentConfig, args) -> int:
    out = cfg.out_path() / args.method
    write_resolved(cfg, out)
    if args.method == "tv":
        print("tv has no trainable parameters; nothing to do")
        return EXIT_OK
    from .baselines.n2v import n2v_train

    _, ldct = _manifests(cfg)
    n2v_train(ldct.select("train"), cfg.n2v, cfg.train, out, stop_at=args.stop_at)
    print(f"n2v checkpoint in {out}")
    return EXIT_OK


def build_methods(cfg: ExperimentConfig, names, psl_ckpt=None, n2v_ckpt=None) -> dict:
    from .baselines.n2v import n2v_denoise
    from .baselines.tv import tv_denoise
    from .objective import denoise

    divisor = cfg.train.normalization_divisor
    methods = {}
    for name in names:
        if name == "identity":
            methods[name] = lambda img: np.asarray(img, dtype=np.float32).copy()
        elif name == "tv":
            methods[name] = lambda img: tv_denoise(img, cfg.tv)
        elif name == "psl":
            net = load_checkpoint(psl_ckpt or cfg.out_path() / "psl" / "model.ckpt")
            methods[name] = lambda img, net=net: denoise(img, net, divisor)
        elif name == "n2v":
            net = load_checkpoint(n2v_ckpt or cfg.out_path() / "n2v" / "model.ckpt")
            methods[name] = lambda img, net=net: n2v_denoise(img, net, divisor)
        else:
            raise ConfigError(f"unknown method {name!r}")
    return methods


def cmd_denoise(cfg: ExperimentConfig, args) -> int:
    from .imageio import Image, read_image, write_image

    img = read_image(args.input)
    fn = build_methods(cfg, [args.method], args.checkpoint, args.checkpoint)[args.method]
    out = np.asarray(fn(img.pixels), dtype=np.float32)
    if not np.all(np.isfinite(out)):
        raise NumericalError("denoised image contains non-finite values")
    prov = dict(img.provenance, denoised_by=args.method, source=str(args.input))
    path = write_image(args.output, Image(out, img.pixel_spacing_mm, prov))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    from .evaluation import evaluate, format_table, write_report
    from .imageio import read_rois

    pairs = _pairs(cfg, cfg.evaluate.split)
    rois_path = cfg.rois_path()
    rois, profiles = read_rois(rois_path) if rois_path.exists() else ([], [])
    methods = build_methods(cfg, cfg.evaluate.methods)
    report = evaluate(pairs, methods, rois, profiles, cfg.evaluate.peak, reference_name="ndct")
    out = cfg.out_path() / "eval"
    write_resolved(cfg, out)
    write_report(report, out)
    print(format_table(report), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psl", description="Probabilistic self-learning CT denoising")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML/JSON experiment config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train.total_iterations=100")
    common.add_argument("--output-dir", help="shorthand for --set output_dir=...")
    common.add_argument("--seed", type=int, help="set every seed in the config")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="generate paired NDCT/LDCT phantoms")
    p = sub.add_parser("train", parents=[common], help="train the PSL network on LDCT images")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--stop-at", type=int, help="stop after this iteration (schedule unchanged)")
    p = sub.add_parser("baseline-train", parents=[common], help="train a baseline denoiser")
    p.add_argument("--method", choices=("n2v", "tv"), default="n2v")
    p.add_argument("--stop-at", type=int)
    p = sub.add_parser("denoise", parents=[common], help="denoise one raster image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--method", choices=METHODS, default="psl")
    p.add_argument("--checkpoint", help="model checkpoint (default: from the output dir)")
    sub.add_parser("evaluate", parents=[common], help="compute the metric report")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "baseline-train": cmd_baseline_train,
    "denoise": cmd_denoise,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    if args.seed is not None:
        overrides += [f"{s}.seed={args.seed}" for s in ("simulation", "network", "train", "n2v")]
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
