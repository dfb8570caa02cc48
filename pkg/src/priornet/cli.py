"""Command-line entry point: ``priornet <command> ...``.

Exit codes: 0 success, 1 usage, 2 I/O, 3 format, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from priornet import haze, metrics, model, netpbm, scenes, training
from priornet.config import load_manifest, load_run_config
from priornet.errors import DataIOError, FormatError, PriorNetError, UsageError

logger = logging.getLogger("priornet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_rgb(path: Path) -> np.ndarray:
    img = netpbm.read_image(path)
    if img.ndim != 3:
        raise FormatError(f"{path}: expected an RGB (P6) image")
    return img


def _read_depth(path: Path) -> np.ndarray:
    img = netpbm.read_image(path)
    if img.ndim != 2:
        raise FormatError(f"{path}: expected a greyscale (P5) depth map")
    return img


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create directory {path}: {exc}") from exc
    return path


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def cmd_scenes(args) -> int:
    out = _mkdir(Path(args.out))
    rng = np.random.default_rng(args.seed)
    lines = []
    for i in range(args.count):
        clean, depth = scenes.make_scene(rng, args.size, args.size)
        netpbm.write_image(clean, out / f"scene_{i:04d}.ppm")
        netpbm.write_image(depth, out / f"depth_{i:04d}.pgm")
        lines.append(f"scene_{i:04d}.ppm\tdepth_{i:04d}.pgm\n")
    _write_text(out / "manifest.tsv", "".join(lines))
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config)
    pairs = load_manifest(args.manifest)
    out = _mkdir(Path(args.out))
    rng = np.random.default_rng(cfg.seed)
    ranges = cfg.synth
    lines = []
    for i, (clean_path, depth_path) in enumerate(pairs):
        clean = _read_rgb(clean_path)
        depth = _read_depth(depth_path)
        if depth.shape != clean.shape[1:]:
            raise FormatError(f"{depth_path}: depth {depth.shape} does not match image {clean.shape[1:]}")
        params = scenes.sample_params(rng, depth, (ranges.A_min, ranges.A_max), (ranges.beta_min, ranges.beta_max))
        name = f"{i:04d}_{clean_path.stem}_hazy"
        netpbm.write_image(haze.synthesize_haze(clean, params), out / f"{name}.ppm")
        _write_text(out / f"{name}.txt", f"A = {float(params.A[0])!r}\nbeta = {float(params.beta_scatter)!r}\n")
        lines.append(f"{name}.ppm\t{clean_path.resolve()}\n")
    _write_text(out / "manifest.tsv", "".join(lines))
    print(f"synthesized {len(pairs)} hazy images into {out}")
    return 0


def _load_pairs(manifest) -> list[tuple[str, np.ndarray, np.ndarray]]:
    return [(hazy.name, _read_rgb(hazy), _read_rgb(gt)) for hazy, gt in load_manifest(manifest)]


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    data = _load_pairs(args.manifest)
    weights = model.build(cfg.model, seed=cfg.seed)
    out = Path(args.out)

    def progress(it, parts):
        if (it + 1) % 100 == 0:
            logger.info("iteration %d: mse=%.6f perceptual=%.6f total=%.6f", it + 1, parts.mse,
                        parts.perceptual, parts.total)

    result = training.train(weights, [(h, g) for _, h, g in data], cfg.train,
                            checkpoint_path=out, callback=progress)
    size = model.save_weights(result.weights, out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    try:
        training.write_loss_csv(result.history, loss_csv)
    except OSError as exc:
        raise DataIOError(f"cannot write {loss_csv}: {exc}") from exc
    if result.history:
        print(f"trained {len(result.history)} iterations: total loss "
              f"{result.history[0].total:.6f} -> {result.history[-1].total:.6f}")
    print(f"wrote {out} ({size} bytes) and {loss_csv}")
    return 0


def cmd_dehaze(args) -> int:
    weights = model.load_weights(args.weights)
    if args.manifest:
        if not args.out_dir:
            raise UsageError("dehaze --manifest needs --out-dir")
        out = _mkdir(Path(args.out_dir))
        pairs = load_manifest(args.manifest)
        for hazy, _ in pairs:
            netpbm.write_image(model.dehaze(weights, _read_rgb(hazy)), out / f"{hazy.stem}_dehazed.ppm")
        print(f"dehazed {len(pairs)} images into {out}")
    else:
        if not (args.input and args.out):
            raise UsageError("dehaze needs --in and --out (or --manifest and --out-dir)")
        netpbm.write_image(model.dehaze(weights, _read_rgb(Path(args.input))), args.out)
    return 0


def _evaluate(method, manifest, report, out_dir=None) -> metrics.QualityReport:
    """Score each output as it would be stored, i.e. quantised to 8 bits."""
    out = _mkdir(Path(out_dir)) if out_dir else None
    reports = []
    for name, hazy, gt in _load_pairs(manifest):
        result = netpbm.quantize(method(hazy))
        if out is not None:
            netpbm.write_image(result, out / f"{Path(name).stem}_dehazed.ppm")
        reports.append(metrics.quality_report(name, result, gt))
    if not reports:
        raise UsageError(f"manifest {manifest} lists no images")
    try:
        summary = metrics.write_report_csv(reports, report)
    except OSError as exc:
        raise DataIOError(f"cannot write report {report}: {exc}") from exc
    psnr_txt = "inf (exact match)" if summary.exact else f"{summary.psnr_db:.4f}"
    print(f"{len(reports)} images: mean PSNR {psnr_txt} dB, mean SSIM {summary.ssim:.4f}")
    return summary


def cmd_eval(args) -> int:
    weights = model.load_weights(args.weights)
    _evaluate(lambda img: model.dehaze(weights, img), args.manifest, args.report, args.out_dir)
    return 0


def cmd_dcp(args) -> int:
    refine = None if args.refine == "none" else args.refine

    def method(img):
        return haze.dcp_dehaze(img, refine=refine)

    if args.manifest:
        if not args.report:
            raise UsageError("dcp --manifest needs --report")
        _evaluate(method, args.manifest, args.report, args.out_dir)
    else:
        if not (args.input and args.out):
            raise UsageError("dcp needs --in and --out (or --manifest and --report)")
        netpbm.write_image(method(_read_rgb(Path(args.input))), args.out)
    return 0


def cmd_info(args) -> int:
    weights = model.load_weights(args.weights)
    for key, value in model.describe(weights).items():
        print(f"{key}: {value}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="priornet", description="Lightweight K-map dehazing network and DCP baseline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scenes", help="generate procedural clean images and depth maps")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=25)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_scenes)

    s = sub.add_parser("synth", help="synthesize hazy images from clean/depth pairs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train on hazy/clean pairs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="weight file to write")
    s.add_argument("--loss-csv", help="loss history CSV (default: <out>.loss.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("dehaze", help="dehaze one image or a manifest")
    s.add_argument("--weights", required=True)
    s.add_argument("--in", dest="input")
    s.add_argument("--out")
    s.add_argument("--manifest")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_dehaze)

    s = sub.add_parser("eval", help="dehaze and score every pair of a manifest")
    s.add_argument("--weights", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("dcp", help="dark channel prior baseline")
    s.add_argument("--in", dest="input")
    s.add_argument("--out")
    s.add_argument("--manifest")
    s.add_argument("--report")
    s.add_argument("--out-dir")
    s.add_argument("--refine", choices=("guided", "box", "none"), default="guided")
    s.set_defaults(func=cmd_dcp)

    s = sub.add_parser("info", help="describe a weight file")
    s.add_argument("--weights", required=True)
    s.set_defaults(func=cmd_info)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        return args.func(args)
    except PriorNetError as exc:
        print(f"priornet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"priornet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
