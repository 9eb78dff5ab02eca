"""Command-line front end.

Subcommands: audit (full matrix run), score (one map pair), overlay
(composite visualization), report (re-render from records.json). Progress
goes to stderr; results go to files or stdout, so the tool is scriptable.

Exit codes: 0 success, 1 config error, 2 runtime failure (including an
audit whose per-image failure rate exceeds the configured threshold).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__, harness, metrics
from .cam import Heatmap, bilinear_resize, load_heatmap
from .config import (
    REPORT_FORMATS,
    ConfigError,
    build_config,
    load_config_file,
    resolve_paths,
    validate,
)

CACHE_ENV_VAR = "CAMAUDIT_CACHE_DIR"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; for this tool that is a config
    error and must exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _progress(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _load_map(path) -> np.ndarray:
    """Read a saliency/CAM map: .bin heatmaps in the cache format, anything
    else as a grayscale image scaled to [0,1]."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"map file not found: {path}")
    if path.suffix == ".bin":
        heatmap, _ = load_heatmap(path)
        return heatmap.values
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def build_parser() -> _Parser:
    parser = _Parser(prog="camaudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="run the model x precision CAM audit")
    audit.add_argument("--config", help="YAML config file; flags override its values")
    audit.add_argument("--workdir", help="base directory for relative paths")
    audit.add_argument("--image-dir", dest="image_dir")
    audit.add_argument("--mask-dir", dest="mask_dir")
    audit.add_argument("--cache-dir", dest="cache_dir")
    audit.add_argument("--out-dir", dest="out_dir")
    audit.add_argument("--models", help="comma-separated architecture names")
    audit.add_argument("--precisions", help="comma-separated subset of f32,int16,int8")
    audit.add_argument("--n", type=int, help="number of images to sample")
    audit.add_argument("--seed", type=int, help="sampling seed")
    audit.add_argument("--epsilon", type=float, help="KLD smoothing constant")
    audit.add_argument("--kld-weighting", dest="kld_weighting", choices=list(metrics.KLD_WEIGHTINGS))
    audit.add_argument("--workers", type=int, help="worker threads for the run matrix")
    audit.add_argument("--formats", help="comma-separated subset of csv,md,json")
    audit.add_argument("--overlay-ids", dest="overlay_ids", help="image ids to render overlay grids for")
    audit.add_argument("--pretrained", action=argparse.BooleanOptionalAction, default=None)
    audit.add_argument("--mask-generator", dest="mask_generator", help="command template with {image} and {mask} placeholders")
    audit.add_argument("--failure-threshold", dest="failure_threshold", type=float, help="max tolerated per-image failure rate")
    audit.set_defaults(func=cmd_audit)

    score = sub.add_parser("score", help="print sim/cc/kld for one map pair as JSON")
    score.add_argument("gt_path", help="ground-truth map (.bin heatmap or image)")
    score.add_argument("cam_path", help="CAM map (.bin heatmap or image)")
    score.add_argument("--epsilon", type=float, default=metrics.DEFAULT_EPSILON)
    score.add_argument("--kld-weighting", dest="kld_weighting", choices=list(metrics.KLD_WEIGHTINGS), default="cam")
    score.set_defaults(func=cmd_score)

    overlay = sub.add_parser("overlay", help="render original | mask | CAM overlays")
    overlay.add_argument("--image", required=True)
    overlay.add_argument("--mask", required=True)
    overlay.add_argument("--out", required=True)
    overlay.add_argument("cams", nargs="*", help="CAM files, one panel each")
    overlay.set_defaults(func=cmd_overlay)

    report = sub.add_parser("report", help="re-render reports from records.json")
    report.add_argument("records", help="records.json from a previous audit")
    report.add_argument("--out-dir", dest="out_dir", help="defaults to the records.json directory")
    report.add_argument("--formats", default="csv,md", help="comma-separated subset of csv,md,json")
    report.set_defaults(func=cmd_report)

    return parser


def cmd_audit(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {
        key: getattr(args, key)
        for key in (
            "image_dir", "mask_dir", "cache_dir", "out_dir", "models",
            "precisions", "n", "seed", "epsilon", "kld_weighting", "workers",
            "formats", "overlay_ids", "pretrained", "mask_generator",
            "failure_threshold",
        )
    }
    if overrides["cache_dir"] is None and os.environ.get(CACHE_ENV_VAR):
        overrides["cache_dir"] = os.environ[CACHE_ENV_VAR]
    config = validate(resolve_paths(build_config(file_values, overrides), args.workdir))

    outcome = harness.run_audit(config, progress=_progress)
    for kind, path in sorted(outcome.written.items()):
        _progress(f"wrote {kind}: {path}")
    _progress(
        f"records: {len(outcome.report.records)}  failures: {len(outcome.report.failures)}  "
        f"cache: {outcome.cache_hits} hits / {outcome.cache_misses} misses"
    )
    if outcome.threshold_exceeded:
        _progress(
            f"failure rate {outcome.failure_rate:.3f} exceeds threshold "
            f"{config.failure_threshold:.3f}"
        )
        return 2
    return 0


def cmd_score(args) -> int:
    gt = _load_map(args.gt_path)
    cam = _load_map(args.cam_path)
    if cam.shape != gt.shape:
        cam = bilinear_resize(cam, gt.shape[0], gt.shape[1])
    triple = metrics.metric_triple(
        gt, cam, epsilon=args.epsilon, kld_weighting=args.kld_weighting
    )
    payload = {
        "sim": triple.sim,
        "cc": triple.cc,
        "kld": triple.kld,
        "degenerate": triple.degenerate,
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_overlay(args) -> int:
    if not args.cams:
        raise ConfigError("no CAMs given")
    with Image.open(args.image) as img:
        image = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    h, w = image.shape[0], image.shape[1]
    mask = np.clip(_load_map(args.mask), 0.0, 1.0)
    if mask.shape != (h, w):
        mask = np.clip(bilinear_resize(mask, h, w), 0.0, 1.0)
    cams = [
        (Path(p).stem, Heatmap(values=np.clip(_load_map(p), 0.0, 1.0)))
        for p in args.cams
    ]
    out = harness.emit_overlays(image, [cams], mask, args.out)
    _progress(f"wrote overlay: {out}")
    return 0


def cmd_report(args) -> int:
    records_path = Path(args.records)
    if not records_path.is_file():
        raise ConfigError(f"records file not found: {records_path}")
    formats = [part.strip() for part in args.formats.split(",") if part.strip()]
    for fmt in formats:
        if fmt not in REPORT_FORMATS:
            raise ConfigError(f"formats: unknown format {fmt!r}")
    report = harness.read_records(records_path)
    out_dir = Path(args.out_dir) if args.out_dir else records_path.parent
    written = harness.emit_report(report, out_dir, formats=tuple(formats))
    for kind, path in sorted(written.items()):
        _progress(f"wrote {kind}: {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 0 if code is None else 1
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
