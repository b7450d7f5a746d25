import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checks import run_fusion_checks
from .core import APP_NAME, APP_VERSION, PILLAR_PRESETS, RadarForgeError, ValidationError, pillar_preset, seeded_rng
from .densify import densify_frame
from .density import BevLattice, DensityGrid, bandwidth, grid_density_surface, kde_surface_3d, pillarize
from .exporters import Exporter, grid_to_csv
from .geometry import associate_masks, project_array, project_points
from .loaders import cloud_format, load_calib, load_cloud, load_frame, load_masks
from .settings import load_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_IO = 3


def setup_logging(verbosity: int = 0) -> None:
    root = logging.getLogger("radarforge")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(name)s] %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbosity > 1 else logging.INFO if verbosity == 1 else logging.WARNING)


# --- Argument validators ---


def _arg_positive_int(raw: str) -> int:
    try:
        v = int(raw)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"Value must be an integer, got '{raw}'.") from exc
    if v < 1:
        raise argparse.ArgumentTypeError("Value must be >= 1.")
    return v


def _arg_seed(raw: str) -> int:
    try:
        v = int(raw)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"Seed must be an integer, got '{raw}'.") from exc
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("Seed must lie in [0, 2**64).")
    return v


def _arg_positive_float(raw: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"Value must be a number, got '{raw}'.") from exc
    if not v > 0:
        raise argparse.ArgumentTypeError("Value must be > 0.")
    return v


def _arg_nonnegative_float(raw: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"Value must be a number, got '{raw}'.") from exc
    if v < 0:
        raise argparse.ArgumentTypeError("Value must be >= 0.")
    return v


def _arg_sizes(raw: str) -> tuple[int, int]:
    parts = raw.lower().replace("x", ",").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"Sizes must look like 8x8, got '{raw}'.")
    return tuple(_arg_positive_int(p.strip()) for p in parts)


# --- Commands ---


def cmd_densify(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    cfg = settings.simden if args.seed is None else replace(settings.simden, rng_seed=args.seed)
    cloud = load_cloud(args.cloud)
    if cloud_format(args.out) != cloud.fmt:
        raise ValidationError("out", f"{args.out.name} is not a {cloud.fmt} path; the output keeps the input format")
    frame = load_calib(args.calib).with_points(cloud.points)
    masks = load_masks(args.masks, (frame.image_height, frame.image_width))
    out, report = densify_frame(frame, masks, cfg, seeded_rng(cfg.rng_seed), jobs=args.jobs)
    exporter = Exporter()
    exporter.write_cloud(out.points, args.out, cloud.fields, cloud.fmt)
    if args.report:
        exporter.write_report(report, args.report)
    logger.info("wrote %d points (%+d) to %s", len(out.points), report.added, args.out)
    return EXIT_OK


def _instance_scope(frame, masks):
    """Indices of the frame points that fall inside at least one mask."""
    assoc = associate_masks(project_points(frame), masks, (frame.image_height, frame.image_width))
    return sorted({p.source_index for pts in assoc.values() for p in pts})


def cmd_analyze(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    frame = load_frame(args.calib, args.cloud)
    if args.scope == "instances":
        if not args.masks:
            raise ValidationError("scope", "--scope instances needs --masks")
        masks = load_masks(args.masks, (frame.image_height, frame.image_width))
        frame = frame.with_points(frame.points[i] for i in _instance_scope(frame, masks))
    pillars = pillar_preset(args.pillar_preset) if args.pillar_preset else settings.pillars

    if args.mode == "grid2d":
        uvd, keep = project_array(frame.xyz, frame)
        grid = grid_density_surface(uvd[keep, :2], (frame.image_width, frame.image_height), args.grid_cell)
    elif args.mode == "kde3d":
        lattice = BevLattice.from_pillars(pillars, args.lattice_cell)
        if frame.points:
            cfg = settings.simden
            bw = bandwidth(cfg.bandwidth_rule, len(frame.points), 3, cfg.user_bandwidth)
            grid = kde_surface_3d(frame.xyz, bw, cfg.kernel, cfg.gamma, lattice, cfg.distance_metric)
        else:
            grid = DensityGrid((lattice.x_range[0], lattice.y_range[0]), (lattice.cell, lattice.cell), np.zeros(lattice.shape))
    else:
        grid = pillarize(frame.points, pillars).to_grid()

    if args.out:
        Exporter().write_grid_csv(grid, args.out)
        logger.info("%s grid %dx%d written to %s", args.mode, grid.shape[0], grid.shape[1], args.out)
    else:
        sys.stdout.write(grid_to_csv(grid))
    return EXIT_OK


def cmd_fusion_check(args: argparse.Namespace) -> int:
    results = run_fusion_checks(args.seed, args.sizes, args.tolerance_scale)
    for i, result in enumerate(results, start=1):
        print(result.to_json())
        print(f"Test {i} ({result.name}): {'PASSED' if result.passed else 'FAILED'}", file=sys.stderr)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("fusion check failed: %s", ", ".join(failed))
        return EXIT_CHECK_FAILED
    print("All fusion checks passed.", file=sys.stderr)
    return EXIT_OK


# --- Parser ---


def _add_fusion_check_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_arg_seed, default=0)
    p.add_argument("--sizes", type=_arg_sizes, default=(8, 8), help="spatial feature size, e.g. 8x8")
    p.add_argument("--tolerance-scale", type=_arg_nonnegative_float, default=1.0, help="multiplies every tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radarforge", description=f"{APP_NAME}: radar point-cloud densification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("densify", help="simulate dense points for every masked instance")
    p.add_argument("--calib", required=True, type=Path)
    p.add_argument("--cloud", required=True, type=Path)
    p.add_argument("--masks", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=_arg_seed)
    p.add_argument("--report", type=Path)
    p.add_argument("--jobs", type=_arg_positive_int, default=1)
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("analyze", help="emit density grids as CSV")
    p.add_argument("--calib", required=True, type=Path)
    p.add_argument("--cloud", required=True, type=Path)
    p.add_argument("--masks", type=Path)
    p.add_argument("--mode", required=True, choices=("kde3d", "grid2d", "pillars"))
    p.add_argument("--scope", choices=("frame", "instances"), default="frame")
    p.add_argument("--pillar-preset", choices=PILLAR_PRESETS)
    p.add_argument("--grid-cell", type=_arg_positive_int, default=32)
    p.add_argument("--lattice-cell", type=_arg_positive_float, default=0.5)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fusion-check", help="run the fusion-math property suite")
    _add_fusion_check_args(p)
    p.set_defaults(func=cmd_fusion_check)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    try:
        return args.func(args)
    except RadarForgeError as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return EXIT_IO


def run_fusion_check(argv: list[str] | None = None) -> int:
    """Stand-alone self-check; same as `radarforge fusion-check`."""
    parser = argparse.ArgumentParser(prog="radarforge-check", description="Run the fusion-math property suite.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    _add_fusion_check_args(parser)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_logging(args.verbose)
    args.func = cmd_fusion_check
    return _dispatch(args)


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the command line."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--self-check" in argv:
        argv.remove("--self-check")
        return run_fusion_check(argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_logging(args.verbose)
    return _dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
