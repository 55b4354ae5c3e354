"""
Command-line entry point.

    python -m nucvox boundaries --scheme api --a0 0.05 --d 0.0062 --nr 120
    python -m nucvox voxelize scan.bin --labels scan.label --out grid.json
    python -m nucvox analyze sequences/08/velodyne --format csv
    python -m nucvox compare --schemes uniform,uniform:480,api --seed 7
    python -m nucvox gen-synthetic --seed 7 --out cloud.bin

Grid settings come from built-in defaults, then ``--config``, then inline
flags.  Artifacts go to ``--out`` or stdout; logs always go to stderr.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from nucvox.analysis import (
    DistanceBands,
    analyze,
    compare_schemes,
    reference_nonempty,
    summarize_scans,
)
from nucvox.config import (
    CONFIG_KEYS,
    SCHEME_PRESETS,
    GridConfig,
    config_from_dict,
    config_to_dict,
    default_workers,
    format_config,
    load_config,
    scheme_preset,
    scheme_to_dict,
)
from nucvox.errors import EXIT_CODES, ConfigError, InputNotFoundError, NucError
from nucvox.geometry import boundaries_for_scale
from nucvox.scans import iter_scans, load_scan, write_labels, write_scan
from nucvox.storage import (
    dumps_grid,
    dumps_reports_csv,
    dumps_reports_json,
    save_grid,
)
from nucvox.synthetic import SynthesisSpec, generate_synthetic
from nucvox.voxelizer import PointCloud, voxelize

logger = logging.getLogger(__name__)

DEFAULT_COMPARE = "uniform,api,gpi,piecewise,increasing-d"

# Inline flag -> config key
_FLAG_KEYS = {
    "a0": "a0",
    "d": "d",
    "ratio": "ratio",
    "d_prime": "d_prime",
    "region_bounds": "region_bounds",
    "region_counts": "region_counts",
    "nr": "n_r",
    "nphi": "n_phi",
    "nz": "n_z",
    "rmax": "r_max",
    "zmin": "z_min",
    "zmax": "z_max",
    "scales": "scales",
    "oor": "out_of_range",
}
_SCHEME_PARAM_KEYS = frozenset({"a0", "d", "ratio", "d_prime", "region_bounds", "region_counts"})


def setup_logging(verbose: bool = False) -> None:
    log_level_name = os.environ.get("LOG_LEVEL", "INFO").upper()
    log_level = logging.DEBUG if verbose else getattr(logging, log_level_name, logging.INFO)
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.getLogger().setLevel(log_level)


def parse_csv_str(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_csv_float(value: str) -> list[float]:
    return [float(v.strip()) for v in value.split(",") if v.strip()]


def parse_csv_int(value: str) -> list[int]:
    return [int(v.strip()) for v in value.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def _flag_values(args: argparse.Namespace) -> dict:
    values = {}
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        try:
            if key == "region_bounds":
                value = parse_csv_float(value)
            elif key == "region_counts":
                value = parse_csv_int(value)
        except ValueError:
            raise ConfigError(f"invalid value for --{flag.replace('_', '-')}: {value!r}") from None
        values[key] = value
    return values


def resolve_config(
    args: argparse.Namespace, scheme: str | None = None, n_r: int | None = None
) -> GridConfig:
    """Defaults, then ``--config``, then inline flags.

    *scheme* and *n_r* override ``--scheme`` and ``--nr`` (used by ``compare``
    for each entry).
    """
    values: dict = {}
    if getattr(args, "config", None):
        values = config_to_dict(load_config(args.config))
    flags = _flag_values(args)
    if n_r is not None:
        flags["n_r"] = n_r
    n_r = int(flags.get("n_r", values.get("n_r", GridConfig.n_r)))
    name = scheme or getattr(args, "scheme", None)
    if name:
        # A new scheme replaces every scheme parameter from the file.
        values = {k: v for k, v in values.items() if k not in _SCHEME_PARAM_KEYS}
        values.update(scheme_to_dict(scheme_preset(name, n_r)))
    if "region_counts" in flags:
        counts = flags["region_counts"]
        total = sum(counts)
        if total and total != n_r and n_r % total == 0:
            flags["region_counts"] = [c * (n_r // total) for c in counts]
    values.update(flags)
    unknown = set(values) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    return config_from_dict(values)


def _workers(args: argparse.Namespace) -> int:
    if args.threads is None:
        return default_workers()
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1 (got {args.threads})")
    return args.threads


def _emit(text: str, out: str | None) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info("[cli] wrote %s", path)
    else:
        sys.stdout.write(text)


def _input_cloud(args: argparse.Namespace) -> PointCloud:
    if args.input:
        return load_scan(args.input, args.labels)
    logger.info("[cli] no input given, using synthetic scene seed=%d", args.seed)
    return generate_synthetic(SynthesisSpec(seed=args.seed))


def _report_text(reports, fmt: str, comparison=None) -> str:
    if fmt == "csv":
        return dumps_reports_csv(reports)
    return dumps_reports_json(reports, comparison)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_boundaries(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    edges = boundaries_for_scale(config, args.scale).edges
    if args.format == "json":
        document = {"config": config_to_dict(config), "scale": args.scale,
                    "boundaries": [float(e) for e in edges]}
        _emit(json.dumps(document, indent=2) + "\n", args.out)
    else:
        header = format_config(config) + f"scale = {args.scale}\n"
        text = "".join(f"# {line}\n" for line in header.splitlines())
        _emit(text + "".join(f"{e:.12g}\n" for e in edges), args.out)
    return 0


def cmd_voxelize(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.grid_format == "binary" and not args.out:
        raise ConfigError("--grid-format binary needs --out")
    cloud = load_scan(args.input, args.labels)
    grid = voxelize(cloud, config, workers=_workers(args))
    if args.out:
        save_grid(grid, args.out, args.grid_format)
    else:
        sys.stdout.write(dumps_grid(grid))
    return 0


def _check_reference(summary) -> None:
    reference = reference_nonempty(summary.config)
    if not reference:
        return
    measured = summary.nonempty_total
    expected = reference["total"]
    logger.info("[cli] mean non-empty voxels %.1f vs reference %.1f (%+.1f%%)",
                measured, expected, 100.0 * (measured - expected) / expected)


def cmd_analyze(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    bands = DistanceBands.parse(args.bands)
    workers = _workers(args)
    if args.input and Path(args.input).is_dir():
        reports = [
            analyze(cloud, config, bands, exclude_ignore=args.exclude_ignore,
                    workers=workers, source=path.name)
            for path, cloud in iter_scans(args.input, args.labels)
        ]
        if not reports:
            raise InputNotFoundError(f"no scans found in {args.input}")
        summary = summarize_scans(reports)
        _check_reference(summary)
        reports.append(summary)
    else:
        cloud = _input_cloud(args)
        source = Path(args.input).name if args.input else f"synthetic:seed={args.seed}"
        reports = [analyze(cloud, config, bands, exclude_ignore=args.exclude_ignore,
                           workers=workers, source=source)]
    _emit(_report_text(reports, args.format), args.out)
    return 0


def _compare_configs(args: argparse.Namespace) -> list[GridConfig]:
    configs = []
    for entry in parse_csv_str(args.schemes):
        name, _, n_r = entry.partition(":")
        try:
            n_r = int(n_r) if n_r else None
        except ValueError:
            raise ConfigError(f"invalid radial resolution in {entry!r}") from None
        configs.append(resolve_config(args, scheme=name, n_r=n_r))
    return configs


def cmd_compare(args: argparse.Namespace) -> int:
    configs = _compare_configs(args)
    cloud = _input_cloud(args)
    comparison = compare_schemes(cloud, configs, DistanceBands.parse(args.bands),
                                 exclude_ignore=args.exclude_ignore, workers=_workers(args))
    for report in comparison.reports:
        report.source = Path(args.input).name if args.input else f"synthetic:seed={args.seed}"
    _emit(_report_text(comparison.reports, args.format, comparison), args.out)
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    spec = SynthesisSpec(
        beam_count=args.beams,
        azimuth_samples=args.azimuth_samples,
        max_range=args.max_range,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    cloud = generate_synthetic(spec)
    out = Path(args.out)
    write_scan(cloud, out)
    label_out = Path(args.labels_out) if args.labels_out else out.with_suffix(".label")
    write_labels(cloud.labels, label_out)
    logger.info("[cli] wrote %d points to %s and labels to %s", len(cloud), out, label_out)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


USAGE_EXIT = 2


class NucArgumentParser(argparse.ArgumentParser):
    """Reports usage errors on the same single stderr line as other failures."""

    def error(self, message: str):
        message = " ".join(f"{self.prog}: {message}".split())
        self.exit(USAGE_EXIT, f"error code=usage exit={USAGE_EXIT} message={message}\n")


def _exit_code_help() -> str:
    lines = ["exit codes:", "  0  success", "  2  usage error"]
    lines += [f"  {status:<2} {code}" for code, status in sorted(EXIT_CODES.items(),
                                                                key=lambda kv: kv[1])]
    return "\n".join(lines)


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("grid")
    g.add_argument("--config", type=str, default=None,
                   help="key = value config file; inline flags override it.")
    g.add_argument("--scheme", type=str, default=None, choices=SCHEME_PRESETS,
                   help="Partition scheme or ablation preset (default: api).")
    g.add_argument("--a0", type=float, default=None, help="First radial interval (m).")
    g.add_argument("--d", type=float, default=None, help="Common difference (api, increasing-d).")
    g.add_argument("--ratio", type=float, default=None, help="Common ratio (gpi).")
    g.add_argument("--d-prime", dest="d_prime", type=float, default=None,
                   help="Growth of the common difference (increasing-d).")
    g.add_argument("--region-bounds", type=str, default=None,
                   help="Comma-separated piecewise region bounds, starting at 0.")
    g.add_argument("--region-counts", type=str, default=None,
                   help="Comma-separated bins per region; ratios are scaled to --nr.")
    g.add_argument("--nr", type=int, default=None, help="Radial bins (default: 120).")
    g.add_argument("--nphi", type=int, default=None, help="Angular bins (default: 360).")
    g.add_argument("--nz", type=int, default=None, help="Height bins (default: 32).")
    g.add_argument("--rmax", type=float, default=None,
                   help="Outer radius for uniform bins and bands (default: 50).")
    g.add_argument("--zmin", type=float, default=None,
                   help="Lowest height (default: -4; our convention for a car-mounted sensor).")
    g.add_argument("--zmax", type=float, default=None, help="Highest height (default: 2).")
    g.add_argument("--scales", type=int, default=None,
                   help="Pyramid scales, api only (default: 1).")
    g.add_argument("--oor", type=str, default=None, choices=["clamp", "drop"],
                   help="Out-of-range points: clamp to the edge bin or drop (default: clamp).")


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", nargs="?", default=None,
                   help="Scan file or directory of scans; synthetic scene if omitted.")
    p.add_argument("--labels", type=str, default=None,
                   help="Label file, or label directory when input is a directory.")
    p.add_argument("--bands", type=str, default="0,10,20,30,40,50",
                   help="Comma-separated band edges in meters (default: 0,10,20,30,40,50).")
    p.add_argument("--seed", type=int, default=0, help="Synthetic scene seed (default: 0).")
    p.add_argument("--format", type=str, default="json", choices=["json", "csv"],
                   help="Report format (default: json).")
    p.add_argument("--exclude-ignore", action="store_true",
                   help="Leave class 0 out of the encoding error tally.")
    p.add_argument("--out", type=str, default=None, help="Output path (default: stdout).")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    common.add_argument("--threads", type=int, default=None,
                        help="Worker cap (default: NUC_THREADS or CPU count, max 8).")

    p = NucArgumentParser(
        prog="nucvox",
        description="Non-uniform cylindrical voxelization of LiDAR scans.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=_exit_code_help(),
    )
    sub = p.add_subparsers(dest="command", required=True, parser_class=NucArgumentParser)

    b = sub.add_parser("boundaries", parents=[common], help="Print radial boundaries.")
    _add_grid_flags(b)
    b.add_argument("--scale", type=int, default=0, help="Pyramid scale (default: 0).")
    b.add_argument("--format", type=str, default="text", choices=["text", "json"])
    b.add_argument("--out", type=str, default=None)
    b.set_defaults(func=cmd_boundaries)

    v = sub.add_parser("voxelize", parents=[common], help="Voxelize one scan.")
    _add_grid_flags(v)
    v.add_argument("input", help="Scan file (.bin).")
    v.add_argument("--labels", type=str, default=None, help="Label file (.label).")
    v.add_argument("--out", type=str, default=None, help="Grid output path (default: stdout).")
    v.add_argument("--grid-format", type=str, default="json", choices=["json", "binary"])
    v.set_defaults(func=cmd_voxelize)

    a = sub.add_parser("analyze", parents=[common], help="Analyze one configuration.")
    _add_grid_flags(a)
    _add_analysis_flags(a)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", parents=[common], help="Compare partition schemes.")
    _add_grid_flags(c)
    _add_analysis_flags(c)
    c.add_argument("--schemes", type=str, default=DEFAULT_COMPARE,
                   help="Comma-separated presets, optionally name:n_r "
                        f"(default: {DEFAULT_COMPARE}).")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("gen-synthetic", parents=[common], help="Write a synthetic scan.")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=str, required=True, help="Scan output path (.bin).")
    s.add_argument("--labels-out", type=str, default=None,
                   help="Label output path (default: --out with .label suffix).")
    s.add_argument("--beams", type=int, default=SynthesisSpec.beam_count)
    s.add_argument("--azimuth-samples", type=int, default=SynthesisSpec.azimuth_samples)
    s.add_argument("--max-range", type=float, default=SynthesisSpec.max_range)
    s.add_argument("--dropout", type=float, default=SynthesisSpec.dropout_rate)
    s.set_defaults(func=cmd_gen_synthetic)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except NucError as e:
        message = " ".join(str(e).split())
        print(f"error code={e.code} exit={e.exit_status} message={message}", file=sys.stderr)
        return e.exit_status
    except Exception as e:
        logger.debug("[cli] unexpected failure", exc_info=True)
        message = " ".join(str(e).split()) or type(e).__name__
        print(f"error code=error exit=1 message={message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
