"""
Grid and report files.

Grids are written as JSON (``{"format": "NUCVOX1", "config": ..., "voxels":
[...]}``) or as a compact binary file: the magic ``NUCVOX1\\0``, a
little-endian uint32 header length, a JSON header, then one block of
fixed-width little-endian records per scale.  Reports are JSON (schema
``nucvox-report/1``) or CSV with one row per band per scheme.
"""

import csv
import io
import json
import logging
import struct
from pathlib import Path

import numpy as np

from nucvox.analysis import (
    AnalysisReport,
    BandRow,
    Comparison,
    reference_nonempty,
)
from nucvox.config import config_from_dict, config_to_dict
from nucvox.errors import InputNotFoundError, MalformedFileError, NucError
from nucvox.voxelizer import SparseLevel, SparseVoxelGrid, grid_shape, pack_keys

logger = logging.getLogger(__name__)

GRID_FORMAT = "NUCVOX1"
GRID_MAGIC = b"NUCVOX1\0"
REPORT_SCHEMA = "nucvox-report/1"

CSV_COLUMNS = (
    "scheme", "source", "band", "lo", "hi", "points", "misencoded", "encoding_error",
    "nonempty_voxels", "mean_points_per_cell", "reference_nonempty", "config",
)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


def _level_voxels(level: SparseLevel) -> list[dict]:
    out = []
    labels = level.labels.tolist() if level.labels is not None else None
    for row, (i, j, k) in enumerate(level.indices().tolist()):
        out.append({
            "i": i, "j": j, "k": k,
            "count": int(level.counts[row]),
            "label": None if labels is None else labels[row],
            "feature": [float(v) for v in level.features[row]],
        })
    return out


def grid_to_dict(grid: SparseVoxelGrid) -> dict:
    return {
        "format": GRID_FORMAT,
        "config": config_to_dict(grid.config),
        "accepted_points": grid.accepted_points,
        "dropped_points": grid.dropped_points,
        "channels": grid.channels,
        "feature_dtype": grid.base.features.dtype.str,
        "labelled": grid.has_labels,
        "voxels": _level_voxels(grid.base),
        "scales": [
            {"scale": level.scale, "voxels": _level_voxels(level)}
            for level in grid.levels[1:]
        ],
    }


def _build_level(scale, shape, i, j, k, counts, labels, features) -> SparseLevel:
    keys = pack_keys(i, j, k, shape)
    order = np.argsort(keys, kind="stable")
    return SparseLevel(
        scale, shape, keys[order], np.asarray(counts, dtype=np.int64)[order],
        features[order], None if labels is None else np.asarray(labels, dtype=np.int64)[order],
    )


def _level_from_voxels(
    voxels: list[dict], scale, shape, channels, dtype, labelled: bool
) -> SparseLevel:
    n = len(voxels)
    idx = np.array([(v["i"], v["j"], v["k"]) for v in voxels], dtype=np.int64).reshape(n, 3)
    if n and (np.any(idx < 0) or np.any(idx >= np.asarray(shape))):
        raise MalformedFileError(f"voxel index outside grid {shape} at scale {scale}")
    features = np.array([v["feature"] for v in voxels], dtype=dtype).reshape(n, channels)
    labels = [v["label"] for v in voxels] if labelled else None
    if labels is not None and None in labels:
        raise MalformedFileError(f"voxel without a label in a labelled grid at scale {scale}")
    return _build_level(scale, shape, idx[:, 0], idx[:, 1], idx[:, 2],
                        [v["count"] for v in voxels], labels, features)


def grid_from_dict(data: dict) -> SparseVoxelGrid:
    if data.get("format") != GRID_FORMAT:
        raise MalformedFileError(f"not a {GRID_FORMAT} grid (format={data.get('format')!r})")
    try:
        config = config_from_dict(data["config"])
        channels = int(data["channels"])
        dtype = np.dtype(data.get("feature_dtype", "<f8"))
        labelled = bool(data.get("labelled", False))
        levels = [_level_from_voxels(data["voxels"], 0, grid_shape(config), channels,
                                     dtype, labelled)]
        for entry in data.get("scales", []):
            scale = int(entry["scale"])
            levels.append(_level_from_voxels(entry["voxels"], scale,
                                             grid_shape(config, scale), channels,
                                             dtype, labelled))
        return SparseVoxelGrid(config, tuple(levels), int(data["accepted_points"]),
                               int(data.get("dropped_points", 0)), channels)
    except NucError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFileError(f"malformed grid document: {e}") from None


def _record_dtype(channels: int, feature_dtype: str) -> np.dtype:
    return np.dtype([
        ("i", "<u4"), ("j", "<u4"), ("k", "<u4"),
        ("count", "<u4"), ("label", "<i4"),
        ("feature", np.dtype(feature_dtype).newbyteorder("<"), (channels,)),
    ])


def grid_to_bytes(grid: SparseVoxelGrid) -> bytes:
    feature_dtype = grid.base.features.dtype.newbyteorder("<").str
    header = {
        "format": GRID_FORMAT,
        "config": config_to_dict(grid.config),
        "accepted_points": grid.accepted_points,
        "dropped_points": grid.dropped_points,
        "channels": grid.channels,
        "feature_dtype": feature_dtype,
        "labelled": grid.has_labels,
        "levels": [len(level) for level in grid.levels],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [GRID_MAGIC, struct.pack("<I", len(head)), head]
    dtype = _record_dtype(grid.channels, feature_dtype)
    for level in grid.levels:
        records = np.zeros(len(level), dtype=dtype)
        idx = level.indices()
        records["i"], records["j"], records["k"] = idx[:, 0], idx[:, 1], idx[:, 2]
        records["count"] = level.counts
        records["label"] = -1 if level.labels is None else level.labels
        records["feature"] = level.features
        out.append(records.tobytes())
    return b"".join(out)


def grid_from_bytes(data: bytes) -> SparseVoxelGrid:
    if not data.startswith(GRID_MAGIC):
        raise MalformedFileError("missing NUCVOX1 magic")
    offset = len(GRID_MAGIC)
    if len(data) < offset + 4:
        raise MalformedFileError("truncated NUCVOX1 header")
    (head_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    try:
        header = json.loads(data[offset:offset + head_len].decode("utf-8"))
        config = config_from_dict(header["config"])
        channels = int(header["channels"])
        dtype = _record_dtype(channels, header["feature_dtype"])
        sizes = [int(n) for n in header["levels"]]
        labelled = bool(header["labelled"])
    except NucError:
        raise
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as e:
        raise MalformedFileError(f"malformed NUCVOX1 header: {e}") from None
    offset += head_len
    if len(data) - offset != sum(sizes) * dtype.itemsize:
        raise MalformedFileError(
            f"NUCVOX1 body has {len(data) - offset} bytes, "
            f"expected {sum(sizes) * dtype.itemsize}"
        )
    levels = []
    for scale, n in enumerate(sizes):
        records = (np.frombuffer(data, dtype=dtype, count=n, offset=offset) if n
                   else np.zeros(0, dtype=dtype))
        offset += n * dtype.itemsize
        levels.append(_build_level(
            scale, grid_shape(config, scale),
            records["i"], records["j"], records["k"], records["count"],
            records["label"] if labelled else None,
            np.array(records["feature"], dtype=np.dtype(header["feature_dtype"])),
        ))
    return SparseVoxelGrid(config, tuple(levels), int(header["accepted_points"]),
                           int(header.get("dropped_points", 0)), channels)


def dumps_grid(grid: SparseVoxelGrid) -> str:
    return json.dumps(grid_to_dict(grid), separators=(",", ":")) + "\n"


def save_grid(grid: SparseVoxelGrid, path: str | Path, fmt: str = "json") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "binary":
        path.write_bytes(grid_to_bytes(grid))
    elif fmt == "json":
        path.write_text(dumps_grid(grid), encoding="utf-8")
    else:
        raise MalformedFileError(f"unknown grid format {fmt!r}")
    logger.info("[storage] wrote %d voxels to %s (%s)", len(grid), path, fmt)


def load_grid(path: str | Path) -> SparseVoxelGrid:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise InputNotFoundError(f"grid file not found: {path}") from None
    except OSError as e:
        raise InputNotFoundError(f"cannot read grid file {path}: {e}") from None
    if data.startswith(GRID_MAGIC):
        return grid_from_bytes(data)
    try:
        document = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedFileError(f"{path}: not a grid file ({e})") from None
    return grid_from_dict(document)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def report_to_dict(report: AnalysisReport) -> dict:
    return {
        "scheme": report.scheme,
        "source": report.source,
        "scans": report.scans,
        "labelled": report.labelled,
        "config": config_to_dict(report.config),
        "bands": [row.to_dict() for row in report.bands],
        "total": report.total.to_dict(),
        "receptive": [[d, length] for d, length in report.receptive],
        "volumes": list(report.volumes),
        "active_sites": list(report.active_sites),
        "reference_nonempty": reference_nonempty(report.config),
    }


def report_from_dict(data: dict) -> AnalysisReport:
    try:
        return AnalysisReport(
            scheme=data["scheme"],
            config=config_from_dict(data["config"]),
            bands=[BandRow.from_dict(row) for row in data["bands"]],
            receptive=[(float(d), float(length)) for d, length in data["receptive"]],
            volumes=[float(v) for v in data["volumes"]],
            active_sites=[float(n) for n in data.get("active_sites", [])],
            labelled=bool(data["labelled"]),
            scans=int(data["scans"]),
            source=data.get("source", ""),
        )
    except NucError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFileError(f"malformed report: {e}") from None


def reports_document(
    reports: list[AnalysisReport], comparison: Comparison | None = None
) -> dict:
    document = {"schema": REPORT_SCHEMA, "reports": [report_to_dict(r) for r in reports]}
    if comparison is not None:
        document["ranking"] = {
            "encoding_error": comparison.by_error,
            "nonempty_voxels": comparison.by_nonempty,
        }
    return document


def dumps_reports_json(
    reports: list[AnalysisReport], comparison: Comparison | None = None
) -> str:
    return json.dumps(reports_document(reports, comparison), indent=2) + "\n"


def _config_cell(report: AnalysisReport) -> str:
    return ";".join(f"{k}={v}" for k, v in config_to_dict(report.config).items())


def _cell(value) -> str:
    return "" if value is None else str(value)


def dumps_reports_csv(reports: list[AnalysisReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        reference = reference_nonempty(report.config) or {}
        config = _config_cell(report)
        for row in [*report.bands, report.total]:
            writer.writerow([
                report.scheme, report.source, row.band, _cell(row.lo), _cell(row.hi),
                _cell(row.points), _cell(row.misencoded),
                _cell(row.encoding_error if report.labelled else None),
                _cell(row.nonempty_voxels), _cell(row.mean_points_per_cell),
                _cell(reference.get(row.band)), config,
            ])
    return buffer.getvalue()


def save_report(
    reports: list[AnalysisReport], path: str | Path, fmt: str = "json",
    comparison: Comparison | None = None,
) -> None:
    text = dumps_reports_csv(reports) if fmt == "csv" else dumps_reports_json(reports, comparison)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info("[storage] wrote %d reports to %s (%s)", len(reports), path, fmt)


def load_report(path: str | Path) -> list[AnalysisReport]:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputNotFoundError(f"report file not found: {path}") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedFileError(f"{path}: not a report file ({e})") from None
    if not isinstance(document, dict) or document.get("schema") != REPORT_SCHEMA:
        raise MalformedFileError(f"{path}: expected schema {REPORT_SCHEMA}")
    return [report_from_dict(entry) for entry in document.get("reports", [])]
