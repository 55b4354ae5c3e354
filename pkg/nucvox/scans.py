"""
SemanticKITTI-style scan and label files.

A scan is a flat run of little-endian float32 records, one per point; a label
file holds one little-endian uint32 per point with the semantic class in the
low 16 bits and the instance id in the high 16 bits.  Readers reject files
whose length is not a whole number of records instead of truncating them.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from nucvox.errors import InputNotFoundError, MalformedFileError
from nucvox.voxelizer import PointCloud

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScanFormat:
    """Record layout of a scan file; the first three channels are x, y, z."""

    name: str
    channels: int
    dtype: str = "<f4"
    suffix: str = ".bin"

    @property
    def record_size(self) -> int:
        return self.channels * np.dtype(self.dtype).itemsize


KITTI = ScanFormat("kitti", 4)
SCAN_FORMATS: dict[str, ScanFormat] = {KITTI.name: KITTI}

LABEL_DTYPE = np.dtype("<u4")
LABEL_SUFFIX = ".label"


class ScanLabels(NamedTuple):
    semantic: np.ndarray
    instance: np.ndarray


def _read_bytes(path: Path, what: str) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise InputNotFoundError(f"{what} file not found: {path}") from None
    except OSError as e:
        raise InputNotFoundError(f"cannot read {what} file {path}: {e}") from None


def read_records(path: str | Path, fmt: ScanFormat = KITTI) -> np.ndarray:
    """Raw ``(N, channels)`` records, non-finite rows included."""
    path = Path(path)
    data = _read_bytes(path, "scan")
    if len(data) % fmt.record_size:
        raise MalformedFileError(
            f"{path}: size {len(data)} is not a multiple of the "
            f"{fmt.record_size}-byte {fmt.name} record"
        )
    return np.frombuffer(data, dtype=fmt.dtype).reshape(-1, fmt.channels)


def _finite_rows(records: np.ndarray, path: Path) -> np.ndarray:
    keep = np.all(np.isfinite(records), axis=1)
    rejected = int(keep.size - keep.sum())
    if rejected:
        logger.warning("[scan] %s: rejected %d non-finite points of %d",
                       path, rejected, keep.size)
    return keep


def read_scan(path: str | Path, fmt: ScanFormat = KITTI) -> PointCloud:
    """Read a scan; non-finite records are dropped and counted."""
    path = Path(path)
    records = read_records(path, fmt)
    keep = _finite_rows(records, path)
    cloud = PointCloud.from_records(records[keep], rejected_points=int((~keep).sum()))
    logger.debug("[scan] read %d points from %s", len(cloud), path)
    return cloud


def read_labels(path: str | Path, n: int) -> ScanLabels:
    """Read ``n`` label records; the instance id is kept but unused."""
    path = Path(path)
    data = _read_bytes(path, "label")
    if len(data) % LABEL_DTYPE.itemsize:
        raise MalformedFileError(
            f"{path}: size {len(data)} is not a multiple of {LABEL_DTYPE.itemsize} bytes"
        )
    raw = np.frombuffer(data, dtype=LABEL_DTYPE)
    if raw.size != n:
        raise MalformedFileError(
            f"{path}: label file has {raw.size} records but the scan has {n} points"
        )
    return ScanLabels((raw & 0xFFFF).astype(np.int64), (raw >> 16).astype(np.int64))


def load_scan(
    bin_path: str | Path, label_path: str | Path | None = None, fmt: ScanFormat = KITTI
) -> PointCloud:
    """Read a scan and, optionally, its labels.

    Labels are matched against the raw record count, then non-finite records
    are dropped from points and labels together.
    """
    bin_path = Path(bin_path)
    records = read_records(bin_path, fmt)
    keep = _finite_rows(records, bin_path)
    labels = None
    if label_path is not None:
        labels = read_labels(label_path, records.shape[0]).semantic[keep]
    return PointCloud.from_records(records[keep], labels, int((~keep).sum()))


def write_scan(cloud: PointCloud, path: str | Path, fmt: ScanFormat = KITTI) -> None:
    if cloud.channels != fmt.channels:
        raise MalformedFileError(
            f"{fmt.name} scans have {fmt.channels} channels, cloud has {cloud.channels}"
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(cloud.features, dtype=fmt.dtype).tobytes())
    logger.debug("[scan] wrote %d points to %s", len(cloud), path)


def write_labels(semantic, path: str | Path, instance=None) -> None:
    semantic = np.asarray(semantic, dtype=np.uint64)
    instance = (np.zeros_like(semantic) if instance is None
                else np.asarray(instance, dtype=np.uint64))
    if np.any(semantic > 0xFFFF) or np.any(instance > 0xFFFF):
        raise MalformedFileError("semantic and instance ids must fit in 16 bits")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(((instance << np.uint64(16)) | semantic).astype(LABEL_DTYPE).tobytes())


def label_path_for(scan_path: Path, label_dir: Path | None = None) -> Path | None:
    """Label file for *scan_path*, or None when it does not exist.

    Without *label_dir*, looks in ``labels/`` next to the scan directory
    (``sequences/08/velodyne`` -> ``sequences/08/labels``).
    """
    label_dir = label_dir if label_dir is not None else scan_path.parent.parent / "labels"
    candidate = label_dir / (scan_path.stem + LABEL_SUFFIX)
    return candidate if candidate.is_file() else None


def iter_scans(
    directory: str | Path, label_dir: str | Path | None = None, fmt: ScanFormat = KITTI
) -> Iterator[tuple[Path, PointCloud]]:
    """Yield ``(path, cloud)`` for every scan in *directory* in name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputNotFoundError(f"scan directory not found: {directory}")
    label_dir = Path(label_dir) if label_dir is not None else None
    paths = sorted(directory.glob("*" + fmt.suffix))
    logger.info("[scan] %d scans in %s", len(paths), directory)
    for path in paths:
        yield path, load_scan(path, label_path_for(path, label_dir), fmt)
