"""
Diagnostics of a radial partition on a point cloud.

Covers label encoding error, points per non-empty cell, non-empty voxel
counts per distance band, receptive length along the radius, cell volumes and
active-site growth under dilating sparse convolutions.  ``analyze`` runs all
of them on one grid; ``compare_schemes`` runs it for several configurations
and ranks them.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from nucvox.config import GridConfig, OutOfRangePolicy, default_workers
from nucvox.errors import ConfigError, UnlabeledCloudError
from nucvox.geometry import (
    build_boundaries,
    cell_volumes,
    radial_index,
    receptive_length,
)
from nucvox.voxelizer import (
    PointCloud,
    SparseVoxelGrid,
    decode_labels,
    pack_keys,
    unpack_keys,
    voxelize,
)

logger = logging.getLogger(__name__)

OUTSIDE = "outside"
TOTAL = "total"
IGNORE_LABEL = 0

# Mean non-empty voxels per SemanticKITTI sequence-08 scan, keyed by
# (scheme, n_r, n_phi, n_z).
REFERENCE_NONEMPTY: dict[tuple[str, int, int, int], dict[str, float]] = {
    ("api", 120, 360, 32): {
        "0-10": 9516.8, "10-20": 6662.4, "20-30": 2719.8,
        "30-40": 1370.2, "40-50": 745.9, TOTAL: 21015.1,
    },
    ("uniform", 120, 360, 32): {
        "0-10": 7525.2, "10-20": 6642.1, "20-30": 2999.3,
        "30-40": 1574.1, "40-50": 873.1, TOTAL: 19613.8,
    },
    ("uniform", 480, 360, 32): {
        "0-10": 15914.6, "10-20": 11714.4, "20-30": 4927.3,
        "30-40": 2366.7, "40-50": 1250.0, TOTAL: 36173.1,
    },
}


def reference_nonempty(config: GridConfig) -> dict[str, float] | None:
    key = (config.scheme.kind, config.n_r, config.n_phi, config.n_z)
    return REFERENCE_NONEMPTY.get(key)


def _fmt_edge(value: float) -> str:
    return f"{value:g}"


@dataclass(frozen=True)
class DistanceBands:
    """Half-open distance bands ``[edges[m], edges[m + 1])`` in meters."""

    edges: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) < 2:
            raise ConfigError("bands need at least 2 edges")
        if not all(math.isfinite(e) for e in edges) or edges[0] < 0:
            raise ConfigError(f"band edges must be finite and >= 0 (got {list(edges)})")
        if not all(lo < hi for lo, hi in zip(edges, edges[1:])):
            raise ConfigError(f"band edges must be strictly increasing (got {list(edges)})")

    @classmethod
    def parse(cls, text: str) -> "DistanceBands":
        try:
            return cls(tuple(float(v) for v in text.split(",") if v.strip()))
        except ValueError:
            raise ConfigError(f"invalid bands: {text!r}") from None

    @property
    def names(self) -> list[str]:
        return [f"{_fmt_edge(lo)}-{_fmt_edge(hi)}" for lo, hi in zip(self.edges, self.edges[1:])]

    def assign(self, distances: np.ndarray) -> np.ndarray:
        """Band position of every distance; ``len(names)`` means outside."""
        idx = np.searchsorted(self.edges, distances, side="right") - 1
        n = len(self.edges) - 1
        return np.where((idx < 0) | (idx >= n), n, idx)


DEFAULT_BANDS = DistanceBands()


@dataclass
class BandRow:
    """Per-band tallies; counts become means in scan summaries."""

    band: str
    lo: float | None
    hi: float | None
    points: float = 0
    misencoded: float = 0
    nonempty_voxels: float = 0
    voxel_points: float = 0

    @property
    def encoding_error(self) -> float | None:
        return self.misencoded / self.points if self.points else None

    @property
    def mean_points_per_cell(self) -> float | None:
        return self.voxel_points / self.nonempty_voxels if self.nonempty_voxels else None

    def to_dict(self) -> dict:
        return {
            "band": self.band,
            "lo": self.lo,
            "hi": self.hi,
            "points": self.points,
            "misencoded": self.misencoded,
            "encoding_error": self.encoding_error,
            "nonempty_voxels": self.nonempty_voxels,
            "voxel_points": self.voxel_points,
            "mean_points_per_cell": self.mean_points_per_cell,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BandRow":
        return cls(data["band"], data["lo"], data["hi"], data["points"],
                   data["misencoded"], data["nonempty_voxels"], data["voxel_points"])


def _empty_rows(bands: DistanceBands) -> list[BandRow]:
    rows = [BandRow(name, lo, hi)
            for name, lo, hi in zip(bands.names, bands.edges, bands.edges[1:])]
    rows.append(BandRow(OUTSIDE, None, None))
    return rows


def _total(rows: list[BandRow]) -> BandRow:
    total = BandRow(TOTAL, None, None)
    for row in rows:
        total.points += row.points
        total.misencoded += row.misencoded
        total.nonempty_voxels += row.nonempty_voxels
        total.voxel_points += row.voxel_points
    return total


# ---------------------------------------------------------------------------
# Encoding error
# ---------------------------------------------------------------------------


def _fill_errors(
    rows: list[BandRow], grid: SparseVoxelGrid, cloud: PointCloud, bands: DistanceBands,
    exclude_ignore: bool, scale: int,
) -> None:
    if not cloud.has_labels:
        raise UnlabeledCloudError("encoding error needs a labelled cloud")
    decoded = decode_labels(grid, cloud, scale)
    counted = decoded >= 0
    if exclude_ignore:
        counted &= cloud.labels != IGNORE_LABEL
    wrong = counted & (decoded != cloud.labels)
    pos = bands.assign(cloud.radii())
    points = np.bincount(pos[counted], minlength=len(rows))
    misencoded = np.bincount(pos[wrong], minlength=len(rows))
    for row, p, m in zip(rows, points, misencoded):
        row.points = int(p)
        row.misencoded = int(m)


@dataclass
class BandProfile:
    rows: list[BandRow]

    @property
    def total(self) -> BandRow:
        return _total(self.rows)

    @property
    def overall(self) -> float | None:
        return self.total.encoding_error

    def fractions(self) -> dict[str, float | None]:
        return {row.band: row.encoding_error for row in self.rows}

    def row(self, band: str) -> BandRow:
        for row in self.rows:
            if row.band == band:
                return row
        if band == TOTAL:
            return self.total
        raise KeyError(band)


def encoding_error(
    cloud: PointCloud,
    config: GridConfig,
    bands: DistanceBands = DEFAULT_BANDS,
    *,
    exclude_ignore: bool = False,
    scale: int = 0,
    grid: SparseVoxelGrid | None = None,
    workers: int | None = None,
) -> BandProfile:
    """Fraction of points whose decoded label differs, per band by point radius.

    Dropped points are not counted.  With *exclude_ignore*, points of the
    ignore class are left out of the tally but still vote.
    """
    if not cloud.has_labels:
        raise UnlabeledCloudError("encoding error needs a labelled cloud")
    if grid is None:
        grid = voxelize(cloud, config, workers=workers)
    rows = _empty_rows(bands)
    _fill_errors(rows, grid, cloud, bands, exclude_ignore, scale)
    return BandProfile(rows)


# ---------------------------------------------------------------------------
# Voxel statistics
# ---------------------------------------------------------------------------


def voxel_bands(grid: SparseVoxelGrid, bands: DistanceBands) -> np.ndarray:
    """Band position of every base voxel, by the midpoint of its radial bin."""
    centers = grid.boundaries.centers
    return bands.assign(centers[grid.base.indices()[:, 0]])


def _fill_voxels(rows: list[BandRow], grid: SparseVoxelGrid, bands: DistanceBands) -> None:
    pos = voxel_bands(grid, bands)
    nonempty = np.bincount(pos, minlength=len(rows))
    points = np.bincount(pos, weights=grid.base.counts, minlength=len(rows))
    for row, n, p in zip(rows, nonempty, points):
        row.nonempty_voxels = int(n)
        row.voxel_points = int(round(p))


def band_profile(grid: SparseVoxelGrid, bands: DistanceBands = DEFAULT_BANDS) -> BandProfile:
    rows = _empty_rows(bands)
    _fill_voxels(rows, grid, bands)
    return BandProfile(rows)


def density_profile(grid: SparseVoxelGrid, bands: DistanceBands = DEFAULT_BANDS) -> dict[str, float]:
    """Mean points per non-empty cell for every band that has voxels."""
    return {
        row.band: row.mean_points_per_cell
        for row in band_profile(grid, bands).rows
        if row.nonempty_voxels
    }


def nonempty_counts(grid: SparseVoxelGrid, bands: DistanceBands = DEFAULT_BANDS) -> dict[str, int]:
    """Non-empty voxels per band, the outside bucket and the total."""
    profile = band_profile(grid, bands)
    counts = {row.band: int(row.nonempty_voxels) for row in profile.rows}
    counts[TOTAL] = len(grid)
    return counts


def coefficient_of_variation(values: Iterable[float]) -> float:
    """Population standard deviation over mean; lower is more balanced."""
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0 or arr.mean() == 0:
        return float("nan")
    return float(arr.std() / arr.mean())


def balance(grid: SparseVoxelGrid, bands: DistanceBands = DEFAULT_BANDS) -> float:
    """Coefficient of variation of per-band density, outside bucket excluded."""
    density = density_profile(grid, bands)
    return coefficient_of_variation(density.get(name) for name in bands.names)


# ---------------------------------------------------------------------------
# Geometry profiles
# ---------------------------------------------------------------------------


def default_sample_distances(config: GridConfig, step: float = 2.5) -> tuple[float, ...]:
    return tuple(float(d) for d in np.arange(step, config.r_max, step))


def receptive_profile(
    config: GridConfig, sample_distances: Sequence[float] | None = None
) -> list[tuple[float, float]]:
    """``(distance, receptive length)`` pairs; far distances use the last bin."""
    if sample_distances is None:
        sample_distances = default_sample_distances(config)
    boundaries = build_boundaries(config)
    out = []
    for d in sample_distances:
        i = radial_index(boundaries, float(d), OutOfRangePolicy.CLAMP)
        out.append((float(d), receptive_length(boundaries, i)))
    return out


def volume_profile(config: GridConfig) -> np.ndarray:
    """Cell volume (m^3) for every radial index."""
    return cell_volumes(build_boundaries(config), config)


_NEIGHBOURS = np.array(
    [(di, dj, dk) for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1)],
    dtype=np.int64,
)


# Dilating layers counted in each report.
ACTIVE_LAYERS = 2


def active_site_growth(grid: SparseVoxelGrid, layers: int = 3) -> list[int]:
    """Active sites before and after each dilating 3x3x3 sparse convolution.

    Sites never wrap around the angular seam, matching a sparse 3D network
    that sees the grid as a box.
    """
    if layers < 0:
        raise ConfigError(f"layers must be >= 0 (got {layers})")
    shape = grid.base.shape
    limits = np.asarray(shape, dtype=np.int64)
    sites = grid.base.indices()
    growth = [len(sites)]
    for _ in range(layers):
        cand = (sites[:, None, :] + _NEIGHBOURS[None, :, :]).reshape(-1, 3)
        inside = np.all((cand >= 0) & (cand < limits), axis=1)
        cand = cand[inside]
        keys = np.unique(pack_keys(cand[:, 0], cand[:, 1], cand[:, 2], shape))
        sites = unpack_keys(keys, shape)
        growth.append(len(sites))
    return growth


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class AnalysisReport:
    scheme: str
    config: GridConfig
    bands: list[BandRow]
    receptive: list[tuple[float, float]] = field(default_factory=list)
    volumes: list[float] = field(default_factory=list)
    # Active sites after 0, 1, .. dilating 3x3x3 convolutions.
    active_sites: list[float] = field(default_factory=list)
    labelled: bool = False
    scans: int = 1
    source: str = ""

    @property
    def total(self) -> BandRow:
        return _total(self.bands)

    @property
    def overall_error(self) -> float | None:
        return self.total.encoding_error if self.labelled else None

    @property
    def nonempty_total(self) -> float:
        return self.total.nonempty_voxels

    def band(self, name: str) -> BandRow:
        return BandProfile(self.bands).row(name)

    def density(self) -> dict[str, float]:
        return {row.band: row.mean_points_per_cell for row in self.bands if row.nonempty_voxels}


def analyze(
    cloud: PointCloud,
    config: GridConfig,
    bands: DistanceBands = DEFAULT_BANDS,
    *,
    sample_distances: Sequence[float] | None = None,
    exclude_ignore: bool = False,
    workers: int | None = None,
    source: str = "",
    active_layers: int = ACTIVE_LAYERS,
) -> AnalysisReport:
    """Voxelize once and gather every diagnostic for *config*."""
    grid = voxelize(cloud, config, workers=workers)
    rows = _empty_rows(bands)
    _fill_voxels(rows, grid, bands)
    if cloud.has_labels:
        _fill_errors(rows, grid, cloud, bands, exclude_ignore, 0)
    report = AnalysisReport(
        scheme=config.label(),
        config=config,
        bands=rows,
        receptive=receptive_profile(config, sample_distances),
        volumes=[float(v) for v in volume_profile(config)],
        active_sites=[float(n) for n in active_site_growth(grid, active_layers)],
        labelled=cloud.has_labels,
        source=source,
    )
    logger.info("[analysis] %s: %d non-empty voxels, error=%s",
                report.scheme, report.nonempty_total, report.overall_error)
    return report


@dataclass
class Comparison:
    reports: list[AnalysisReport]
    by_error: list[str]
    by_nonempty: list[str]


def _rank(reports: list[AnalysisReport], key) -> list[str]:
    scored = [(key(r), pos, r.scheme) for pos, r in enumerate(reports) if key(r) is not None]
    return [scheme for _, _, scheme in sorted(scored)]


def compare_schemes(
    cloud: PointCloud,
    configs: Sequence[GridConfig],
    bands: DistanceBands = DEFAULT_BANDS,
    *,
    sample_distances: Sequence[float] | None = None,
    exclude_ignore: bool = False,
    workers: int | None = None,
) -> Comparison:
    """Analyze every config; ties in the rankings keep config order."""
    if not configs:
        raise ConfigError("compare needs at least one configuration")
    workers = workers or default_workers()
    pool_size = max(1, min(workers, len(configs)))
    inner = max(1, workers // pool_size)

    def run(config: GridConfig) -> AnalysisReport:
        return analyze(cloud, config, bands, sample_distances=sample_distances,
                       exclude_ignore=exclude_ignore, workers=inner)

    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        reports = list(pool.map(run, configs))
    return Comparison(
        reports,
        by_error=_rank(reports, lambda r: r.overall_error),
        by_nonempty=_rank(reports, lambda r: r.nonempty_total),
    )


def summarize_scans(reports: Sequence[AnalysisReport]) -> AnalysisReport:
    """Mean over scans of the same config; errors are pooled over points."""
    if not reports:
        raise ConfigError("no scan reports to summarize")
    first = reports[0]
    n = len(reports)
    rows = []
    for pos, row in enumerate(first.bands):
        mean = BandRow(row.band, row.lo, row.hi)
        for report in reports:
            other = report.bands[pos]
            mean.points += other.points / n
            mean.misencoded += other.misencoded / n
            mean.nonempty_voxels += other.nonempty_voxels / n
            mean.voxel_points += other.voxel_points / n
        rows.append(mean)
    return AnalysisReport(
        scheme=first.scheme,
        config=first.config,
        bands=rows,
        receptive=first.receptive,
        volumes=first.volumes,
        active_sites=[sum(col) / n for col in zip(*(r.active_sites for r in reports))],
        labelled=all(r.labelled for r in reports),
        scans=sum(r.scans for r in reports),
        source="mean",
    )
