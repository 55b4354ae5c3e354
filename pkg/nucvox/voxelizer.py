"""
Point-to-voxel assignment on a cylindrical grid.

Points are binned into packed ``(i, j, k)`` keys, then reduced per voxel:
point counts are summed, feature channels max-pooled and label histograms
summed so the majority label can be chosen afterwards.  Large clouds are split
into chunks reduced on a thread pool; the merge operators are associative and
commutative, so the result does not depend on the chunking or worker count.

Voxels are stored as sorted key arrays and looked up by binary search, which
keeps 480x360x32 grids sparse without a Python dict per voxel.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from nucvox.config import API, GridConfig, OutOfRangePolicy, default_workers
from nucvox.errors import (
    GridIndexError,
    GridMismatchError,
    OutOfRangeError,
    RejectedPointError,
    UnlabeledCloudError,
    UnsupportedSchemeError,
)
from nucvox.geometry import (
    CylindricalPoint,
    RadialBoundaries,
    build_boundaries,
    cylindrical_arrays,
    radial_index,
    radial_indices,
)

logger = logging.getLogger(__name__)

LABEL_BITS = 16
LABEL_MASK = (1 << LABEL_BITS) - 1
# Below this many points per worker the pool costs more than it saves.
MIN_CHUNK_POINTS = 1 << 16


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``N`` points with feature channels and optional semantic labels.

    ``features`` defaults to the raw ``(x, y, z, intensity)`` record.
    ``rejected_points`` counts records a reader dropped as non-finite.
    """

    xyz: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    rejected_points: int = 0

    def __post_init__(self):
        # Private copies: freezing must not touch the caller's arrays.
        xyz = np.array(self.xyz, dtype=np.float64, copy=True).reshape(-1, 3)
        features = np.array(self.features, copy=True)
        if features.ndim != 2 or features.shape[0] != xyz.shape[0]:
            raise RejectedPointError(
                f"features must be (N, C) with N={xyz.shape[0]}, got {features.shape}"
            )
        if not (np.all(np.isfinite(xyz)) and np.all(np.isfinite(features))):
            raise RejectedPointError("point cloud contains non-finite values")
        labels = self.labels
        if labels is not None:
            labels = np.array(labels, dtype=np.int64, copy=True).reshape(-1)
            if labels.size != xyz.shape[0]:
                raise RejectedPointError(
                    f"label count {labels.size} does not match point count {xyz.shape[0]}"
                )
            if labels.size and (labels.min() < 0 or labels.max() > LABEL_MASK):
                raise RejectedPointError(f"labels must lie in [0, {LABEL_MASK}]")
            labels.setflags(write=False)
        for arr in (xyz, features):
            arr.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_records(cls, records: np.ndarray, labels=None, rejected_points: int = 0):
        """Build from ``(N, C)`` scan records; every column is a feature."""
        records = np.asarray(records)
        if records.ndim == 1:
            records = records.reshape(-1, 4)
        return cls(records[:, :3], records, labels, rejected_points)

    @classmethod
    def empty(cls, channels: int = 4) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, channels), dtype=np.float32))

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.xyz, self.features, labels, self.rejected_points)

    def radii(self) -> np.ndarray:
        return np.hypot(self.xyz[:, 0], self.xyz[:, 1])


class VoxelIndex(NamedTuple):
    i: int
    j: int
    k: int


class VoxelRecord(NamedTuple):
    index: VoxelIndex
    count: int
    label: int | None
    feature: tuple[float, ...]


# ---------------------------------------------------------------------------
# Key packing
# ---------------------------------------------------------------------------


def pack_keys(i, j, k, shape: tuple[int, int, int]) -> np.ndarray:
    _, n_phi, n_z = shape
    i, j, k = (np.asarray(a, dtype=np.uint64) for a in (i, j, k))
    return (i * np.uint64(n_phi) + j) * np.uint64(n_z) + k


def unpack_keys(keys: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`pack_keys` as an ``(M, 3)`` int64 array."""
    _, n_phi, n_z = shape
    keys = np.asarray(keys, dtype=np.uint64)
    k = keys % np.uint64(n_z)
    rest = keys // np.uint64(n_z)
    j = rest % np.uint64(n_phi)
    i = rest // np.uint64(n_phi)
    return np.stack([i, j, k], axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SparseLevel:
    """Non-empty voxels of one pyramid scale, sorted by packed key."""

    scale: int
    shape: tuple[int, int, int]
    keys: np.ndarray
    counts: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        for name in ("keys", "counts", "features", "labels"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self) -> int:
        return self.keys.size

    @property
    def point_count(self) -> int:
        return int(self.counts.sum())

    def indices(self) -> np.ndarray:
        return unpack_keys(self.keys, self.shape)

    def find(self, keys: np.ndarray) -> np.ndarray:
        """Row of every key, or -1 where the voxel is empty."""
        keys = np.asarray(keys, dtype=np.uint64)
        pos = np.searchsorted(self.keys, keys)
        hit = pos < self.keys.size
        hit[hit] = self.keys[pos[hit]] == keys[hit]
        return np.where(hit, pos, -1)

    def lookup(self, i: int, j: int, k: int) -> VoxelRecord | None:
        n_r, n_phi, n_z = self.shape
        if not (0 <= i < n_r and 0 <= j < n_phi and 0 <= k < n_z):
            raise GridIndexError(f"voxel ({i}, {j}, {k}) outside grid {self.shape}")
        row = int(self.find(pack_keys([i], [j], [k], self.shape))[0])
        return None if row < 0 else self._record(row, VoxelIndex(i, j, k))

    def _record(self, row: int, index: VoxelIndex) -> VoxelRecord:
        label = None if self.labels is None else int(self.labels[row])
        feature = tuple(float(v) for v in self.features[row])
        return VoxelRecord(index, int(self.counts[row]), label, feature)

    def __iter__(self) -> Iterator[VoxelRecord]:
        for row, (i, j, k) in enumerate(self.indices().tolist()):
            yield self._record(row, VoxelIndex(i, j, k))


@dataclass(frozen=True, eq=False)
class SparseVoxelGrid:
    """Voxelized cloud: one :class:`SparseLevel` per scale, finest first."""

    config: GridConfig
    levels: tuple[SparseLevel, ...]
    accepted_points: int
    dropped_points: int = 0
    channels: int = 4
    boundaries: RadialBoundaries = field(default=None, repr=False)

    def __post_init__(self):
        if self.boundaries is None:
            object.__setattr__(self, "boundaries", build_boundaries(self.config))

    @property
    def base(self) -> SparseLevel:
        return self.levels[0]

    @property
    def has_labels(self) -> bool:
        return self.base.labels is not None

    def __len__(self) -> int:
        return len(self.base)

    def __iter__(self) -> Iterator[VoxelRecord]:
        return iter(self.base)

    def level(self, scale: int) -> SparseLevel:
        if not 0 <= scale < len(self.levels):
            raise GridIndexError(f"scale {scale} outside [0, {len(self.levels)})")
        return self.levels[scale]

    def lookup(self, i: int, j: int, k: int, scale: int = 0) -> VoxelRecord | None:
        return self.level(scale).lookup(i, j, k)


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------


def grid_shape(config: GridConfig, scale: int = 0) -> tuple[int, int, int]:
    return (config.n_r >> scale, config.n_phi >> scale, config.n_z >> scale)


def angular_indices(phi: np.ndarray, n_phi: int) -> np.ndarray:
    # (phi + pi) / (2 pi) is exactly 0.5 for phi = 0.
    phi = np.asarray(phi, dtype=np.float64)
    j = np.floor((phi + np.pi) / (2 * np.pi) * n_phi).astype(np.int64)
    # Rounding can lift phi just below pi to n_phi; only phi == pi wraps to 0.
    j = np.where(phi < np.pi, np.minimum(j, n_phi - 1), j)
    return j % n_phi


def height_indices(z: np.ndarray, config: GridConfig) -> np.ndarray:
    """Height bins; -1 marks heights outside ``[z_min, z_max)`` under Drop."""
    z = np.asarray(z, dtype=np.float64)
    k = np.floor((z - config.z_min) / (config.z_max - config.z_min) * config.n_z)
    k = k.astype(np.int64)
    outside = (z < config.z_min) | (z >= config.z_max)
    if config.out_of_range == OutOfRangePolicy.DROP:
        k[outside] = -1
        return np.minimum(k, config.n_z - 1)
    return np.clip(k, 0, config.n_z - 1)


def voxel_indices(
    r: np.ndarray, phi: np.ndarray, z: np.ndarray, config: GridConfig,
    boundaries: RadialBoundaries,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised voxel lookup; returns ``(i, j, k, accepted)``."""
    i = radial_indices(boundaries, r, config.out_of_range)
    j = angular_indices(phi, config.n_phi)
    k = height_indices(z, config)
    return i, j, k, (i >= 0) & (k >= 0)


def voxel_index(
    p: CylindricalPoint, config: GridConfig, boundaries: RadialBoundaries | None = None
) -> VoxelIndex:
    """Voxel containing one cylindrical point.

    Raises OutOfRangeError when the point falls outside the grid under Drop.
    """
    if boundaries is None:
        boundaries = build_boundaries(config)
    i = radial_index(boundaries, p.r, config.out_of_range)
    j = int(angular_indices(np.array([p.phi]), config.n_phi)[0])
    k = int(height_indices(np.array([p.z]), config)[0])
    if k < 0:
        raise OutOfRangeError(f"height {p.z} outside [{config.z_min}, {config.z_max})")
    return VoxelIndex(i, j, k)


def point_indices(
    cloud: PointCloud, config: GridConfig, scale: int = 0,
    boundaries: RadialBoundaries | None = None,
) -> np.ndarray:
    """``(N, 3)`` voxel index of every point at *scale*; dropped rows are -1."""
    if boundaries is None:
        boundaries = build_boundaries(config)
    r, phi, z = cylindrical_arrays(cloud.xyz)
    i, j, k, accepted = voxel_indices(r, phi, z, config, boundaries)
    out = np.stack([i, j, k], axis=1) >> scale
    out[~accepted] = -1
    return out


# ---------------------------------------------------------------------------
# Reduction
# ---------------------------------------------------------------------------


@dataclass
class _Partial:
    keys: np.ndarray
    counts: np.ndarray
    features: np.ndarray
    pair_keys: np.ndarray | None
    pair_counts: np.ndarray | None
    dropped: int = 0


def _reduce_by_key(keys, sums=None, maxes=None):
    """Group equal keys; sum *sums* and max-pool the rows of *maxes*."""
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    if keys.size == 0:
        return keys, sums, maxes
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    out_sums = None if sums is None else np.add.reduceat(sums[order], starts)
    out_maxes = None if maxes is None else np.maximum.reduceat(maxes[order], starts, axis=0)
    return keys[starts], out_sums, out_maxes


def _majority(pair_keys: np.ndarray, pair_counts: np.ndarray) -> np.ndarray:
    """Modal label per voxel from a sorted ``voxel << 16 | label`` histogram.

    Ties go to the smallest label.
    """
    voxels = pair_keys >> np.uint64(LABEL_BITS)
    labels = (pair_keys & np.uint64(LABEL_MASK)).astype(np.int64)
    order = np.lexsort((labels, -pair_counts, voxels))
    voxels = voxels[order]
    starts = np.flatnonzero(np.r_[True, voxels[1:] != voxels[:-1]])
    return labels[order][starts]


def _bin_chunk(
    cloud: PointCloud, rows: slice, config: GridConfig, boundaries: RadialBoundaries
) -> _Partial:
    r, phi, z = cylindrical_arrays(cloud.xyz[rows])
    i, j, k, accepted = voxel_indices(r, phi, z, config, boundaries)
    keys = pack_keys(i[accepted], j[accepted], k[accepted], grid_shape(config))
    features = cloud.features[rows][accepted]
    counts = np.ones(keys.size, dtype=np.int64)
    ukeys, ucounts, ufeatures = _reduce_by_key(keys, counts, features)
    pair_keys = pair_counts = None
    if cloud.has_labels:
        labels = cloud.labels[rows][accepted].astype(np.uint64)
        pairs = (keys << np.uint64(LABEL_BITS)) | labels
        pair_keys, pair_counts, _ = _reduce_by_key(pairs, np.ones(pairs.size, dtype=np.int64))
    return _Partial(ukeys, ucounts, ufeatures, pair_keys, pair_counts,
                    int(accepted.size - accepted.sum()))


def _merge(partials: list[_Partial], channels: int, dtype, labelled: bool) -> _Partial:
    keys = np.concatenate([p.keys for p in partials]) if partials else np.zeros(0, np.uint64)
    counts = np.concatenate([p.counts for p in partials]) if partials else np.zeros(0, np.int64)
    features = (np.concatenate([p.features for p in partials]) if partials
                else np.zeros((0, channels), dtype=dtype))
    keys, counts, features = _reduce_by_key(keys.astype(np.uint64), counts, features)
    pair_keys = pair_counts = None
    if labelled:
        pair_keys = np.concatenate([p.pair_keys for p in partials]).astype(np.uint64)
        pair_counts = np.concatenate([p.pair_counts for p in partials])
        pair_keys, pair_counts, _ = _reduce_by_key(pair_keys, pair_counts)
    return _Partial(keys, counts, features, pair_keys, pair_counts,
                    sum(p.dropped for p in partials))


def _coarsen(base: _Partial, config: GridConfig, scale: int) -> _Partial:
    """Merge scale-0 voxels into their scale-*scale* ancestors."""
    fine = grid_shape(config)
    coarse = grid_shape(config, scale)
    idx = unpack_keys(base.keys, fine) >> scale
    keys = pack_keys(idx[:, 0], idx[:, 1], idx[:, 2], coarse)
    keys, counts, features = _reduce_by_key(keys, base.counts, base.features)
    pair_keys = pair_counts = None
    if base.pair_keys is not None:
        voxels = unpack_keys(base.pair_keys >> np.uint64(LABEL_BITS), fine) >> scale
        labels = base.pair_keys & np.uint64(LABEL_MASK)
        pairs = (pack_keys(voxels[:, 0], voxels[:, 1], voxels[:, 2], coarse)
                 << np.uint64(LABEL_BITS)) | labels
        pair_keys, pair_counts, _ = _reduce_by_key(pairs, base.pair_counts)
    return _Partial(keys, counts, features, pair_keys, pair_counts)


def _level(partial: _Partial, config: GridConfig, scale: int) -> SparseLevel:
    labels = None
    if partial.pair_keys is not None:
        labels = (_majority(partial.pair_keys, partial.pair_counts)
                  if partial.keys.size else np.zeros(0, dtype=np.int64))
    return SparseLevel(scale, grid_shape(config, scale), partial.keys,
                       partial.counts, partial.features, labels)


def _chunks(n: int, workers: int) -> list[slice]:
    parts = max(1, min(workers, n // MIN_CHUNK_POINTS))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [slice(lo, hi) for lo, hi in zip(edges, edges[1:])]


def voxelize(cloud: PointCloud, config: GridConfig, *, workers: int | None = None) -> SparseVoxelGrid:
    """Voxelize *cloud* on every scale of *config*.

    Empty clouds and clouds whose points are all dropped give an empty grid.
    """
    if config.scales > 1 and not isinstance(config.scheme, API):
        raise UnsupportedSchemeError(
            f"scales={config.scales} needs the api scheme, not {config.scheme.kind}"
        )
    workers = workers or default_workers()
    boundaries = build_boundaries(config)
    chunks = _chunks(len(cloud), workers)
    if len(chunks) == 1:
        partials = [_bin_chunk(cloud, chunks[0], config, boundaries)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(lambda rows: _bin_chunk(cloud, rows, config, boundaries),
                                     chunks))
        logger.debug("[voxelize] merged %d chunks on %d workers", len(chunks), workers)
    base = _merge(partials, cloud.channels, cloud.features.dtype, cloud.has_labels)
    levels = [_level(base, config, 0)]
    for scale in range(1, config.scales):
        levels.append(_level(_coarsen(base, config, scale), config, scale))
    accepted = int(base.counts.sum())
    if base.dropped:
        logger.info("[voxelize] dropped %d of %d points outside the grid",
                    base.dropped, len(cloud))
    logger.info("[voxelize] %s: %d points -> %d voxels", config.label(), accepted, len(levels[0]))
    return SparseVoxelGrid(config, tuple(levels), accepted, base.dropped,
                           cloud.channels, boundaries)


def multiscale_voxelize(
    cloud: PointCloud, config: GridConfig, *, workers: int | None = None
) -> SparseVoxelGrid:
    """Voxelize with the pyramid; the scheme must be API."""
    if not isinstance(config.scheme, API):
        raise UnsupportedSchemeError(
            f"multi-scale voxelization needs the api scheme, not {config.scheme.kind}"
        )
    return voxelize(cloud, config, workers=workers)


def concatenated_features(grid: SparseVoxelGrid) -> np.ndarray:
    """Per finest voxel: its own max, then the max of each coarser ancestor.

    Rows follow ``grid.base.keys``; shape is ``(M, channels * scales)``.
    """
    base = grid.base
    idx = base.indices()
    blocks = [base.features]
    for level in grid.levels[1:]:
        anc = idx >> level.scale
        rows = level.find(pack_keys(anc[:, 0], anc[:, 1], anc[:, 2], level.shape))
        blocks.append(level.features[rows])
    return np.concatenate(blocks, axis=1)


def decode_labels(grid: SparseVoxelGrid, cloud: PointCloud, scale: int = 0) -> np.ndarray:
    """Label every point with its voxel's majority label; dropped points get -1.

    Raises GridMismatchError when *grid* was not built from *cloud*.
    """
    level = grid.level(scale)
    if level.labels is None:
        raise UnlabeledCloudError("grid has no majority labels; voxelize a labelled cloud")
    idx = point_indices(cloud, grid.config, scale, grid.boundaries)
    accepted = idx[:, 0] >= 0
    if int(accepted.sum()) != grid.accepted_points:
        raise GridMismatchError(
            f"cloud has {int(accepted.sum())} accepted points, grid holds {grid.accepted_points}"
        )
    out = np.full(len(cloud), -1, dtype=np.int64)
    sel = idx[accepted]
    rows = level.find(pack_keys(sel[:, 0], sel[:, 1], sel[:, 2], level.shape))
    if np.any(rows < 0):
        raise GridMismatchError(
            f"{int((rows < 0).sum())} points fall in voxels missing from the grid"
        )
    out[accepted] = level.labels[rows]
    return out
