"""
Cylindrical geometry for radial partition schemes.

Converts cartesian points to (r, phi, z), generates radial intervals and
boundaries for every partition scheme, looks up radial bins and computes the
exact wedge volume and receptive length of a cell.  All functions are pure;
boundary tables are read-only arrays that can be shared between threads.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from nucvox.config import (
    API,
    GPI,
    GridConfig,
    IncreasingD,
    OutOfRangePolicy,
    PartitionScheme,
    Piecewise,
    Uniform,
)
from nucvox.errors import (
    ConfigError,
    GridIndexError,
    OutOfRangeError,
    RejectedPointError,
    UnsupportedSchemeError,
)


class CartesianPoint(NamedTuple):
    x: float
    y: float
    z: float


class CylindricalPoint(NamedTuple):
    r: float
    phi: float
    z: float


@dataclass(frozen=True, eq=False)
class RadialBoundaries:
    """``n_r + 1`` strictly increasing radii starting at 0."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2:
            raise ConfigError("boundaries need at least two edges")
        if edges[0] != 0.0:
            raise ConfigError(f"boundaries must start at 0 (got {edges[0]})")
        if not np.all(np.isfinite(edges)) or not np.all(np.diff(edges) > 0):
            raise ConfigError("boundaries must be finite and strictly increasing")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_r(self) -> int:
        return self.edges.size - 1

    @property
    def outer(self) -> float:
        return float(self.edges[-1])

    @property
    def intervals(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


# ---------------------------------------------------------------------------
# Coordinate transform
# ---------------------------------------------------------------------------


def to_cylindrical(p: CartesianPoint) -> CylindricalPoint:
    """Convert one point; phi lies in [-pi, pi) and phi(0, 0) is 0."""
    x, y, z = (float(v) for v in p)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise RejectedPointError(f"non-finite point ({x}, {y}, {z})")
    phi = math.atan2(y, x)
    if phi >= math.pi:
        phi = -math.pi
    return CylindricalPoint(math.hypot(x, y), phi, z)


def cylindrical_arrays(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`to_cylindrical` over an ``(N, 3)`` array."""
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    phi[phi >= np.pi] = -np.pi
    return r, phi, z.copy()


# ---------------------------------------------------------------------------
# Radial intervals and boundaries
# ---------------------------------------------------------------------------


def radial_intervals(
    scheme: PartitionScheme, n_r: int, r_max: float | None = None
) -> np.ndarray:
    """Return the ``n_r`` radial intervals of *scheme*.

    Uniform has no intrinsic size, so *r_max* is required for it.
    """
    if n_r < 1:
        raise ConfigError(f"n_r must be >= 1 (got {n_r})")
    i = np.arange(n_r, dtype=np.float64)
    if isinstance(scheme, Uniform):
        if r_max is None or not r_max > 0:
            raise ConfigError("uniform intervals need a positive r_max")
        return np.full(n_r, r_max / n_r)
    if isinstance(scheme, API):
        return scheme.a0 + i * scheme.d
    if isinstance(scheme, GPI):
        return scheme.a0 * scheme.ratio ** i
    if isinstance(scheme, Piecewise):
        _check_piecewise(scheme, n_r)
        widths = np.diff(scheme.region_bounds) / np.asarray(scheme.region_counts)
        return np.repeat(widths, scheme.region_counts)
    if isinstance(scheme, IncreasingD):
        return scheme.a0 + i * scheme.d + scheme.d_prime * (i * (i - 1) / 2)
    raise ConfigError(f"unknown partition scheme {scheme!r}")


def _check_piecewise(scheme: Piecewise, n_r: int) -> None:
    total = sum(scheme.region_counts)
    if total != n_r:
        raise ConfigError(f"piecewise: region_counts sum to {total}, expected n_r={n_r}")


def _api_partial_sums(a0: float, d: float, n: np.ndarray) -> np.ndarray:
    # n * (n - 1) / 2 is exact for any realistic n, so scale-s tables sampled
    # at every 2^s-th index are bit-identical to the scale-0 table.
    return n * a0 + d * (n * (n - 1) / 2)


def _edges(scheme: PartitionScheme, n_r: int, r_max: float) -> np.ndarray:
    n = np.arange(n_r + 1, dtype=np.float64)
    if isinstance(scheme, Uniform):
        edges = n * (r_max / n_r)
        edges[-1] = r_max
        return edges
    if isinstance(scheme, API):
        return _api_partial_sums(scheme.a0, scheme.d, n)
    if isinstance(scheme, IncreasingD):
        return (
            _api_partial_sums(scheme.a0, scheme.d, n)
            + scheme.d_prime * (n * (n - 1) * (n - 2) / 6)
        )
    if isinstance(scheme, Piecewise):
        _check_piecewise(scheme, n_r)
        bounds = scheme.region_bounds
        parts = []
        for lo, hi, count in zip(bounds, bounds[1:], scheme.region_counts):
            parts.append(lo + np.arange(count) * ((hi - lo) / count))
        parts.append(np.array([bounds[-1]]))
        return np.concatenate(parts)
    return np.concatenate(([0.0], np.cumsum(radial_intervals(scheme, n_r, r_max))))


def build_boundaries(config: GridConfig) -> RadialBoundaries:
    """Boundary table of *config*.  Only Uniform is sized to ``r_max``."""
    return RadialBoundaries(_edges(config.scheme, config.n_r, config.r_max))


def boundaries_for_scale(config: GridConfig, s: int) -> RadialBoundaries:
    """Boundaries of aggregation scale *s* (scale 0 is the base grid).

    Each coarse bin merges two bins of the scale below, so the table is the
    base table sampled at every ``2**s``-th index.
    """
    if s < 0:
        raise ConfigError(f"scale must be >= 0 (got {s})")
    if s == 0:
        return build_boundaries(config)
    if not isinstance(config.scheme, API):
        raise UnsupportedSchemeError(
            f"multi-scale boundaries are only defined for api, not {config.scheme.kind}"
        )
    step = 2 ** s
    if config.n_r % step:
        raise ConfigError(f"n_r={config.n_r} is not divisible by 2^{s}")
    n = np.arange(config.n_r // step + 1, dtype=np.float64) * step
    return RadialBoundaries(_api_partial_sums(config.scheme.a0, config.scheme.d, n))


def multiscale_interval(scheme: PartitionScheme, s: int, i: int) -> float:
    """Radial interval *i* at scale *s* for the API scheme."""
    if not isinstance(scheme, API):
        raise UnsupportedSchemeError(
            f"multi-scale intervals are only defined for api, not {scheme.kind}"
        )
    if s < 0:
        raise ConfigError(f"scale must be >= 0 (got {s})")
    return (2.0 ** s) * scheme.a0 + (
        (4.0 ** s) * i + 2.0 ** (2 * s - 1) - 2.0 ** (s - 1)
    ) * scheme.d


def naive_halving_boundaries(config: GridConfig, s: int) -> RadialBoundaries:
    """Scale ``s - 1`` boundaries obtained by halving every scale-*s* interval.

    This is what a plain downsampling pyramid would assume; compare with
    :func:`boundaries_for_scale` to see where the two disagree.
    """
    if s < 1:
        raise ConfigError(f"halving needs a coarse scale >= 1 (got {s})")
    coarse = boundaries_for_scale(config, s).edges
    mids = 0.5 * (coarse[:-1] + coarse[1:])
    edges = np.empty(coarse.size * 2 - 1)
    edges[0::2] = coarse
    edges[1::2] = mids
    return RadialBoundaries(edges)


def halving_mismatch(config: GridConfig, s: int) -> float:
    """Largest offset (m) between halved and merge-consistent boundaries."""
    naive = naive_halving_boundaries(config, s).edges
    true = boundaries_for_scale(config, s - 1).edges
    return float(np.max(np.abs(naive - true)))


# ---------------------------------------------------------------------------
# Radial lookup
# ---------------------------------------------------------------------------


def radial_indices(
    boundaries: RadialBoundaries, r: np.ndarray, policy: OutOfRangePolicy
) -> np.ndarray:
    """Half-open bin lookup for an array of radii; -1 marks dropped radii."""
    edges = boundaries.edges
    r = np.asarray(r, dtype=np.float64)
    idx = np.searchsorted(edges, r, side="right").astype(np.int64) - 1
    beyond = r >= edges[-1]
    idx[beyond] = boundaries.n_r - 1 if policy == OutOfRangePolicy.CLAMP else -1
    return idx


def radial_index(
    boundaries: RadialBoundaries, r: float, policy: OutOfRangePolicy = OutOfRangePolicy.CLAMP
) -> int:
    """Return ``i`` with ``edges[i] <= r < edges[i + 1]``."""
    if not r >= 0:
        raise RejectedPointError(f"radius must be >= 0 (got {r})")
    i = int(radial_indices(boundaries, np.array([r]), policy)[0])
    if i < 0:
        raise OutOfRangeError(
            f"radius {r} is beyond the last boundary {boundaries.outer}"
        )
    return i


def api_radial_indices(
    boundaries: RadialBoundaries,
    scheme: API,
    r: np.ndarray,
    policy: OutOfRangePolicy = OutOfRangePolicy.CLAMP,
) -> np.ndarray:
    """Closed-form API lookup: invert the quadratic partial sum.

    The float root can land one bin off right at a boundary, so the estimate
    is nudged against the boundary table until it brackets ``r``.
    """
    if not isinstance(scheme, API):
        raise UnsupportedSchemeError(f"closed-form lookup needs api, not {scheme.kind}")
    edges = boundaries.edges
    n_r = boundaries.n_r
    r = np.asarray(r, dtype=np.float64)
    if scheme.d == 0:
        est = np.floor(r / scheme.a0)
    else:
        b = scheme.a0 - scheme.d / 2
        denom = b + np.sqrt(b * b + 2 * scheme.d * r)
        with np.errstate(divide="ignore", invalid="ignore"):
            est = np.where(r > 0, np.floor(2 * r / denom), 0.0)
    idx = np.clip(est, 0, n_r - 1).astype(np.int64)
    for _ in range(4):
        down = (idx > 0) & (edges[idx] > r)
        up = (idx < n_r - 1) & (edges[np.minimum(idx + 1, n_r)] <= r)
        if not (down.any() or up.any()):
            break
        idx = idx - down + up
    beyond = r >= edges[-1]
    idx[beyond] = n_r - 1 if policy == OutOfRangePolicy.CLAMP else -1
    return idx


def interval_at(boundaries: RadialBoundaries, r: float) -> float:
    """Radial extent of the bin containing *r* (clamped to the last bin)."""
    i = radial_index(boundaries, r, OutOfRangePolicy.CLAMP)
    return float(boundaries.edges[i + 1] - boundaries.edges[i])


def coverage_index(boundaries: RadialBoundaries, r: float) -> int | None:
    """Smallest ``i`` with ``edges[i] >= r``; None when never reached."""
    i = int(np.searchsorted(boundaries.edges, r, side="left"))
    return i if i <= boundaries.n_r else None


# ---------------------------------------------------------------------------
# Volumes and receptive length
# ---------------------------------------------------------------------------


def _check_radial(boundaries: RadialBoundaries, i: int) -> None:
    if not 0 <= i < boundaries.n_r:
        raise GridIndexError(f"radial index {i} outside [0, {boundaries.n_r})")


def cell_volumes(boundaries: RadialBoundaries, config: GridConfig) -> np.ndarray:
    """Wedge volume of every radial index; angular and height bins are equal."""
    lo, hi = boundaries.edges[:-1], boundaries.edges[1:]
    # (hi - lo) * (hi + lo) keeps the uniform 2i+1 ratios exact to ~1e-14.
    return (config.height_step * config.angular_step / 2) * (hi - lo) * (hi + lo)


def cell_volume(
    boundaries: RadialBoundaries, i: int, j: int, k: int, config: GridConfig
) -> float:
    _check_radial(boundaries, i)
    if not 0 <= j < config.n_phi:
        raise GridIndexError(f"angular index {j} outside [0, {config.n_phi})")
    if not 0 <= k < config.n_z:
        raise GridIndexError(f"height index {k} outside [0, {config.n_z})")
    lo, hi = boundaries.edges[i], boundaries.edges[i + 1]
    return float((config.height_step * config.angular_step / 2) * (hi - lo) * (hi + lo))


def receptive_length(boundaries: RadialBoundaries, i: int) -> float:
    """Radial span of bins ``i - 1 .. i + 1``, truncated at the grid edges."""
    _check_radial(boundaries, i)
    edges = boundaries.edges
    return float(edges[min(i + 2, boundaries.n_r)] - edges[max(i - 1, 0)])
