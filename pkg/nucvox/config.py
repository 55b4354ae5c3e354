"""Grid configuration, partition schemes and process settings.

A GridConfig fully determines a voxelization: resolutions, spatial bounds,
the radial partition scheme, the number of aggregation scales and what
happens to points outside the grid.  Configurations are stored as plain
``key = value`` text so they can be diffed and edited by hand.
"""

import enum
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar, Mapping

from nucvox.errors import ConfigError, InputNotFoundError

logger = logging.getLogger(__name__)


def _parse_int_env(name: str, default: int) -> int:
    """Parse an integer environment variable, falling back to *default*."""
    raw = os.environ.get(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning("Invalid integer for %s=%r, using default %s", name, raw, default)
        return default


def default_workers() -> int:
    """Worker cap from NUC_THREADS, else the CPU count capped at 8."""
    workers = _parse_int_env("NUC_THREADS", min(8, os.cpu_count() or 1))
    return max(1, workers)


# ---------------------------------------------------------------------------
# Partition schemes
# ---------------------------------------------------------------------------


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class Uniform:
    """Constant radial interval ``r_max / n_r``."""

    kind: ClassVar[str] = "uniform"


@dataclass(frozen=True)
class API:
    """Arithmetic progression of interval: ``a0 + i * d``."""

    a0: float = 0.05
    d: float = 0.0062
    kind: ClassVar[str] = "api"

    def __post_init__(self):
        _require(_finite(self.a0, self.d), "api: a0 and d must be finite")
        _require(self.a0 > 0, f"api: a0 must be > 0 (got {self.a0})")
        _require(self.d >= 0, f"api: d must be >= 0 (got {self.d})")


@dataclass(frozen=True)
class GPI:
    """Geometric progression of interval: ``a0 * ratio ** i``."""

    a0: float = 0.1
    ratio: float = 1.0465
    kind: ClassVar[str] = "gpi"

    def __post_init__(self):
        _require(_finite(self.a0, self.ratio), "gpi: a0 and ratio must be finite")
        _require(self.a0 > 0, f"gpi: a0 must be > 0 (got {self.a0})")
        _require(self.ratio > 1, f"gpi: ratio must be > 1 (got {self.ratio})")


@dataclass(frozen=True)
class Piecewise:
    """Fixed interval per radial region; region ``m`` spans
    ``[region_bounds[m], region_bounds[m + 1])`` with ``region_counts[m]`` bins.
    """

    region_bounds: tuple[float, ...] = (0.0, 15.0, 30.0, 50.0)
    region_counts: tuple[int, ...] = (80, 30, 10)
    kind: ClassVar[str] = "piecewise"

    def __post_init__(self):
        bounds = tuple(float(b) for b in self.region_bounds)
        counts = tuple(self.region_counts)
        object.__setattr__(self, "region_bounds", bounds)
        object.__setattr__(self, "region_counts", counts)
        _require(len(bounds) >= 2, "piecewise: region_bounds needs at least 2 values")
        _require(_finite(*bounds), "piecewise: region_bounds must be finite")
        _require(bounds[0] == 0.0, f"piecewise: region_bounds must start at 0 (got {bounds[0]})")
        _require(
            all(lo < hi for lo, hi in zip(bounds, bounds[1:])),
            f"piecewise: region_bounds must be strictly increasing (got {list(bounds)})",
        )
        _require(
            len(counts) == len(bounds) - 1,
            f"piecewise: expected {len(bounds) - 1} region_counts, got {len(counts)}",
        )
        _require(
            all(isinstance(c, int) and not isinstance(c, bool) and c > 0 for c in counts),
            f"piecewise: region_counts must be positive integers (got {list(counts)})",
        )

    @classmethod
    def from_ratios(
        cls,
        ratios: tuple[int, ...],
        n_r: int,
        region_bounds: tuple[float, ...] = (0.0, 15.0, 30.0, 50.0),
    ) -> "Piecewise":
        """Scale ratios such as ``(8, 3, 1)`` to counts summing to *n_r*."""
        total = sum(ratios)
        _require(total > 0 and n_r % total == 0,
                 f"piecewise: ratios {list(ratios)} do not divide n_r={n_r}")
        return cls(region_bounds, tuple(int(r) * (n_r // total) for r in ratios))


@dataclass(frozen=True)
class IncreasingD:
    """Common difference growing by ``d_prime`` per radial index."""

    a0: float = 0.05
    d: float = 0.0052
    d_prime: float = 0.000025
    kind: ClassVar[str] = "increasing-d"

    def __post_init__(self):
        _require(_finite(self.a0, self.d, self.d_prime),
                 "increasing-d: a0, d and d_prime must be finite")
        _require(self.a0 > 0, f"increasing-d: a0 must be > 0 (got {self.a0})")
        _require(self.d >= 0, f"increasing-d: d must be >= 0 (got {self.d})")
        _require(self.d_prime >= 0, f"increasing-d: d_prime must be >= 0 (got {self.d_prime})")


PartitionScheme = Uniform | API | GPI | Piecewise | IncreasingD

SCHEME_KINDS: dict[str, type] = {
    cls.kind: cls for cls in (Uniform, API, GPI, Piecewise, IncreasingD)
}

# Scheme ablation rows; the bare family name is the best row of that family.
_PRESET_ROWS: dict[str, tuple[str, dict]] = {
    "uniform": ("uniform", {}),
    "api": ("api", {"a0": 0.05, "d": 0.0062}),
    "api-a0.04": ("api", {"a0": 0.04, "d": 0.0064}),
    "api-a0.06": ("api", {"a0": 0.06, "d": 0.0060}),
    "api-a0.07": ("api", {"a0": 0.07, "d": 0.0058}),
    "gpi": ("gpi", {"a0": 0.1, "ratio": 1.0465}),
    "gpi-a0.05": ("gpi", {"a0": 0.05, "ratio": 1.0541}),
    "gpi-a0.2": ("gpi", {"a0": 0.2, "ratio": 1.0391}),
    "gpi-a0.3": ("gpi", {"a0": 0.3, "ratio": 1.0345}),
    "piecewise": ("piecewise", {"ratios": (8, 3, 1)}),
    "piecewise-7-3-2": ("piecewise", {"ratios": (7, 3, 2)}),
    "piecewise-7-4-1": ("piecewise", {"ratios": (7, 4, 1)}),
    "piecewise-5-4-3": ("piecewise", {"ratios": (5, 4, 3)}),
    "increasing-d": ("increasing-d", {"a0": 0.05, "d": 0.0052, "d_prime": 0.000025}),
    "increasing-d-0.0050": ("increasing-d", {"a0": 0.05, "d": 0.0050, "d_prime": 0.000030}),
    "increasing-d-0.0054": ("increasing-d", {"a0": 0.05, "d": 0.0054, "d_prime": 0.000020}),
}

SCHEME_PRESETS = tuple(_PRESET_ROWS)


def scheme_preset(name: str, n_r: int = 120) -> PartitionScheme:
    """Return the named scheme; piecewise ratios are scaled to *n_r*."""
    try:
        kind, params = _PRESET_ROWS[name]
    except KeyError:
        raise ConfigError(
            f"unknown scheme preset {name!r}; choose from: {', '.join(SCHEME_PRESETS)}"
        ) from None
    if kind == "piecewise":
        return Piecewise.from_ratios(params["ratios"], n_r)
    return SCHEME_KINDS[kind](**params)


def describe_scheme(scheme: PartitionScheme) -> str:
    """Short, stable text label such as ``api(a0=0.05,d=0.0062)``."""
    if isinstance(scheme, Uniform):
        return "uniform"
    if isinstance(scheme, API):
        return f"api(a0={scheme.a0!r},d={scheme.d!r})"
    if isinstance(scheme, GPI):
        return f"gpi(a0={scheme.a0!r},ratio={scheme.ratio!r})"
    if isinstance(scheme, Piecewise):
        counts = "/".join(str(c) for c in scheme.region_counts)
        bounds = "/".join(repr(b) for b in scheme.region_bounds)
        return f"piecewise(bounds={bounds},counts={counts})"
    return f"increasing-d(a0={scheme.a0!r},d={scheme.d!r},d_prime={scheme.d_prime!r})"


# ---------------------------------------------------------------------------
# Grid configuration
# ---------------------------------------------------------------------------


class OutOfRangePolicy(str, enum.Enum):
    CLAMP = "clamp"
    DROP = "drop"


# Packed voxel keys are shifted left by 16 bits to carry a label.
_MAX_CELLS = 1 << 47


@dataclass(frozen=True)
class GridConfig:
    """Resolution, bounds and partition rule of a cylindrical grid.

    ``r_max`` bounds distance bands and synthetic scenes; only the Uniform
    scheme uses it to size intervals.  Parametric schemes keep whatever
    coverage their parameters imply.
    """

    n_r: int = 120
    n_phi: int = 360
    n_z: int = 32
    z_min: float = -4.0
    z_max: float = 2.0
    r_max: float = 50.0
    scheme: PartitionScheme = field(default_factory=API)
    scales: int = 1
    out_of_range: OutOfRangePolicy = OutOfRangePolicy.CLAMP

    def __post_init__(self):
        object.__setattr__(self, "out_of_range", OutOfRangePolicy(self.out_of_range))
        for name in ("n_r", "n_phi", "n_z", "scales"):
            value = getattr(self, name)
            _require(
                isinstance(value, int) and not isinstance(value, bool) and value >= 1,
                f"{name} must be an integer >= 1 (got {value!r})",
            )
        _require(_finite(self.z_min, self.z_max, self.r_max),
                 "z_min, z_max and r_max must be finite")
        _require(self.z_min < self.z_max,
                 f"z_min must be < z_max (got {self.z_min} >= {self.z_max})")
        _require(self.r_max > 0, f"r_max must be > 0 (got {self.r_max})")
        _require(isinstance(self.scheme, tuple(SCHEME_KINDS.values())),
                 f"unknown partition scheme {self.scheme!r}")
        if isinstance(self.scheme, Piecewise):
            total = sum(self.scheme.region_counts)
            _require(total == self.n_r,
                     f"piecewise: region_counts sum to {total}, expected n_r={self.n_r}")
        factor = 2 ** (self.scales - 1)
        for name in ("n_r", "n_phi", "n_z"):
            value = getattr(self, name)
            _require(value % factor == 0,
                     f"{name}={value} is not divisible by 2^(scales-1)={factor} "
                     f"required for scales={self.scales}")
        _require(self.n_r * self.n_phi * self.n_z < _MAX_CELLS,
                 "grid has too many cells to pack voxel keys")

    @property
    def angular_step(self) -> float:
        return 2 * math.pi / self.n_phi

    @property
    def height_step(self) -> float:
        return (self.z_max - self.z_min) / self.n_z

    def label(self) -> str:
        return f"{describe_scheme(self.scheme)} {self.n_r}x{self.n_phi}x{self.n_z}"


_SCHEME_KEYS: dict[str, tuple[str, ...]] = {
    "uniform": (),
    "api": ("a0", "d"),
    "gpi": ("a0", "ratio"),
    "piecewise": ("region_bounds", "region_counts"),
    "increasing-d": ("a0", "d", "d_prime"),
}
_GRID_KEYS = ("n_r", "n_phi", "n_z", "z_min", "z_max", "r_max", "scales", "out_of_range")
_INT_KEYS = frozenset({"n_r", "n_phi", "n_z", "scales"})
_FLOAT_KEYS = frozenset({"a0", "d", "ratio", "d_prime", "z_min", "z_max", "r_max"})
CONFIG_KEYS = frozenset({"scheme", *_GRID_KEYS, "a0", "d", "ratio", "d_prime",
                         "region_bounds", "region_counts"})


def scheme_to_dict(scheme: PartitionScheme) -> dict:
    out: dict = {"scheme": scheme.kind}
    for key in _SCHEME_KEYS[scheme.kind]:
        value = getattr(scheme, key)
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def config_to_dict(config: GridConfig) -> dict:
    """Plain mapping of a config; only keys that apply to its scheme."""
    out = scheme_to_dict(config.scheme)
    for key in _GRID_KEYS:
        value = getattr(config, key)
        out[key] = value.value if isinstance(value, enum.Enum) else value
    return out


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "region_bounds":
            items = value.split(",") if isinstance(value, str) else value
            return tuple(float(v) for v in items if str(v).strip())
        if key == "region_counts":
            items = value.split(",") if isinstance(value, str) else value
            return tuple(int(v) for v in items if str(v).strip())
        if key == "out_of_range":
            return OutOfRangePolicy(str(value).strip().lower())
        return str(value).strip().lower()
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key}: {value!r}") from None


def config_from_dict(values: Mapping, *, strict: bool = True) -> GridConfig:
    """Build a GridConfig from a mapping of schema keys.

    Unknown keys always fail.  With *strict*, keys belonging to a different
    scheme fail too; otherwise they are ignored (used when layering CLI flags
    over a config file).
    """
    for key in values:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key}")
    kind = _coerce("scheme", values.get("scheme", API.kind))
    if kind not in SCHEME_KINDS:
        raise ConfigError(f"unknown scheme: {kind!r}; choose from: {', '.join(SCHEME_KINDS)}")
    scheme_keys = _SCHEME_KEYS[kind]
    if strict:
        for key in values:
            if key not in scheme_keys and key not in _GRID_KEYS and key != "scheme":
                raise ConfigError(f"config key {key} does not apply to scheme {kind}")
    scheme_args = {k: _coerce(k, values[k]) for k in scheme_keys if k in values}
    grid_args = {k: _coerce(k, values[k]) for k in _GRID_KEYS if k in values}
    if kind == "piecewise" and "region_counts" not in scheme_args:
        n_r = grid_args.get("n_r", GridConfig.n_r)
        scheme_args["region_counts"] = Piecewise.from_ratios((8, 3, 1), n_r).region_counts
    scheme = SCHEME_KINDS[kind](**scheme_args)
    return GridConfig(scheme=scheme, **grid_args)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key: {key}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key: {key}")
        values[key] = value
    return values


def load_config(path: str | Path) -> GridConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputNotFoundError(f"config file not found: {path}") from None
    except OSError as e:
        raise InputNotFoundError(f"cannot read config file {path}: {e}") from None
    config = config_from_dict(parse_config_text(text))
    logger.debug("Loaded config %s from %s", config.label(), path)
    return config


def format_config(config: GridConfig) -> str:
    lines = []
    for key, value in config_to_dict(config).items():
        if isinstance(value, list):
            value = ", ".join(repr(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def save_config(config: GridConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(config), encoding="utf-8")
