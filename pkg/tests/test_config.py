import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from nucvox.config import (
    API,
    GPI,
    SCHEME_PRESETS,
    GridConfig,
    IncreasingD,
    OutOfRangePolicy,
    Piecewise,
    Uniform,
    config_from_dict,
    config_to_dict,
    default_workers,
    format_config,
    load_config,
    parse_config_text,
    save_config,
    scheme_preset,
)
from nucvox.errors import ConfigError, InputNotFoundError


class SchemeTests(unittest.TestCase):
    def test_defaults(self):
        config = GridConfig()
        self.assertEqual((config.n_r, config.n_phi, config.n_z), (120, 360, 32))
        self.assertEqual(config.scheme, API(0.05, 0.0062))
        self.assertEqual(config.out_of_range, OutOfRangePolicy.CLAMP)

    def test_invalid_parameters(self):
        for build in (
            lambda: API(a0=0.0),
            lambda: API(d=-0.1),
            lambda: GPI(ratio=1.0),
            lambda: IncreasingD(d_prime=-1e-6),
            lambda: Piecewise((0.0, 15.0, 10.0), (1, 1)),
            lambda: Piecewise((0.0, 15.0), (0,)),
        ):
            with self.assertRaises(ConfigError):
                build()

    def test_piecewise_from_ratios(self):
        self.assertEqual(Piecewise.from_ratios((8, 3, 1), 120).region_counts, (80, 30, 10))
        self.assertEqual(Piecewise.from_ratios((5, 4, 3), 240).region_counts, (100, 80, 60))
        with self.assertRaises(ConfigError):
            Piecewise.from_ratios((8, 3, 1), 100)

    def test_presets(self):
        self.assertEqual(scheme_preset("api"), API(0.05, 0.0062))
        self.assertEqual(scheme_preset("gpi-a0.05"), GPI(0.05, 1.0541))
        self.assertEqual(scheme_preset("piecewise", 240).region_counts, (160, 60, 20))
        self.assertIn("increasing-d-0.0054", SCHEME_PRESETS)
        with self.assertRaises(ConfigError) as ctx:
            scheme_preset("octree")
        self.assertIn("octree", str(ctx.exception))


class GridConfigTests(unittest.TestCase):
    def test_scales_need_divisible_resolution(self):
        with self.assertRaises(ConfigError) as ctx:
            GridConfig(n_phi=361, scales=2)
        self.assertIn("n_phi", str(ctx.exception))
        GridConfig(n_phi=360, scales=4)

    def test_bounds(self):
        for kwargs in ({"n_r": 0}, {"z_min": 2.0, "z_max": 2.0}, {"r_max": float("inf")},
                       {"n_z": 1.5}):
            with self.assertRaises(ConfigError):
                GridConfig(**kwargs)

    def test_piecewise_counts_must_match_n_r(self):
        with self.assertRaises(ConfigError):
            GridConfig(n_r=100, scheme=Piecewise())

    def test_label_is_stable(self):
        self.assertEqual(GridConfig().label(), "api(a0=0.05,d=0.0062) 120x360x32")
        self.assertEqual(GridConfig(scheme=Uniform(), n_r=480).label(), "uniform 480x360x32")


class ConfigFileTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_save_then_load_is_identity(self):
        for config in (
            GridConfig(),
            GridConfig(scheme=Uniform(), n_r=480, out_of_range=OutOfRangePolicy.DROP),
            GridConfig(scheme=GPI(0.05, 1.0541), z_min=-3.0),
            GridConfig(scheme=Piecewise.from_ratios((7, 4, 1), 120)),
            GridConfig(scheme=IncreasingD(), scales=2),
        ):
            path = self.root / "grid.conf"
            save_config(config, path)
            self.assertEqual(load_config(path), config)
            self.assertEqual(config_from_dict(config_to_dict(config)), config)

    def test_text_format(self):
        text = format_config(GridConfig())
        self.assertIn("scheme = api\n", text)
        self.assertIn("a0 = 0.05\n", text)
        values = parse_config_text("# comment\nscheme = gpi  # inline\n\nratio = 1.05\n")
        self.assertEqual(values, {"scheme": "gpi", "ratio": "1.05"})

    def test_unknown_key_is_named(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text("scheme = api\ncolour = blue\n")
        self.assertIn("colour", str(ctx.exception))
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({"colour": "blue"})
        self.assertIn("colour", str(ctx.exception))

    def test_non_positive_first_interval(self):
        with self.assertRaises(ConfigError):
            config_from_dict({"scheme": "api", "a0": "0"})

    def test_foreign_scheme_keys(self):
        with self.assertRaises(ConfigError):
            config_from_dict({"scheme": "uniform", "a0": 0.05})
        relaxed = config_from_dict({"scheme": "uniform", "a0": 0.05}, strict=False)
        self.assertEqual(relaxed.scheme, Uniform())

    def test_bad_values(self):
        for values in ({"n_r": "many"}, {"n_r": 12.5}, {"out_of_range": "wrap"},
                       {"scheme": "spiral"}, {"line": "no equals"}):
            with self.assertRaises(ConfigError):
                config_from_dict(values)
        with self.assertRaises(ConfigError):
            parse_config_text("n_r 120\n")
        with self.assertRaises(ConfigError):
            parse_config_text("n_r = 120\nn_r = 240\n")

    def test_piecewise_without_counts_uses_default_ratios(self):
        config = config_from_dict({"scheme": "piecewise", "n_r": "240"})
        self.assertEqual(config.scheme.region_counts, (160, 60, 20))

    def test_missing_file(self):
        with self.assertRaises(InputNotFoundError):
            load_config(self.root / "absent.conf")


class WorkerSettingTests(unittest.TestCase):
    @patch.dict(os.environ, {"NUC_THREADS": "3"})
    def test_env_override(self):
        self.assertEqual(default_workers(), 3)

    @patch.dict(os.environ, {"NUC_THREADS": "lots"})
    def test_invalid_env_falls_back(self):
        with self.assertLogs("nucvox.config", level="WARNING"):
            workers = default_workers()
        self.assertEqual(workers, min(8, os.cpu_count() or 1))

    @patch.dict(os.environ, {"NUC_THREADS": "0"})
    def test_at_least_one_worker(self):
        self.assertEqual(default_workers(), 1)


if __name__ == "__main__":
    unittest.main()
