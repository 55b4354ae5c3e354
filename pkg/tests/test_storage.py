import csv
import io
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from nucvox.analysis import analyze, compare_schemes
from nucvox.config import GridConfig, Uniform
from nucvox.errors import InputNotFoundError, MalformedFileError
from nucvox.storage import (
    CSV_COLUMNS,
    GRID_MAGIC,
    REPORT_SCHEMA,
    dumps_reports_csv,
    dumps_reports_json,
    grid_from_bytes,
    grid_from_dict,
    grid_to_bytes,
    grid_to_dict,
    load_grid,
    load_report,
    save_grid,
    save_report,
)
from nucvox.synthetic import SynthesisSpec, generate_synthetic
from nucvox.voxelizer import PointCloud, voxelize

SMALL_SCENE = SynthesisSpec(azimuth_samples=128, seed=3)


def assert_same_grid(test: unittest.TestCase, a, b):
    test.assertEqual(a.config, b.config)
    test.assertEqual(a.accepted_points, b.accepted_points)
    test.assertEqual(a.dropped_points, b.dropped_points)
    test.assertEqual(len(a.levels), len(b.levels))
    for la, lb in zip(a.levels, b.levels):
        test.assertEqual(la.scale, lb.scale)
        np.testing.assert_array_equal(la.keys, lb.keys)
        np.testing.assert_array_equal(la.counts, lb.counts)
        np.testing.assert_array_equal(la.features, lb.features)
        if la.labels is None:
            test.assertIsNone(lb.labels)
        else:
            np.testing.assert_array_equal(la.labels, lb.labels)


class GridFileTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cloud = generate_synthetic(SMALL_SCENE)
        cls.grid = voxelize(cls.cloud, GridConfig(scales=3))

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_json_document(self):
        doc = grid_to_dict(self.grid)
        self.assertEqual(doc["format"], "NUCVOX1")
        self.assertEqual(len(doc["voxels"]), len(self.grid))
        self.assertEqual([s["scale"] for s in doc["scales"]], [1, 2])
        assert_same_grid(self, self.grid, grid_from_dict(json.loads(json.dumps(doc))))

    def test_binary_file(self):
        data = grid_to_bytes(self.grid)
        self.assertTrue(data.startswith(GRID_MAGIC))
        assert_same_grid(self, self.grid, grid_from_bytes(data))

    def test_unlabelled_and_empty_grids(self):
        unlabelled = voxelize(PointCloud(self.cloud.xyz, self.cloud.features), GridConfig())
        empty = voxelize(PointCloud.empty(), GridConfig(scales=2))
        for grid in (unlabelled, empty):
            for fmt in ("json", "binary"):
                path = self.root / f"grid.{fmt}"
                save_grid(grid, path, fmt)
                assert_same_grid(self, grid, load_grid(path))

    def test_bad_magic(self):
        data = bytearray(grid_to_bytes(self.grid))
        data[0:1] = b"X"
        with self.assertRaises(MalformedFileError):
            grid_from_bytes(bytes(data))
        path = self.root / "bad.grid"
        path.write_bytes(bytes(data))
        with self.assertRaises(MalformedFileError):
            load_grid(path)

    def test_truncated_binary_body(self):
        with self.assertRaises(MalformedFileError):
            grid_from_bytes(grid_to_bytes(self.grid)[:-3])

    def test_wrong_json_format(self):
        with self.assertRaises(MalformedFileError):
            grid_from_dict({"format": "OTHER"})
        with self.assertRaises(MalformedFileError):
            grid_from_dict({"format": "NUCVOX1", "config": {}})

    def test_missing_grid_file(self):
        with self.assertRaises(InputNotFoundError):
            load_grid(self.root / "missing.json")

    def test_unknown_format(self):
        with self.assertRaises(MalformedFileError):
            save_grid(self.grid, self.root / "g", "xml")


class ReportFileTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cloud = generate_synthetic(SMALL_SCENE)
        cls.configs = [GridConfig(), GridConfig(scheme=Uniform())]
        cls.comparison = compare_schemes(cls.cloud, cls.configs, workers=1)

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_json_round_trip_is_lossless(self):
        path = self.root / "report.json"
        save_report(self.comparison.reports, path, "json", self.comparison)
        loaded = load_report(path)
        self.assertEqual(len(loaded), 2)
        for original, copy in zip(self.comparison.reports, loaded):
            self.assertEqual(copy.scheme, original.scheme)
            self.assertEqual(copy.config, original.config)
            self.assertEqual([r.to_dict() for r in copy.bands],
                             [r.to_dict() for r in original.bands])
            self.assertEqual(copy.receptive, original.receptive)
            self.assertEqual(copy.volumes, original.volumes)
            self.assertEqual(copy.active_sites, original.active_sites)
        document = json.loads(path.read_text())
        self.assertEqual(document["schema"], REPORT_SCHEMA)
        self.assertEqual(document["ranking"]["encoding_error"], self.comparison.by_error)

    def test_json_reference_counts(self):
        document = json.loads(dumps_reports_json(self.comparison.reports))
        self.assertEqual(document["reports"][0]["reference_nonempty"]["total"], 21015.1)
        self.assertEqual(document["reports"][0]["total"]["points"], len(self.cloud))
        self.assertEqual(len(document["reports"][0]["active_sites"]), 3)

    def test_csv_is_deterministic(self):
        first = dumps_reports_csv(self.comparison.reports)
        again = dumps_reports_csv(compare_schemes(self.cloud, self.configs, workers=2).reports)
        self.assertEqual(first, again)
        lines = first.splitlines()
        self.assertEqual(lines[0], ",".join(CSV_COLUMNS))
        # five bands, outside and total for each scheme
        self.assertEqual(len(lines), 1 + 2 * 7)

    def test_unlabelled_report_has_blank_error(self):
        report = analyze(PointCloud(self.cloud.xyz, self.cloud.features), GridConfig())
        row = list(csv.reader(io.StringIO(dumps_reports_csv([report]))))[1]
        self.assertEqual(row[CSV_COLUMNS.index("encoding_error")], "")

    def test_wrong_schema(self):
        path = self.root / "other.json"
        path.write_text(json.dumps({"schema": "something-else"}))
        with self.assertRaises(MalformedFileError):
            load_report(path)
        path.write_text("not json")
        with self.assertRaises(MalformedFileError):
            load_report(path)


if __name__ == "__main__":
    unittest.main()
