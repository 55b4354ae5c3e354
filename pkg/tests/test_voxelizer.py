import math
import time
import unittest
from collections import Counter, defaultdict

import numpy as np

from nucvox.config import API, GPI, GridConfig, OutOfRangePolicy, Uniform
from nucvox.errors import (
    GridIndexError,
    GridMismatchError,
    OutOfRangeError,
    RejectedPointError,
    UnlabeledCloudError,
    UnsupportedSchemeError,
)
from nucvox.geometry import CylindricalPoint, boundaries_for_scale, build_boundaries, radial_indices
from nucvox.synthetic import SynthesisSpec, generate_synthetic
from nucvox.voxelizer import (
    PointCloud,
    VoxelIndex,
    angular_indices,
    concatenated_features,
    decode_labels,
    multiscale_voxelize,
    point_indices,
    voxel_index,
    voxelize,
)


def cloud_of(points, labels=None):
    """Cloud from (x, y, z, intensity) tuples."""
    return PointCloud.from_records(np.asarray(points, dtype=np.float64).reshape(-1, 4), labels)


def small_scene(seed=3):
    return generate_synthetic(SynthesisSpec(azimuth_samples=512, seed=seed))


def brute_force_modes(cloud, config, scale=0):
    idx = point_indices(cloud, config, scale)
    votes = defaultdict(Counter)
    for key, label in zip(map(tuple, idx.tolist()), cloud.labels.tolist()):
        if key[0] >= 0:
            votes[key][label] += 1
    return {
        key: min(counter, key=lambda lab: (-counter[lab], lab))
        for key, counter in votes.items()
    }


class PointCloudTests(unittest.TestCase):
    def test_non_finite_values_are_rejected(self):
        with self.assertRaises(RejectedPointError):
            cloud_of([(0.0, float("inf"), 0.0, 1.0)])

    def test_label_length_must_match(self):
        with self.assertRaises(RejectedPointError):
            cloud_of([(1.0, 0.0, 0.0, 0.0)], labels=[1, 2])

    def test_default_features_are_the_raw_record(self):
        cloud = cloud_of([(1.0, 2.0, -1.0, 0.5)])
        self.assertEqual(cloud.channels, 4)
        np.testing.assert_array_equal(cloud.features[0], [1.0, 2.0, -1.0, 0.5])

    def test_caller_arrays_stay_writable(self):
        records = np.zeros((2, 4))
        labels = np.array([1, 2])
        cloud = PointCloud.from_records(records, labels)
        records[0, 3] = 1.0
        labels[0] = 7
        self.assertTrue(records.flags.writeable)
        self.assertEqual(cloud.features[0, 3], 0.0)
        self.assertEqual(cloud.labels.tolist(), [1, 2])
        self.assertFalse(cloud.features.flags.writeable)


class VoxelIndexTests(unittest.TestCase):
    def setUp(self):
        self.config = GridConfig()
        self.boundaries = build_boundaries(self.config)

    def test_point_inside_first_interval(self):
        p = CylindricalPoint(0.04, 0.0, -4.0)
        self.assertEqual(voxel_index(p, self.config, self.boundaries), VoxelIndex(0, 180, 0))

    def test_lower_angular_edge(self):
        p = CylindricalPoint(1.0, -math.pi, 0.0)
        self.assertEqual(voxel_index(p, self.config).j, 0)

    def test_angle_just_below_pi_is_the_last_bin(self):
        below_pi = np.nextafter(np.pi, 0)
        self.assertEqual(angular_indices(np.array([below_pi, np.pi, -np.pi]), 360).tolist(),
                         [359, 0, 0])
        self.assertEqual(voxel_index(CylindricalPoint(1.0, below_pi, 0.0), self.config).j, 359)

    def test_upper_height_bin(self):
        p = CylindricalPoint(1.0, 0.0, 2.0 - 1e-9)
        self.assertEqual(voxel_index(p, self.config).k, 31)

    def test_heights_outside_are_clamped(self):
        self.assertEqual(voxel_index(CylindricalPoint(1.0, 0.0, 5.0), self.config).k, 31)
        self.assertEqual(voxel_index(CylindricalPoint(1.0, 0.0, -9.0), self.config).k, 0)

    def test_drop_policy_raises_for_single_points(self):
        config = GridConfig(out_of_range=OutOfRangePolicy.DROP)
        with self.assertRaises(OutOfRangeError):
            voxel_index(CylindricalPoint(1.0, 0.0, 2.0), config)
        with self.assertRaises(OutOfRangeError):
            voxel_index(CylindricalPoint(70.0, 0.0, 0.0), config)


class VoxelizeTests(unittest.TestCase):
    def test_single_point(self):
        grid = voxelize(cloud_of([(3.0, 1.0, -1.0, 0.25)]), GridConfig())
        self.assertEqual(len(grid), 1)
        record = next(iter(grid))
        self.assertEqual(record.count, 1)
        self.assertEqual(record.feature, (3.0, 1.0, -1.0, 0.25))
        self.assertIsNone(record.label)
        self.assertEqual(grid.lookup(*record.index), record)

    def test_majority_tie_goes_to_smallest_label(self):
        cloud = cloud_of([(5.0, 0.0, -1.0, 0.1), (5.001, 0.0, -1.0, 0.9)], labels=[2, 1])
        grid = voxelize(cloud, GridConfig())
        self.assertEqual(len(grid), 1)
        record = next(iter(grid))
        self.assertEqual(record.label, 1)
        self.assertEqual(record.count, 2)
        self.assertEqual(record.feature[3], np.float64(0.9))

    def test_majority_label(self):
        points = [(5.0, 0.0, -1.0, 0.0)] * 3
        grid = voxelize(cloud_of(points, labels=[2, 1, 2]), GridConfig())
        self.assertEqual(next(iter(grid)).label, 2)

    def test_empty_cloud_gives_empty_grid(self):
        grid = voxelize(PointCloud.empty(), GridConfig())
        self.assertEqual(len(grid), 0)
        self.assertEqual(grid.accepted_points, 0)

    def test_all_points_dropped_gives_empty_grid(self):
        config = GridConfig(out_of_range=OutOfRangePolicy.DROP)
        grid = voxelize(cloud_of([(80.0, 0.0, 0.0, 0.0), (1.0, 0.0, 9.0, 0.0)]), config)
        self.assertEqual(len(grid), 0)
        self.assertEqual(grid.dropped_points, 2)

    def test_partition_property(self):
        cloud = small_scene()
        far = cloud_of([(60.0, 0.0, -1.0, 0.0), (0.0, 70.0, 5.0, 0.0)], labels=[1, 1])
        merged = PointCloud.from_records(np.concatenate([cloud.features, far.features]),
                                         np.concatenate([cloud.labels, far.labels]))
        clamp = voxelize(merged, GridConfig())
        drop = voxelize(merged, GridConfig(out_of_range=OutOfRangePolicy.DROP))
        self.assertEqual(clamp.base.point_count, len(merged))
        self.assertEqual(drop.base.point_count, len(merged) - drop.dropped_points)
        self.assertGreaterEqual(drop.dropped_points, 2)

    def test_totals_do_not_depend_on_scheme(self):
        cloud = small_scene()
        totals = {
            voxelize(cloud, GridConfig(scheme=scheme)).base.point_count
            for scheme in (Uniform(), API(), GPI())
        }
        self.assertEqual(totals, {len(cloud)})

    def test_features_are_member_maxima(self):
        cloud = small_scene()
        config = GridConfig()
        grid = voxelize(cloud, config)
        idx = point_indices(cloud, config)
        expected = {}
        for key, feature in zip(map(tuple, idx.tolist()), cloud.features):
            expected[key] = feature if key not in expected else np.maximum(expected[key], feature)
        self.assertEqual(len(grid), len(expected))
        for record in grid:
            np.testing.assert_array_equal(record.feature, expected[tuple(record.index)])

    def test_point_order_does_not_matter(self):
        cloud = small_scene()
        order = np.random.default_rng(1).permutation(len(cloud))
        shuffled = PointCloud.from_records(cloud.features[order], cloud.labels[order])
        a = voxelize(cloud, GridConfig())
        b = voxelize(shuffled, GridConfig())
        np.testing.assert_array_equal(a.base.keys, b.base.keys)
        np.testing.assert_array_equal(a.base.counts, b.base.counts)
        np.testing.assert_array_equal(a.base.features, b.base.features)
        np.testing.assert_array_equal(a.base.labels, b.base.labels)

    def test_identical_across_worker_counts(self):
        cloud = generate_synthetic(SynthesisSpec(azimuth_samples=16384, seed=11))
        self.assertGreater(len(cloud), 900_000)
        grids = []
        for workers in (1, 2, 8):
            start = time.perf_counter()
            grids.append(voxelize(cloud, GridConfig(), workers=workers))
            self.assertLess(time.perf_counter() - start, 2.0)
        first = grids[0]
        for other in grids[1:]:
            np.testing.assert_array_equal(first.base.keys, other.base.keys)
            np.testing.assert_array_equal(first.base.counts, other.base.counts)
            np.testing.assert_array_equal(first.base.features, other.base.features)
            np.testing.assert_array_equal(first.base.labels, other.base.labels)

    def test_lookup_of_empty_voxel_and_bad_index(self):
        grid = voxelize(cloud_of([(3.0, 1.0, -1.0, 0.25)]), GridConfig())
        self.assertIsNone(grid.lookup(100, 0, 0))
        with self.assertRaises(GridIndexError):
            grid.lookup(0, 360, 0)


class MultiScaleTests(unittest.TestCase):
    def setUp(self):
        self.cloud = small_scene()
        self.config = GridConfig(scales=2)

    def test_single_scale_matches_voxelize(self):
        a = multiscale_voxelize(self.cloud, GridConfig())
        b = voxelize(self.cloud, GridConfig())
        self.assertEqual(len(a.levels), 1)
        np.testing.assert_array_equal(a.base.keys, b.base.keys)
        np.testing.assert_array_equal(a.base.features, b.base.features)

    def test_coarse_index_is_fine_index_shifted(self):
        fine = point_indices(self.cloud, self.config)
        coarse = point_indices(self.cloud, self.config, scale=1)
        np.testing.assert_array_equal(coarse, fine >> 1)
        r = self.cloud.radii()
        direct = radial_indices(boundaries_for_scale(self.config, 1), r, OutOfRangePolicy.CLAMP)
        np.testing.assert_array_equal(direct, fine[:, 0] >> 1)

    def test_coarse_features_are_maxima_over_children(self):
        grid = multiscale_voxelize(self.cloud, self.config)
        level = grid.level(1)
        self.assertEqual(level.shape, (60, 180, 16))
        self.assertEqual(level.point_count, len(self.cloud))
        idx = point_indices(self.cloud, self.config, scale=1)
        expected = {}
        for key, feature in zip(map(tuple, idx.tolist()), self.cloud.features):
            expected[key] = feature if key not in expected else np.maximum(expected[key], feature)
        self.assertEqual(len(level), len(expected))
        for record in level:
            np.testing.assert_array_equal(record.feature, expected[tuple(record.index)])

    def test_coarse_labels_follow_majority(self):
        grid = multiscale_voxelize(self.cloud, self.config)
        modes = brute_force_modes(self.cloud, self.config, scale=1)
        for record in grid.level(1):
            self.assertEqual(record.label, modes[tuple(record.index)])

    def test_concatenated_features_broadcast_ancestors(self):
        grid = multiscale_voxelize(self.cloud, self.config)
        features = concatenated_features(grid)
        self.assertEqual(features.shape, (len(grid), 8))
        np.testing.assert_array_equal(features[:, :4], grid.base.features)
        for row, record in enumerate(grid):
            parent = grid.lookup(*(v >> 1 for v in record.index), scale=1)
            np.testing.assert_array_equal(features[row, 4:], parent.feature)
            self.assertTrue(np.all(features[row, 4:] >= features[row, :4]))

    def test_non_api_scheme_is_rejected(self):
        with self.assertRaises(UnsupportedSchemeError):
            multiscale_voxelize(self.cloud, GridConfig(scheme=Uniform()))
        with self.assertRaises(UnsupportedSchemeError):
            voxelize(self.cloud, GridConfig(scheme=Uniform(), scales=2))


class DecodeLabelsTests(unittest.TestCase):
    def test_single_class_cloud_round_trips(self):
        cloud = small_scene()
        single = cloud.with_labels(np.full(len(cloud), 7))
        decoded = decode_labels(voxelize(single, GridConfig()), single)
        np.testing.assert_array_equal(decoded, single.labels)

    def test_mixed_voxel_decodes_to_majority(self):
        cloud = cloud_of([(5.0, 0.0, -1.0, 0.0)] * 3, labels=[1, 1, 2])
        decoded = decode_labels(voxelize(cloud, GridConfig()), cloud)
        np.testing.assert_array_equal(decoded, [1, 1, 1])

    def test_matches_brute_force_modes(self):
        cloud = small_scene(seed=9)
        config = GridConfig()
        decoded = decode_labels(voxelize(cloud, config), cloud)
        modes = brute_force_modes(cloud, config)
        idx = point_indices(cloud, config)
        expected = [modes[tuple(key)] for key in idx.tolist()]
        np.testing.assert_array_equal(decoded, expected)
        self.assertGreater(np.count_nonzero(decoded != cloud.labels), 0)

    def test_decoded_labels_are_stable(self):
        cloud = small_scene()
        config = GridConfig()
        grid = voxelize(cloud, config)
        again = voxelize(cloud.with_labels(decode_labels(grid, cloud)), config)
        np.testing.assert_array_equal(again.base.labels, grid.base.labels)

    def test_dropped_points_decode_to_minus_one(self):
        config = GridConfig(out_of_range=OutOfRangePolicy.DROP)
        cloud = cloud_of([(5.0, 0.0, -1.0, 0.0), (90.0, 0.0, -1.0, 0.0)], labels=[3, 4])
        decoded = decode_labels(voxelize(cloud, config), cloud)
        np.testing.assert_array_equal(decoded, [3, -1])

    def test_coarse_scale_decoding(self):
        cloud = small_scene()
        config = GridConfig(scales=2)
        decoded = decode_labels(voxelize(cloud, config), cloud, scale=1)
        modes = brute_force_modes(cloud, config, scale=1)
        idx = point_indices(cloud, config, scale=1)
        np.testing.assert_array_equal(decoded, [modes[tuple(k)] for k in idx.tolist()])

    def test_grid_from_another_cloud_is_rejected(self):
        cloud = small_scene()
        grid = voxelize(cloud, GridConfig())
        other = PointCloud.from_records(cloud.features[:-5], cloud.labels[:-5])
        with self.assertRaises(GridMismatchError):
            decode_labels(grid, other)

    def test_unlabelled_grid(self):
        cloud = cloud_of([(5.0, 0.0, -1.0, 0.0)])
        with self.assertRaises(UnlabeledCloudError):
            decode_labels(voxelize(cloud, GridConfig()), cloud)


if __name__ == "__main__":
    unittest.main()
