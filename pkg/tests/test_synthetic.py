import unittest

import numpy as np

from nucvox.errors import ConfigError
from nucvox.synthetic import SynthesisSpec, annulus_labels, generate_disc, generate_synthetic


class SyntheticSceneTests(unittest.TestCase):
    def test_same_seed_same_bytes(self):
        a = generate_synthetic(SynthesisSpec(seed=7))
        b = generate_synthetic(SynthesisSpec(seed=7))
        self.assertEqual(a.features.tobytes(), b.features.tobytes())
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_different_seeds_differ(self):
        a = generate_synthetic(SynthesisSpec(seed=1, azimuth_samples=64))
        b = generate_synthetic(SynthesisSpec(seed=2, azimuth_samples=64))
        self.assertNotEqual(a.features.tobytes(), b.features.tobytes())

    def test_point_count_scales_with_azimuth_samples(self):
        small = generate_synthetic(SynthesisSpec(azimuth_samples=512, dropout_rate=0.0))
        large = generate_synthetic(SynthesisSpec(azimuth_samples=1024, dropout_rate=0.0))
        self.assertEqual(len(small), 64 * 512)
        self.assertEqual(len(large), 2 * len(small))

    def test_density_falls_off_with_range(self):
        cloud = generate_synthetic(SynthesisSpec())
        r = cloud.radii()
        near = np.count_nonzero(r < 10.0)
        far = np.count_nonzero((r >= 40.0) & (r < 50.0))
        self.assertGreater(far, 0)
        self.assertGreaterEqual(near / far, 10)

    def test_scene_stays_within_range(self):
        spec = SynthesisSpec(azimuth_samples=256)
        cloud = generate_synthetic(spec)
        self.assertLessEqual(cloud.radii().max(), spec.max_range + 1e-4)
        self.assertGreaterEqual(cloud.radii().min(), spec.min_range - 1e-4)
        self.assertEqual(cloud.features.dtype, np.float32)
        self.assertEqual(set(np.unique(cloud.labels)), {1, 2})

    def test_labels_alternate_by_annulus(self):
        spec = SynthesisSpec()
        labels = annulus_labels(np.array([0.0, 1.36, 1.37, 2.8, 4.2]), spec)
        self.assertEqual(labels.tolist(), [1, 1, 2, 1, 2])

    def test_invalid_spec(self):
        for kwargs in (
            {"beam_count": 0},
            {"min_range": 60.0},
            {"dropout_rate": 1.5},
            {"annulus_width": 0.0},
            {"classes": ()},
        ):
            with self.assertRaises(ConfigError):
                SynthesisSpec(**kwargs)


class DiscTests(unittest.TestCase):
    def test_disc_is_flat_and_unlabelled(self):
        cloud = generate_disc(1000, 20.0, seed=3, height=-1.0)
        self.assertEqual(len(cloud), 1000)
        self.assertFalse(cloud.has_labels)
        self.assertTrue(np.all(cloud.xyz[:, 2] == -1.0))
        self.assertLess(cloud.radii().max(), 20.0 + 1e-9)

    def test_area_uniformity(self):
        r = generate_disc(200_000, 10.0, seed=0).radii()
        inner = np.count_nonzero(r < 5.0) / r.size
        self.assertAlmostEqual(inner, 0.25, delta=0.01)

    def test_invalid_disc(self):
        with self.assertRaises(ConfigError):
            generate_disc(10, 0.0)


if __name__ == "__main__":
    unittest.main()
