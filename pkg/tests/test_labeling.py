import math
import unittest
from dataclasses import replace

import numpy as np

from pyradet.labeling import (BivariateParams, LabelConfig, TargetMaps, augment, bivariate_from_spectrum,
                              build_targets, flip_annotation, flip_frame, flip_targets, heading_from_trajectory,
                              heading_targets, heatmap_targets, label_frame, offset_targets, render_bivariate,
                              render_plain_gaussian, truncation_factor)
from pyradet.scene import Annotation, RadarGeometry, SceneObject, render_frame


def make_annotation(center, heading=0.0, class_id=0, box=None):
    r, a = center
    box = box or (int(r) - 5, int(a) - 5, int(r) + 5, int(a) + 5)
    return Annotation(class_id=class_id, center_bin=(float(r), float(a)), box_ra=box,
                      box_rd=(box[0], 0, box[2], 15), heading_rad=heading)


class TestBivariateFromSpectrum(unittest.TestCase):

    def test_single_bin(self):
        ra = np.zeros((32, 32))
        ra[10, 12] = 3.0
        params = bivariate_from_spectrum(ra, (5, 5, 15, 20))
        self.assertEqual(params.mu, (10.0, 12.0))
        self.assertEqual(params.sigma, (0.5, 0.5))
        self.assertEqual(params.rho, 0.0)

    def test_symmetric_blob_has_no_correlation(self):
        blob = render_bivariate(BivariateParams((16, 16), (2.0, 3.0), 0.0), (32, 32))
        params = bivariate_from_spectrum(blob, (6, 6, 26, 26))
        self.assertAlmostEqual(params.rho, 0.0, delta=1e-6)
        self.assertAlmostEqual(params.mu[0], 16.0, places=9)
        self.assertAlmostEqual(params.mu[1], 16.0, places=9)

    def test_recovers_elliptical_spread(self):
        blob = render_bivariate(BivariateParams((32, 32), (2.0, 3.5), 0.0), (64, 64))
        params = bivariate_from_spectrum(blob, (20, 16, 44, 48), truncation_correction=True)
        self.assertLess(abs(params.sigma[0] - 2.0) / 2.0, 0.15)
        self.assertLess(abs(params.sigma[1] - 3.5) / 3.5, 0.15)

    def test_correction_widens_sigma(self):
        blob = render_bivariate(BivariateParams((32, 32), (3.0, 3.0), 0.0), (64, 64))
        raw = bivariate_from_spectrum(blob, (16, 16, 48, 48), truncation_correction=False)
        corrected = bivariate_from_spectrum(blob, (16, 16, 48, 48), truncation_correction=True)
        ratio = (raw.sigma[0] / corrected.sigma[0]) ** 2
        self.assertAlmostEqual(ratio, truncation_factor(0.5), places=12)

    def test_rendered_scene_mean(self):
        geometry = RadarGeometry()
        car = SceneObject.of_class(2, (25.3, 0.11))
        frame, (ann,) = render_frame([car], geometry, noise_sigma=0.0)
        params = bivariate_from_spectrum(frame.ra, ann.box_ra)
        self.assertLess(abs(params.mu[0] - ann.center_bin[0]), 0.5)
        self.assertLess(abs(params.mu[1] - ann.center_bin[1]), 0.5)

    def test_random_blobs_round_trip(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            mu = tuple(rng.uniform(20.0, 44.0, 2))
            sigma = tuple(rng.uniform(2.5, 4.0, 2))
            rho = float(rng.uniform(-0.4, 0.4))
            blob = render_bivariate(BivariateParams(mu, sigma, rho), (64, 64), cutoff_sigma=10.0)
            box = tuple(int(v) for v in (max(0, mu[0] - 4 * sigma[0]), max(0, mu[1] - 4 * sigma[1]),
                                         min(63, mu[0] + 4 * sigma[0]), min(63, mu[1] + 4 * sigma[1])))
            with self.subTest(trial=trial, mu=mu, sigma=sigma, rho=rho):
                params = bivariate_from_spectrum(blob, box, truncation_correction=True)
                self.assertLess(abs(params.mu[0] - mu[0]), 0.5)
                self.assertLess(abs(params.mu[1] - mu[1]), 0.5)
                self.assertLess(abs(params.sigma[0] - sigma[0]) / sigma[0], 0.15)
                self.assertLess(abs(params.sigma[1] - sigma[1]) / sigma[1], 0.15)
                self.assertAlmostEqual(params.rho, rho, delta=0.15)

    def test_all_masked_falls_back(self):
        ra = np.zeros((16, 16))
        ra[4, 4] = 1.0
        with self.assertWarns(UserWarning):
            params = bivariate_from_spectrum(ra, (2, 2, 6, 8), mask_threshold=1.5)
        self.assertEqual(params.mu, (4.0, 5.0))
        self.assertEqual(params.sigma, (0.5, 0.5))

    def test_empty_box(self):
        with self.assertRaises(ValueError):
            bivariate_from_spectrum(np.ones((8, 8)), (5, 5, 4, 6))


class TestRenderHeatmaps(unittest.TestCase):

    def test_peak_at_rounded_mean(self):
        values = render_bivariate(BivariateParams((10.3, 20.7), (2.0, 3.0), 0.4), (32, 32))
        self.assertEqual(np.unravel_index(np.argmax(values), values.shape), (10, 21))

    def test_isotropic_symmetry(self):
        values = render_bivariate(BivariateParams((16, 16), (2.5, 2.5), 0.0), (32, 32))
        for k in range(1, 5):
            self.assertAlmostEqual(values[16 + k, 16], values[16, 16 + k], delta=1e-12)
            self.assertAlmostEqual(values[16 - k, 16], values[16, 16 - k], delta=1e-12)

    def test_density_integrates_to_one(self):
        params = BivariateParams((32, 32), (3.0, 2.5), 0.3)
        density = render_bivariate(params, (64, 64), cutoff_sigma=20.0, normalize=False)
        self.assertAlmostEqual(density.sum(), 1.0, delta=0.02)

    def test_plain_gaussian(self):
        plain = render_plain_gaussian((16, 16), (64, 64))
        same = render_bivariate(BivariateParams((16, 16), (2.0, 2.0), 0.0), (64, 64))
        np.testing.assert_array_equal(plain, same)
        self.assertEqual(plain[16, 16], 1.0)
        self.assertAlmostEqual(plain[18, 16], math.exp(-0.5), delta=1e-12)

    def test_heatmap_cells_in_unit_interval(self):
        annotations = [make_annotation((20.2, 30.6)), make_annotation((22.0, 33.0), class_id=0)]
        config = LabelConfig(label_mode='gaussian')
        heatmap = heatmap_targets(annotations, (64, 64), config)
        self.assertTrue(np.all((heatmap >= 0) & (heatmap <= 1)))
        self.assertEqual(heatmap[0, 20, 31], 1.0)
        self.assertEqual(heatmap[0, 22, 33], 1.0)
        self.assertFalse(np.any(heatmap[1:]))


class TestOffsetTargets(unittest.TestCase):

    def test_integer_center(self):
        offset, mask = offset_targets([make_annotation((20, 20))], (64, 64))
        np.testing.assert_array_equal(offset[:, 20, 20], [0.0, 0.0])
        self.assertEqual(offset[0, 16, 20], 1.0)
        self.assertEqual(mask.sum(), 81)

    def test_half_bin_center(self):
        offset, mask = offset_targets([make_annotation((10.5, 20.0))], (64, 64))
        self.assertEqual(offset[0, 10, 20], 0.125)
        self.assertEqual(offset[1, 10, 20], 0.0)
        self.assertEqual(mask[10, 20], 1.0)

    def test_decoding_identity(self):
        mu = (30.25, 17.75)
        offset, mask = offset_targets([make_annotation(mu)], (64, 64))
        cells = np.argwhere(mask > 0)
        self.assertGreater(len(cells), 0)
        for p_r, p_a in cells:
            self.assertAlmostEqual(p_r + 4 * offset[0, p_r, p_a], mu[0], places=12)
            self.assertAlmostEqual(p_a + 4 * offset[1, p_r, p_a], mu[1], places=12)
        self.assertTrue(np.all(np.abs(offset) <= 1.0))

    def test_nearest_center_wins(self):
        offset, _ = offset_targets([make_annotation((20, 20)), make_annotation((20, 26))], (64, 64))
        np.testing.assert_array_equal(offset[:, 20, 22], [0.0, -0.5])
        np.testing.assert_array_equal(offset[:, 20, 24], [0.0, 0.5])

    def test_clipped_at_edges(self):
        _, mask = offset_targets([make_annotation((0, 0), box=(0, 0, 4, 4))], (64, 64))
        self.assertEqual(mask.sum(), 25)


class TestHeadingTargets(unittest.TestCase):

    def _cells(self, heading):
        values, mask = heading_targets([make_annotation((32, 32), heading=heading)], (64, 64))
        return values[:, mask > 0], mask

    def test_forward(self):
        values, mask = self._cells(0.0)
        self.assertEqual(mask.sum(), 9)
        np.testing.assert_array_equal(values[0], 0.0)
        np.testing.assert_array_equal(values[1], 1.0)

    def test_backward(self):
        values, _ = self._cells(math.pi)
        np.testing.assert_allclose(values[0], 0.0, atol=1e-15)
        np.testing.assert_array_equal(values[1], -1.0)

    def test_diagonal(self):
        values, _ = self._cells(math.pi / 4)
        np.testing.assert_allclose(values, math.sqrt(2) / 2, atol=1e-12)
        np.testing.assert_allclose((values ** 2).sum(axis=0), 1.0, atol=1e-12)

    def test_patch_location(self):
        _, mask = heading_targets([make_annotation((33.0, 13.0))], (64, 64))
        rows, cols = np.nonzero(mask)
        self.assertEqual((rows.min(), rows.max()), (7, 9))
        self.assertEqual((cols.min(), cols.max()), (2, 4))

    def test_indivisible_shape(self):
        with self.assertRaises(ValueError):
            heading_targets([], (30, 64))


class TestHeadingFromTrajectory(unittest.TestCase):

    def test_straight_ahead(self):
        headings = heading_from_trajectory([(0.0, 0.0, 0.0), (1.0, 0.0, 1.0), (2.0, 0.0, 2.0)])
        np.testing.assert_allclose(headings, 0.0, atol=1e-12)

    def test_two_points(self):
        self.assertEqual(heading_from_trajectory([(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)]), [math.pi / 4] * 2)

    def test_circle_is_monotonic(self):
        t = np.linspace(0.0, math.pi, 9)
        headings = heading_from_trajectory(list(zip(t, np.cos(t), np.sin(t))))
        steps = np.diff(np.unwrap(headings))
        self.assertTrue(np.all(steps < 0))

    def test_duplicate_timestamps(self):
        with self.assertRaisesRegex(ValueError, 'duplicate'):
            heading_from_trajectory([(0.0, 0.0, 0.0), (0.0, 1.0, 1.0), (1.0, 2.0, 2.0)])

    def test_too_few_samples(self):
        with self.assertRaises(ValueError):
            heading_from_trajectory([(0.0, 0.0, 0.0)])


class TestAugmentation(unittest.TestCase):

    def setUp(self):
        self.geometry = RadarGeometry()
        objects = [SceneObject.of_class(2, (25.0, 0.3), vel=(2.0, 4.0)),
                   SceneObject.of_class(0, (12.5, -0.4), vel=(0.0, 1.0))]
        self.frame, annotations = render_frame(objects, self.geometry, noise_sigma=0.0)
        self.targets, self.annotations = label_frame(self.frame, annotations)

    def assertTargetsEqual(self, first, second):
        for name in TargetMaps.ARRAYS:
            np.testing.assert_array_equal(getattr(first, name), getattr(second, name))

    def test_flip_is_involution(self):
        twice = flip_frame(flip_frame(self.frame))
        np.testing.assert_array_equal(twice.ra, self.frame.ra)
        np.testing.assert_array_equal(twice.ad, self.frame.ad)
        self.assertTargetsEqual(flip_targets(flip_targets(self.targets)), self.targets)
        for ann in self.annotations:
            twice = flip_annotation(flip_annotation(ann, 64), 64)
            self.assertAlmostEqual(twice.center_bin[1], ann.center_bin[1], places=12)
            self.assertEqual(twice.box_ra, ann.box_ra)
            self.assertEqual(twice.heading_rad, ann.heading_rad)
            self.assertEqual(twice.rho, ann.rho)

    def test_flip_mirrors_azimuth(self):
        a_bin = self.geometry.azimuth_to_bin(math.radians(30.0))
        ann = make_annotation((32.0, a_bin), heading=0.0)
        flipped = flip_annotation(ann, self.geometry.a_bins)
        self.assertAlmostEqual(self.geometry.bin_to_azimuth(flipped.center_bin[1]), math.radians(-30.0), places=12)
        self.assertEqual(flipped.heading_rad, 0.0)

    def test_labels_commute_with_flip(self):
        annotations = [make_annotation((40.0, 20.0), heading=0.5, class_id=2),
                       make_annotation((16.0, 45.0), heading=-2.0, class_id=1)]
        annotations = [replace(ann, sigma=(2.0, 3.0), rho=0.2) for ann in annotations]
        direct = build_targets([flip_annotation(a, 64) for a in annotations], (64, 64))
        mirrored = flip_targets(build_targets(annotations, (64, 64)))
        self.assertTargetsEqual(direct, mirrored)
    def assertTargetsIdentical(self, first, second):
        for name in TargetMaps.ARRAYS:
            self.assertEqual(getattr(first, name).tobytes(), getattr(second, name).tobytes(), name)

    def test_fractional_centers_commute_with_flip(self):
        for center in ((20.3, 3.5), (20.3, 3.3), (47.9, 60.5), (8.125, 31.75)):
            for mode in ('gaussian', 'bivariate'):
                with self.subTest(center=center, mode=mode):
                    ann = replace(make_annotation(center, heading=2.4, class_id=1), sigma=(2.2, 1.7), rho=0.35)
                    config = LabelConfig(label_mode=mode)
                    direct = build_targets([flip_annotation(ann, 64)], (64, 64), config)
                    mirrored = flip_targets(build_targets([ann], (64, 64), config))
                    self.assertTargetsIdentical(direct, mirrored)

    def test_rendered_scenes_commute_with_flip(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            objects = [SceneObject.of_class(int(rng.integers(3)), (rng.uniform(6.0, 45.0), rng.uniform(-1.2, 1.2)),
                                            vel=tuple(rng.uniform(-3.0, 3.0, 2)), track_id=k)
                       for k in range(int(rng.integers(1, 4)))]
            frame, annotations = render_frame(objects, self.geometry, noise_sigma=0.0)
            with self.subTest(trial=trial):
                targets, _ = label_frame(frame, annotations)
                direct, _ = label_frame(flip_frame(frame), [flip_annotation(a, 64) for a in annotations])
                self.assertTargetsIdentical(direct, flip_targets(targets))
                gaussian = LabelConfig(label_mode='gaussian')
                self.assertTargetsIdentical(
                    build_targets([flip_annotation(a, 64) for a in annotations], (64, 64), gaussian),
                    flip_targets(build_targets(annotations, (64, 64), gaussian)))

    def test_flip_negates_measured_correlation(self):
        for ann in self.annotations:
            params = bivariate_from_spectrum(self.frame.ra, ann.box_ra)
            flipped = bivariate_from_spectrum(flip_frame(self.frame).ra, flip_annotation(ann, 64).box_ra)
            self.assertEqual(flipped.sigma, params.sigma)
            self.assertEqual(flipped.rho, -params.rho)


    def test_augment_without_changes(self):
        config = LabelConfig(noise_prob=0.0, flip_prob=0.0)
        frame, targets, annotations = augment(self.frame, self.targets, self.annotations,
                                              np.random.default_rng(0), config)
        np.testing.assert_array_equal(frame.ra, self.frame.ra)
        self.assertTargetsEqual(targets, self.targets)
        self.assertEqual(annotations, self.annotations)

    def test_augment_always_flips_stack(self):
        config = LabelConfig(noise_prob=0.0, flip_prob=1.0)
        stack, targets, _ = augment([self.frame, self.frame], self.targets, self.annotations,
                                    np.random.default_rng(0), config)
        self.assertEqual(len(stack), 2)
        np.testing.assert_array_equal(stack[1].ra, self.frame.ra[:, ::-1])
        self.assertTargetsEqual(targets, flip_targets(self.targets))

    def test_noise_is_non_negative(self):
        config = LabelConfig(noise_prob=1.0, flip_prob=0.0)
        frame, _, _ = augment(self.frame, self.targets, self.annotations, np.random.default_rng(1), config)
        self.assertTrue(np.all(frame.ra >= 0))
        self.assertFalse(np.array_equal(frame.ra, self.frame.ra))


if __name__ == '__main__':
    unittest.main()
