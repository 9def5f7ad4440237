import math
import os
import shutil
import tempfile
import unittest

import numpy as np

from pyradet.inference import (Detection, InferenceConfig, apply_offsets, decode_frame, decode_heading,
                               decode_offsets, decode_targets, detect_peaks, dnms, read_detections,
                               write_detections)
from pyradet.labeling import heading_targets, label_frame
from pyradet.scene import Annotation, RadarGeometry, SceneObject, render_frame


def detection_at(x, y, confidence, class_id=0):
    return Detection(class_id=class_id, pos_bins=(0.0, 0.0), pos_cart=(x, y), confidence=confidence)


def exhaustive_suppression(detections, radius_m):
    """Indices kept by suppressing, in descending confidence, every neighbour of each survivor."""
    xy = np.array([d.pos_cart for d in detections], dtype=np.float64).reshape(-1, 2)
    distance = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    suppressed = np.zeros(len(detections), dtype=bool)
    kept = []
    for i in sorted(range(len(detections)), key=lambda k: -detections[k].confidence):
        if suppressed[i]:
            continue
        kept.append(i)
        suppressed |= distance[i] < radius_m
    return kept


class TestDetectPeaks(unittest.TestCase):

    def test_single_peak(self):
        heatmap = np.zeros((3, 16, 16))
        heatmap[1, 5, 7] = 0.8
        heatmap[1, 5, 8] = 0.4
        self.assertEqual(detect_peaks(heatmap), [(1, 5, 7, 0.8)])

    def test_threshold(self):
        heatmap = np.zeros((3, 16, 16))
        heatmap[0, 3, 3] = 0.1
        self.assertEqual(detect_peaks(heatmap, score_thresh=0.1), [])

    def test_plateau_keeps_smallest_cell(self):
        heatmap = np.zeros((1, 8, 8))
        heatmap[0, 4, 4] = 0.6
        heatmap[0, 4, 5] = 0.6
        heatmap[0, 5, 4] = 0.6
        self.assertEqual(detect_peaks(heatmap), [(0, 4, 4, 0.6)])

    def test_separated_peaks_sorted(self):
        heatmap = np.zeros((3, 32, 32))
        heatmap[0, 4, 4] = 0.5
        heatmap[2, 20, 20] = 0.9
        heatmap[0, 4, 10] = 0.7
        peaks = detect_peaks(heatmap, kernel=5)
        self.assertEqual([p[3] for p in peaks], [0.9, 0.7, 0.5])

    def test_even_kernel(self):
        with self.assertRaises(ValueError):
            detect_peaks(np.zeros((1, 4, 4)), kernel=4)


class TestOffsetsAndNms(unittest.TestCase):

    def test_apply_offsets(self):
        offsets = np.zeros((2, 16, 16))
        offsets[:, 8, 8] = (0.125, -0.25)
        (corrected,) = apply_offsets([(0, 8, 8, 0.9)], offsets)
        self.assertEqual(corrected, (0, 8.5, 7.0, 0.9))

    def test_apply_offsets_clamps(self):
        offsets = np.zeros((2, 16, 16))
        offsets[:, 0, 15] = (-1.0, 1.0)
        (corrected,) = apply_offsets([(0, 0, 15, 0.9)], offsets)
        self.assertEqual(corrected[1:3], (0.0, 15.0))

    def test_decode_offsets(self):
        np.testing.assert_array_equal(decode_offsets(np.array([0.0, 0.5, 1.0])), [-1.0, 0.0, 1.0])

    def test_dnms_keeps_strongest(self):
        kept = dnms([detection_at(0.0, 10.0, 0.5), detection_at(0.5, 10.0, 0.9), detection_at(3.0, 10.0, 0.4)], 1.0)
        self.assertEqual([d.confidence for d in kept], [0.9, 0.4])

    def test_dnms_against_brute_force(self):
        rng = np.random.default_rng(0)
        detections = [detection_at(x, y, c) for x, y, c in zip(rng.uniform(0, 5, 40), rng.uniform(0, 5, 40),
                                                                 rng.random(40))]
        kept = dnms(detections, 1.0)
        for i, first in enumerate(kept):
            for second in kept[i + 1:]:
                self.assertGreaterEqual(math.dist(first.pos_cart, second.pos_cart), 1.0)
        for det in detections:
            if det in kept:
                continue
            self.assertTrue(any(math.dist(det.pos_cart, k.pos_cart) < 1.0 and k.confidence >= det.confidence
                                for k in kept))

    def test_dnms_matches_exhaustive_suppression(self):
        rng = np.random.default_rng(2026)
        for trial in range(200):
            detections = [detection_at(x, y, c, class_id=int(k)) for x, y, c, k in
                          zip(rng.uniform(-4, 4, 20), rng.uniform(0, 8, 20), rng.random(20), rng.integers(0, 3, 20))]
            with self.subTest(trial=trial):
                kept = [id(d) for d in dnms(detections, 1.0)]
                self.assertEqual(kept, [id(detections[i]) for i in exhaustive_suppression(detections, 1.0)])

    def test_dnms_bad_radius(self):
        with self.assertRaises(ValueError):
            dnms([], 0.0)


class TestDecodeHeading(unittest.TestCase):

    def setUp(self):
        self.detection = Detection(0, (9.0, 5.0), (0.0, 0.0), 0.9)

    def _maps(self, s, c):
        maps = np.zeros((2, 4, 4))
        maps[:, 2, 1] = (s, c)
        return maps

    def test_values(self):
        self.assertEqual(decode_heading(self.detection, self._maps(0.0, 1.0)), 0.0)
        self.assertEqual(decode_heading(self.detection, self._maps(0.0, -1.0)), math.pi)
        self.assertEqual(decode_heading(self.detection, self._maps(1.0, 0.0)), math.pi / 2)

    def test_reads_the_labelled_cell(self):
        rng = np.random.default_rng(9)
        for mu_r, mu_a, heading in zip(rng.uniform(0, 63.99, 50), rng.uniform(0, 63.99, 50),
                                       rng.uniform(-3.0, 3.0, 50)):
            ann = Annotation(class_id=0, center_bin=(mu_r, mu_a), box_ra=(0, 0, 63, 63), box_rd=(0, 0, 63, 15),
                             heading_rad=heading)
            maps, _ = heading_targets([ann], (64, 64))
            decoded = decode_heading(Detection(0, (mu_r, mu_a), (0.0, 0.0), 0.9), maps)
            self.assertAlmostEqual(decoded, heading, places=12)

    def test_missing_heading_warns(self):
        with self.assertWarns(UserWarning):
            self.assertIsNone(decode_heading(self.detection, np.zeros((2, 4, 4))))


class TestDecodeFrame(unittest.TestCase):

    def setUp(self):
        self.geometry = RadarGeometry()
        objects = [SceneObject.of_class(2, (30.0, 0.4), vel=(1.0, 2.0)),
                   SceneObject.of_class(0, (12.0, -0.6), vel=(0.0, -1.0))]
        self.frame, annotations = render_frame(objects, self.geometry, noise_sigma=0.0)
        self.targets, self.annotations = label_frame(self.frame, annotations)

    def test_ground_truth_round_trip(self):
        detections = decode_targets(self.targets, self.geometry)
        self.assertEqual(len(detections), 2)
        for ann in self.annotations:
            match = [d for d in detections if d.class_id == ann.class_id]
            self.assertEqual(len(match), 1)
            det = match[0]
            self.assertAlmostEqual(det.pos_bins[0], ann.center_bin[0], places=9)
            self.assertAlmostEqual(det.pos_bins[1], ann.center_bin[1], places=9)
            self.assertEqual(det.confidence, 1.0)
            self.assertAlmostEqual(det.heading_rad, ann.heading_rad, places=12)

    def test_without_offsets_lands_on_cells(self):
        config = InferenceConfig(use_offsets=False)
        for det in decode_targets(self.targets, self.geometry, config):
            self.assertEqual(det.pos_bins, (round(det.pos_bins[0]), round(det.pos_bins[1])))

    def test_empty_maps(self):
        detections = decode_frame(np.zeros((3, 64, 64)), np.zeros((2, 64, 64)), np.zeros((2, 16, 16)),
                                  self.geometry)
        self.assertEqual(detections, [])


class TestDetectionFiles(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_write_and_read(self):
        path = os.path.join(self.test_dir, 'detections.jsonl')
        first = Detection(2, (10.5, 30.25), (1.5, 7.0), 0.8, heading_rad=0.3)
        second = Detection(0, (4.0, 40.0), (-2.0, 3.0), 0.6)
        write_detections(path, [('seq_0000_f00', [first, second]), ('seq_0001_f00', [])])
        frames = read_detections(path)
        self.assertEqual(list(frames), ['seq_0000_f00'])
        self.assertEqual(frames['seq_0000_f00'], [first, second])


if __name__ == '__main__':
    unittest.main()
