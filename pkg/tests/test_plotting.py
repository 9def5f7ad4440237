import math
import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from pyradet.dataset import RadarDataset, write_targets
from pyradet.inference import Detection
from pyradet.plotting import (heading_arrows, overlay_detections, plot_frame, read_pgm, select_map, to_uint8,
                              write_pgm)
from pyradet.scene import RadarGeometry, generate_dataset


class TestImages(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_to_uint8(self):
        image = to_uint8(np.array([[0.0, 0.5], [1.0, 2.0]]))
        np.testing.assert_array_equal(image, [[0, 64], [128, 255]])
        self.assertFalse(np.any(to_uint8(np.full((3, 3), 7.0))))

    def test_to_uint8_rejects_bad_maps(self):
        with self.assertRaises(ValueError):
            to_uint8(np.zeros((2, 2, 2)))
        with self.assertRaises(ValueError):
            to_uint8(np.array([[0.0, np.nan]]))

    def test_pgm_header_and_pixels(self):
        path = os.path.join(self.test_dir, 'map.pgm')
        values = np.arange(12, dtype=np.float64).reshape(3, 4)
        write_pgm(path, values)
        with open(path, 'rb') as f:
            self.assertTrue(f.read().startswith(b'P5\n4 3\n255\n'))
        np.testing.assert_array_equal(read_pgm(path), to_uint8(values))

    def test_overlay_marks_detections(self):
        det = Detection(0, (8.0, 12.0), (0.0, 0.0), 0.9)
        image = overlay_detections(np.zeros((16, 16)) + np.eye(16), [det])
        self.assertEqual(image[8, 12], 255)
        self.assertEqual(image[6, 12], 255)
        self.assertEqual(image[8, 14], 255)
        self.assertEqual(image[0, 0], 191)
        quarter = overlay_detections(np.zeros((4, 4)), [det], scale=4, size=0)
        self.assertEqual(quarter[2, 3], 255)

    def test_arrow_direction(self):
        det = Detection(2, (32.0, 32.0), (0.0, 25.0), 0.9, heading_rad=math.pi / 2)
        table = heading_arrows([det], RadarGeometry(), 'f0', length_m=2.0)
        self.assertAlmostEqual(table.loc[0, 'dx'], 2.0)
        self.assertAlmostEqual(table.loc[0, 'dy'], 0.0)
        self.assertAlmostEqual(table.loc[0, 'y_m'], 25.0)


class TestPlotFrame(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, 'sim')
        generate_dataset(self.path, class_counts={'car': 1}, frames_per_sequence=1, n_sequences=10, seed=2,
                         verbose=False)
        self.dataset = RadarDataset(self.path, verbose=False)
        self.frame_id = self.dataset.split('test').records[0].id
        self.out_dir = os.path.join(self.test_dir, 'plots')

    def tearDown(self):
        self.dataset.close()
        shutil.rmtree(self.test_dir)

    def test_raw_view(self):
        written = plot_frame(self.dataset, self.frame_id, 'rd', self.out_dir)
        self.assertEqual(os.path.basename(written['map']), f'{self.frame_id}_rd.pgm')
        self.assertEqual(read_pgm(written['map']).shape, (64, 16))
        arrows = pd.read_csv(written['arrows'])
        self.assertEqual(list(arrows['source']), ['ground_truth'])

    def test_target_kind_needs_labels(self):
        with self.assertRaisesRegex(ValueError, 'label'):
            select_map(self.dataset, self.frame_id, 'heatmap')

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            select_map(self.dataset, self.frame_id, 'velocity')

    def test_heatmap_with_detections(self):
        write_targets(self.path, verbose=False)
        dataset = RadarDataset(self.path, verbose=False)
        ann = dataset.load_annotations(self.frame_id)[0]
        det = Detection(ann.class_id, ann.center_bin, (0.0, 0.0), 0.8, heading_rad=ann.heading_rad)
        written = plot_frame(dataset, self.frame_id, 'heatmap', self.out_dir, class_id=2, detections=[det], png=True)
        self.assertEqual(os.path.basename(written['map']), f'{self.frame_id}_heatmap2.pgm')
        self.assertTrue(os.path.exists(written['overlay']))
        self.assertTrue(os.path.exists(written['png']))
        arrows = pd.read_csv(written['arrows'])
        self.assertEqual(sorted(arrows['source']), ['detection', 'ground_truth'])

    def test_heading_magnitude(self):
        write_targets(self.path, verbose=False)
        dataset = RadarDataset(self.path, verbose=False)
        magnitude = select_map(dataset, self.frame_id, 'heading_magnitude')
        self.assertEqual(magnitude.shape, (16, 16))
        np.testing.assert_allclose(magnitude[magnitude > 0], 1.0, atol=1e-6)


if __name__ == '__main__':
    unittest.main()
