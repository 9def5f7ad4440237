# inference.py - PyRaDet Detection Decoding
# Copyright (C) 2026 PyRaDet contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""
Decode head outputs into detections.

Pipeline per frame: local-maximum peaks per class channel, shift by the
center-offset maps, distance-based NMS in Cartesian metres, then read the
heading maps at each surviving detection.

Usage:
    from pyradet.inference import InferenceConfig, decode_frame

    detections = decode_frame(heatmap, offset, heading, geometry, InferenceConfig())
"""

import math
import warnings
from dataclasses import dataclass, asdict
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import maximum_filter

from . import processors
from .metadata import CLASS_NAMES, DEFAULTS, OFFSET_SCALE
from .scene import snap_bin

_INFER = DEFAULTS['inference']


@dataclass
class Detection:
    """
    One decoded object.

    Attributes:
        class_id: Class channel of the peak
        pos_bins: (r, a) fractional bins after offset correction
        pos_cart: (x, y) metres
        confidence: Heatmap value at the peak
        heading_rad: Decoded heading, None when the heading maps were (0, 0)
    """
    class_id: int
    pos_bins: Tuple[float, float]
    pos_cart: Tuple[float, float]
    confidence: float
    heading_rad: Optional[float] = None

    @property
    def class_name(self):
        return CLASS_NAMES[self.class_id]

    def to_dict(self):
        return {
            'class_id': int(self.class_id),
            'class_name': self.class_name,
            'r_bin': float(self.pos_bins[0]),
            'a_bin': float(self.pos_bins[1]),
            'x_m': float(self.pos_cart[0]),
            'y_m': float(self.pos_cart[1]),
            'confidence': float(self.confidence),
            'heading_rad': None if self.heading_rad is None else float(self.heading_rad),
        }

    @classmethod
    def from_dict(cls, record):
        return cls(
            class_id=int(record['class_id']),
            pos_bins=(float(record['r_bin']), float(record['a_bin'])),
            pos_cart=(float(record['x_m']), float(record['y_m'])),
            confidence=float(record['confidence']),
            heading_rad=record.get('heading_rad'),
        )


@dataclass(frozen=True)
class InferenceConfig:
    kernel: int = _INFER['kernel']
    score_thresh: float = _INFER['score_thresh']
    dnms_radius_m: float = _INFER['dnms_radius_m']
    use_offsets: bool = _INFER['use_offsets']

    def validate(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f'InferenceConfig.kernel must be a positive odd integer, got {self.kernel}')
        if self.dnms_radius_m <= 0:
            raise ValueError(f'InferenceConfig.dnms_radius_m must be positive, got {self.dnms_radius_m}')
        return self

    def to_dict(self):
        return asdict(self)


def detect_peaks(heatmap, kernel=_INFER['kernel'], score_thresh=_INFER['score_thresh']):
    """
    Local maxima of each class channel.

    A cell is a peak when its score exceeds score_thresh and no other cell of its
    kernel x kernel neighbourhood is larger, or equal with a smaller (r, a).

    Args:
        heatmap: [C, R, A] scores
        kernel: Odd neighbourhood size

    Returns:
        List of (class_id, r, a, score) sorted by descending score
    """
    if kernel % 2 == 0:
        raise ValueError(f'detect_peaks: kernel must be odd, got {kernel}')
    heatmap = np.asarray(heatmap, dtype=np.float64)
    half = kernel // 2
    peaks = []
    for class_id in range(heatmap.shape[0]):
        channel = heatmap[class_id]
        local_max = maximum_filter(channel, size=kernel, mode='constant', cval=-np.inf)
        candidates = np.argwhere((channel == local_max) & (channel > score_thresh))
        for r, a in candidates:
            value = channel[r, a]
            window = channel[max(0, r - half):r + half + 1, max(0, a - half):a + half + 1]
            ties = np.argwhere(window == value) + [max(0, r - half), max(0, a - half)]
            if min(map(tuple, ties)) != (r, a):
                continue
            peaks.append((class_id, int(r), int(a), float(value)))
    peaks.sort(key=lambda p: (-p[3], p[0], p[1], p[2]))
    return peaks


def apply_offsets(peaks, offset_maps, scale=OFFSET_SCALE):
    """
    Shift peaks by their decoded offsets: (r, a) -> (r + scale * o_r, a + scale * o_a).

    Args:
        peaks: List of (class_id, r, a, score) with integer cells
        offset_maps: [2, R, A] offsets in [-1, 1]

    Returns:
        List of (class_id, r, a, score) with fractional positions clamped to the map
    """
    offset_maps = np.asarray(offset_maps, dtype=np.float64)
    r_max, a_max = offset_maps.shape[1] - 1, offset_maps.shape[2] - 1
    corrected = []
    for class_id, r, a, score in peaks:
        cell_r, cell_a = int(r), int(a)
        new_r = min(max(r + scale * offset_maps[0, cell_r, cell_a], 0.0), r_max)
        new_a = min(max(a + scale * offset_maps[1, cell_r, cell_a], 0.0), a_max)
        corrected.append((class_id, float(new_r), float(new_a), score))
    return corrected


def dnms(detections, radius_m=_INFER['dnms_radius_m']):
    """
    Distance NMS, greedy by descending confidence, class-agnostic.

    A detection is dropped if it lies closer than radius_m (Cartesian) to one
    already kept.
    """
    if radius_m <= 0:
        raise ValueError(f'dnms: radius must be positive, got {radius_m}')
    kept = []
    for det in sorted(detections, key=lambda d: -d.confidence):
        x, y = det.pos_cart
        if all(math.hypot(x - k.pos_cart[0], y - k.pos_cart[1]) >= radius_m for k in kept):
            kept.append(det)
    return kept


def decode_heading(detection, heading_maps, stride=DEFAULTS['labeling']['heading_stride']):
    """
    Heading at a detection from (sin, cos) maps on the 1/stride grid.

    Returns:
        atan2(s, c), or None with a warning when (s, c) = (0, 0)
    """
    heading_maps = np.asarray(heading_maps, dtype=np.float64)
    shift = (stride - 1) / 2.0
    g_r, g_a = (min(max(snap_bin((pos - shift) / stride, n), 0), n - 1)
                for pos, n in zip(detection.pos_bins, heading_maps.shape[1:]))
    s, c = heading_maps[0, g_r, g_a], heading_maps[1, g_r, g_a]
    if s == 0 and c == 0:
        warnings.warn(f'No heading at cell ({g_r}, {g_a}) for {CLASS_NAMES[detection.class_id]} '
                      f'detection; heading left absent', UserWarning)
        return None
    return math.atan2(s, c)


def decode_frame(heatmap, offset, heading, geometry, config=None):
    """
    Full decode of one frame's maps.

    Args:
        heatmap: [3, R, A] scores
        offset: [2, R, A] offsets already in [-1, 1]
        heading: [2, R/4, A/4] (sin, cos) maps
        geometry: RadarGeometry for the bin to metre conversion
        config: InferenceConfig

    Returns:
        List of Detection sorted by descending confidence
    """
    config = (config or InferenceConfig()).validate()
    peaks = detect_peaks(heatmap, config.kernel, config.score_thresh)
    if config.use_offsets:
        peaks = apply_offsets(peaks, offset)
    detections = []
    for class_id, r, a, score in peaks:
        x, y = geometry.bins_to_cartesian(r, a)
        detections.append(Detection(class_id, (float(r), float(a)), (float(x), float(y)), score))
    kept = dnms(detections, config.dnms_radius_m)
    for det in kept:
        det.heading_rad = decode_heading(det, heading)
    return kept


def decode_offsets(offset_sigmoid):
    """Map sigmoid offset outputs back to [-1, 1]."""
    return 2.0 * np.asarray(offset_sigmoid, dtype=np.float64) - 1.0


def decode_network_output(output, geometry, config=None):
    """Decode an unbatched NetworkOutput of numpy arrays."""
    return decode_frame(output.heatmap, decode_offsets(output.offset), output.heading, geometry, config)


def decode_targets(targets, geometry, config=None):
    """Decode ground-truth TargetMaps as if they were network predictions."""
    return decode_frame(targets.heatmap, targets.offset, targets.heading, geometry, config)


def write_detections(path, frames):
    """
    Write detections as JSON lines.

    Args:
        path: Output file
        frames: Iterable of (frame_id, list of Detection)
    """
    records = []
    for frame_id, detections in frames:
        for det in detections:
            record = det.to_dict()
            record['frame_id'] = frame_id
            records.append(record)
    return processors.write_jsonl(path, records)


def read_detections(path):
    """Read a JSON-lines detection file into {frame_id: [Detection, ...]}."""
    frames = {}
    for record in processors.read_jsonl(path):
        frames.setdefault(record['frame_id'], []).append(Detection.from_dict(record))
    return frames
