# plotting.py - PyRaDet Map and Detection Artifacts
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
Inspectable artifacts for radar maps, target maps and detections.

Maps are written as 8-bit binary PGM (rows = first map axis), heading overlays
as CSV arrow tables, and optionally as a PNG rendered with matplotlib.

Usage:
    from pyradet.plotting import select_map, write_pgm

    with RadarDataset('data/sim') as ds:
        write_pgm('ra.pgm', select_map(ds, 'seq_0000_f00', 'ra'))
"""

import math
import os

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .metadata import CLASS_NAMES, DEFAULTS

MAP_KINDS = ('ra', 'rd', 'ad', 'heatmap', 'offset_mask', 'heading_magnitude')
ARROW_COLUMNS = ['frame_id', 'source', 'class_name', 'r_bin', 'a_bin', 'x_m', 'y_m',
                 'heading_rad', 'dx', 'dy']


def to_uint8(array):
    """
    Min-max scale a 2-D map to 0..255.

    A constant map becomes all zeros.

    Raises:
        ValueError: If the array is not 2-D or holds non-finite values
    """
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 2:
        raise ValueError(f'Expected a 2-D map, got shape {array.shape}')
    if not np.all(np.isfinite(array)):
        raise ValueError('Map contains NaN or Inf values')
    low, high = array.min(), array.max()
    if high == low:
        return np.zeros(array.shape, dtype=np.uint8)
    return np.round((array - low) / (high - low) * 255.0).astype(np.uint8)


def write_pgm(path, array):
    """
    Write a map as binary (P5) 8-bit grayscale PGM.

    Float maps are min-max scaled; uint8 arrays are written as they are.

    Returns:
        The written path
    """
    image = array if getattr(array, 'dtype', None) == np.uint8 else to_uint8(array)
    if image.ndim != 2:
        raise ValueError(f'Expected a 2-D image, got shape {image.shape}')
    height, width = image.shape
    with open(path, 'wb') as f:
        f.write(f'P5\n{width} {height}\n255\n'.encode('ascii'))
        f.write(np.ascontiguousarray(image).tobytes())
    return path


def read_pgm(path):
    """Read a P5 PGM written by write_pgm back into a uint8 array."""
    with open(path, 'rb') as f:
        data = f.read()
    parts = data.split(b'\n', 3)
    if len(parts) < 4 or parts[0] != b'P5':
        raise ValueError(f'{path} is not a binary PGM file')
    width, height = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f'{path}: expected {width * height} pixels, found {pixels.size}')
    return pixels.reshape(height, width)


def select_map(dataset, frame_id, kind, class_id=0):
    """
    Pick one 2-D map of a dataset frame.

    Args:
        dataset: RadarDataset
        frame_id: Frame id from the manifest
        kind: One of MAP_KINDS
        class_id: Heatmap channel for kind='heatmap'

    Raises:
        ValueError: For an unknown kind, or a target kind on an unlabelled frame
    """
    if kind not in MAP_KINDS:
        raise ValueError(f"Unknown map kind '{kind}'. Choose from {list(MAP_KINDS)}")
    if kind in ('ra', 'rd', 'ad'):
        return getattr(dataset.load_frame(frame_id), kind)

    targets = dataset.load_targets(frame_id)
    if targets is None:
        raise ValueError(f"Frame '{frame_id}' has no target maps; run the label step first")
    if kind == 'heatmap':
        if not 0 <= class_id < len(CLASS_NAMES):
            raise ValueError(f'class_id must be in [0, {len(CLASS_NAMES) - 1}], got {class_id}')
        return targets.heatmap[class_id]
    if kind == 'offset_mask':
        return targets.offset_mask
    return np.hypot(targets.heading[0], targets.heading[1])


def overlay_detections(array, detections, scale=1, size=2):
    """
    Draw a '+' marker per detection on top of a map.

    Args:
        array: 2-D map (float or uint8)
        detections: Detection list; markers go to round(pos_bins / scale)
        scale: Bins per map cell (4 for heading-resolution maps)
        size: Marker arm length in cells

    Returns:
        uint8 image; markers are 255 and the map is dimmed to 0..191
    """
    base = array if getattr(array, 'dtype', None) == np.uint8 else to_uint8(array)
    image = (base.astype(np.uint16) * 3 // 4).astype(np.uint8)
    rows, cols = image.shape
    for det in detections:
        r = int(round(det.pos_bins[0] / scale))
        a = int(round(det.pos_bins[1] / scale))
        if not (0 <= r < rows and 0 <= a < cols):
            continue
        image[max(0, r - size):min(rows, r + size + 1), a] = 255
        image[r, max(0, a - size):min(cols, a + size + 1)] = 255
    return image


def heading_arrows(items, geometry, frame_id='', source='detection', length_m=1.0):
    """
    Arrow table for heading overlays.

    Args:
        items: Detections or Annotations
        geometry: RadarGeometry for the Cartesian position
        source: Label written to the 'source' column
        length_m: Arrow length in metres

    Returns:
        DataFrame with ARROW_COLUMNS, (dx, dy) = length * (sin h, cos h); empty without a heading
    """
    rows = []
    for item in items:
        if hasattr(item, 'pos_bins'):
            r_bin, a_bin = item.pos_bins
        else:
            r_bin, a_bin = item.center_bin
        x, y = geometry.bins_to_cartesian(r_bin, a_bin)
        heading = item.heading_rad
        rows.append({
            'frame_id': frame_id,
            'source': source,
            'class_name': CLASS_NAMES[item.class_id],
            'r_bin': float(r_bin),
            'a_bin': float(a_bin),
            'x_m': float(x),
            'y_m': float(y),
            'heading_rad': heading,
            'dx': None if heading is None else length_m * math.sin(heading),
            'dy': None if heading is None else length_m * math.cos(heading),
        })
    return pd.DataFrame(rows, columns=ARROW_COLUMNS)


def write_heading_arrows(path, tables):
    """Concatenate arrow tables and write them as one CSV. Returns the path."""
    tables = [t for t in tables if not t.empty]
    frame = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame(columns=ARROW_COLUMNS)
    frame.to_csv(path, index=False)
    return path


def save_png(path, array, title=None, detections=None, scale=1, figsize=(6, 6), **kwargs):
    """
    Render a map as PNG with matplotlib, optionally marking detections.

    Args:
        path: Output file
        array: 2-D map
        title: Figure title
        detections: Detections to mark (class-coloured)
        scale: Bins per map cell
        **kwargs: cmap, dpi

    Returns:
        The written path
    """
    array = np.asarray(array, dtype=np.float64)
    fig, ax = plt.subplots(figsize=figsize)
    im = ax.imshow(array, origin='lower', aspect='auto', cmap=kwargs.get('cmap', 'viridis'))
    fig.colorbar(im, ax=ax)

    colors = ('tab:red', 'tab:orange', 'white')
    for det in detections or []:
        r, a = det.pos_bins[0] / scale, det.pos_bins[1] / scale
        ax.plot(a, r, marker='+', markersize=12, color=colors[det.class_id % len(colors)])
        if det.heading_rad is not None:
            # azimuth grows with x and range with y near boresight
            ax.arrow(a, r, 2.0 * math.sin(det.heading_rad), 2.0 * math.cos(det.heading_rad),
                     color=colors[det.class_id % len(colors)], head_width=0.8)

    ax.set_xlabel('azimuth bin', fontsize=12, fontweight='bold')
    ax.set_ylabel('first axis bin', fontsize=12, fontweight='bold')
    if title:
        ax.set_title(title, fontsize=14, fontweight='bold')

    plt.tight_layout()
    fig.savefig(path, dpi=kwargs.get('dpi', 150), bbox_inches='tight')
    plt.close(fig)
    return path


def plot_frame(dataset, frame_id, kind, out_dir, class_id=0, detections=None, png=False):
    """
    Write the artifacts of one frame and map kind.

    Produces <frame>_<kind>.pgm, an overlay PGM when detections are given, and
    <frame>_arrows.csv with ground-truth (and detected) headings.

    Returns:
        Dict name -> written path
    """
    os.makedirs(out_dir, exist_ok=True)
    array = select_map(dataset, frame_id, kind, class_id)
    suffix = f'{kind}{class_id}' if kind == 'heatmap' else kind
    stem = os.path.join(out_dir, f'{frame_id}_{suffix}')
    scale = DEFAULTS['labeling']['heading_stride'] if kind == 'heading_magnitude' else 1

    written = {'map': write_pgm(f'{stem}.pgm', array)}
    if detections is not None and kind not in ('rd', 'ad'):
        written['overlay'] = write_pgm(f'{stem}_overlay.pgm', overlay_detections(array, detections, scale))

    tables = [heading_arrows(dataset.load_annotations(frame_id), dataset.geometry, frame_id, 'ground_truth')]
    if detections:
        tables.append(heading_arrows(detections, dataset.geometry, frame_id, 'detection'))
    written['arrows'] = write_heading_arrows(os.path.join(out_dir, f'{frame_id}_arrows.csv'), tables)

    if png:
        marks = detections if kind not in ('rd', 'ad') else None
        written['png'] = save_png(f'{stem}.png', array, title=f'{frame_id} {suffix}', detections=marks, scale=scale)
    return written
