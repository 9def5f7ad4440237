# dataset.py - PyRaDet Dataset Interface
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
Access to a dataset directory written by scene.generate_dataset.

Usage:
    from pyradet import RadarDataset

    with RadarDataset('data/desk') as ds:
        ds.info()
        ds.write_targets()
        for frame, targets, annotations in ds.split('train'):
            ...
"""

import os
import warnings
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import pandas as pd
from tqdm import tqdm

from . import processors
from .labeling import LabelConfig, TargetMaps, label_frame
from .metadata import CLASS_NAMES
from .scene import Annotation, RadarFrame, RadarGeometry

SPLITS = ('train', 'val', 'test')

# Target arrays cached next to the frame files
TARGET_SUFFIXES = {
    'heatmap': 'hm',
    'offset': 'off',
    'offset_mask': 'offmask',
    'heading': 'hd',
    'heading_mask': 'hdmask',
}


@dataclass
class FrameRecord:
    """Manifest entry of one frame."""
    id: str
    sequence_id: str
    frame_index: int
    position: int
    files: Dict[str, str]
    checksums: Dict[str, str]
    annotations: List[dict]
    targets: Optional[Dict[str, str]] = None


class DatasetSplit:
    """
    Lazy, indexable view of the frames of one split.

    Items are (RadarFrame, TargetMaps or None, list of Annotation) and are read
    from disk on access.
    """

    def __init__(self, dataset, name, records):
        self.dataset = dataset
        self.name = name
        self.records = records

    def __len__(self):
        return len(self.records)

    def __getitem__(self, index):
        record = self.records[index]
        return self.dataset.load_frame(record), self.dataset.load_targets(record), \
            self.dataset.load_annotations(record)

    def __iter__(self):
        for index in range(len(self.records)):
            yield self[index]

    def __repr__(self):
        return f"DatasetSplit('{self.name}', {len(self)} frames)"


class RadarDataset:
    """
    Interface to an on-disk radar dataset: manifest, raw maps and cached targets.

    Args:
        path: Dataset directory containing manifest.json
        verbose: Whether to print progress messages

    Raises:
        FileNotFoundError: If the directory or its manifest is missing
        ValueError: If the manifest is invalid
    """

    def __init__(self, path, verbose=True):
        if not os.path.isdir(path):
            raise FileNotFoundError(f'Dataset directory not found: {path}')
        self.path = path
        self.verbose = verbose
        self._load_manifest()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def _load_manifest(self):
        self.manifest = processors.read_manifest(self.path)
        self.geometry = RadarGeometry.from_dict(self.manifest['geometry'])
        self.shapes = processors.view_shapes(self.geometry)
        self.sequences = {}
        self.records = {}
        for sequence in self.manifest['sequences']:
            frames = []
            for position, entry in enumerate(sequence['frames']):
                record = FrameRecord(
                    id=entry['id'],
                    sequence_id=sequence['id'],
                    frame_index=int(entry.get('frame_index', position)),
                    position=position,
                    files=entry['files'],
                    checksums=entry.get('checksums', {}),
                    annotations=entry['annotations'],
                    targets=entry.get('targets'),
                )
                frames.append(record)
                self.records[record.id] = record
            self.sequences[sequence['id']] = frames
        self.splits = {name: list(self.manifest['splits'].get(name, [])) for name in SPLITS}

    @property
    def is_labelled(self):
        return bool(self.records) and all(r.targets is not None for r in self.records.values())

    @property
    def label_config(self):
        values = self.manifest.get('labeling')
        return LabelConfig.from_dict(values) if values else None

    @property
    def frames_per_sequence(self):
        return min((len(frames) for frames in self.sequences.values()), default=0)

    def split(self, name):
        """
        Frames of a split in manifest order.

        Raises:
            ValueError: If the split name is unknown
        """
        if name not in self.splits:
            raise ValueError(f"Unknown split '{name}'. Available: {list(self.splits)}")
        records = [record for seq_id in self.splits[name] for record in self.sequences[seq_id]]
        return DatasetSplit(self, name, records)

    def iter_frames(self, split=None):
        """Iterate (RadarFrame, TargetMaps or None, annotations) over a split or the whole dataset."""
        if split is not None:
            yield from self.split(split)
            return
        for frames in self.sequences.values():
            for record in frames:
                yield self.load_frame(record), self.load_targets(record), self.load_annotations(record)

    def _record(self, record):
        if isinstance(record, FrameRecord):
            return record
        if record not in self.records:
            raise ValueError(f"Unknown frame id '{record}'")
        return self.records[record]

    def load_frame(self, record):
        """Read the RA, RD and AD maps of a frame."""
        record = self._record(record)
        views = {
            view: processors.read_f32(os.path.join(self.path, record.files[view]), self.shapes[view], record.id)
            for view in processors.FRAME_VIEWS
        }
        return RadarFrame(geometry=self.geometry, frame_index=record.frame_index, **views)

    def load_annotations(self, record):
        record = self._record(record)
        try:
            return [Annotation.from_dict(entry) for entry in record.annotations]
        except (KeyError, TypeError) as e:
            raise ValueError(f"Frame '{record.id}': malformed annotation ({e})") from e

    def _target_shapes(self):
        r_bins, a_bins = self.geometry.r_bins, self.geometry.a_bins
        return {
            'heatmap': (len(CLASS_NAMES), r_bins, a_bins),
            'offset': (2, r_bins, a_bins),
            'offset_mask': (r_bins, a_bins),
            'heading': (2, r_bins // 4, a_bins // 4),
            'heading_mask': (r_bins // 4, a_bins // 4),
        }

    def load_targets(self, record):
        """Cached TargetMaps of a frame, or None before write_targets() ran."""
        record = self._record(record)
        if record.targets is None:
            return None
        shapes = self._target_shapes()
        arrays = {
            name: processors.read_f32(os.path.join(self.path, record.targets[name]), shapes[name], record.id)
            for name in TargetMaps.ARRAYS
        }
        return TargetMaps(**arrays)

    def frame_stack(self, record, t_frames):
        """
        The current frame and its t_frames - 1 predecessors, oldest first.

        Missing predecessors at the start of a sequence repeat its first frame.

        Raises:
            ValueError: If the sequence is shorter than t_frames
        """
        record = self._record(record)
        frames = self.sequences[record.sequence_id]
        if len(frames) < t_frames:
            raise ValueError(f"Sequence '{record.sequence_id}' has {len(frames)} frames, "
                             f'fewer than t_frames={t_frames}')
        positions = [max(0, record.position - offset) for offset in range(t_frames - 1, -1, -1)]
        return [self.load_frame(frames[p]) for p in positions]

    def write_targets(self, config=None):
        """
        Compute target maps for every frame and cache them as .f32 files.

        Annotations in the manifest gain the measured sigma/rho in bivariate mode.

        Args:
            config: LabelConfig (defaults when None)

        Returns:
            Number of frames labelled
        """
        config = (config or LabelConfig()).validate()
        if self.verbose:
            print(f"\nLabelling {len(self.records)} frames ({config.label_mode} heatmaps)...")

        entries = {entry['id']: entry for seq in self.manifest['sequences'] for entry in seq['frames']}
        for record in tqdm(list(self.records.values()), disable=not self.verbose, desc='  frames'):
            frame = self.load_frame(record)
            annotations = [Annotation.from_dict(entry) for entry in record.annotations]
            if config.label_mode == 'bivariate':
                annotations = [replace(a, sigma=None, rho=None) for a in annotations]
            targets, labelled = label_frame(frame, annotations, config)
            files = {}
            checksums = {}
            for name, suffix in TARGET_SUFFIXES.items():
                file_name = f'{record.id}_{suffix}.f32'
                checksums[name] = processors.write_f32(os.path.join(self.path, file_name), getattr(targets, name))
                files[name] = file_name
            entry = entries[record.id]
            entry['targets'] = files
            entry['target_checksums'] = checksums
            entry['annotations'] = [ann.to_dict() for ann in labelled]

        self.manifest['labeling'] = config.to_dict()
        processors.write_manifest(self.path, self.manifest)
        self._load_manifest()
        return len(self.records)

    def verify_checksums(self):
        """
        Recompute SHA256 of every file listed in the manifest.

        Returns:
            List of dicts {frame, file, expected, actual} for mismatches (empty if clean)
        """
        mismatches = []
        entries = [entry for seq in self.manifest['sequences'] for entry in seq['frames']]
        for entry in entries:
            listed = [(entry['files'][v], entry.get('checksums', {}).get(v)) for v in processors.FRAME_VIEWS]
            if 'targets' in entry:
                listed += [(entry['targets'][n], entry.get('target_checksums', {}).get(n)) for n in TargetMaps.ARRAYS]
            for file_name, expected in listed:
                if expected is None:
                    continue
                actual = processors.f32_checksum(os.path.join(self.path, file_name))
                if actual != expected:
                    mismatches.append({'frame': entry['id'], 'file': file_name,
                                       'expected': expected, 'actual': actual})
        if mismatches:
            warnings.warn(f'{len(mismatches)} dataset files do not match their manifest checksums', UserWarning)
        return mismatches

    def summary(self):
        """
        Per-split counts of sequences, frames and annotated objects per class.

        Returns:
            DataFrame indexed by split
        """
        rows = []
        for name in SPLITS:
            records = [r for seq_id in self.splits[name] for r in self.sequences[seq_id]]
            row = {'split': name, 'sequences': len(self.splits[name]), 'frames': len(records)}
            for class_id, class_name in enumerate(CLASS_NAMES):
                row[class_name] = sum(1 for r in records for a in r.annotations if a['class_id'] == class_id)
            row['labelled'] = all(r.targets is not None for r in records) if records else False
            rows.append(row)
        return pd.DataFrame(rows).set_index('split')

    def info(self):
        """Print geometry, split sizes and labelling state."""
        g = self.geometry
        print(f'\nDataset: {self.path}')
        print('=' * 60)
        print(f'Geometry: R={g.r_bins} A={g.a_bins} D={g.d_bins}, r_max={g.r_max_m} m, '
              f'fov={g.fov_deg} deg, v_max={g.v_max_mps} m/s')
        print(self.summary().to_string())
        config = self.label_config
        print(f"\nTargets: {config.label_mode if config else 'not written'}")

    def close(self):
        """Release cached state."""
        self.records = {}
        self.sequences = {}


def load_dataset(path, split=None, verbose=False):
    """
    Iterate (RadarFrame, TargetMaps or None, annotations) over a dataset.

    Args:
        path: Dataset directory
        split: 'train', 'val', 'test' or None for every frame
    """
    dataset = RadarDataset(path, verbose=verbose)
    if split is not None:
        return dataset.split(split)
    return dataset.iter_frames()


def write_targets(path, config=None, verbose=True):
    """Label every frame of the dataset at path. Returns the number of frames labelled."""
    with RadarDataset(path, verbose=verbose) as dataset:
        return dataset.write_targets(config)
