# scene.py - PyRaDet Synthetic Radar Scenes
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
Synthetic radar scenes: moving point targets rendered into range-angle (RA),
range-Doppler (RD) and angle-Doppler (AD) magnitude maps.

Conventions used project-wide:
    - azimuth a in radians, 0 = boresight, positive toward +x
    - Cartesian x = r*sin(a), y = r*cos(a) (y is downrange)
    - heading theta = atan2(vx, vy), in (-pi, pi]
"""

import math
import os
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from .metadata import BIN_QUANTUM, CLASS_NAMES, DEFAULTS, SCENE_PRESETS
from . import processors


# ==================== Domain Types ====================

@dataclass(frozen=True)
class RadarGeometry:
    """
    Bin layout of the three radar views.

    Range bin b sits at b * range_res metres. Azimuth bin b is centered on
    -fov/2 + (b + 0.5) * angle_res, so bins b and a_bins-1-b lie at opposite
    azimuths. Doppler bin 0 sits at -v_max and bin d_bins-1 at +v_max.
    """
    r_bins: int = DEFAULTS['geometry']['r_bins']
    a_bins: int = DEFAULTS['geometry']['a_bins']
    d_bins: int = DEFAULTS['geometry']['d_bins']
    r_max_m: float = DEFAULTS['geometry']['r_max_m']
    fov_deg: float = DEFAULTS['geometry']['fov_deg']
    v_max_mps: float = DEFAULTS['geometry']['v_max_mps']

    def validate(self):
        for name in ('r_bins', 'a_bins', 'd_bins'):
            if int(getattr(self, name)) < 8:
                raise ValueError(f'RadarGeometry.{name} must be >= 8, got {getattr(self, name)}')
        if self.r_max_m <= 0 or self.fov_deg <= 0 or self.v_max_mps <= 0:
            raise ValueError('RadarGeometry: r_max_m, fov_deg and v_max_mps must be positive')
        return self

    @property
    def range_res(self):
        return self.r_max_m / self.r_bins

    @property
    def angle_res(self):
        return math.radians(self.fov_deg) / self.a_bins

    @property
    def half_fov(self):
        return math.radians(self.fov_deg) / 2.0

    @property
    def max_range_m(self):
        return (self.r_bins - 1) * self.range_res

    @property
    def max_azimuth_rad(self):
        return self.half_fov - 0.5 * self.angle_res

    @property
    def ra_shape(self):
        return (self.r_bins, self.a_bins)

    @property
    def heading_shape(self):
        return (self.r_bins // 4, self.a_bins // 4)

    def range_to_bin(self, range_m):
        return range_m / self.range_res

    def bin_to_range(self, bin_r):
        return bin_r * self.range_res

    def azimuth_to_bin(self, azimuth_rad):
        return (azimuth_rad + self.half_fov) / self.angle_res - 0.5

    def bin_to_azimuth(self, bin_a):
        return (bin_a + 0.5) * self.angle_res - self.half_fov

    def velocity_to_bin(self, v_mps):
        return (v_mps + self.v_max_mps) / (2.0 * self.v_max_mps) * (self.d_bins - 1)

    def bins_to_cartesian(self, bin_r, bin_a):
        return polar_to_cartesian(self.bin_to_range(bin_r), self.bin_to_azimuth(bin_a))

    def to_dict(self):
        return {
            'r_bins': int(self.r_bins), 'a_bins': int(self.a_bins), 'd_bins': int(self.d_bins),
            'r_max_m': float(self.r_max_m), 'fov_deg': float(self.fov_deg), 'v_max_mps': float(self.v_max_mps),
        }

    @classmethod
    def from_dict(cls, values):
        return cls(**{key: values[key] for key in cls().to_dict() if key in values}).validate()


@dataclass(frozen=True)
class SceneObject:
    """
    One point target.

    Attributes:
        class_id: 0 pedestrian, 1 cyclist, 2 car
        pos: (range m, azimuth rad)
        vel: (vx, vy) m/s in Cartesian bird's-eye view
        rcs_amp: Peak magnitude of the rendered blob
        base_spread: (sigma_r, sigma_a) in bins before range/angle inflation
        track_id: Identity kept across frames of a sequence
    """
    class_id: int
    pos: Tuple[float, float]
    vel: Tuple[float, float] = (0.0, 0.0)
    rcs_amp: float = 1.0
    base_spread: Tuple[float, float] = (2.0, 3.5)
    track_id: int = 0

    @classmethod
    def of_class(cls, class_id, pos, vel=(0.0, 0.0), preset='default', track_id=0):
        """Create an object with the class defaults of a scene preset."""
        name = CLASS_NAMES[class_id]
        values = SCENE_PRESETS[preset]
        return cls(class_id=class_id, pos=tuple(pos), vel=tuple(vel),
                   rcs_amp=values['rcs_amp'][name], base_spread=tuple(values['base_spread'][name]),
                   track_id=track_id)

    @property
    def heading_rad(self):
        vx, vy = self.vel
        return math.atan2(vx, vy)

    def radial_velocity(self):
        vx, vy = self.vel
        azimuth = self.pos[1]
        return vx * math.sin(azimuth) + vy * math.cos(azimuth)


@dataclass
class RadarFrame:
    """The RA, RD and AD magnitude maps of one capture."""
    ra: np.ndarray
    rd: np.ndarray
    ad: np.ndarray
    geometry: RadarGeometry
    frame_index: int = 0

    def validate(self):
        g = self.geometry
        expected = {'ra': (g.r_bins, g.a_bins), 'rd': (g.r_bins, g.d_bins), 'ad': (g.a_bins, g.d_bins)}
        for name, shape in expected.items():
            values = getattr(self, name)
            if values.shape != shape:
                raise ValueError(f'RadarFrame.{name} has shape {values.shape}, expected {shape}')
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise ValueError(f'RadarFrame.{name} must be finite and non-negative')
        return self


@dataclass
class Annotation:
    """
    Ground truth of one object in one frame.

    center_bin is (mu_r, mu_a) in fractional bins; boxes are inclusive bin
    rectangles [r0, a0, r1, a1] (RA) and [r0, d0, r1, d1] (RD). sigma / rho are
    filled in by bivariate labelling and stay None until then.
    """
    class_id: int
    center_bin: Tuple[float, float]
    box_ra: Tuple[int, int, int, int]
    box_rd: Tuple[int, int, int, int]
    heading_rad: float
    track_id: int = 0
    doppler_bin: float = 0.0
    sigma: Optional[Tuple[float, float]] = None
    rho: Optional[float] = None

    def to_dict(self):
        record = {
            'class_id': int(self.class_id),
            'center_bin_r': float(self.center_bin[0]),
            'center_bin_a': float(self.center_bin[1]),
            'box_ra': [int(v) for v in self.box_ra],
            'box_rd': [int(v) for v in self.box_rd],
            'heading_rad': float(self.heading_rad),
            'track_id': int(self.track_id),
            'doppler_bin': float(self.doppler_bin),
        }
        if self.sigma is not None:
            record['sigma_r'] = float(self.sigma[0])
            record['sigma_a'] = float(self.sigma[1])
            record['rho'] = float(self.rho if self.rho is not None else 0.0)
        return record

    @classmethod
    def from_dict(cls, record):
        sigma = None
        if 'sigma_r' in record:
            sigma = (float(record['sigma_r']), float(record['sigma_a']))
        return cls(
            class_id=int(record['class_id']),
            center_bin=(float(record['center_bin_r']), float(record['center_bin_a'])),
            box_ra=tuple(int(v) for v in record['box_ra']),
            box_rd=tuple(int(v) for v in record['box_rd']),
            heading_rad=float(record['heading_rad']),
            track_id=int(record.get('track_id', 0)),
            doppler_bin=float(record.get('doppler_bin', 0.0)),
            sigma=sigma,
            rho=float(record['rho']) if 'rho' in record else None,
        )

    def cartesian(self, geometry):
        return geometry.bins_to_cartesian(self.center_bin[0], self.center_bin[1])


# ==================== Geometry Helpers ====================

def polar_to_cartesian(range_m, azimuth_rad):
    """
    Convert (range, azimuth) to bird's-eye-view (x, y).

    Args:
        range_m: Range in metres (>= 0), scalar or array
        azimuth_rad: Azimuth in radians, 0 = downrange

    Returns:
        Tuple (x, y) with x = r*sin(a), y = r*cos(a)
    """
    return range_m * np.sin(azimuth_rad), range_m * np.cos(azimuth_rad)


def cartesian_to_polar(x, y):
    """Inverse of polar_to_cartesian: returns (range, azimuth)."""
    return np.hypot(x, y), np.arctan2(x, y)


def wrap_angle(theta):
    """Wrap an angle into (-pi, pi]; angles already inside are returned unchanged."""
    if -math.pi < theta <= math.pi:
        return float(theta)
    if theta == -math.pi:
        return math.pi
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    return math.pi if wrapped == -math.pi else wrapped


def quantize_bin(value):
    """Round a fractional bin position to the BIN_QUANTUM lattice."""
    return round(value / BIN_QUANTUM) * BIN_QUANTUM


def snap_bin(value, n_bins):
    """
    Nearest bin index on an axis of n_bins, ties broken away from the axis center.

    Mirror-consistent: snap_bin(n_bins - 1 - x, n) == n - 1 - snap_bin(x, n) for
    every lattice x except the exact center of an even-length axis.

    Example:
        >>> snap_bin(10.5, 64), snap_bin(52.5, 64)
        (10, 53)
    """
    if 2.0 * value >= n_bins - 1:
        return int(math.floor(value + 0.5))
    return int(math.ceil(value - 0.5))


def _out_of_bounds(obj, geometry, min_range_m):
    range_m, azimuth = obj.pos
    return (range_m < min_range_m or range_m > geometry.max_range_m
            or abs(azimuth) > geometry.max_azimuth_rad)


# ==================== Rendering ====================

def _blob(axis_a, mu_a, sigma_a, axis_b, mu_b, sigma_b):
    return np.exp(-0.5 * (((axis_a - mu_a) / sigma_a) ** 2 + ((axis_b - mu_b) / sigma_b) ** 2))


def _box(mu_a, sigma_a, size_a, mu_b, sigma_b, size_b):
    return (
        max(0, int(math.floor(mu_a - 3.0 * sigma_a))),
        max(0, int(math.floor(mu_b - 3.0 * sigma_b))),
        min(size_a - 1, int(math.ceil(mu_a + 3.0 * sigma_a))),
        min(size_b - 1, int(math.ceil(mu_b + 3.0 * sigma_b))),
    )


def effective_spread(obj, geometry, angle_cos_floor=DEFAULTS['scene']['angle_cos_floor']):
    """
    Range/angle spread of an object's RA blob in bins.

    The range spread grows linearly with range, the angular spread with
    1/cos(azimuth) capped at 1/angle_cos_floor.
    """
    range_m, azimuth = obj.pos
    sigma_r = obj.base_spread[0] * (1.0 + range_m / geometry.r_max_m)
    sigma_a = obj.base_spread[1] / max(math.cos(azimuth), angle_cos_floor)
    return sigma_r, sigma_a


def render_frame(scene, geometry, noise_sigma=DEFAULTS['scene']['noise_sigma'], rng_seed=None,
                 frame_index=0, doppler_sigma=DEFAULTS['scene']['doppler_sigma_bins'],
                 min_range_m=DEFAULTS['scene']['min_range_m'],
                 angle_cos_floor=DEFAULTS['scene']['angle_cos_floor']):
    """
    Render the three magnitude views of a scene.

    Each object contributes an anisotropic Gaussian blob to every view, placed at
    its range bin, azimuth bin and the Doppler bin of its radial velocity.
    Half-normal noise of scale noise_sigma is added afterwards.

    Args:
        scene: List of SceneObject
        geometry: RadarGeometry
        noise_sigma: Scale of the additive half-normal noise (0 disables it)
        rng_seed: Seed or numpy Generator for the noise
        frame_index: Stored on the returned frame

    Returns:
        Tuple (RadarFrame, list of Annotation) with annotations in scene order

    Raises:
        ValueError: If any object lies outside the geometry bounds
    """
    geometry.validate()
    outside = [obj for obj in scene if _out_of_bounds(obj, geometry, min_range_m)]
    if outside:
        listing = ', '.join(f'(class {o.class_id}, track {o.track_id}, range {o.pos[0]:.2f} m, '
                            f'azimuth {math.degrees(o.pos[1]):.2f} deg)' for o in outside)
        raise ValueError(f'render_frame: objects out of bounds: {listing}')

    r_axis = np.arange(geometry.r_bins, dtype=np.float64)[:, None]
    a_axis = np.arange(geometry.a_bins, dtype=np.float64)[None, :]
    d_axis = np.arange(geometry.d_bins, dtype=np.float64)[None, :]
    a_column = np.arange(geometry.a_bins, dtype=np.float64)[:, None]

    ra = np.zeros(geometry.ra_shape)
    rd = np.zeros((geometry.r_bins, geometry.d_bins))
    ad = np.zeros((geometry.a_bins, geometry.d_bins))
    annotations = []

    for obj in scene:
        range_m, azimuth = obj.pos
        mu_r = quantize_bin(geometry.range_to_bin(range_m))
        mu_a = quantize_bin(geometry.azimuth_to_bin(azimuth))
        v_radial = float(np.clip(obj.radial_velocity(), -geometry.v_max_mps, geometry.v_max_mps))
        mu_d = geometry.velocity_to_bin(v_radial)
        sigma_r, sigma_a = effective_spread(obj, geometry, angle_cos_floor)

        ra += obj.rcs_amp * _blob(r_axis, mu_r, sigma_r, a_axis, mu_a, sigma_a)
        rd += obj.rcs_amp * _blob(r_axis, mu_r, sigma_r, d_axis, mu_d, doppler_sigma)
        ad += obj.rcs_amp * _blob(a_column, mu_a, sigma_a, d_axis, mu_d, doppler_sigma)

        annotations.append(Annotation(
            class_id=obj.class_id,
            center_bin=(float(mu_r), float(mu_a)),
            box_ra=_box(mu_r, sigma_r, geometry.r_bins, mu_a, sigma_a, geometry.a_bins),
            box_rd=_box(mu_r, sigma_r, geometry.r_bins, mu_d, doppler_sigma, geometry.d_bins),
            heading_rad=wrap_angle(obj.heading_rad),
            track_id=obj.track_id,
            doppler_bin=float(mu_d),
        ))

    if noise_sigma > 0:
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        ra += np.abs(rng.normal(0.0, noise_sigma, ra.shape))
        rd += np.abs(rng.normal(0.0, noise_sigma, rd.shape))
        ad += np.abs(rng.normal(0.0, noise_sigma, ad.shape))

    frame = RadarFrame(ra=ra, rd=rd, ad=ad, geometry=geometry, frame_index=frame_index)
    return frame, annotations


# ==================== Motion ====================

def advance_scene(scene, dt=DEFAULTS['scene']['dt'], geometry=None,
                  min_range_m=DEFAULTS['scene']['min_range_m'], verbose=False):
    """
    Move every object with constant velocity for dt seconds.

    Positions are updated in Cartesian coordinates and re-projected to polar.
    When a geometry is given, objects that leave its bounds are dropped.

    Args:
        scene: List of SceneObject
        dt: Time step in seconds (> 0)
        geometry: Optional RadarGeometry used for the bounds check

    Returns:
        New list of SceneObject
    """
    if dt <= 0:
        raise ValueError(f'advance_scene: dt must be positive, got {dt}')
    moved = []
    for obj in scene:
        x, y = polar_to_cartesian(obj.pos[0], obj.pos[1])
        x += obj.vel[0] * dt
        y += obj.vel[1] * dt
        range_m, azimuth = cartesian_to_polar(x, y)
        updated = replace(obj, pos=(float(range_m), float(azimuth)))
        if geometry is not None and _out_of_bounds(updated, geometry, min_range_m):
            message = (f'Track {obj.track_id} (class {obj.class_id}) left the field of view '
                       f'at range {float(range_m):.2f} m, azimuth {math.degrees(azimuth):.2f} deg; dropped')
            warnings.warn(message, UserWarning)
            if verbose:
                print(f'    {message}')
            continue
        moved.append(updated)
    return moved


def random_scene(class_counts, geometry, rng, preset=DEFAULTS['scene']['preset'],
                 min_range_m=DEFAULTS['scene']['min_range_m']):
    """
    Draw a scene with the requested number of objects per class.

    Args:
        class_counts: Dict class name -> count
        geometry: RadarGeometry
        rng: numpy Generator
        preset: Key of SCENE_PRESETS

    Returns:
        List of SceneObject with sequential track ids
    """
    if preset not in SCENE_PRESETS:
        raise ValueError(f"Unknown scene preset '{preset}'. Available: {sorted(SCENE_PRESETS)}")
    speeds = SCENE_PRESETS[preset]['speed_mps']
    scene = []
    for name in CLASS_NAMES:
        for _ in range(int(class_counts.get(name, 0))):
            range_m = rng.uniform(min_range_m + 2.0, 0.85 * geometry.max_range_m)
            azimuth = rng.uniform(-0.7 * geometry.half_fov, 0.7 * geometry.half_fov)
            speed = rng.uniform(*speeds[name])
            direction = rng.uniform(-math.pi, math.pi)
            scene.append(SceneObject.of_class(
                CLASS_NAMES.index(name), (range_m, azimuth),
                (speed * math.sin(direction), speed * math.cos(direction)),
                preset=preset, track_id=len(scene)))
    return scene


# ==================== Dataset Generation ====================

def split_sequences(n_sequences, seed, fractions=DEFAULTS['scene']['split']):
    """
    Deterministic train/val/test split of sequence indices.

    Returns:
        Dict with 'train', 'val', 'test' lists of indices (each sorted)
    """
    order = np.random.default_rng(seed).permutation(n_sequences)
    n_train = int(round(fractions[0] * n_sequences))
    n_val = int(round(fractions[1] * n_sequences))
    return {
        'train': sorted(int(i) for i in order[:n_train]),
        'val': sorted(int(i) for i in order[n_train:n_train + n_val]),
        'test': sorted(int(i) for i in order[n_train + n_val:]),
    }


def generate_dataset(path, class_counts=None, frames_per_sequence=DEFAULTS['scene']['frames_per_sequence'],
                     n_sequences=DEFAULTS['scene']['n_sequences'], geometry=None,
                     seed=0, noise_sigma=DEFAULTS['scene']['noise_sigma'], dt=DEFAULTS['scene']['dt'],
                     preset=DEFAULTS['scene']['preset'], verbose=True):
    """
    Simulate sequences of frames and write them in the on-disk dataset format.

    Each sequence gets its own seed derived from the master seed. Headings in the
    written annotations come from a spline through each track's positions.

    Args:
        path: Output directory (created if missing)
        class_counts: Dict class name -> objects per scene
        frames_per_sequence: Frames per sequence (T_max)
        n_sequences: Number of sequences (>= 10)
        geometry: RadarGeometry (desk-scale default when None)
        seed: Master seed
        noise_sigma: Half-normal noise scale
        dt: Time between frames in seconds
        preset: Scene preset name
        verbose: Whether to print progress messages

    Returns:
        Path of the written dataset directory

    Raises:
        ValueError: If n_sequences < 10
        OSError: If the directory cannot be written
    """
    from .labeling import heading_from_trajectory

    if n_sequences < 10:
        raise ValueError(f'generate_dataset needs at least 10 sequences, got {n_sequences}')
    if frames_per_sequence < 1:
        raise ValueError(f'generate_dataset: frames_per_sequence must be >= 1, got {frames_per_sequence}')
    geometry = (geometry or RadarGeometry()).validate()
    class_counts = dict(class_counts or DEFAULTS['scene']['class_counts'])
    unknown = set(class_counts) - set(CLASS_NAMES)
    if unknown:
        raise ValueError(f'Unknown classes in class_counts: {sorted(unknown)}')

    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OSError(f'Cannot create dataset directory {path}: {e}') from e
    if not os.access(path, os.W_OK):
        raise OSError(f'Dataset directory {path} is not writable')

    if verbose:
        print(f'\nSimulating {n_sequences} sequences x {frames_per_sequence} frames into {path}...')

    sequence_seeds = np.random.SeedSequence(seed).spawn(n_sequences)
    sequences = []
    for seq_index in tqdm(range(n_sequences), disable=not verbose, desc='  sequences'):
        rng = np.random.default_rng(sequence_seeds[seq_index])
        scene = random_scene(class_counts, geometry, rng, preset=preset)
        seq_id = f'seq_{seq_index:04d}'
        frame_records = []
        frame_annotations = []
        tracks = {}
        for k in range(frames_per_sequence):
            frame, annotations = render_frame(scene, geometry, noise_sigma=noise_sigma, rng_seed=rng,
                                              frame_index=k)
            for obj in scene:
                x, y = polar_to_cartesian(obj.pos[0], obj.pos[1])
                tracks.setdefault(obj.track_id, []).append((k * dt, float(x), float(y)))
            frame_id = f'{seq_id}_f{k:02d}'
            files, checksums = processors.write_frame_files(path, frame_id, frame)
            frame_records.append({'id': frame_id, 'frame_index': k, 'files': files, 'checksums': checksums})
            frame_annotations.append(annotations)
            if k + 1 < frames_per_sequence:
                scene = advance_scene(scene, dt, geometry)

        track_headings = {}
        for track_id, samples in tracks.items():
            if len(samples) >= 2:
                track_headings[track_id] = dict(zip((s[0] for s in samples), heading_from_trajectory(samples)))
        for k, (record, annotations) in enumerate(zip(frame_records, frame_annotations)):
            for ann in annotations:
                if ann.track_id in track_headings:
                    ann.heading_rad = wrap_angle(track_headings[ann.track_id][k * dt])
            record['annotations'] = [ann.to_dict() for ann in annotations]
        sequences.append({'id': seq_id, 'frames': frame_records})

    split_indices = split_sequences(n_sequences, seed)
    manifest = {
        'format_version': processors.MANIFEST_VERSION,
        'geometry': geometry.to_dict(),
        'generator': {
            'seed': int(seed), 'preset': preset, 'noise_sigma': float(noise_sigma), 'dt': float(dt),
            'frames_per_sequence': int(frames_per_sequence), 'n_sequences': int(n_sequences),
            'class_counts': {name: int(class_counts.get(name, 0)) for name in CLASS_NAMES},
        },
        'splits': {name: [sequences[i]['id'] for i in indices] for name, indices in split_indices.items()},
        'sequences': sequences,
    }
    processors.write_manifest(path, manifest)

    if verbose:
        counts = {name: len(ids) for name, ids in manifest['splits'].items()}
        print(f"  Split: {counts['train']} train / {counts['val']} val / {counts['test']} test sequences")
    return path
