# metadata.py - PyRaDet Defaults and Class Metadata
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
Object classes, simulator presets and module defaults.

Every numeric default used by the pipeline is declared here so that the CLI,
the config file parser and the library functions agree on one value.
"""

import math

# Class ids are positions in this tuple
CLASS_NAMES = ('pedestrian', 'cyclist', 'car')

# Per-class simulator characteristics
# Amplitude ordering follows radar cross section (ped < cyclist < car),
# spreads are (sigma_range, sigma_angle) in bins before range/angle inflation.
CLASS_METADATA = {
    'pedestrian': {
        'class_id': 0,
        'rcs_amp': 0.4,
        'base_spread': (1.0, 1.5),
        'speed_mps': (0.5, 2.0),
        'description': 'Vulnerable road user on foot',
    },
    'cyclist': {
        'class_id': 1,
        'rcs_amp': 0.6,
        'base_spread': (1.5, 2.0),
        'speed_mps': (3.0, 6.0),
        'description': 'Vulnerable road user on a bicycle',
    },
    'car': {
        'class_id': 2,
        'rcs_amp': 1.0,
        'base_spread': (2.0, 3.5),
        'speed_mps': (0.0, 12.0),
        'description': 'Passenger vehicle',
    },
}

# Scene presets. 'doppler' gives every class the same RA signature so that only
# the Doppler views separate them; speed ranges do not overlap.
SCENE_PRESETS = {
    'default': {
        'rcs_amp': {name: meta['rcs_amp'] for name, meta in CLASS_METADATA.items()},
        'base_spread': {name: meta['base_spread'] for name, meta in CLASS_METADATA.items()},
        'speed_mps': {name: meta['speed_mps'] for name, meta in CLASS_METADATA.items()},
    },
    'doppler': {
        'rcs_amp': {name: 0.7 for name in CLASS_NAMES},
        'base_spread': {name: (1.5, 2.5) for name in CLASS_NAMES},
        'speed_mps': {
            'pedestrian': (0.5, 1.5),
            'cyclist': (4.0, 6.0),
            'car': (9.0, 12.0),
        },
    },
}

# Desk-scale defaults grouped by pipeline stage
DEFAULTS = {
    'geometry': {
        'r_bins': 64,
        'a_bins': 64,
        'd_bins': 16,
        'r_max_m': 50.0,
        'fov_deg': 180.0,
        'v_max_mps': 13.0,
    },
    'scene': {
        'noise_sigma': 0.05,
        'dt': 0.1,
        'min_range_m': 5.0,
        'doppler_sigma_bins': 1.0,
        'angle_cos_floor': 0.5,  # caps the 1/cos angular smear at x2
        'frames_per_sequence': 5,
        'n_sequences': 20,
        'class_counts': {'pedestrian': 1, 'cyclist': 1, 'car': 1},
        'preset': 'default',
        'split': (0.7, 0.1, 0.2),
    },
    'labeling': {
        'mask_threshold': 0.5,
        'sigma_min': 0.5,
        'rho_max': 0.99,
        'offset_patch': 9,
        'heading_patch': 3,
        'heading_stride': 4,
        'render_cutoff_sigma': 4.0,
        'plain_sigma_divisor': 32,
        'truncation_correction': True,
        'label_mode': 'bivariate',
        'noise_prob': 0.5,
        'noise_scale': 0.02,
        'flip_prob': 0.5,
    },
    'model': {
        't_frames': 1,
        'enc_channels': (16, 32, 64, 64, 128, 128),
        'enc_strides': (2, 1, 2, 1, 2, 2),
        'doppler_strides': (2, 1, 1, 1, 2, 1),
        'dec_channels': (128, 64, 32, 16),
        'fusion_dim': 128,
        'variant': 'cross_attention',
        'bn_momentum': 0.1,
        'bn_eps': 1e-5,
        'ln_eps': 1e-5,
        'prelu_init': 0.25,
    },
    'losses': {
        'w1': 1.0,
        'w2': 1.0,
        'w3': 1.0,
        'focal_alpha': 2.0,
        'focal_beta': 4.0,
        'offset_gamma': 2.0,
        'offset_variant': 'focal',
        'log_eps': 1e-6,
    },
    'inference': {
        'kernel': 5,
        'score_thresh': 0.1,
        'dnms_radius_m': 1.0,
        'use_offsets': True,
    },
    'metrics': {
        'thresholds_m': (2.0, 1.0),
        'heading_bands_deg': (45.0, 22.5, 11.25),
        'interpolation': 'all_point',
    },
    'training': {
        'batch_size': 16,
        'lr0': 1e-4,
        'plateau_factor': 0.1,
        'plateau_patience': 4,
        'plateau_min_lr': 1e-7,
        'plateau_min_delta': 1e-6,
        'epochs': 80,
        'seed': 0,
        'adam_beta1': 0.9,
        'adam_beta2': 0.999,
        'adam_eps': 1e-8,
    },
}

# Offsets are normalised by the half-width of the offset patch
OFFSET_SCALE = (DEFAULTS['labeling']['offset_patch'] - 1) // 2

# Annotated centers live on this sub-bin lattice, so mirroring a center across
# the angle axis (a -> a_bins - 1 - a) is exact in floating point
BIN_QUANTUM = 2.0 ** -20

HEADING_BANDS_RAD = tuple(math.radians(b) for b in DEFAULTS['metrics']['heading_bands_deg'])

CHECKPOINT_MAGIC = b'PYRADET\x00'
CHECKPOINT_VERSION = 1
