# __init__.py - PyRaDet Package
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
PyRaDet - Raw Radar Detection

Object detection and heading estimation from raw range-azimuth,
range-Doppler and azimuth-Doppler radar maps, with a synthetic scene
simulator, bivariate-Gaussian ground truth and a small numpy autograd
engine for training.

Usage:
    from pyradet import generate_dataset, write_targets, train, TrainConfig

    generate_dataset('data/sim', n_sequences=20, seed=7)
    write_targets('data/sim')
    result = train('data/sim', TrainConfig(epochs=20), out_dir='runs/base')
"""

__version__ = '1.0.0'

from .dataset import RadarDataset, load_dataset, write_targets
from .inference import Detection, InferenceConfig, decode_frame
from .labeling import LabelConfig, TargetMaps, label_frame
from .losses import LossWeights, total_loss
from .metadata import CLASS_NAMES, DEFAULTS
from .metrics import EvalReport, evaluate_detections
from .model import Model, ModelConfig, build, load_checkpoint, save_checkpoint
from .scene import Annotation, RadarFrame, RadarGeometry, SceneObject, generate_dataset, render_frame
from .training import TrainConfig, ablate_frames, evaluate, train

__all__ = [
    'RadarDataset',
    'load_dataset',
    'write_targets',
    'Detection',
    'InferenceConfig',
    'decode_frame',
    'LabelConfig',
    'TargetMaps',
    'label_frame',
    'LossWeights',
    'total_loss',
    'CLASS_NAMES',
    'DEFAULTS',
    'EvalReport',
    'evaluate_detections',
    'Model',
    'ModelConfig',
    'build',
    'load_checkpoint',
    'save_checkpoint',
    'Annotation',
    'RadarFrame',
    'RadarGeometry',
    'SceneObject',
    'generate_dataset',
    'render_frame',
    'TrainConfig',
    'ablate_frames',
    'evaluate',
    'train',
]
