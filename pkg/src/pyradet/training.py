# training.py - PyRaDet Training and Evaluation
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
Training loop, split evaluation and the frame-count ablation.

Training follows a fixed recipe: Adam, learning rate reduced on a validation
loss plateau, noise/flip augmentation on the train split only, and the
checkpoint with the best validation loss kept.

Usage:
    from pyradet.training import TrainConfig, train, evaluate

    result = train('data/desk', TrainConfig(epochs=10), 'runs/desk')
    report = evaluate(result.checkpoint_path, 'data/desk', split='test')
"""

import math
import os
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import tensor as T
from .dataset import RadarDataset
from .inference import decode_network_output, decode_targets
from .labeling import LabelConfig, TargetMaps, augment, label_frame
from .losses import LossWeights, total_loss
from .metadata import DEFAULTS
from .metrics import evaluate_detections, ground_truth_from_annotations
from .model import ModelConfig, build, load_checkpoint, save_checkpoint

_TRAIN = DEFAULTS['training']
LOG_COLUMNS = ['epoch', 'lr', 'L', 'L_b', 'L_c', 'L_h', 'val_L']
CHECKPOINT_NAME = 'best.ckpt'
LOG_NAME = 'train_log.csv'


# ==================== Configuration ====================

@dataclass(frozen=True)
class TrainConfig:
    """
    Training recipe.

    model_overrides holds ModelConfig fields (e.g. narrower enc_channels) applied
    on top of the defaults; the geometry always comes from the dataset.
    max_train_frames limits the train split to its first frames (overfit runs).
    """
    batch_size: int = _TRAIN['batch_size']
    lr0: float = _TRAIN['lr0']
    plateau_factor: float = _TRAIN['plateau_factor']
    plateau_patience: int = _TRAIN['plateau_patience']
    plateau_min_lr: float = _TRAIN['plateau_min_lr']
    plateau_min_delta: float = _TRAIN['plateau_min_delta']
    epochs: int = _TRAIN['epochs']
    weights: LossWeights = field(default_factory=LossWeights)
    t_frames: int = DEFAULTS['model']['t_frames']
    seed: int = _TRAIN['seed']
    model_variant: str = DEFAULTS['model']['variant']
    augment: bool = True
    max_steps: Optional[int] = None
    max_train_frames: Optional[int] = None
    adam_beta1: float = _TRAIN['adam_beta1']
    adam_beta2: float = _TRAIN['adam_beta2']
    adam_eps: float = _TRAIN['adam_eps']
    model_overrides: Dict = field(default_factory=dict)

    def validate(self):
        if self.batch_size < 1:
            raise ValueError(f'TrainConfig.batch_size must be >= 1, got {self.batch_size}')
        if self.epochs < 1:
            raise ValueError(f'TrainConfig.epochs must be >= 1, got {self.epochs}')
        if self.lr0 <= 0:
            raise ValueError(f'TrainConfig.lr0 must be positive, got {self.lr0}')
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f'TrainConfig.max_steps must be >= 1, got {self.max_steps}')
        self.weights.validate()
        return self

    def model_config(self, geometry):
        values = dict(self.model_overrides)
        values.update({'geometry': geometry.to_dict(), 't_frames': self.t_frames, 'variant': self.model_variant})
        return ModelConfig.from_dict(values)

    def to_dict(self):
        values = asdict(self)
        values['weights'] = self.weights.to_dict()
        return values

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        if isinstance(values.get('weights'), dict):
            values['weights'] = LossWeights.from_dict(values['weights'])
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in values.items() if k in known}).validate()


class ReduceLROnPlateau:
    """
    Multiply the learning rate by factor once the monitored value has not improved
    by more than min_delta for patience consecutive steps; never below min_lr.

    Example:
        >>> sched = ReduceLROnPlateau(1e-4, factor=0.1, patience=4)
        >>> for v in [1.0, 1.0, 1.0, 1.0, 1.0]:
        ...     lr = sched.step(v)
        >>> round(lr, 12)
        1e-05
    """

    def __init__(self, lr, factor=_TRAIN['plateau_factor'], patience=_TRAIN['plateau_patience'],
                 min_lr=_TRAIN['plateau_min_lr'], min_delta=_TRAIN['plateau_min_delta']):
        if not 0.0 < factor < 1.0:
            raise ValueError(f'ReduceLROnPlateau: factor must be in (0, 1), got {factor}')
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.min_delta = min_delta
        self.best = math.inf
        self.wait = 0
        self.reductions = 0

    def step(self, value):
        if value < self.best - self.min_delta:
            self.best = value
            self.wait = 0
            return self.lr
        self.wait += 1
        if self.wait >= self.patience:
            if self.lr > self.min_lr:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.reductions += 1
            self.wait = 0
        return self.lr


# ==================== Batches ====================

@dataclass
class Sample:
    """One training example: a frame stack with the current frame's labels."""
    frame_id: str
    frames: list
    targets: TargetMaps
    annotations: list


def load_samples(dataset, split, t_frames, limit=None, label_config=None):
    """
    Load a split into memory as Samples.

    Frames without cached targets are labelled on the fly with label_config.
    """
    samples = []
    view = dataset.split(split)
    records = view.records[:limit] if limit else view.records
    for record in records:
        targets = dataset.load_targets(record)
        annotations = dataset.load_annotations(record)
        frames = dataset.frame_stack(record, t_frames)
        if targets is None:
            targets, annotations = label_frame(frames[-1], annotations, label_config or LabelConfig())
        samples.append(Sample(record.id, frames, targets, annotations))
    return samples


def stack_inputs(stacks):
    """[B, t, ...] arrays of the RA, RD and AD views from a list of frame stacks."""
    ra = np.stack([np.stack([f.ra for f in frames]) for frames in stacks])
    rd = np.stack([np.stack([f.rd for f in frames]) for frames in stacks])
    ad = np.stack([np.stack([f.ad for f in frames]) for frames in stacks])
    return ra, rd, ad


def stack_targets(targets):
    return TargetMaps(*(np.stack([getattr(t, name) for t in targets]) for name in TargetMaps.ARRAYS))


def _batch_loss(model, samples, weights, training, rng=None, label_config=None):
    stacks, targets = [], []
    for sample in samples:
        frames, maps = sample.frames, sample.targets
        if rng is not None:
            frames, maps, _ = augment(frames, maps, sample.annotations, rng, label_config)
        stacks.append(frames)
        targets.append(maps)
    ra, rd, ad = stack_inputs(stacks)
    outputs = model.forward(ra, rd, ad, training=training)
    return total_loss(outputs, stack_targets(targets), weights)


def validation_loss(model, samples, weights, batch_size):
    """Mean total loss over samples in eval mode."""
    if not samples:
        return float('nan')
    values = []
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start:start + batch_size]
            _, breakdown = _batch_loss(model, batch, weights, training=False)
            values.append(breakdown['L'] * len(batch))
    return float(sum(values) / len(samples))


# ==================== Training ====================

@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    history: pd.DataFrame
    best_val_loss: float
    steps: int
    step_losses: List[Dict[str, float]]
    model: object = None


def train(dataset, config=None, out_dir='runs', verbose=True):
    """
    Train a model on a labelled dataset.

    Args:
        dataset: RadarDataset or dataset directory
        config: TrainConfig
        out_dir: Directory for the checkpoint and CSV log
        verbose: Print per-epoch progress

    Returns:
        TrainResult

    Raises:
        ValueError: If a split is empty
        FloatingPointError: If a batch loss is not finite (message names the batch)
    """
    config = (config or TrainConfig()).validate()
    if not isinstance(dataset, RadarDataset):
        dataset = RadarDataset(dataset, verbose=False)
    for split in ('train', 'val', 'test'):
        if not dataset.splits[split]:
            raise ValueError(f"Dataset {dataset.path} has an empty '{split}' split")
    os.makedirs(out_dir, exist_ok=True)
    label_config = dataset.label_config or LabelConfig()

    model_config = config.model_config(dataset.geometry)
    model = build(model_config, seed=config.seed, verbose=verbose)
    optimizer = T.Adam(model.params, lr=config.lr0, beta1=config.adam_beta1,
                       beta2=config.adam_beta2, eps=config.adam_eps)
    scheduler = ReduceLROnPlateau(config.lr0, config.plateau_factor, config.plateau_patience,
                                  config.plateau_min_lr, config.plateau_min_delta)
    rng = np.random.default_rng(config.seed)

    train_samples = load_samples(dataset, 'train', config.t_frames, config.max_train_frames, label_config)
    val_samples = load_samples(dataset, 'val', config.t_frames, label_config=label_config)
    if verbose:
        print(f'  Training on {len(train_samples)} frames, validating on {len(val_samples)} frames')

    checkpoint_path = os.path.join(out_dir, CHECKPOINT_NAME)
    log_path = os.path.join(out_dir, LOG_NAME)
    rows, step_losses = [], []
    best_val = math.inf
    steps = 0

    epochs = tqdm(range(1, config.epochs + 1), disable=not verbose, desc='  epochs')
    for epoch in epochs:
        lr = optimizer.lr
        order = rng.permutation(len(train_samples))
        sums = {'L': 0.0, 'L_b': 0.0, 'L_c': 0.0, 'L_h': 0.0}
        batches = 0
        for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_samples[i] for i in order[start:start + config.batch_size]]
            loss, breakdown = _batch_loss(model, batch, config.weights, training=True,
                                          rng=rng if config.augment else None, label_config=label_config)
            if not all(math.isfinite(v) for v in breakdown.values()):
                ids = ', '.join(s.frame_id for s in batch)
                raise FloatingPointError(f'Non-finite loss in epoch {epoch}, batch {batch_index} '
                                         f'(frames {ids}): {breakdown}')
            optimizer.zero_grad()
            T.backward(loss)
            optimizer.step()
            steps += 1
            batches += 1
            step_losses.append(dict(breakdown, epoch=epoch, step=steps))
            for key in sums:
                sums[key] += breakdown[key]
            epochs.set_postfix(L=f"{breakdown['L']:.4f}")
            if config.max_steps is not None and steps >= config.max_steps:
                break

        val_loss = validation_loss(model, val_samples, config.weights, config.batch_size)
        row = {'epoch': epoch, 'lr': lr}
        row.update({key: value / max(1, batches) for key, value in sums.items()})
        row['val_L'] = val_loss
        rows.append(row)
        pd.DataFrame(rows, columns=LOG_COLUMNS).to_csv(log_path, index=False)

        if val_loss < best_val or not os.path.exists(checkpoint_path):
            best_val = min(best_val, val_loss)
            save_checkpoint(model, checkpoint_path, extra={
                'epoch': epoch, 'val_L': val_loss, 'train_config': config.to_dict(),
                'label_mode': label_config.label_mode,
            })
        optimizer.lr = scheduler.step(val_loss)

        if verbose:
            print(f"  Epoch {epoch}: lr={lr:.1e} L={row['L']:.4f} L_b={row['L_b']:.4f} "
                  f"L_c={row['L_c']:.4f} L_h={row['L_h']:.4f} val_L={val_loss:.4f}")
        if config.max_steps is not None and steps >= config.max_steps:
            break

    return TrainResult(checkpoint_path, log_path, pd.DataFrame(rows, columns=LOG_COLUMNS),
                       best_val, steps, step_losses, model)


# ==================== Evaluation ====================

def predict_samples(model, samples, inference_config=None):
    """Decode every sample with an eval-mode forward pass: [(frame_id, detections)]."""
    geometry = model.config.geometry
    predictions = []
    for sample in samples:
        ra, rd, ad = stack_inputs([sample.frames])
        output = model.predict(ra[0], rd[0], ad[0])
        predictions.append((sample.frame_id, decode_network_output(output, geometry, inference_config)))
    return predictions


def predict_split(model, dataset, split='test', inference_config=None, limit=None):
    """Load a split and run predict_samples on it."""
    if not isinstance(dataset, RadarDataset):
        dataset = RadarDataset(dataset, verbose=False)
    _check_geometry(model, dataset)
    samples = load_samples(dataset, split, model.config.t_frames, limit, dataset.label_config)
    return predict_samples(model, samples, inference_config)


def _check_geometry(model, dataset):
    if model.config.geometry != dataset.geometry:
        raise ValueError(f'Checkpoint geometry {model.config.geometry.to_dict()} does not match dataset '
                         f'geometry {dataset.geometry.to_dict()}')


def evaluate(checkpoint, dataset, split='test', inference_config=None, oracle=False,
             thresholds_m=DEFAULTS['metrics']['thresholds_m'], interpolation=DEFAULTS['metrics']['interpolation'],
             limit=None, verbose=False):
    """
    Run inference over a split and compute the EvalReport.

    Args:
        checkpoint: Checkpoint path or Model (ignored when oracle=True)
        dataset: RadarDataset or directory
        split: Split name
        oracle: Decode the ground-truth target maps instead of network outputs
        limit: Only the first `limit` frames of the split

    Raises:
        ValueError: If the checkpoint geometry differs from the dataset geometry
    """
    if not isinstance(dataset, RadarDataset):
        dataset = RadarDataset(dataset, verbose=False)
    if oracle:
        samples = load_samples(dataset, split, 1, limit, dataset.label_config)
        predictions = [(s.frame_id, decode_targets(s.targets, dataset.geometry, inference_config)) for s in samples]
    else:
        model = load_checkpoint(checkpoint)[0] if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
        _check_geometry(model, dataset)
        samples = load_samples(dataset, split, model.config.t_frames, limit, dataset.label_config)
        predictions = predict_samples(model, samples, inference_config)

    frames = [(detections, ground_truth_from_annotations(sample.annotations, dataset.geometry))
              for (_, detections), sample in zip(predictions, samples)]
    report = evaluate_detections(frames, thresholds_m=thresholds_m, interpolation=interpolation)
    if verbose:
        print(f'  {split}: {len(frames)} frames, mAP ' +
              ', '.join(f'{key}={value:.3f}' for key, value in report.mean_ap.items()))
    return report


def ablate_frames(dataset, t_list=(1, 3, 5), base_config=None, seeds=(0, 1, 2), out_dir='runs/ablation',
                  split='test', verbose=True):
    """
    Train one model per stack depth and seed, report heading accuracy per depth.

    Returns:
        DataFrame with one row per t: median over seeds of the heading accuracy
        bands and of the loosest-threshold mAP

    Raises:
        ValueError: If sequences are shorter than max(t_list)
    """
    if not isinstance(dataset, RadarDataset):
        dataset = RadarDataset(dataset, verbose=False)
    base_config = base_config or TrainConfig()
    if dataset.frames_per_sequence < max(t_list):
        raise ValueError(f'Sequences have {dataset.frames_per_sequence} frames, fewer than t={max(t_list)}')
    bands = DEFAULTS['metrics']['heading_bands_deg']

    rows = []
    for t in t_list:
        per_seed = []
        for seed in seeds:
            if verbose:
                print(f'\nAblation: t_frames={t}, seed={seed}')
            config = TrainConfig.from_dict(dict(base_config.to_dict(), t_frames=t, seed=seed))
            result = train(dataset, config, os.path.join(out_dir, f't{t}_seed{seed}'), verbose=verbose)
            report = evaluate(result.checkpoint_path, dataset, split=split)
            per_seed.append(report)
        row = {'t_frames': t, 'n_seeds': len(seeds)}
        for band in bands:
            values = [r.heading_acc[band] for r in per_seed if r.heading_acc[band] is not None]
            row[f'heading_acc_{band:g}'] = float(np.median(values)) if values else None
        loosest = max(per_seed[0].mean_ap, key=lambda k: float(k.rstrip('m')))
        row[f'mAP_{loosest}'] = float(np.median([r.mean_ap[loosest] for r in per_seed]))
        rows.append(row)
    return pd.DataFrame(rows)
