# losses.py - PyRaDet Training Objectives
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
Heatmap focal loss, masked offset loss, masked heading MSE and their weighted sum.

All functions take network outputs as Tensors and targets as numpy arrays, with
or without a leading batch axis.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .metadata import DEFAULTS
from .tensor import Tensor, as_tensor

_LOSS = DEFAULTS['losses']


@dataclass(frozen=True)
class LossWeights:
    """Term weights w1 (heatmap), w2 (offset), w3 (heading) and loss shape parameters."""
    w1: float = _LOSS['w1']
    w2: float = _LOSS['w2']
    w3: float = _LOSS['w3']
    focal_alpha: float = _LOSS['focal_alpha']
    focal_beta: float = _LOSS['focal_beta']
    offset_gamma: float = _LOSS['offset_gamma']
    offset_variant: str = _LOSS['offset_variant']
    log_eps: float = _LOSS['log_eps']

    def validate(self):
        for name in ('w1', 'w2', 'w3', 'focal_alpha', 'focal_beta', 'offset_gamma'):
            if getattr(self, name) < 0:
                raise ValueError(f'LossWeights.{name} must be >= 0, got {getattr(self, name)}')
        if self.offset_variant not in ('focal', 'l1'):
            raise ValueError(f"LossWeights.offset_variant must be 'focal' or 'l1', got '{self.offset_variant}'")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        return cls(**{k: values[k] for k in asdict(cls()) if k in values}).validate()


def _check_shapes(name, pred, target):
    if tuple(pred.shape) != tuple(np.shape(target)):
        raise ValueError(f'{name}: prediction shape {tuple(pred.shape)} != target shape {tuple(np.shape(target))}')


def _channel_mask(mask, pred_shape):
    """Broadcast a [.., H, W] mask over the channel axis of a [.., C, H, W] prediction."""
    mask = np.asarray(mask, dtype=np.float64)
    return np.broadcast_to(np.expand_dims(mask, axis=-3), pred_shape)


def _zero(pred):
    return pred.sum() * 0.0


def heatmap_focal(pred, target, alpha=_LOSS['focal_alpha'], beta=_LOSS['focal_beta'], eps=_LOSS['log_eps']):
    """
    Penalty-reduced pixel-wise focal loss.

    Peak cells (target == 1) cost -(1-p)^alpha log p, other cells
    -(1-y)^beta p^alpha log(1-p); the sum is divided by max(1, number of peaks).

    Raises:
        ValueError: If shapes differ or pred has values outside [0, 1]
    """
    pred = as_tensor(pred)
    _check_shapes('heatmap_focal', pred, target)
    if np.any(pred.data < 0) or np.any(pred.data > 1):
        raise ValueError('heatmap_focal: predictions must lie in (0, 1)')
    target = np.asarray(target, dtype=np.float64)
    positive = (target == 1.0).astype(np.float64)
    p = pred.clamp(eps, 1.0 - eps)
    pos_term = ((1.0 - p) ** alpha) * p.log() * positive
    neg_term = (p ** alpha) * (1.0 - p).log() * ((1.0 - target) ** beta * (1.0 - positive))
    return -(pos_term + neg_term).sum() * (1.0 / max(1.0, float(positive.sum())))


def offset_loss(pred_sigmoid, target_offset, offset_mask, gamma=_LOSS['offset_gamma'],
                variant=_LOSS['offset_variant'], eps=_LOSS['log_eps']):
    """
    Offset loss over the masked patch cells.

    Targets o in [-1, 1] become t = (o + 1) / 2. The focal variant averages
    |t - p|^gamma * BCE(p, t) over masked cell-channels; the l1 variant averages
    |(2p - 1) - o|. Returns 0 when nothing is masked.
    """
    pred = as_tensor(pred_sigmoid)
    _check_shapes('offset_loss', pred, target_offset)
    mask = _channel_mask(offset_mask, pred.shape)
    count = float(mask.sum())
    if count == 0:
        return _zero(pred)
    target = (np.asarray(target_offset, dtype=np.float64) + 1.0) / 2.0
    if variant == 'l1':
        error = (pred * 2.0 - 1.0 - np.asarray(target_offset, dtype=np.float64)).abs()
        return (error * mask).sum() * (1.0 / count)
    if variant != 'focal':
        raise ValueError(f"offset_loss: unknown variant '{variant}'")
    p = pred.clamp(eps, 1.0 - eps)
    bce = -(p.log() * target + (1.0 - p).log() * (1.0 - target))
    modulation = (p - target).abs() ** gamma
    return (modulation * bce * mask).sum() * (1.0 / count)


def heading_mse(pred_tanh, target_heading, heading_mask):
    """Mean squared error over masked cells and both channels (0 when nothing is masked)."""
    pred = as_tensor(pred_tanh)
    _check_shapes('heading_mse', pred, target_heading)
    mask = _channel_mask(heading_mask, pred.shape)
    count = float(mask.sum())
    if count == 0:
        return _zero(pred)
    diff = pred - np.asarray(target_heading, dtype=np.float64)
    return (diff * diff * mask).sum() * (1.0 / count)


def total_loss(outputs, targets, weights=None):
    """
    Weighted sum w1 L_b + w2 L_c + w3 L_h.

    Args:
        outputs: NetworkOutput of Tensors
        targets: TargetMaps (arrays may carry a leading batch axis)
        weights: LossWeights

    Returns:
        Tuple (scalar Tensor, dict with float values of 'L', 'L_b', 'L_c', 'L_h')
    """
    weights = (weights or LossWeights()).validate()
    l_b = heatmap_focal(outputs.heatmap, targets.heatmap, weights.focal_alpha, weights.focal_beta,
                        weights.log_eps)
    l_c = offset_loss(outputs.offset, targets.offset, targets.offset_mask, weights.offset_gamma,
                      weights.offset_variant, weights.log_eps)
    l_h = heading_mse(outputs.heading, targets.heading, targets.heading_mask)
    total = l_b * weights.w1 + l_c * weights.w2 + l_h * weights.w3
    breakdown = {'L': total.item(), 'L_b': l_b.item(), 'L_c': l_c.item(), 'L_h': l_h.item()}
    return total, breakdown
