# model.py - PyRaDet Detection Network
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
Convolution / transposed-convolution network over the three radar views.

Three encoders (RA, RD, AD) of six conv-BN-PReLU layers each reduce their view
by 16 spatially and by 4 along Doppler. The cross-attention block turns the RD
and AD features into per-range-row attention over angle, applies it to the RA
features and adds a residual before channel layer norm. One decoder of four
transposed convolutions restores the RA resolution and feeds three 1x1 heads:
heatmap (sigmoid), center offset (sigmoid) and heading (tanh, tapped at quarter
resolution).

Usage:
    from pyradet.model import ModelConfig, build

    model = build(ModelConfig(), seed=0)
    out = model.forward(ra_stack, rd_stack, ad_stack, training=False)
"""

from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from typing import Tuple

import numpy as np

from . import processors
from . import tensor as T
from .metadata import CLASS_NAMES, DEFAULTS
from .scene import RadarGeometry
from .tensor import BatchNormState, Tensor

_MODEL = DEFAULTS['model']
VARIANTS = ('cross_attention', 'ra_only')
VIEWS = ('ra', 'rd', 'ad')

# Decoder stage whose output feeds the heading head (quarter resolution)
HEADING_TAP = 2


@dataclass(frozen=True)
class ModelConfig:
    """Network hyperparameters; see metadata.DEFAULTS['model'] for the defaults."""
    geometry: RadarGeometry = field(default_factory=RadarGeometry)
    t_frames: int = _MODEL['t_frames']
    enc_channels: Tuple[int, ...] = _MODEL['enc_channels']
    enc_strides: Tuple[int, ...] = _MODEL['enc_strides']
    doppler_strides: Tuple[int, ...] = _MODEL['doppler_strides']
    dec_channels: Tuple[int, ...] = _MODEL['dec_channels']
    fusion_dim: int = _MODEL['fusion_dim']
    variant: str = _MODEL['variant']
    bn_momentum: float = _MODEL['bn_momentum']
    bn_eps: float = _MODEL['bn_eps']
    ln_eps: float = _MODEL['ln_eps']
    prelu_init: float = _MODEL['prelu_init']

    def validate(self):
        g = self.geometry.validate()
        if self.t_frames < 1:
            raise ValueError(f'ModelConfig.t_frames must be >= 1, got {self.t_frames}')
        if self.variant not in VARIANTS:
            raise ValueError(f"ModelConfig.variant must be one of {VARIANTS}, got '{self.variant}'")
        if not len(self.enc_channels) == len(self.enc_strides) == len(self.doppler_strides) == 6:
            raise ValueError('ModelConfig: enc_channels, enc_strides and doppler_strides need 6 entries each')
        if len(self.dec_channels) != 4:
            raise ValueError(f'ModelConfig.dec_channels needs 4 entries, got {len(self.dec_channels)}')
        spatial = int(np.prod(self.enc_strides))
        doppler = int(np.prod(self.doppler_strides))
        if spatial != 16 or doppler != 4:
            raise ValueError(f'ModelConfig: encoder strides must reduce space by 16 and Doppler by 4, '
                             f'got {spatial} and {doppler}')
        if g.r_bins % 16:
            raise ValueError(f'ModelConfig: r_bins={g.r_bins} is not divisible by 16')
        if g.a_bins % 16:
            raise ValueError(f'ModelConfig: a_bins={g.a_bins} is not divisible by 16')
        if g.d_bins % 4:
            raise ValueError(f'ModelConfig: d_bins={g.d_bins} is not divisible by 4')
        if self.fusion_dim != self.enc_channels[-1]:
            raise ValueError(f'ModelConfig.fusion_dim ({self.fusion_dim}) must equal the last encoder '
                             f'width ({self.enc_channels[-1]})')
        return self

    def to_dict(self):
        values = asdict(self)
        values['geometry'] = self.geometry.to_dict()
        return values

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        if 'geometry' in values:
            values['geometry'] = RadarGeometry.from_dict(values['geometry'])
        for key in ('enc_channels', 'enc_strides', 'doppler_strides', 'dec_channels'):
            if key in values:
                values[key] = tuple(int(v) for v in values[key])
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in values.items() if k in known}).validate()


@dataclass
class NetworkOutput:
    """Head outputs. Batched forward passes keep the leading batch axis."""
    heatmap: Tensor
    offset: Tensor
    heading: Tensor

    def numpy(self):
        return NetworkOutput(self.heatmap.numpy(), self.offset.numpy(), self.heading.numpy())


# ==================== Parameter Layout ====================

def _encoder_shapes(config, view):
    shapes = OrderedDict()
    in_ch = config.t_frames
    for i, out_ch in enumerate(config.enc_channels):
        prefix = f'enc_{view}.{i}'
        shapes[f'{prefix}.weight'] = (out_ch, in_ch, 3, 3)
        shapes[f'{prefix}.bias'] = (out_ch,)
        shapes[f'{prefix}.bn_gamma'] = (out_ch,)
        shapes[f'{prefix}.bn_beta'] = (out_ch,)
        shapes[f'{prefix}.alpha'] = (out_ch,)
        in_ch = out_ch
    return shapes


def _decoder_shapes(config, prefix='dec'):
    shapes = OrderedDict()
    in_ch = config.fusion_dim
    for i, out_ch in enumerate(config.dec_channels):
        stage = f'{prefix}.{i}'
        shapes[f'{stage}.weight'] = (in_ch, out_ch, 4, 4)
        shapes[f'{stage}.bias'] = (out_ch,)
        shapes[f'{stage}.bn_gamma'] = (out_ch,)
        shapes[f'{stage}.bn_beta'] = (out_ch,)
        shapes[f'{stage}.alpha'] = (out_ch,)
        in_ch = out_ch
    head_in = config.dec_channels[-1]
    heading_in = config.dec_channels[HEADING_TAP - 1]
    shapes[f'{prefix}.head_heatmap.weight'] = (len(CLASS_NAMES), head_in, 1, 1)
    shapes[f'{prefix}.head_heatmap.bias'] = (len(CLASS_NAMES),)
    shapes[f'{prefix}.head_offset.weight'] = (2, head_in, 1, 1)
    shapes[f'{prefix}.head_offset.bias'] = (2,)
    shapes[f'{prefix}.head_heading.weight'] = (2, heading_in, 1, 1)
    shapes[f'{prefix}.head_heading.bias'] = (2,)
    return shapes


def parameter_shapes(config):
    """Ordered name -> shape of every trainable parameter of a model."""
    config.validate()
    shapes = OrderedDict()
    views = VIEWS if config.variant == 'cross_attention' else ('ra',)
    for view in views:
        shapes.update(_encoder_shapes(config, view))
    if config.variant == 'cross_attention':
        shapes['fusion.ln_gamma'] = (config.fusion_dim,)
        shapes['fusion.ln_beta'] = (config.fusion_dim,)
    shapes.update(_decoder_shapes(config))
    return shapes


def three_decoder_parameter_count(config):
    """
    Parameters of the reference layout with one decoder and head set per view
    and no fusion block, for comparison with the fused model.
    """
    config.validate()
    shapes = OrderedDict()
    for view in VIEWS:
        shapes.update(_encoder_shapes(config, view))
        shapes.update(_decoder_shapes(config, prefix=f'dec_{view}'))
    return int(sum(np.prod(s) for s in shapes.values()))


def _init_value(name, shape, config, rng):
    if name.endswith('.weight'):
        fan_in = shape[1] * shape[2] * shape[3]
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)
    if name.endswith('.alpha'):
        return np.full(shape, config.prelu_init)
    if name.endswith('gamma'):
        return np.ones(shape)
    return np.zeros(shape)


# ==================== Fusion ====================

def cross_attention(f_ra, f_rd, f_ad, gamma, beta, eps=_MODEL['ln_eps']):
    """
    Fuse Doppler-view features into RA features.

    F' = f_rd @ f_ad^T per channel over the Doppler axis, attention =
    softmax over angle of F', output = layernorm_channels(attention * f_ra + f_ra).

    Args:
        f_ra: [C, h, w] or [N, C, h, w]
        f_rd: [C, h, d] or [N, C, h, d]
        f_ad: [C, w, d] or [N, C, w, d]
        gamma, beta: Layer-norm affine parameters [C]

    Returns:
        Tensor shaped like f_ra

    Raises:
        ValueError: If the Doppler axes or spatial axes disagree
        FloatingPointError: In debug mode, if attention rows do not sum to 1
    """
    f_ra, f_rd, f_ad = T.as_tensor(f_ra), T.as_tensor(f_rd), T.as_tensor(f_ad)
    unbatched = f_ra.ndim == 3
    if unbatched:
        f_ra = f_ra.reshape((1,) + f_ra.shape)
        f_rd = f_rd.reshape((1,) + f_rd.shape)
        f_ad = f_ad.reshape((1,) + f_ad.shape)
    if f_rd.shape[-1] != f_ad.shape[-1]:
        raise ValueError(f'cross_attention: Doppler axes differ, RD has {f_rd.shape[-1]}, AD has {f_ad.shape[-1]}')
    if f_rd.shape[2] != f_ra.shape[2] or f_ad.shape[2] != f_ra.shape[3]:
        raise ValueError(f'cross_attention: RD {f_rd.shape} / AD {f_ad.shape} do not match RA {f_ra.shape}')

    scores = T.batched_matmul(f_rd, f_ad.transpose(0, 1, 3, 2))
    attention = T.softmax_lastdim(scores)
    if T.is_debug():
        rows = attention.data.sum(axis=-1)
        if not np.allclose(rows, 1.0, atol=1e-9):
            raise FloatingPointError(f'cross_attention: softmax rows do not sum to 1 '
                                     f'(max deviation {float(np.max(np.abs(rows - 1.0))):.3g})')
    fused = T.layernorm_channels(attention * f_ra + f_ra, gamma, beta, eps)
    return fused.reshape(fused.shape[1:]) if unbatched else fused


# ==================== Model ====================

class Model:
    """
    Detection network with its parameters and batch-norm running statistics.

    Create with build(); parameters are leaf Tensors with requires_grad=True.
    """

    def __init__(self, config, params, bn_states):
        self.config = config
        self.params = params
        self.bn_states = bn_states

    def parameters(self):
        return list(self.params.values())

    @property
    def num_parameters(self):
        return T.count_parameters(self.params)

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None

    def _block(self, x, prefix, stride, training, p, transpose=False):
        if transpose:
            x = T.conv_transpose2d(x, p[f'{prefix}.weight'], p[f'{prefix}.bias'], stride=2, padding=1)
        else:
            x = T.conv2d(x, p[f'{prefix}.weight'], p[f'{prefix}.bias'], stride=stride, padding=1)
        x = T.batchnorm2d(x, p[f'{prefix}.bn_gamma'], p[f'{prefix}.bn_beta'], self.bn_states[prefix],
                          training, momentum=self.config.bn_momentum, eps=self.config.bn_eps)
        return T.prelu(x, p[f'{prefix}.alpha'])

    def _encode(self, x, view, training, p):
        doppler = view != 'ra'
        for i, s in enumerate(self.config.enc_strides):
            stride = (s, self.config.doppler_strides[i]) if doppler else (s, s)
            x = self._block(x, f'enc_{view}.{i}', stride, training, p)
        return x

    def _check_input(self, name, x, shape):
        if tuple(x.shape[1:]) != shape:
            raise ValueError(f'forward: {name} stack has shape {tuple(x.shape[1:])}, expected {shape} '
                             f'(t_frames={self.config.t_frames})')

    def forward(self, ra, rd, ad, training=False, params=None):
        """
        Run the network.

        Args:
            ra: [t, R, A] or [N, t, R, A] RA frame stack
            rd: [t, R, D] or [N, t, R, D]
            ad: [t, A, D] or [N, t, A, D]
            training: Batch statistics (True) or running statistics (False)
            params: Optional dict overriding some parameters by name

        Returns:
            NetworkOutput; unbatched inputs give unbatched outputs
        """
        p = dict(self.params)
        if params:
            p.update(params)
        g, t = self.config.geometry, self.config.t_frames
        ra, rd, ad = T.as_tensor(ra), T.as_tensor(rd), T.as_tensor(ad)
        unbatched = ra.ndim == 3
        if unbatched:
            ra = ra.reshape((1,) + ra.shape)
            rd = rd.reshape((1,) + rd.shape)
            ad = ad.reshape((1,) + ad.shape)
        self._check_input('RA', ra, (t, g.r_bins, g.a_bins))
        self._check_input('RD', rd, (t, g.r_bins, g.d_bins))
        self._check_input('AD', ad, (t, g.a_bins, g.d_bins))

        f_ra = self._encode(ra, 'ra', training, p)
        if self.config.variant == 'cross_attention':
            f_rd = self._encode(rd, 'rd', training, p)
            f_ad = self._encode(ad, 'ad', training, p)
            x = cross_attention(f_ra, f_rd, f_ad, p['fusion.ln_gamma'], p['fusion.ln_beta'], self.config.ln_eps)
        else:
            x = f_ra

        heading_features = None
        for i in range(len(self.config.dec_channels)):
            x = self._block(x, f'dec.{i}', 2, training, p, transpose=True)
            if i + 1 == HEADING_TAP:
                heading_features = x

        heatmap = T.conv2d(x, p['dec.head_heatmap.weight'], p['dec.head_heatmap.bias']).sigmoid()
        offset = T.conv2d(x, p['dec.head_offset.weight'], p['dec.head_offset.bias']).sigmoid()
        heading = T.conv2d(heading_features, p['dec.head_heading.weight'], p['dec.head_heading.bias']).tanh()
        if unbatched:
            heatmap = heatmap.reshape(heatmap.shape[1:])
            offset = offset.reshape(offset.shape[1:])
            heading = heading.reshape(heading.shape[1:])
        return NetworkOutput(heatmap, offset, heading)

    def predict(self, ra, rd, ad):
        """Eval-mode forward without recording a graph; returns numpy arrays."""
        with T.no_grad():
            return self.forward(ra, rd, ad, training=False).numpy()

    def state_dict(self):
        """Parameters and running statistics as plain arrays."""
        state = {f'param/{name}': tensor.data.copy() for name, tensor in self.params.items()}
        for name, bn in self.bn_states.items():
            state[f'bn/{name}/running_mean'] = bn.running_mean.copy()
            state[f'bn/{name}/running_var'] = bn.running_var.copy()
        return state

    def load_state_dict(self, state):
        """
        Restore parameters and running statistics.

        Raises:
            ValueError: If a tensor is missing or has the wrong shape
        """
        for name, tensor in self.params.items():
            key = f'param/{name}'
            if key not in state:
                raise ValueError(f"State is missing parameter '{name}'")
            if state[key].shape != tensor.shape:
                raise ValueError(f"Parameter '{name}' has shape {state[key].shape}, expected {tensor.shape}")
            tensor.data = np.array(state[key], dtype=np.float64)
        for name, bn in self.bn_states.items():
            bn.running_mean = np.array(state[f'bn/{name}/running_mean'], dtype=np.float64)
            bn.running_var = np.array(state[f'bn/{name}/running_var'], dtype=np.float64)
        return self


def build(config=None, seed=0, verbose=False):
    """
    Create a model with Kaiming-uniform weights, zero biases and PReLU slopes of prelu_init.

    Args:
        config: ModelConfig (desk-scale defaults when None)
        seed: Initialisation seed
        verbose: Print the parameter counts of this model and the three-decoder layout

    Returns:
        Model

    Raises:
        ValueError: If the geometry is not divisible by 16 (range, angle) and 4 (Doppler)
    """
    config = (config or ModelConfig()).validate()
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    bn_states = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        params[name] = Tensor(_init_value(name, shape, config, rng), requires_grad=True)
        if name.endswith('.bn_gamma'):
            bn_states[name[:-len('.bn_gamma')]] = BatchNormState.create(shape[0])
    model = Model(config, params, bn_states)
    if verbose:
        print(f'Built {config.variant} model (t_frames={config.t_frames}): {model.num_parameters:,} parameters')
        print(f'  Three-decoder reference layout: {three_decoder_parameter_count(config):,} parameters')
    return model


# ==================== Checkpoints ====================

def save_checkpoint(model, path, extra=None):
    """Write config, parameters and BN statistics to a checkpoint file."""
    header = {'model': model.config.to_dict(), 'extra': extra or {}}
    return processors.write_checkpoint(path, header, model.state_dict())


def load_checkpoint(path):
    """
    Rebuild a model from a checkpoint.

    Returns:
        Tuple (Model, extra dict stored at save time)
    """
    header, tensors = processors.read_checkpoint(path)
    if 'model' not in header:
        raise ValueError(f'Checkpoint {path} has no model config')
    model = build(ModelConfig.from_dict(header['model']))
    model.load_state_dict(tensors)
    return model, header.get('extra', {})
