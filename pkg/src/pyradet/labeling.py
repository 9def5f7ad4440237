# labeling.py - PyRaDet Training Target Synthesis
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
Turn annotations into training targets.

Heatmaps are either bivariate Gaussians whose mean and covariance are measured
from the annotated RA spectrum, or plain isotropic Gaussians of fixed width.
Offsets carry the sub-bin remainder of each center; heading maps carry
(sin, cos) of the heading on a quarter-resolution grid.

Usage:
    from pyradet.labeling import LabelConfig, label_frame

    targets, annotations = label_frame(frame, annotations, LabelConfig())
"""

import math
import warnings
from dataclasses import dataclass, asdict, replace
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .metadata import CLASS_NAMES, DEFAULTS
from .scene import RadarFrame, quantize_bin, snap_bin, wrap_angle

_LABEL = DEFAULTS['labeling']


# ==================== Types ====================

@dataclass(frozen=True)
class BivariateParams:
    """Mean (mu_r, mu_a), spread (sigma_r, sigma_a) in bins and correlation rho."""
    mu: Tuple[float, float]
    sigma: Tuple[float, float]
    rho: float = 0.0

    def validate(self, sigma_min=_LABEL['sigma_min'], rho_max=_LABEL['rho_max']):
        if min(self.sigma) < sigma_min:
            raise ValueError(f'BivariateParams.sigma {self.sigma} below sigma_min {sigma_min}')
        if abs(self.rho) > rho_max:
            raise ValueError(f'BivariateParams.rho {self.rho} exceeds {rho_max} in magnitude')
        return self


@dataclass
class TargetMaps:
    """
    Training targets of one frame.

    Attributes:
        heatmap: [3, R, A] per-class heatmaps in [0, 1]
        offset: [2, R, A] normalised (range, angle) center offsets in [-1, 1]
        offset_mask: [R, A] binary
        heading: [2, R/4, A/4] (sin, cos) of the heading
        heading_mask: [R/4, A/4] binary
    """
    heatmap: np.ndarray
    offset: np.ndarray
    offset_mask: np.ndarray
    heading: np.ndarray
    heading_mask: np.ndarray

    ARRAYS = ('heatmap', 'offset', 'offset_mask', 'heading', 'heading_mask')

    @classmethod
    def empty(cls, shape):
        r_bins, a_bins = shape
        return cls(
            heatmap=np.zeros((len(CLASS_NAMES), r_bins, a_bins)),
            offset=np.zeros((2, r_bins, a_bins)),
            offset_mask=np.zeros((r_bins, a_bins)),
            heading=np.zeros((2, r_bins // 4, a_bins // 4)),
            heading_mask=np.zeros((r_bins // 4, a_bins // 4)),
        )

    def validate(self):
        if np.any(self.heatmap < 0) or np.any(self.heatmap > 1):
            raise ValueError('TargetMaps.heatmap must lie in [0, 1]')
        if np.any(np.abs(self.offset) > 1):
            raise ValueError('TargetMaps.offset must lie in [-1, 1]')
        if np.any(self.offset[:, self.offset_mask == 0] != 0):
            raise ValueError('TargetMaps.offset is nonzero outside offset_mask')
        expected = (self.heatmap.shape[1] // 4, self.heatmap.shape[2] // 4)
        if self.heading_mask.shape != expected:
            raise ValueError(f'TargetMaps.heading_mask has shape {self.heading_mask.shape}, expected {expected}')
        return self

    def copy(self):
        return TargetMaps(*(getattr(self, name).copy() for name in self.ARRAYS))


@dataclass(frozen=True)
class LabelConfig:
    """Settings of target synthesis and augmentation."""
    label_mode: str = _LABEL['label_mode']
    mask_threshold: float = _LABEL['mask_threshold']
    sigma_min: float = _LABEL['sigma_min']
    rho_max: float = _LABEL['rho_max']
    truncation_correction: bool = _LABEL['truncation_correction']
    offset_patch: int = _LABEL['offset_patch']
    heading_patch: int = _LABEL['heading_patch']
    render_cutoff_sigma: float = _LABEL['render_cutoff_sigma']
    plain_sigma: Optional[float] = None
    noise_prob: float = _LABEL['noise_prob']
    noise_scale: float = _LABEL['noise_scale']
    flip_prob: float = _LABEL['flip_prob']

    def validate(self):
        if self.label_mode not in ('bivariate', 'gaussian'):
            raise ValueError(f"LabelConfig.label_mode must be 'bivariate' or 'gaussian', got '{self.label_mode}'")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ValueError(f'LabelConfig.mask_threshold must be in (0, 1), got {self.mask_threshold}')
        for name in ('offset_patch', 'heading_patch'):
            value = getattr(self, name)
            if value < 1 or value % 2 == 0:
                raise ValueError(f'LabelConfig.{name} must be a positive odd integer, got {value}')
        for name in ('noise_prob', 'flip_prob'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f'LabelConfig.{name} must be a probability, got {getattr(self, name)}')
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {key: values[key] for key in asdict(cls()) if key in values}
        return cls(**known).validate()


# ==================== Bivariate Norm ====================

def truncation_factor(mask_threshold):
    """
    Ratio of the covariance of a 2-D Gaussian restricted to the region where it
    exceeds mask_threshold of its peak (intensity-weighted) to the full covariance.
    """
    depth = math.log(1.0 / mask_threshold)
    return 1.0 - depth * mask_threshold / (1.0 - mask_threshold)


def bivariate_from_spectrum(ra_map, box_ra, mask_threshold=_LABEL['mask_threshold'],
                            sigma_min=_LABEL['sigma_min'], rho_max=_LABEL['rho_max'],
                            truncation_correction=_LABEL['truncation_correction']):
    """
    Measure a bivariate Gaussian from the annotated region of an RA map.

    The box is cropped and scaled by its maximum, bins below mask_threshold are
    zeroed, and intensity-weighted first and second moments give mu and Sigma.

    Args:
        ra_map: 2-D RA magnitude map
        box_ra: Inclusive box [r0, a0, r1, a1]
        mask_threshold: Fraction of the box maximum below which bins are noise
        truncation_correction: Rescale Sigma for the mass removed by the mask

    Returns:
        BivariateParams clamped to sigma >= sigma_min and |rho| <= rho_max

    Raises:
        ValueError: If the box is empty or has no positive value
    """
    r0, a0, r1, a1 = (int(v) for v in box_ra)
    crop = np.asarray(ra_map, dtype=np.float64)[r0:r1 + 1, a0:a1 + 1]
    if crop.size == 0:
        raise ValueError(f'bivariate_from_spectrum: empty box {list(box_ra)}')
    peak = crop.max()
    if not peak > 0:
        raise ValueError(f'bivariate_from_spectrum: box {list(box_ra)} has no positive value')

    scaled = crop / peak
    weights = np.where(scaled >= mask_threshold, scaled, 0.0)
    total = weights.sum()
    if total <= 0:
        warnings.warn(f'All bins of box {list(box_ra)} fall below mask threshold {mask_threshold}; '
                      f'using the box center and sigma_min', UserWarning)
        return BivariateParams(((r0 + r1) / 2.0, (a0 + a1) / 2.0), (sigma_min, sigma_min), 0.0)

    # Moments about the box center with the angle axis folded in half: column
    # pairs (j, na-1-j) enter as sum and difference, so a mirrored box yields
    # the same spread and an exactly negated correlation.
    n_r, n_a = weights.shape
    half = n_a // 2
    left, right = weights[:, :half], weights[:, ::-1][:, :half]
    pair_sum, pair_diff = left + right, left - right
    u = np.arange(half, dtype=np.float64) - (n_a - 1) / 2.0
    v = np.arange(n_r, dtype=np.float64)[:, None] - (n_r - 1) / 2.0
    folded = np.concatenate([pair_sum, weights[:, half:half + 1]], axis=1) if n_a % 2 else pair_sum

    total = float(folded.sum())
    mean_v = float((v * folded).sum()) / total
    mean_u = float((u * pair_diff).sum()) / total
    var_r = max(float((v * v * folded).sum()) / total - mean_v * mean_v, 0.0)
    var_a = max(float((u * u * pair_sum).sum()) / total - mean_u * mean_u, 0.0)
    cov = float((v * u * pair_diff).sum()) / total - mean_v * mean_u
    mu_r = (r0 + r1) / 2.0 + mean_v
    mu_a = (a0 + a1) / 2.0 + mean_u

    rho = cov / math.sqrt(var_r * var_a) if var_r > 0 and var_a > 0 else 0.0
    if truncation_correction:
        factor = truncation_factor(mask_threshold)
        var_r /= factor
        var_a /= factor

    sigma = (max(math.sqrt(var_r), sigma_min), max(math.sqrt(var_a), sigma_min))
    rho = float(np.clip(rho, -rho_max, rho_max))
    return BivariateParams((mu_r, mu_a), sigma, rho)


def render_bivariate(params, map_shape, cutoff_sigma=_LABEL['render_cutoff_sigma'], normalize=True):
    """
    Evaluate a bivariate normal on the bin grid.

    Args:
        params: BivariateParams
        map_shape: (R, A)
        cutoff_sigma: Values outside this Mahalanobis radius are set to 0
        normalize: Divide by the value at mu so the peak equals 1; when False the
            density itself is returned

    Returns:
        2-D array of shape map_shape
    """
    (mu_r, mu_a), (sigma_r, sigma_a), rho = params.mu, params.sigma, params.rho
    dr = np.arange(map_shape[0], dtype=np.float64)[:, None] - mu_r
    da = np.arange(map_shape[1], dtype=np.float64)[None, :] - mu_a
    one_minus = 1.0 - rho * rho
    quad = ((dr / sigma_r) ** 2 - 2.0 * rho * (dr / sigma_r) * (da / sigma_a) + (da / sigma_a) ** 2) / one_minus
    values = np.exp(-0.5 * quad)
    if not normalize:
        values = values / (2.0 * math.pi * sigma_r * sigma_a * math.sqrt(one_minus))
    values[quad > cutoff_sigma ** 2] = 0.0
    return values


def render_plain_gaussian(center, map_shape, sigma_bins=None, cutoff_sigma=_LABEL['render_cutoff_sigma']):
    """
    Isotropic Gaussian heatmap, sigma defaulting to map_shape[0] / 32.

    Same as render_bivariate with sigma_r = sigma_a = sigma_bins and rho = 0.
    """
    if sigma_bins is None:
        sigma_bins = map_shape[0] / _LABEL['plain_sigma_divisor']
    params = BivariateParams(tuple(center), (sigma_bins, sigma_bins), 0.0)
    return render_bivariate(params, map_shape, cutoff_sigma)


# ==================== Target Maps ====================

def annotation_params(annotation, ra_map=None, config=None):
    """
    Bivariate parameters of an annotation in bivariate label mode.

    Stored sigma/rho win; otherwise they are measured from ra_map. The mean always
    comes from the annotated center.
    """
    config = config or LabelConfig()
    if annotation.sigma is not None:
        return BivariateParams(tuple(annotation.center_bin), tuple(annotation.sigma), annotation.rho or 0.0)
    if ra_map is None:
        raise ValueError('Bivariate labelling needs the RA map or annotations with sigma/rho')
    measured = bivariate_from_spectrum(ra_map, annotation.box_ra, config.mask_threshold, config.sigma_min,
                                       config.rho_max, config.truncation_correction)
    return BivariateParams(tuple(annotation.center_bin), measured.sigma, measured.rho)


def heatmap_targets(annotations, map_shape, config=None, ra_map=None):
    """
    Per-class heatmaps with a peak of exactly 1 at each annotation's center cell.

    Returns:
        Array [3, R, A]
    """
    config = config or LabelConfig()
    heatmap = np.zeros((len(CLASS_NAMES),) + tuple(map_shape))
    for ann in annotations:
        center = (snap_bin(quantize_bin(ann.center_bin[0]), map_shape[0]),
                  snap_bin(quantize_bin(ann.center_bin[1]), map_shape[1]))
        if config.label_mode == 'gaussian':
            blob = render_plain_gaussian(center, map_shape, config.plain_sigma, config.render_cutoff_sigma)
        else:
            params = annotation_params(ann, ra_map, config)
            blob = render_bivariate(BivariateParams(center, params.sigma, params.rho), map_shape,
                                    config.render_cutoff_sigma)
        np.maximum(heatmap[ann.class_id], blob, out=heatmap[ann.class_id])
    return heatmap


def offset_targets(annotations, map_shape, patch=_LABEL['offset_patch']):
    """
    Normalised center offsets in a patch around each center cell.

    Cell p of the patch stores (mu - p) / half, half = (patch - 1) / 2, so that
    p + half * offset(p) = mu. Cells whose offset would leave [-1, 1] are not
    supervised. Where patches overlap, the cell belongs to the nearest center.

    Returns:
        Tuple (offset [2, R, A], offset_mask [R, A])
    """
    if patch % 2 == 0:
        raise ValueError(f'offset_targets: patch must be odd, got {patch}')
    half = (patch - 1) // 2
    offset = np.zeros((2,) + tuple(map_shape))
    mask = np.zeros(tuple(map_shape))
    nearest = np.full(tuple(map_shape), np.inf)
    for ann in annotations:
        mu_r, mu_a = quantize_bin(ann.center_bin[0]), quantize_bin(ann.center_bin[1])
        c_r, c_a = snap_bin(mu_r, map_shape[0]), snap_bin(mu_a, map_shape[1])
        for p_r in range(max(0, c_r - half), min(map_shape[0], c_r + half + 1)):
            d_r = mu_r - p_r
            if abs(d_r) > half:
                continue
            for p_a in range(max(0, c_a - half), min(map_shape[1], c_a + half + 1)):
                d_a = mu_a - p_a
                if abs(d_a) > half:
                    continue
                distance = d_r * d_r + d_a * d_a
                if distance < nearest[p_r, p_a]:
                    nearest[p_r, p_a] = distance
                    offset[0, p_r, p_a] = d_r / half
                    offset[1, p_r, p_a] = d_a / half
                    mask[p_r, p_a] = 1.0
    return offset, mask


def heading_targets(annotations, map_shape, patch=_LABEL['heading_patch'], stride=_LABEL['heading_stride']):
    """
    (sin, cos) heading maps on the 1/stride grid.

    Cell g covers bins [stride*g, stride*g + stride - 1], so a center mu sits
    at grid position v = (mu - (stride - 1) / 2) / stride. Each annotation
    writes its heading in a patch x patch block around the cell nearest to v;
    the nearest center wins on overlap.

    Returns:
        Tuple (heading [2, R/stride, A/stride], heading_mask [R/stride, A/stride])
    """
    if map_shape[0] % stride or map_shape[1] % stride:
        raise ValueError(f'heading_targets: map shape {tuple(map_shape)} not divisible by {stride}')
    grid = (map_shape[0] // stride, map_shape[1] // stride)
    heading = np.zeros((2,) + grid)
    mask = np.zeros(grid)
    nearest = np.full(grid, np.inf)
    half = (patch - 1) // 2
    shift = (stride - 1) / 2.0
    for ann in annotations:
        v_r = (quantize_bin(ann.center_bin[0]) - shift) / stride
        v_a = (quantize_bin(ann.center_bin[1]) - shift) / stride
        c_r, c_a = snap_bin(v_r, grid[0]), snap_bin(v_a, grid[1])
        theta = ann.heading_rad
        # odd in theta; sin(pi) is not 0 in floating point and wrap_angle(-pi) is pi
        if theta == 0.0 or abs(theta) == math.pi:
            sin_t = 0.0
        else:
            sin_t = math.copysign(math.sin(abs(theta)), theta)
        cos_t = math.cos(abs(theta))
        for g_r in range(max(0, c_r - half), min(grid[0], c_r + half + 1)):
            for g_a in range(max(0, c_a - half), min(grid[1], c_a + half + 1)):
                distance = (v_r - g_r) ** 2 + (v_a - g_a) ** 2
                if distance < nearest[g_r, g_a]:
                    nearest[g_r, g_a] = distance
                    heading[0, g_r, g_a] = sin_t
                    heading[1, g_r, g_a] = cos_t
                    mask[g_r, g_a] = 1.0
    return heading, mask


def build_targets(annotations, map_shape, config=None, ra_map=None):
    """Assemble all target maps of one frame."""
    config = (config or LabelConfig()).validate()
    offset, offset_mask = offset_targets(annotations, map_shape, config.offset_patch)
    heading, heading_mask = heading_targets(annotations, map_shape, config.heading_patch)
    return TargetMaps(
        heatmap=heatmap_targets(annotations, map_shape, config, ra_map),
        offset=offset,
        offset_mask=offset_mask,
        heading=heading,
        heading_mask=heading_mask,
    )


def label_frame(frame, annotations, config=None):
    """
    Label one frame.

    In bivariate mode each annotation gets sigma/rho measured from the frame's RA
    map (kept if already present), so later transforms can re-render the exact
    same heatmap.

    Returns:
        Tuple (TargetMaps, list of Annotation)
    """
    config = (config or LabelConfig()).validate()
    labelled = []
    for ann in annotations:
        if config.label_mode == 'bivariate' and ann.sigma is None:
            params = annotation_params(ann, frame.ra, config)
            ann = replace(ann, sigma=params.sigma, rho=params.rho)
        labelled.append(ann)
    return build_targets(labelled, frame.ra.shape, config, frame.ra), labelled


# ==================== Heading Ground Truth ====================

def heading_from_trajectory(centers):
    """
    Headings along a track from a natural cubic spline through its positions.

    Args:
        centers: Sequence of (t, x, y) with strictly increasing t

    Returns:
        List of headings atan2(x'(t), y'(t)), one per sample

    Raises:
        ValueError: With fewer than 2 samples, duplicate or decreasing timestamps

    Example:
        >>> heading_from_trajectory([(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)])
        [0.7853981633974483, 0.7853981633974483]
    """
    samples = np.asarray(centers, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 3 or samples.shape[0] < 2:
        raise ValueError('heading_from_trajectory needs at least 2 samples of (t, x, y)')
    t, x, y = samples[:, 0], samples[:, 1], samples[:, 2]
    steps = np.diff(t)
    if np.any(steps == 0):
        raise ValueError(f'heading_from_trajectory: duplicate timestamps {sorted(set(t[1:][steps == 0]))}')
    if np.any(steps < 0):
        raise ValueError('heading_from_trajectory: timestamps must be strictly increasing')

    if len(t) == 2:
        heading = wrap_angle(math.atan2(x[1] - x[0], y[1] - y[0]))
        return [heading, heading]

    dx = CubicSpline(t, x, bc_type='natural').derivative()(t)
    dy = CubicSpline(t, y, bc_type='natural').derivative()(t)
    return [wrap_angle(math.atan2(float(vx), float(vy))) for vx, vy in zip(dx, dy)]


# ==================== Augmentation ====================

def flip_annotation(ann, a_bins):
    """Mirror an annotation across the angle axis."""
    r0, a0, r1, a1 = ann.box_ra
    return replace(
        ann,
        center_bin=(ann.center_bin[0], (a_bins - 1) - ann.center_bin[1]),
        box_ra=(r0, a_bins - 1 - a1, r1, a_bins - 1 - a0),
        heading_rad=wrap_angle(-ann.heading_rad),
        rho=None if ann.rho is None else -ann.rho,
    )


def flip_frame(frame):
    """Reverse the angle axis of the RA and AD maps."""
    return RadarFrame(ra=frame.ra[:, ::-1].copy(), rd=frame.rd.copy(), ad=frame.ad[::-1, :].copy(),
                      geometry=frame.geometry, frame_index=frame.frame_index)


def flip_targets(targets):
    """Mirror target maps; the angle offset and sin(heading) change sign."""
    offset = targets.offset[:, :, ::-1].copy()
    # 0.0 - x keeps unsupervised zeros at +0.0
    offset[1] = 0.0 - offset[1]
    heading = targets.heading[:, :, ::-1].copy()
    heading[0] = 0.0 - heading[0]
    return TargetMaps(
        heatmap=targets.heatmap[:, :, ::-1].copy(),
        offset=offset,
        offset_mask=targets.offset_mask[:, ::-1].copy(),
        heading=heading,
        heading_mask=targets.heading_mask[:, ::-1].copy(),
    )


def add_noise(frame, rng, scale=_LABEL['noise_scale']):
    """Add zero-mean Gaussian noise of scale * std to each view, clamped at 0."""
    noisy = {}
    for view in ('ra', 'rd', 'ad'):
        values = getattr(frame, view)
        sigma = scale * float(values.std())
        noisy[view] = np.maximum(values + rng.normal(0.0, sigma, values.shape), 0.0) if sigma > 0 else values.copy()
    return RadarFrame(geometry=frame.geometry, frame_index=frame.frame_index, **noisy)


def augment(frames, targets, annotations, rng, config=None):
    """
    Random noise and horizontal flip, applied consistently to a frame stack.

    The noise coin is drawn first, then the flip coin, so the draws per call are
    fixed given the generator state.

    Args:
        frames: RadarFrame or list of RadarFrame (past frames of a stack)
        targets: TargetMaps of the current frame
        annotations: Annotations of the current frame
        rng: numpy Generator

    Returns:
        Tuple (frames, targets, annotations) of the same structure as the input
    """
    config = config or LabelConfig()
    single = isinstance(frames, RadarFrame)
    stack = [frames] if single else list(frames)
    add = rng.random() < config.noise_prob
    flip = rng.random() < config.flip_prob
    if add:
        stack = [add_noise(frame, rng, config.noise_scale) for frame in stack]
    if flip:
        a_bins = stack[0].ra.shape[1]
        stack = [flip_frame(frame) for frame in stack]
        targets = flip_targets(targets)
        annotations = [flip_annotation(ann, a_bins) for ann in annotations]
    return (stack[0] if single else stack), targets, list(annotations)
