# metrics.py - PyRaDet Detection Metrics
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
Evaluation of detections against ground truth with distance-based association.

Detections are true positives when they lie within a distance threshold (metres,
bird's-eye view) of an unmatched ground-truth object of the same class.
Reported: per-class AP and mAP per threshold, RMSE of TP distances,
misclassification rate and heading accuracy bands.

Usage:
    from pyradet.metrics import evaluate_detections

    report = evaluate_detections([(detections, ground_truth), ...])
    report.to_json('eval.json')
"""

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .metadata import CLASS_NAMES, DEFAULTS

_METRICS = DEFAULTS['metrics']


@dataclass
class GroundTruth:
    """A ground-truth object in metric coordinates."""
    class_id: int
    pos_cart: Tuple[float, float]
    heading_rad: Optional[float] = None


def ground_truth_from_annotations(annotations, geometry):
    """Convert annotations (bin coordinates) to GroundTruth (metres)."""
    truth = []
    for ann in annotations:
        x, y = geometry.bins_to_cartesian(ann.center_bin[0], ann.center_bin[1])
        truth.append(GroundTruth(ann.class_id, (float(x), float(y)), ann.heading_rad))
    return truth


@dataclass
class Assignment:
    """
    Result of matching one frame.

    Attributes:
        detections: Detections in descending confidence order
        matched_gt: Per detection, index of its matched GroundTruth or None
        cross_class: Per detection, True when it is unmatched and its nearest
            ground truth within the threshold has another class
        distances: Per detection, distance to the matched ground truth or None
        gt_matched: Per ground truth, whether a detection claimed it
    """
    detections: list
    ground_truth: list
    matched_gt: List[Optional[int]]
    cross_class: List[bool]
    distances: List[Optional[float]]
    gt_matched: List[bool]

    @property
    def tp(self):
        return sum(1 for m in self.matched_gt if m is not None)

    @property
    def fp(self):
        return sum(1 for m in self.matched_gt if m is None)

    @property
    def fn(self):
        return sum(1 for m in self.gt_matched if not m)

    def pairs(self):
        """(detection, ground truth, distance) for every true positive."""
        return [(det, self.ground_truth[g], d)
                for det, g, d in zip(self.detections, self.matched_gt, self.distances) if g is not None]


def match(detections, ground_truth, threshold_m):
    """
    Greedy distance matching.

    Detections are visited by descending confidence; each takes the nearest
    unmatched same-class ground truth within threshold_m.

    Args:
        detections: Detection-like objects with class_id, pos_cart, confidence
        ground_truth: GroundTruth list
        threshold_m: Association distance in metres

    Returns:
        Assignment
    """
    ordered = sorted(detections, key=lambda d: -d.confidence)
    gt_matched = [False] * len(ground_truth)
    matched_gt, cross_class, distances = [], [], []
    for det in ordered:
        best, best_dist = None, None
        nearest, nearest_dist = None, None
        for index, gt in enumerate(ground_truth):
            dist = math.hypot(det.pos_cart[0] - gt.pos_cart[0], det.pos_cart[1] - gt.pos_cart[1])
            if dist > threshold_m:
                continue
            if nearest_dist is None or dist < nearest_dist:
                nearest, nearest_dist = index, dist
            if gt.class_id == det.class_id and not gt_matched[index] and (best_dist is None or dist < best_dist):
                best, best_dist = index, dist
        if best is not None:
            gt_matched[best] = True
        matched_gt.append(best)
        distances.append(best_dist)
        cross_class.append(best is None and nearest is not None
                           and ground_truth[nearest].class_id != det.class_id)
    return Assignment(ordered, list(ground_truth), matched_gt, cross_class, distances, gt_matched)


def average_precision(scores, is_tp, n_gt, interpolation=_METRICS['interpolation']):
    """
    AP of one class from its confidence-sorted detections.

    Args:
        scores: Confidences of all detections of the class
        is_tp: Matching flags, same order as scores
        n_gt: Number of ground-truth objects of the class
        interpolation: 'all_point' (area under the precision envelope) or '11_point'

    Returns:
        AP in [0, 1], or None when n_gt == 0
    """
    if n_gt == 0:
        return None
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind='stable')
    hits = np.asarray(is_tp, dtype=np.float64)[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    rec = tp / float(n_gt)
    prec = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)

    if interpolation == '11_point':
        ap = 0.0
        for t in np.arange(0.0, 1.1, 0.1):
            p = np.max(prec[rec >= t]) if np.sum(rec >= t) > 0 else 0.0
            ap += p / 11.0
        return float(ap)
    if interpolation != 'all_point':
        raise ValueError(f"average_precision: unknown interpolation '{interpolation}'")

    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def distance_rmse(distances):
    """Root mean squared distance of true positives; None when there are none."""
    if len(distances) == 0:
        return None
    values = np.asarray(distances, dtype=np.float64)
    return float(np.sqrt(np.mean(values * values)))


def heading_error(predicted, truth):
    """Absolute angular difference wrapped to [0, pi]."""
    diff = abs(predicted - truth) % (2.0 * math.pi)
    return min(diff, 2.0 * math.pi - diff)


def heading_accuracy(pairs, bands_deg=_METRICS['heading_bands_deg']):
    """
    Fraction of (predicted, true) heading pairs within each band.

    A missing predicted heading counts as outside every band.

    Returns:
        Dict band in degrees -> fraction, None values when pairs is empty
    """
    if len(pairs) == 0:
        return {band: None for band in bands_deg}
    result = {}
    for band in bands_deg:
        limit = math.radians(band)
        hits = sum(1 for pred, truth in pairs
                   if pred is not None and truth is not None and heading_error(pred, truth) <= limit)
        result[band] = hits / len(pairs)
    return result


def misclassification_rate(assignments):
    """
    Cross-class near matches / (cross-class near matches + true positives).

    Only detections left unmatched by their own class are counted as
    cross-class: such a detection counts when the nearest ground truth within
    the threshold has a different class. A detection that matched an object of
    its own class is a true positive, even if an object of another class lies
    closer. Unmatched detections with no ground truth in range are false
    positives and appear in neither term.

    Args:
        assignments: Assignment or list of Assignment

    Returns:
        Rate in [0, 1], 0.0 when there are neither true positives nor
        cross-class detections
    """
    if isinstance(assignments, Assignment):
        assignments = [assignments]
    cross = sum(sum(a.cross_class) for a in assignments)
    tp = sum(a.tp for a in assignments)
    return cross / (cross + tp) if cross + tp else 0.0


def _threshold_key(threshold_m):
    return f'{threshold_m:g}m'


@dataclass
class EvalReport:
    """
    Metrics of one model on one split.

    ap_per_class and counts are keyed by threshold ('2m', '1m') then class name;
    flags lists conditions like classes without ground truth.
    """
    thresholds_m: Tuple[float, ...]
    ap_per_class: Dict[str, Dict[str, Optional[float]]]
    mean_ap: Dict[str, float]
    rmse_distance_m: Optional[float]
    misclassification_rate: float
    heading_acc: Dict[float, Optional[float]]
    counts: Dict[str, Dict[str, Dict[str, int]]]
    n_frames: int = 0
    flags: List[str] = field(default_factory=list)

    @property
    def map_2m(self):
        return self.mean_ap.get(_threshold_key(2.0))

    @property
    def map_1m(self):
        return self.mean_ap.get(_threshold_key(1.0))

    def to_dict(self):
        return {
            'thresholds_m': list(self.thresholds_m),
            'ap_per_class': self.ap_per_class,
            'mean_ap': self.mean_ap,
            'map_2m': self.map_2m,
            'map_1m': self.map_1m,
            'rmse_distance_m': self.rmse_distance_m,
            'misclassification_rate': self.misclassification_rate,
            'heading_acc': {f'{band:g}': value for band, value in self.heading_acc.items()},
            'counts': self.counts,
            'n_frames': self.n_frames,
            'flags': list(self.flags),
        }

    def to_json(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    def to_frame(self, model_name='model'):
        """One row per threshold: AP per class, mAP, and the threshold-independent metrics."""
        rows = []
        for threshold in self.thresholds_m:
            key = _threshold_key(threshold)
            row = {'model': model_name, 'threshold_m': threshold, 'mAP': self.mean_ap[key]}
            for name in CLASS_NAMES:
                row[f'AP_{name}'] = self.ap_per_class[key].get(name)
            row['rmse_distance_m'] = self.rmse_distance_m
            row['misclassification_rate'] = self.misclassification_rate
            for band, value in self.heading_acc.items():
                row[f'heading_acc_{band:g}'] = value
            rows.append(row)
        return pd.DataFrame(rows)

    def to_csv(self, path, model_name='model'):
        self.to_frame(model_name).to_csv(path, index=False)
        return path


def evaluate_detections(frames, thresholds_m=_METRICS['thresholds_m'],
                        bands_deg=_METRICS['heading_bands_deg'],
                        interpolation=_METRICS['interpolation']):
    """
    Aggregate metrics over many frames.

    Localisation error, misclassification and heading accuracy use the loosest
    threshold.

    Args:
        frames: Iterable of (detections, ground truth list)
        thresholds_m: Association thresholds
        bands_deg: Heading accuracy bands
        interpolation: 'all_point' or '11_point'

    Returns:
        EvalReport
    """
    frames = list(frames)
    thresholds_m = tuple(float(t) for t in thresholds_m)
    loosest = max(thresholds_m)
    ap_per_class, mean_ap, counts = {}, {}, {}
    flags = []
    loose_assignments = []

    for threshold in thresholds_m:
        key = _threshold_key(threshold)
        per_class = {c: {'scores': [], 'tp': [], 'n_gt': 0} for c in range(len(CLASS_NAMES))}
        class_counts = {name: {'TP': 0, 'FP': 0, 'FN': 0} for name in CLASS_NAMES}
        assignments = []
        for detections, truth in frames:
            assignment = match(detections, truth, threshold)
            assignments.append(assignment)
            for det, g in zip(assignment.detections, assignment.matched_gt):
                per_class[det.class_id]['scores'].append(det.confidence)
                per_class[det.class_id]['tp'].append(g is not None)
                class_counts[CLASS_NAMES[det.class_id]]['TP' if g is not None else 'FP'] += 1
            for gt, claimed in zip(truth, assignment.gt_matched):
                per_class[gt.class_id]['n_gt'] += 1
                if not claimed:
                    class_counts[CLASS_NAMES[gt.class_id]]['FN'] += 1

        ap_per_class[key] = {}
        for class_id, name in enumerate(CLASS_NAMES):
            entry = per_class[class_id]
            ap_per_class[key][name] = average_precision(entry['scores'], entry['tp'], entry['n_gt'], interpolation)
            if entry['n_gt'] == 0:
                flag = f'{name}: no ground truth at {key}, skipped in mAP'
                if flag not in flags:
                    flags.append(flag)
        valid = [ap for ap in ap_per_class[key].values() if ap is not None]
        mean_ap[key] = float(np.mean(valid)) if valid else 0.0
        counts[key] = class_counts
        if threshold == loosest:
            loose_assignments = assignments

    pairs = [p for a in loose_assignments for p in a.pairs()]
    rmse = distance_rmse([d for _, _, d in pairs])
    if rmse is None:
        flags.append('no true positives: distance RMSE absent')
    headings = heading_accuracy([(det.heading_rad, gt.heading_rad) for det, gt, _ in pairs], bands_deg)
    for flag in flags:
        warnings.warn(flag, UserWarning)

    return EvalReport(
        thresholds_m=thresholds_m,
        ap_per_class=ap_per_class,
        mean_ap=mean_ap,
        rmse_distance_m=rmse,
        misclassification_rate=misclassification_rate(loose_assignments),
        heading_acc=headings,
        counts=counts,
        n_frames=len(frames),
        flags=flags,
    )
