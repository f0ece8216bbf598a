#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Detection and OOD filtering metrics (module of OSSOD-Bench)

 Average precision at a single IoU threshold with all-point interpolation,
 its mean over ID classes, the AUROC of ID vs OOD scores and the precision and
 recall of pseudo-labels against the hidden annotations.

 Detections for AP are (scene_id, BBox, score) and ground truth is
 (scene_id, BBox); a detection can only match ground truth of its scene.

 This program is free software: you can redistribute it and/or modify
   it under the terms of the GNU General Public License as published
   by the Free Software Foundation, either version 3 of the License,
   or (at your option) any later version.
 This program is distributed in the hope that it will be useful,
   but WITHOUT ANY WARRANTY; without even the implied warranty of
   MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
   GNU General Public License for more details.
 You should have received a copy of the GNU General Public License
   along with this program.  If not, see <http://www.gnu.org/licenses/>.
"""
import collections

import namedlist
import numpy
import scipy.stats

import geometry

AP_IOU = 0.5

# per_class_ap: nan for classes without ground truth nor detections
# loss_components: (sup_det, unsup_det, sup_ood, unsup_ood) of the last step; sup_ood sums
#                  both OOD heads when the last step is a burn-in one
# pseudo_counts: (accepted, ignored, rejected)
# pr_curves: {class_id: {'precision': [...], 'recall': [...]}}, not written to CSV
MetricsRecord = namedlist.namedlist('MetricsRecord', ['iteration', 'map', 'per_class_ap', 'ood_auroc',
                                                      'auroc_defined', 'pseudo_precision', 'precision_defined',
                                                      'pseudo_recall', 'loss_components', 'loss_total',
                                                      'pseudo_counts', ('pr_curves', None)])


class MetricError(Exception):
    """
    Raised when a metric is not defined for its input
    """
    pass


def match_detections(dets, gt, iou_threshold=AP_IOU):
    """
    Greedy matching of detections, by descending score, to ground truth

    Each detection takes the unmatched ground truth of its scene with the
    highest IoU >= iou_threshold (lowest index on ties).

    return: (order, true positive flags in that order)
    """
    scores = numpy.array([float(d[2]) for d in dets])
    order = numpy.argsort(-scores, kind='stable')
    by_scene = collections.defaultdict(list)
    for index, (scene_id, box) in enumerate(gt):
        by_scene[scene_id].append(index)
    matched = set()
    flags = []
    for i in order:
        scene_id, box, _ = dets[i]
        candidates = [g for g in by_scene.get(scene_id, []) if g not in matched]
        best = None
        best_iou = iou_threshold
        for g in candidates:
            overlap = geometry.iou(box, gt[g][1])
            if overlap > best_iou or (best is None and overlap >= best_iou):
                best = g
                best_iou = overlap
        if best is None:
            flags.append(False)
        else:
            matched.add(best)
            flags.append(True)
    return [int(i) for i in order], flags


def precision_recall_curve(dets, gt, iou_threshold=AP_IOU):
    """
    Precision and recall after each detection in descending score order

    return: (precision array, recall array), recall is 0 without ground truth
    """
    _, flags = match_detections(dets, gt, iou_threshold)
    tp = numpy.cumsum(numpy.array(flags, dtype=float))
    ranks = numpy.arange(1, len(flags) + 1)
    precision = tp / ranks if len(flags) else numpy.zeros(0)
    recall = tp / len(gt) if gt else numpy.zeros(len(flags))
    return precision, recall


def average_precision(dets, gt, iou_threshold=AP_IOU):
    """
    Area under the all-point interpolated precision/recall curve of one class

    dets: list of (scene_id, BBox, score)
    gt: list of (scene_id, BBox)

    return: AP in [0, 1]; 0 without ground truth but with detections; None
            without either
    """
    if not gt:
        return 0.0 if dets else None
    if not dets:
        return 0.0
    precision, recall = precision_recall_curve(dets, gt, iou_threshold)
    mrec = numpy.concatenate([[0.0], recall, [1.0]])
    mpre = numpy.concatenate([[0.0], precision, [0.0]])
    mpre = numpy.maximum.accumulate(mpre[::-1])[::-1]
    steps = numpy.flatnonzero(mrec[1:] != mrec[:-1])
    return float(numpy.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(per_class):
    """
    Mean of the APs of the classes with ground truth (None entries skipped)

    raise: MetricError if no class can be evaluated
    """
    values = [ap for ap in per_class if ap is not None]
    if not values:
        raise MetricError('No ID class with ground truth')
    return float(numpy.mean(values))


def class_aps(dets, gts, iou_threshold=AP_IOU):
    """
    AP of every class and their mean over the classes with ground truth

    dets: {class_id: list of (scene_id, BBox, score)}
    gts: {class_id: list of (scene_id, BBox)}

    raise: MetricError if no class has ground truth
    return: (list of AP or None ordered by class_id, mAP)
    """
    classes = sorted(gts)
    per_class = [average_precision(dets.get(c, []), gts[c], iou_threshold) for c in classes]
    return per_class, mean_ap([ap if gts[c] else None for c, ap in zip(classes, per_class)])


def ood_auroc(scores):
    """
    Probability that a random ID sample outscores a random OOD one (ties
    count half), from the rank sum statistic

    scores: list of (score, is_id)

    raise: MetricError if only one of the labels is present
    """
    values = numpy.array([float(s) for s, _ in scores])
    is_id = numpy.array([bool(flag) for _, flag in scores], dtype=bool)
    n_id = int(is_id.sum())
    n_ood = len(values) - n_id
    if n_id == 0 or n_ood == 0:
        raise MetricError('AUROC needs ID and OOD samples (%d ID, %d OOD)' % (n_id, n_ood))
    ranks = scipy.stats.rankdata(values)
    return float((ranks[is_id].sum() - n_id * (n_id + 1) / 2.0) / (n_id * n_ood))


def pseudo_label_quality(pseudo_sets, hidden_gt, num_classes, iou_threshold=AP_IOU):
    """
    Precision and recall of the filtered pseudo-labels

    A pseudo-label is correct when it matches (one to one, by descending
    score) an ID ground truth instance of the same class with IoU >= 0.5.

    pseudo_sets: list of PseudoLabelSet
    hidden_gt: {scene_id: [(BBox, class_id), ...]}
    num_classes: N, classes >= N are OOD

    return: (precision, recall, precision_defined); undefined precision is 0
    """
    correct = 0
    predicted = 0
    for pseudo in pseudo_sets:
        gt = [(box, c) for box, c in hidden_gt.get(pseudo.scene_id, []) if c < num_classes]
        matched = set()
        for det in sorted(pseudo.filtered, key=lambda d: -d.cls_score):
            predicted += 1
            best = None
            for g, (box, c) in enumerate(gt):
                if g in matched or c != det.class_id:
                    continue
                overlap = geometry.iou(det.box, box)
                if overlap >= iou_threshold and (best is None or overlap > best[1]):
                    best = (g, overlap)
            if best is not None:
                matched.add(best[0])
                correct += 1
    total = sum(1 for pseudo in pseudo_sets for _, c in hidden_gt.get(pseudo.scene_id, []) if c < num_classes)
    precision = correct / float(predicted) if predicted else 0.0
    recall = correct / float(total) if total else 0.0
    return precision, recall, predicted > 0
