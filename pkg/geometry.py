#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Bounding box arithmetic (module of OSSOD-Bench)

 Boxes are closed axis-aligned rectangles in continuous scene units
 (x_min, y_min, x_max, y_max). This module holds IoU, non-maximum suppression,
 the IoU-band labeling of proposals and the center/log-size offset
 parameterization used by the regression head.

 Every function here is a pure function of its arguments.

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
import math

import namedlist
import numpy

BBox = namedlist.namedtuple('BBox', ['x_min', 'y_min', 'x_max', 'y_max'])

# Proposal label kinds
FOREGROUND = 'foreground'
BACKGROUND = 'background'
IGNORED = 'ignored'

ProposalLabel = namedlist.namedtuple('ProposalLabel', ['kind', 'class_id', 'matched_gt'],
                                     default=None)

# Largest log-size offset accepted when decoding (same clamp as Detectron2)
SCALE_CLAMP = math.log(1000.0 / 16)

SCENE_EXTENT = (0.0, 0.0, 1.0, 1.0)


class InvalidBoxError(Exception):
    """
    Raised when a box does not satisfy x_min <= x_max and y_min <= y_max
    """
    pass


def make_box(x_min, y_min, x_max, y_max):
    """
    Build a BBox checking its invariants

    raise: InvalidBoxError if a coordinate is not finite or the box is inverted
    """
    coords = (float(x_min), float(y_min), float(x_max), float(y_max))
    if not all(math.isfinite(c) for c in coords):
        raise InvalidBoxError('Box with non finite coordinates: %s' % (coords, ))
    if coords[0] > coords[2] or coords[1] > coords[3]:
        raise InvalidBoxError('Inverted box: %s' % (coords, ))
    return BBox(*coords)


def area(box):
    """
    Area of a box (0 for degenerate boxes)
    """
    return max(0.0, box.x_max - box.x_min) * max(0.0, box.y_max - box.y_min)


def iou(a, b):
    """
    Intersection over Union of two boxes

    return: |a∩b| / |a∪b|, 0 when the union has no area
    """
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, iw) * max(0.0, ih)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def boxes_to_array(boxes):
    """
    List of boxes to a (n, 4) float array
    """
    if len(boxes) == 0:
        return numpy.zeros((0, 4))
    return numpy.array([tuple(b) for b in boxes], dtype=float)


def array_to_boxes(array):
    """
    (n, 4) array to a list of BBox
    """
    return [BBox(*(float(v) for v in row)) for row in numpy.asarray(array)]


def iou_matrix(boxes_a, boxes_b):
    """
    Pairwise IoU between two sets of boxes

    boxes_a: (n, 4) array or list of BBox
    boxes_b: (m, 4) array or list of BBox

    return: (n, m) array; pairs whose union has no area get 0
    """
    a = numpy.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = numpy.asarray(boxes_b, dtype=float).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return numpy.zeros((len(a), len(b)))

    iw = (numpy.minimum(a[:, None, 2], b[None, :, 2])
          - numpy.maximum(a[:, None, 0], b[None, :, 0]))
    ih = (numpy.minimum(a[:, None, 3], b[None, :, 3])
          - numpy.maximum(a[:, None, 1], b[None, :, 1]))
    inter = numpy.clip(iw, 0.0, None) * numpy.clip(ih, 0.0, None)

    area_a = numpy.clip(a[:, 2] - a[:, 0], 0.0, None) * numpy.clip(a[:, 3] - a[:, 1], 0.0, None)
    area_b = numpy.clip(b[:, 2] - b[:, 0], 0.0, None) * numpy.clip(b[:, 3] - b[:, 1], 0.0, None)
    union = area_a[:, None] + area_b[None, :] - inter

    result = numpy.zeros_like(inter)
    positive = union > 0.0
    result[positive] = inter[positive] / union[positive]
    return result


def nms(dets, iou_threshold):
    """
    Greedy non-maximum suppression (class agnostic)

    dets: list of (BBox, score)
    iou_threshold: a detection is suppressed if it overlaps an already kept
                   detection with IoU > iou_threshold

    return: list of kept indices, in descending score order (equal scores keep
            input order)
    """
    if len(dets) == 0:
        return []
    boxes = boxes_to_array([d[0] for d in dets])
    scores = numpy.array([float(d[1]) for d in dets])

    order = numpy.argsort(-scores, kind='stable')
    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(int(i))
        overlaps = iou_matrix(boxes[i:i + 1], boxes[order[1:]])[0]
        order = order[1:][overlaps <= iou_threshold]
    return keep


def assign_proposal_labels(proposals, gt, fg_iou, bg_iou):
    """
    Label proposals by their best overlap with the ground truth

    proposals: list of BBox (or (n, 4) array)
    gt: list of (BBox, class_id)
    fg_iou: proposals with max IoU > fg_iou take the class of that ground truth
    bg_iou: proposals with max IoU < bg_iou are background, the rest ignored

    return: list of ProposalLabel, one per proposal
    """
    if not fg_iou > bg_iou:
        raise ValueError('fg_iou (%s) must be greater than bg_iou (%s)' % (fg_iou, bg_iou))

    n = len(proposals)
    if len(gt) == 0:
        return [ProposalLabel(BACKGROUND) for _ in range(n)]

    overlaps = iou_matrix(proposals, [tuple(box) for box, _ in gt])
    best = overlaps.argmax(axis=1)  # first maximum, the lowest gt index
    best_iou = overlaps[numpy.arange(n), best]

    labels = []
    for p in range(n):
        m = best_iou[p]
        if m > fg_iou:
            g = int(best[p])
            labels.append(ProposalLabel(FOREGROUND, int(gt[g][1]), g))
        elif m < bg_iou:
            labels.append(ProposalLabel(BACKGROUND))
        else:
            labels.append(ProposalLabel(IGNORED))
    return labels


def clip_boxes(array, extent=SCENE_EXTENT):
    """
    Clip (n, 4) boxes to the scene extent and reorder coordinates so that
    x_min <= x_max and y_min <= y_max
    """
    a = numpy.array(array, dtype=float).reshape(-1, 4)
    x0, y0, x1, y1 = extent
    a[:, [0, 2]] = numpy.clip(a[:, [0, 2]], x0, x1)
    a[:, [1, 3]] = numpy.clip(a[:, [1, 3]], y0, y1)
    xs = numpy.sort(a[:, [0, 2]], axis=1)
    ys = numpy.sort(a[:, [1, 3]], axis=1)
    return numpy.stack([xs[:, 0], ys[:, 0], xs[:, 1], ys[:, 1]], axis=1)


def _centers_sizes(a):
    w = numpy.maximum(a[:, 2] - a[:, 0], 1e-6)
    h = numpy.maximum(a[:, 3] - a[:, 1], 1e-6)
    return a[:, 0] + 0.5 * w, a[:, 1] + 0.5 * h, w, h


def encode_offsets(anchors, targets):
    """
    Offsets (dx, dy, dw, dh) that transform anchors into targets

    anchors, targets: (n, 4) arrays

    return: (n, 4) array
    """
    a = numpy.asarray(anchors, dtype=float).reshape(-1, 4)
    t = numpy.asarray(targets, dtype=float).reshape(-1, 4)
    acx, acy, aw, ah = _centers_sizes(a)
    tcx, tcy, tw, th = _centers_sizes(t)
    return numpy.stack([(tcx - acx) / aw,
                        (tcy - acy) / ah,
                        numpy.log(tw / aw),
                        numpy.log(th / ah)], axis=1)


def decode_offsets(anchors, deltas, extent=SCENE_EXTENT):
    """
    Apply offsets (dx, dy, dw, dh) to anchors, clipping the result to the scene

    return: (n, 4) array of valid boxes
    """
    a = numpy.asarray(anchors, dtype=float).reshape(-1, 4)
    d = numpy.asarray(deltas, dtype=float).reshape(-1, 4)
    aw = a[:, 2] - a[:, 0]
    ah = a[:, 3] - a[:, 1]
    acx = a[:, 0] + 0.5 * aw
    acy = a[:, 1] + 0.5 * ah

    cx = acx + d[:, 0] * aw
    cy = acy + d[:, 1] * ah
    w = aw * numpy.exp(numpy.minimum(d[:, 2], SCALE_CLAMP))
    h = ah * numpy.exp(numpy.minimum(d[:, 3], SCALE_CLAMP))
    boxes = numpy.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
    return clip_boxes(boxes, extent)
