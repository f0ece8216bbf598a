#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Miniature two-stage detector heads (module of OSSOD-Bench)

 Heads work on proposal features (the output of ROI pooling in a real
 detector):

   - classification head: N ID classes + background (index N), softmax
   - regression head: class agnostic offsets (dx, dy, dw, dh) of the proposal
   - OOD heads: the OVA head and the binary ID-vs-not head (see oodHeads)

 With hidden_dim > 0 every head reads a shared tanh trunk instead of the raw
 features. All losses return analytic gradients in a ModelParams container, and
 the optimizer is plain gradient descent.

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
import scipy.special

import geometry
import oodHeads

# Smooth L1 transition point, in offset units
SMOOTH_L1_BETA = 1.0

Detection = namedlist.namedlist('Detection', ['box', 'class_id', 'cls_score', 'ood_score',
                                              ('filter_score', None), ('proposal_index', None)])

# features: (B, d), targets: (B,) in [0, N], anchors: (B, 4), offsets: (B, 4)
# offsets are regression targets, only meaningful on foreground rows
ProposalBatch = namedlist.namedtuple('ProposalBatch', ['features', 'targets', 'anchors', 'offsets'])


class EmptyBatchError(Exception):
    """
    Raised when a supervised batch has no effective proposals
    """
    pass


class DivergenceError(Exception):
    """
    Raised on non-finite losses or gradients
    """
    pass


class ShapeError(Exception):
    """
    Raised when two parameter sets do not have the same shapes
    """
    pass


class ModelParams(object):
    """
    All learnable matrices of one model (teacher or student)

        cls_w (N+1, e), cls_b (N+1,)    classification head
        reg_w (4, e), reg_b (4,)        regression head
        ova_w (N+1, 2, e), ova_b (N+1, 2)  OVA head
        bin_w (2, e), bin_b (2,)        binary ID-vs-not head
        trunk_w (e, d), trunk_b (e,)    only when hidden_dim > 0

    e is hidden_dim if > 0, else the feature dimension d. Gradients use the same
    container.
    """
    def __init__(self, arrays):
        self.arrays = collections.OrderedDict((k, numpy.asarray(v, dtype=float)) for k, v in arrays.items())

    @classmethod
    def create(cls, num_classes, feature_dim, hidden_dim=0, rng=None, scale=0.01):
        """
        New parameters, small Gaussian weights (zeros if rng is None)

        num_classes: N, number of ID classes
        """
        width = hidden_dim if hidden_dim > 0 else feature_dim
        shapes = collections.OrderedDict([
            ('cls_w', (num_classes + 1, width)), ('cls_b', (num_classes + 1, )),
            ('reg_w', (4, width)), ('reg_b', (4, )),
            ('ova_w', (num_classes + 1, 2, width)), ('ova_b', (num_classes + 1, 2)),
            ('bin_w', (2, width)), ('bin_b', (2, )),
        ])
        if hidden_dim > 0:
            shapes['trunk_w'] = (hidden_dim, feature_dim)
            shapes['trunk_b'] = (hidden_dim, )
        arrays = collections.OrderedDict()
        for name, shape in shapes.items():
            if rng is None or name.endswith('_b'):
                arrays[name] = numpy.zeros(shape)
            elif name == 'trunk_w':
                arrays[name] = rng.normal(0.0, 1.0 / numpy.sqrt(feature_dim), size=shape)
            else:
                arrays[name] = rng.normal(0.0, scale, size=shape)
        return cls(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = value

    def __repr__(self):
        return 'ModelParams(%s)' % ', '.join('%s=%s' % (k, v.shape) for k, v in self.arrays.items())

    def keys(self):
        return self.arrays.keys()

    def items(self):
        return self.arrays.items()

    @property
    def num_classes(self):
        return self.arrays['cls_b'].shape[0] - 1

    @property
    def hidden_dim(self):
        return self.arrays['trunk_b'].shape[0] if 'trunk_b' in self.arrays else 0

    @property
    def feature_dim(self):
        if 'trunk_w' in self.arrays:
            return self.arrays['trunk_w'].shape[1]
        return self.arrays['cls_w'].shape[1]

    @property
    def ood_params(self):
        return oodHeads.OVAParams(self.arrays['ova_w'], self.arrays['ova_b'])

    @property
    def binary_params(self):
        return oodHeads.BinaryHeadParams(self.arrays['bin_w'], self.arrays['bin_b'])

    def copy(self):
        return ModelParams(collections.OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def zeros_like(self):
        return ModelParams(collections.OrderedDict((k, numpy.zeros_like(v)) for k, v in self.arrays.items()))

    def check_shapes(self, other):
        """
        raise: ShapeError if other does not have the same matrices and shapes
        """
        if list(self.keys()) != list(other.keys()):
            raise ShapeError('Parameter names differ: %s / %s' % (list(self.keys()), list(other.keys())))
        for name, value in self.items():
            if value.shape != other[name].shape:
                raise ShapeError('Shape of %s differs: %s / %s' % (name, value.shape, other[name].shape))

    def axpy(self, alpha, other):
        """
        return: self + alpha * other (new parameters)
        """
        self.check_shapes(other)
        return ModelParams(collections.OrderedDict((k, v + alpha * other[k]) for k, v in self.items()))

    def scaled(self, alpha):
        return ModelParams(collections.OrderedDict((k, alpha * v) for k, v in self.items()))

    def is_finite(self):
        return all(numpy.all(numpy.isfinite(v)) for v in self.arrays.values())

    def equals(self, other):
        """
        Bit exact equality of names, shapes and values
        """
        if list(self.keys()) != list(other.keys()):
            return False
        return all(v.shape == other[k].shape and numpy.array_equal(v, other[k]) for k, v in self.items())

    def to_vector(self):
        return numpy.concatenate([v.ravel() for v in self.arrays.values()])

    def from_vector(self, vector):
        """
        Parameters with the shapes of self and the values of a flat vector
        """
        arrays = collections.OrderedDict()
        start = 0
        for name, value in self.items():
            arrays[name] = numpy.array(vector[start:start + value.size], dtype=float).reshape(value.shape)
            start += value.size
        return ModelParams(arrays)


# --- Shared trunk

def embed(params, features):
    """
    Features seen by the heads

    return: (H (B, e), cache for embed_backward)
    """
    features = numpy.atleast_2d(numpy.asarray(features, dtype=float))
    if params.hidden_dim == 0:
        return features, None
    hidden = numpy.tanh(features @ params['trunk_w'].T + params['trunk_b'])
    return hidden, (features, hidden)


def embed_backward(params, cache, grad_hidden, grads):
    """
    Accumulate trunk gradients from the gradients of the heads' inputs
    """
    if cache is None:
        return
    features, hidden = cache
    grad_z = grad_hidden * (1.0 - hidden ** 2)
    grads['trunk_w'] += grad_z.T @ features
    grads['trunk_b'] += grad_z.sum(axis=0)


# --- Forward

def class_logits(params, hidden):
    return hidden @ params['cls_w'].T + params['cls_b']


def classify(params, feature):
    """
    Class probabilities of one feature

    return: vector of length N+1 (background last) on the probability simplex
    """
    hidden, _ = embed(params, feature)
    return scipy.special.softmax(class_logits(params, hidden)[0])


def regress(params, feature, anchor):
    """
    Box predicted for a feature and its proposal

    return: BBox clipped to the scene
    """
    hidden, _ = embed(params, feature)
    deltas = hidden @ params['reg_w'].T + params['reg_b']
    return geometry.array_to_boxes(geometry.decode_offsets([tuple(anchor)], deltas))[0]


# --- Detection losses

def build_detection_batch(features, proposals, labels, gt_boxes, num_classes):
    """
    Batch of proposals for the detection losses, dropping ignored ones

    features: (P, d) array
    proposals: (P, 4) array
    labels: list of ProposalLabel
    gt_boxes: list of BBox indexed by ProposalLabel.matched_gt
    num_classes: N, the target of background proposals

    return: ProposalBatch
    """
    rows = numpy.array([i for i, label in enumerate(labels) if label.kind != geometry.IGNORED], dtype=int)
    features = numpy.atleast_2d(numpy.asarray(features, dtype=float))
    proposals = numpy.asarray(proposals, dtype=float).reshape(-1, 4)
    anchors = proposals[rows]
    targets = numpy.full(len(rows), num_classes, dtype=int)
    # Background rows regress onto themselves, their offsets are never used
    matched = anchors.copy()
    for k, i in enumerate(rows):
        label = labels[i]
        if label.kind == geometry.FOREGROUND:
            targets[k] = label.class_id
            matched[k] = tuple(gt_boxes[label.matched_gt])
    return ProposalBatch(features[rows], targets, anchors, geometry.encode_offsets(anchors, matched))


def concat_batches(batches):
    """
    One ProposalBatch from many (empty list gives None)
    """
    batches = [b for b in batches if len(b.targets) > 0]
    if not batches:
        return None
    return ProposalBatch(numpy.concatenate([b.features for b in batches]),
                         numpy.concatenate([b.targets for b in batches]),
                         numpy.concatenate([b.anchors for b in batches]),
                         numpy.concatenate([b.offsets for b in batches]))


def _smooth_l1(diff):
    absolute = numpy.abs(diff)
    small = absolute < SMOOTH_L1_BETA
    values = numpy.where(small, 0.5 * diff ** 2 / SMOOTH_L1_BETA, absolute - 0.5 * SMOOTH_L1_BETA)
    grads = numpy.where(small, diff / SMOOTH_L1_BETA, numpy.sign(diff))
    return values, grads


def _detection_loss(params, batch, regression):
    """
    Mean cross-entropy over the batch plus mean smooth L1 over foreground rows

    return: (loss, gradients ModelParams)
    """
    grads = params.zeros_like()
    hidden, cache = embed(params, batch.features)
    count = len(batch.targets)
    rows = numpy.arange(count)
    targets = numpy.asarray(batch.targets, dtype=int)

    log_probs = scipy.special.log_softmax(class_logits(params, hidden), axis=1)
    loss = -log_probs[rows, targets].mean()
    grad_logits = numpy.exp(log_probs)
    grad_logits[rows, targets] -= 1.0
    grad_logits /= count
    grads['cls_w'] += grad_logits.T @ hidden
    grads['cls_b'] += grad_logits.sum(axis=0)
    grad_hidden = grad_logits @ params['cls_w']

    foreground = targets < params.num_classes
    n_fg = int(foreground.sum())
    if regression and n_fg > 0:
        fg_hidden = hidden[foreground]
        deltas = fg_hidden @ params['reg_w'].T + params['reg_b']
        values, grad_deltas = _smooth_l1(deltas - batch.offsets[foreground])
        loss += values.sum() / n_fg
        grad_deltas /= n_fg
        grads['reg_w'] += grad_deltas.T @ fg_hidden
        grads['reg_b'] += grad_deltas.sum(axis=0)
        grad_hidden[foreground] += grad_deltas @ params['reg_w']

    embed_backward(params, cache, grad_hidden, grads)
    return float(loss), grads


def supervised_detection_loss(params, batch, regression=True):
    """
    Supervised detection loss of labeled proposals

    batch: ProposalBatch without ignored proposals, background target N

    raise: EmptyBatchError if the batch is empty
    return: (loss, gradients ModelParams)
    """
    if batch is None or len(batch.targets) == 0:
        raise EmptyBatchError('Supervised detection batch has no foreground or background proposals')
    return _detection_loss(params, batch, regression)


def unsupervised_detection_loss(params, batch, regression=True):
    """
    Detection loss of pseudo-labeled proposals (same form as the supervised
    loss; the caller weights it by lambda)

    return: (loss, gradients ModelParams), (0, zeros) for an empty batch
    """
    if batch is None or len(batch.targets) == 0:
        return 0.0, params.zeros_like()
    return _detection_loss(params, batch, regression)


# --- OOD head losses on model parameters

def ood_head_loss(params, features, targets, head='ova'):
    """
    OOD head loss with gradients flowing through the trunk

    targets: classes in [0, N], N is background
    head: 'ova' or 'binary' (targets collapsed to ID vs not)

    return: (loss, gradients ModelParams), (0, zeros) for an empty batch
    """
    grads = params.zeros_like()
    if len(targets) == 0:
        return 0.0, grads
    hidden, cache = embed(params, features)
    if head == 'ova':
        loss, head_grads, grad_hidden = oodHeads.ova_batch_loss_features(params.ood_params, hidden, targets)
        grads['ova_w'] += head_grads.weights
        grads['ova_b'] += head_grads.bias
    elif head == 'binary':
        is_id = numpy.asarray(targets) < params.num_classes
        loss, head_grads, grad_hidden = oodHeads.binary_batch_loss_features(params.binary_params, hidden, is_id)
        grads['bin_w'] += head_grads.weights
        grads['bin_b'] += head_grads.bias
    else:
        raise ValueError('Unknown OOD head %r' % head)
    embed_backward(params, cache, grad_hidden, grads)
    return loss, grads


# --- Optimizer

def sgd_step(params, gradients, learning_rate):
    """
    One plain gradient descent step: params - learning_rate * gradients

    raise: DivergenceError on non-finite gradients
    """
    if learning_rate <= 0:
        raise ValueError('learning_rate must be > 0 (%s)' % learning_rate)
    if not gradients.is_finite():
        bad = [k for k, v in gradients.items() if not numpy.all(numpy.isfinite(v))]
        raise DivergenceError('Non finite gradients in %s' % ', '.join(bad))
    return params.axpy(-learning_rate, gradients)


# --- Inference

def forward_proposals(params, features):
    """
    All head outputs for the features of a scene's proposals

    return: dict with logits, probs, deltas, ova (B, N+1), binary (B,)
    """
    hidden, _ = embed(params, features)
    logits = class_logits(params, hidden)
    return {
        'logits': logits,
        'probs': scipy.special.softmax(logits, axis=1),
        'deltas': hidden @ params['reg_w'].T + params['reg_b'],
        'ova': oodHeads.ova_forward_batch(params.ood_params, hidden),
        'binary': oodHeads.binary_forward_batch(params.binary_params, hidden),
    }


def detect(params, proposals, features, nms_threshold, score_floor=0.0, scorer=None, temperature=1.0):
    """
    Detections of one scene

    Each proposal predicts its most probable foreground class; those with a
    class probability >= score_floor are regressed and go through class
    agnostic NMS.

    proposals: (P, 4) array
    features: (P, d) array
    scorer: oodHeads.Scorer giving filter_score and the ood_score head (OVA if None)

    return: list of Detection in descending cls_score order
    """
    if len(proposals) == 0:
        return []
    out = forward_proposals(params, features)
    n = params.num_classes
    fg_probs = out['probs'][:, :n]
    classes = fg_probs.argmax(axis=1)
    scores = fg_probs.max(axis=1)
    boxes = geometry.decode_offsets(proposals, out['deltas'])

    candidates = numpy.flatnonzero(scores >= score_floor)
    dets = [(geometry.BBox(*boxes[i]), scores[i]) for i in candidates]
    kept = [int(candidates[k]) for k in geometry.nms(dets, nms_threshold)]

    head = scorer.head if scorer is not None else 'ova'
    detections = []
    for i in kept:
        y = int(classes[i])
        ood_score = float(out['binary'][i]) if head == 'binary' else float(out['ova'][i, y])
        det = Detection(geometry.BBox(*(float(v) for v in boxes[i])), y, float(scores[i]), ood_score,
                        None, i)
        if scorer is not None:
            inputs = oodHeads.ScoreInputs(y, out['probs'][i], out['logits'][i], out['ova'][i], out['binary'][i])
            det.filter_score = scorer.score(inputs, temperature)
        detections.append(det)
    return detections
