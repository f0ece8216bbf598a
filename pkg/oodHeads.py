#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Out-of-distribution heads and scorers (module of OSSOD-Bench)

 The one-vs-all (OVA) head has N+1 binary heads (N ID classes plus background,
 index N). Each head maps a feature to two logits, [positive, negative], and
 its positive softmax probability p(y^j|x) says "belongs to class j as ID".
 Entries of an OVA score vector do NOT sum to 1 across heads.

 Alternative scorers (maximum softmax probability, energy and a single binary
 ID-vs-not head) share one descriptor so the trainer can swap them by name.

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
import namedlist
import numpy
import scipy.special

# Logit order inside every binary head
POSITIVE = 0
NEGATIVE = 1

# weights: (N+1, 2, d), bias: (N+1, 2)
OVAParams = namedlist.namedtuple('OVAParams', ['weights', 'bias'])
# weights: (2, d), bias: (2,)
BinaryHeadParams = namedlist.namedtuple('BinaryHeadParams', ['weights', 'bias'])


class OVAConfigurationError(Exception):
    """
    Raised when an OVA head has no negative heads (N = 0)
    """
    pass


class UnknownScorerError(Exception):
    """
    Raised when a scorer name is not registered
    """
    pass


def ova_logits(params, features):
    """
    features: (B, d) array

    return: (B, N+1, 2) array
    """
    return numpy.einsum('bd,kcd->bkc', features, params.weights) + params.bias[None, :, :]


def ova_forward_batch(params, features):
    """
    Positive probabilities of every head for a batch of features

    return: (B, N+1) array with entries in [0, 1]
    """
    logits = ova_logits(params, numpy.atleast_2d(features))
    return scipy.special.softmax(logits, axis=2)[:, :, POSITIVE]


def ova_forward(params, feature):
    """
    OOD score of one feature: positive 2-way softmax probability of every head

    return: vector of length N+1
    """
    return ova_forward_batch(params, numpy.asarray(feature, dtype=float)[None, :])[0]


def _ova_loss_arrays(params, features, labels):
    """
    Per sample OVA loss on a batch, with the gradients of the summed loss

    return: (losses (B,), logit gradients (B, N+1, 2), hard negatives (B,))
    """
    heads = params.weights.shape[0]
    if heads < 2:
        raise OVAConfigurationError('OVA head needs at least one negative head (N+1 = %d)' % heads)
    labels = numpy.asarray(labels, dtype=int)
    count = len(labels)
    rows = numpy.arange(count)

    log_probs = scipy.special.log_softmax(ova_logits(params, features), axis=2)
    log_pos = log_probs[:, :, POSITIVE]
    log_neg = log_probs[:, :, NEGATIVE]

    # Hard negative: j != y with the smallest log(1 - p_j), lowest j on ties
    candidates = log_neg.copy()
    candidates[rows, labels] = numpy.inf
    hard = candidates.argmin(axis=1)

    losses = -log_pos[rows, labels] - log_neg[rows, hard]

    p_pos = numpy.exp(log_pos)
    grad = numpy.zeros(log_probs.shape)
    py = p_pos[rows, labels]
    grad[rows, labels, POSITIVE] = py - 1.0
    grad[rows, labels, NEGATIVE] = 1.0 - py
    pj = p_pos[rows, hard]
    grad[rows, hard, POSITIVE] = pj
    grad[rows, hard, NEGATIVE] = -pj
    return losses, grad, hard


def ova_batch_loss_features(params, features, labels):
    """
    Mean OVA loss of a batch with gradients for the head and the features

    features: (B, d) array
    labels: (B,) classes in [0, N], N is background

    return: (loss, OVAParams of gradients, (B, d) feature gradients)
    """
    features = numpy.atleast_2d(numpy.asarray(features, dtype=float))
    count = len(features)
    if count == 0:
        raise ValueError('OVA loss of an empty batch')
    losses, grad, _ = _ova_loss_arrays(params, features, labels)
    grad /= count
    grad_w = numpy.einsum('bkc,bd->kcd', grad, features)
    grad_b = grad.sum(axis=0)
    grad_features = numpy.einsum('bkc,kcd->bd', grad, params.weights)
    return float(losses.mean()), OVAParams(grad_w, grad_b), grad_features


def ova_loss(params, feature, label_class):
    """
    OVA loss of one sample: -log p(y^y|x) - min_{j != y} log(1 - p(y^j|x))

    Gradients reach only head y and the selected hard negative head.

    return: (loss, OVAParams of gradients)
    """
    loss, grads, _ = ova_batch_loss_features(params, numpy.asarray(feature, dtype=float)[None, :],
                                             [label_class])
    return loss, grads


def ova_batch_loss(params, batch):
    """
    Mean of ova_loss over a list of (feature, label_class)

    return: (loss, OVAParams of gradients)
    """
    if len(batch) == 0:
        raise ValueError('OVA loss of an empty batch')
    features = numpy.array([f for f, _ in batch], dtype=float)
    labels = [y for _, y in batch]
    loss, grads, _ = ova_batch_loss_features(params, features, labels)
    return loss, grads


# --- Binary ID-vs-not head

def binary_forward_batch(params, features):
    """
    return: (B,) positive (ID) probabilities
    """
    logits = numpy.atleast_2d(features) @ params.weights.T + params.bias
    return scipy.special.softmax(logits, axis=1)[:, POSITIVE]


def score_entropy_head(params, feature):
    """
    Positive (ID) probability of the single binary head
    """
    return float(binary_forward_batch(params, numpy.asarray(feature, dtype=float)[None, :])[0])


def binary_batch_loss_features(params, features, is_id):
    """
    Mean cross-entropy of the binary head (targets collapsed to ID vs not)

    return: (loss, BinaryHeadParams of gradients, (B, d) feature gradients)
    """
    features = numpy.atleast_2d(numpy.asarray(features, dtype=float))
    count = len(features)
    if count == 0:
        raise ValueError('Binary head loss of an empty batch')
    targets = numpy.where(numpy.asarray(is_id, dtype=bool), POSITIVE, NEGATIVE)
    rows = numpy.arange(count)
    logits = features @ params.weights.T + params.bias
    log_probs = scipy.special.log_softmax(logits, axis=1)
    loss = -log_probs[rows, targets].mean()
    grad = numpy.exp(log_probs)
    grad[rows, targets] -= 1.0
    grad /= count
    return (float(loss), BinaryHeadParams(grad.T @ features, grad.sum(axis=0)),
            grad @ params.weights)


# --- Scorers over the classification head

def score_msp(cls_probs):
    """
    Maximum softmax probability over the foreground entries (background is last)
    """
    return float(numpy.max(numpy.asarray(cls_probs)[:-1]))


def score_energy(logits, temperature=1.0):
    """
    Energy score -T * log sum_j exp(logit_j / T), lower is more ID
    """
    if temperature <= 0:
        raise ValueError('Energy temperature must be > 0 (%s)' % temperature)
    return float(-temperature * scipy.special.logsumexp(numpy.asarray(logits, dtype=float) / temperature))


# --- Scorer descriptors

# inputs of a scorer for one detection
ScoreInputs = namedlist.namedtuple('ScoreInputs', ['class_id', 'cls_probs', 'cls_logits', 'ova_probs',
                                                   'binary_prob'])

# name: config name
# direction: 'higher' (scores >= threshold are ID) or 'lower' (scores <= threshold are ID)
# default_threshold: None means the OOD filter threshold tau'
# head: OOD head whose probability is the detection ood_score ('ova' or 'binary')
# mines_unlabeled: the head is trained on unlabeled targets (three-band rule)
Scorer = namedlist.namedtuple('Scorer', ['name', 'direction', 'default_threshold', 'head',
                                         'mines_unlabeled', 'score'])


def _ova_score(inputs, temperature):
    return float(inputs.ova_probs[inputs.class_id])


def _msp_score(inputs, temperature):
    return score_msp(inputs.cls_probs)


def _energy_score(inputs, temperature):
    # Foreground logits only, background is not an ID class
    return score_energy(inputs.cls_logits[:-1], temperature)


def _binary_score(inputs, temperature):
    return float(inputs.binary_prob)


SCORERS = [
    Scorer('ova', 'higher', None, 'ova', True, _ova_score),
    Scorer('msp', 'higher', 0.0, 'ova', False, _msp_score),
    Scorer('energy', 'lower', -2.0, 'ova', False, _energy_score),
    Scorer('entropy', 'higher', None, 'binary', True, _binary_score),
]

SCORER_NAMES = tuple(s.name for s in SCORERS)


def get_scorer(name):
    """
    raise: UnknownScorerError
    return: Scorer descriptor registered with that name
    """
    for scorer in SCORERS:
        if scorer.name == name:
            return scorer
    raise UnknownScorerError('Unknown scorer %r (choose from %s)' % (name, ', '.join(SCORER_NAMES)))


def scorer_threshold(scorer, tau_prime, override=None):
    """
    Threshold a scorer filters with
    """
    if override is not None:
        return float(override)
    if scorer.default_threshold is None:
        return float(tau_prime)
    return float(scorer.default_threshold)


def scorer_accepts(scorer, value, threshold):
    """
    True if a score is on the ID side of the threshold
    """
    if scorer.direction == 'higher':
        return value >= threshold
    return value <= threshold


def id_confidence(scorer, value):
    """
    Score oriented so that larger means more ID (for ranking metrics)
    """
    if scorer.direction == 'higher':
        return value
    return -value
