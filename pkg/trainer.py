#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Online open-set semi-supervised training loop (module of OSSOD-Bench)

 Burn-in on labeled scenes, teacher initialization, pseudo-labeling with a
 classification threshold and an OOD filter, three-band mining of OOD head
 targets on unlabeled scenes, the joint loss, one student update and the EMA
 of the teacher.

 Random draws come from named streams derived from the run seed:

     init       initial student parameters
     labeled    proposals and features of labeled scenes
     unlabeled  proposals and (strong noise) features seen by the student
     teacher    proposals and (weak noise) features seen by the teacher
     sampling   scene batches and proposal subsampling
     eval       evaluation passes, recreated on every evaluation

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
import dataclasses
import logging
import math

import namedlist
import numpy

import detector
import evaluation
import geometry
import oodHeads
import synthBench
import validation

log = logging.getLogger(__name__)

STREAMS = ('init', 'labeled', 'unlabeled', 'teacher', 'sampling')

# Bands of the OOD head targets on unlabeled scenes
ACCEPTED = 'accepted'
IGNORED = 'ignored'
REJECTED = 'rejected'

# Below this OOD score a pseudo-label is relabeled as background
REJECT_BELOW = 0.5


class InvalidConfigError(Exception):
    """
    Raised when a TrainerConfig setting violates its invariants

    key: name of the offending setting
    """
    def __init__(self, key, message):
        Exception.__init__(self, '%s: %s' % (key, message))
        self.key = key


class TrainingDivergenceError(detector.DivergenceError):
    """
    Raised when a training step produces a non-finite loss or gradient
    """
    pass


class PseudoLabelError(Exception):
    """
    Raised when the pseudo-labels of a scene are not a partition of its detections
    """
    pass


@dataclasses.dataclass
class TrainerConfig:
    """
    Settings of one training run

    tau_prime, lambda_ood and tau_ood default to the values of the method;
    the other defaults are chosen for the synthetic benchmark scale.
    Noise scales are fractions of the mean class spread of the world.
    """
    tau: float = 0.7
    tau_prime: float = 0.5
    tau_ood: float = 0.7
    lambda_unsup: float = 1.0
    lambda_ood: float = 0.1
    alpha: float = 0.999
    fg_iou: float = 0.7
    bg_iou: float = 0.3
    proposals_per_image: int = 512
    ood_subsample: int = 64
    burn_in_iters: int = 300
    total_iters: int = 1500
    eval_interval: int = 300
    learning_rate: float = 0.05
    nms_threshold: float = 0.5
    weak_noise: float = 0.05
    strong_noise: float = 0.2
    scorer: str = 'ova'
    seed: int = 0
    unsup_regression: bool = True
    labeled_batch_size: int = 4
    unlabeled_batch_size: int = 4
    hidden_dim: int = 0
    offline_ood: bool = False
    scorer_threshold: float = None
    energy_temperature: float = 1.0
    eval_score_floor: float = 0.05

    def validate(self):
        """
        raise: InvalidConfigError naming the first invalid setting
        """
        if not REJECT_BELOW <= self.tau_ood <= 1.0:
            raise InvalidConfigError('tau_ood', 'must be in [0.5, 1] (%s)' % self.tau_ood)
        if not 0.0 <= self.tau_prime <= self.tau_ood:
            raise InvalidConfigError('tau_prime', 'must satisfy 0 <= tau_prime <= tau_ood (%s, %s)'
                                     % (self.tau_prime, self.tau_ood))
        if self.tau < 0:
            raise InvalidConfigError('tau', 'must be >= 0 (%s)' % self.tau)
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfigError('alpha', 'must be in [0, 1] (%s)' % self.alpha)
        if self.lambda_unsup < 0:
            raise InvalidConfigError('lambda_unsup', 'must be >= 0 (%s)' % self.lambda_unsup)
        if self.lambda_ood < 0:
            raise InvalidConfigError('lambda_ood', 'must be >= 0 (%s)' % self.lambda_ood)
        if not 0.0 <= self.bg_iou < self.fg_iou <= 1.0:
            raise InvalidConfigError('fg_iou', 'must satisfy 0 <= bg_iou < fg_iou <= 1 (%s, %s)'
                                     % (self.bg_iou, self.fg_iou))
        if self.proposals_per_image < 1:
            raise InvalidConfigError('proposals_per_image', 'must be >= 1')
        if not 1 <= self.ood_subsample <= self.proposals_per_image:
            raise InvalidConfigError('ood_subsample', 'must be in [1, proposals_per_image] (%s)'
                                     % self.ood_subsample)
        if self.burn_in_iters < 0:
            raise InvalidConfigError('burn_in_iters', 'must be >= 0')
        if self.total_iters < self.burn_in_iters:
            raise InvalidConfigError('total_iters', 'must be >= burn_in_iters (%s < %s)'
                                     % (self.total_iters, self.burn_in_iters))
        if self.eval_interval < 1:
            raise InvalidConfigError('eval_interval', 'must be >= 1')
        if self.learning_rate <= 0:
            raise InvalidConfigError('learning_rate', 'must be > 0')
        if not 0.0 <= self.nms_threshold <= 1.0:
            raise InvalidConfigError('nms_threshold', 'must be in [0, 1]')
        if self.weak_noise < 0:
            raise InvalidConfigError('weak_noise', 'must be >= 0')
        if self.strong_noise < self.weak_noise:
            raise InvalidConfigError('strong_noise', 'must be >= weak_noise')
        if self.scorer not in oodHeads.SCORER_NAMES:
            raise InvalidConfigError('scorer', 'unknown scorer %r (choose from %s)'
                                     % (self.scorer, ', '.join(oodHeads.SCORER_NAMES)))
        if self.labeled_batch_size < 1:
            raise InvalidConfigError('labeled_batch_size', 'must be >= 1')
        if self.unlabeled_batch_size < 1:
            raise InvalidConfigError('unlabeled_batch_size', 'must be >= 1')
        if self.hidden_dim < 0:
            raise InvalidConfigError('hidden_dim', 'must be >= 0')
        if self.energy_temperature <= 0:
            raise InvalidConfigError('energy_temperature', 'must be > 0')
        if self.eval_score_floor < 0:
            raise InvalidConfigError('eval_score_floor', 'must be >= 0')


# scene_id: scene the pseudo-labels belong to
# detections: teacher detections with cls_score >= tau
# accepted_id, ignored, rejected_ood: partition of detections by ood_score
# filtered: detections passing the OOD filter, pseudo-labels of the detection losses
# num_classes: N, the background target
PseudoLabelSet = namedlist.namedlist('PseudoLabelSet', ['scene_id', 'detections', 'accepted_id', 'ignored',
                                                        'rejected_ood', 'filtered', 'num_classes'])

# Loss components and pseudo-label counts of one iteration
# sup_ood: supervised loss of the trained OOD heads; in burn-in both heads
#          (one-vs-all plus binary), afterwards only the head of the scorer
# total: weighted sum of the four loss components
StepRecord = namedlist.namedlist('StepRecord', [('iteration', 0), ('sup_det', 0.0), ('unsup_det', 0.0),
                                                ('sup_ood', 0.0), ('unsup_ood', 0.0), ('total', 0.0),
                                                ('accepted', 0), ('ignored', 0), ('rejected', 0),
                                                ('filtered', 0)])


def make_streams(seed):
    """
    Independent random generators of a run, one per name in STREAMS
    """
    return dict((name, synthBench.derived_rng(seed, synthBench.stream_key(name))) for name in STREAMS)


def ood_band(ood_score, tau_ood):
    """
    Band of a pseudo-label for the OOD head

    return: ACCEPTED if score >= tau_ood, REJECTED if score < 0.5, else IGNORED
    """
    if ood_score >= tau_ood:
        return ACCEPTED
    if ood_score < REJECT_BELOW:
        return REJECTED
    return IGNORED


def partition_pseudo_labels(scene_id, detections, config, num_classes):
    """
    Split teacher detections (already above tau) into the OOD-head bands and
    the filtered pseudo-labels

    A detection without filter_score is filtered on its ood_score.

    return: PseudoLabelSet
    """
    scorer = oodHeads.get_scorer(config.scorer)
    threshold = oodHeads.scorer_threshold(scorer, config.tau_prime, config.scorer_threshold)
    bands = {ACCEPTED: [], IGNORED: [], REJECTED: []}
    filtered = []
    for det in detections:
        bands[ood_band(det.ood_score, config.tau_ood)].append(det)
        value = det.ood_score if det.filter_score is None else det.filter_score
        if oodHeads.scorer_accepts(scorer, value, threshold):
            filtered.append(det)
    return PseudoLabelSet(scene_id, list(detections), bands[ACCEPTED], bands[IGNORED], bands[REJECTED],
                          filtered, num_classes)


def generate_pseudo_labels(teacher, splits, scene, config, rng):
    """
    Pseudo-labels of an unlabeled scene

    The teacher sees weakly noised features of fresh proposals; detections
    with cls_score >= tau survive NMS and are partitioned.

    rng: generator drawing proposals then features

    return: PseudoLabelSet
    raise: PseudoLabelError if the bands do not partition the detections
    """
    scorer = oodHeads.get_scorer(config.scorer)
    proposals = synthBench.propose(splits, scene, rng)
    features = synthBench.render_features(splits, scene, proposals, config.weak_noise * splits.feature_spread,
                                          rng)
    detections = detector.detect(teacher, proposals, features, config.nms_threshold, config.tau, scorer,
                                 config.energy_temperature)
    pseudo = partition_pseudo_labels(scene.scene_id, detections, config, teacher.num_classes)
    if not validation.check_pseudo_partition(pseudo, config):
        raise PseudoLabelError('Inconsistent pseudo-labels on scene %d' % scene.scene_id)
    return pseudo


def build_ood_targets_unlabeled(proposals, pseudo, config):
    """
    OOD head targets of an unlabeled scene

    A proposal takes the band of the pseudo-label it overlaps most when that
    IoU is > fg_iou: accepted gives its class, rejected gives background,
    ignored and unmatched proposals give nothing.

    return: list of (proposal index, target class)
    """
    if not pseudo.detections:
        return []
    bands = {}
    for band, members in ((ACCEPTED, pseudo.accepted_id), (IGNORED, pseudo.ignored),
                          (REJECTED, pseudo.rejected_ood)):
        for det in members:
            bands[id(det)] = band
    overlaps = geometry.iou_matrix(proposals, [tuple(d.box) for d in pseudo.detections])
    best = overlaps.argmax(axis=1)
    targets = []
    for p in range(len(overlaps)):
        k = int(best[p])
        if overlaps[p, k] <= config.fg_iou:
            continue
        det = pseudo.detections[k]
        band = bands[id(det)]
        if band == ACCEPTED:
            targets.append((p, int(det.class_id)))
        elif band == REJECTED:
            targets.append((p, pseudo.num_classes))
    return targets


def subsample_ood_batch(labels, budget, rng):
    """
    Proposals of a labeled scene for the OOD head

    All foreground first (a uniform subset if they exceed budget), then
    uniformly sampled background up to budget. Ignored are never selected.

    labels: list of ProposalLabel

    return: list of indices, foreground first
    """
    if budget < 1:
        raise ValueError('OOD subsample budget must be >= 1 (%s)' % budget)
    foreground = [i for i, label in enumerate(labels) if label.kind == geometry.FOREGROUND]
    background = [i for i, label in enumerate(labels) if label.kind == geometry.BACKGROUND]
    if len(foreground) > budget:
        foreground = sorted(int(i) for i in rng.choice(foreground, budget, replace=False))
    room = min(budget - len(foreground), len(background))
    chosen = []
    if room > 0:
        chosen = sorted(int(i) for i in rng.choice(background, room, replace=False))
    return foreground + chosen


def _sample_rows(labels, budget, rng):
    """
    Up to budget non-ignored proposals, uniformly
    """
    rows = [i for i, label in enumerate(labels) if label.kind != geometry.IGNORED]
    if len(rows) > budget:
        rows = sorted(int(i) for i in rng.choice(rows, budget, replace=False))
    return rows


def _sample_scenes(scenes, size, rng):
    if not scenes:
        return []
    chosen = rng.choice(len(scenes), min(size, len(scenes)), replace=False)
    return [scenes[int(i)] for i in chosen]


def _empty_features(splits):
    return numpy.zeros((0, splits.feature_dim))


def _labeled_losses(student, scenes, splits, config, streams, heads):
    """
    Supervised detection loss and supervised OOD loss of the given heads

    return: (sup_det, det gradients, sup_ood, ood gradients)
    """
    noise = config.weak_noise * splits.feature_spread
    n = student.num_classes
    batches = []
    ood_features = []
    ood_targets = []
    for scene in scenes:
        gt = scene.instances
        proposals = synthBench.propose(splits, scene, streams['labeled'])
        features = synthBench.render_features(splits, scene, proposals, noise, streams['labeled'])
        labels = geometry.assign_proposal_labels(proposals, gt, config.fg_iou, config.bg_iou)
        rows = _sample_rows(labels, config.proposals_per_image, streams['sampling'])
        sampled = [labels[i] for i in rows]
        batches.append(detector.build_detection_batch(features[rows], proposals[rows], sampled,
                                                      [box for box, _ in gt], n))
        picked = [rows[k] for k in subsample_ood_batch(sampled, config.ood_subsample, streams['sampling'])]
        ood_features.append(features[picked])
        ood_targets.extend(labels[i].class_id if labels[i].kind == geometry.FOREGROUND else n for i in picked)

    sup_det, det_grads = detector.supervised_detection_loss(student, detector.concat_batches(batches))
    features = numpy.concatenate(ood_features) if ood_features else _empty_features(splits)
    sup_ood = 0.0
    ood_grads = student.zeros_like()
    for head in heads:
        loss, grads = detector.ood_head_loss(student, features, ood_targets, head)
        sup_ood += loss
        ood_grads = ood_grads.axpy(1.0, grads)
    return sup_det, det_grads, sup_ood, ood_grads


def _unlabeled_losses(student, teacher, scenes, splits, config, streams, mine_head, record):
    """
    Unsupervised detection loss on the filtered pseudo-labels and, if
    mine_head is given, the unsupervised OOD loss of that head

    return: (unsup_det, det gradients, unsup_ood, ood gradients)
    """
    noise = config.strong_noise * splits.feature_spread
    n = student.num_classes
    batches = []
    ood_features = []
    ood_targets = []
    for scene in scenes:
        pseudo = generate_pseudo_labels(teacher, splits, scene, config, streams['teacher'])
        record.accepted += len(pseudo.accepted_id)
        record.ignored += len(pseudo.ignored)
        record.rejected += len(pseudo.rejected_ood)
        record.filtered += len(pseudo.filtered)

        proposals = synthBench.propose(splits, scene, streams['unlabeled'])
        features = synthBench.render_features(splits, scene, proposals, noise, streams['unlabeled'])
        if pseudo.filtered:
            gt = [(det.box, det.class_id) for det in pseudo.filtered]
            labels = geometry.assign_proposal_labels(proposals, gt, config.fg_iou, config.bg_iou)
            rows = _sample_rows(labels, config.proposals_per_image, streams['sampling'])
            batches.append(detector.build_detection_batch(features[rows], proposals[rows],
                                                          [labels[i] for i in rows], [box for box, _ in gt], n))
        if mine_head is not None:
            for index, target in build_ood_targets_unlabeled(proposals, pseudo, config):
                ood_features.append(features[index])
                ood_targets.append(target)

    unsup_det, det_grads = detector.unsupervised_detection_loss(student, detector.concat_batches(batches),
                                                                config.unsup_regression)
    if mine_head is None or not ood_targets:
        return unsup_det, det_grads, 0.0, student.zeros_like()
    unsup_ood, ood_grads = detector.ood_head_loss(student, numpy.array(ood_features), ood_targets, mine_head)
    return unsup_det, det_grads, unsup_ood, ood_grads


def _apply(student, gradients, record, config):
    if not math.isfinite(record.total):
        raise TrainingDivergenceError('Non finite loss at iteration %d: %s' % (record.iteration, _diagnostic(record)))
    try:
        return detector.sgd_step(student, gradients, config.learning_rate)
    except detector.DivergenceError as e:
        raise TrainingDivergenceError('%s at iteration %d: %s' % (e, record.iteration, _diagnostic(record)))


def _diagnostic(record):
    return 'sup_det=%r unsup_det=%r sup_ood=%r unsup_ood=%r' % (record.sup_det, record.unsup_det,
                                                                record.sup_ood, record.unsup_ood)


def supervised_step(student, scenes, splits, config, streams, iteration=0):
    """
    One burn-in iteration: supervised detection loss plus the supervised loss
    of both OOD heads

    return: (student', StepRecord)
    """
    sup_det, det_grads, sup_ood, ood_grads = _labeled_losses(student, scenes, splits, config, streams,
                                                             ('ova', 'binary'))
    record = StepRecord(iteration, sup_det, 0.0, sup_ood, 0.0, sup_det + sup_ood)
    student = _apply(student, det_grads.axpy(1.0, ood_grads), record, config)
    log.debug('burn-in %d: %s', iteration, _diagnostic(record))
    return student, record


def burn_in(student, splits, config, streams=None, history=None):
    """
    Train the student on labeled scenes only for config.burn_in_iters

    history: optional list receiving the StepRecord of every iteration

    raise: TrainingDivergenceError
    return: ModelParams
    """
    if config.burn_in_iters < 0:
        raise InvalidConfigError('burn_in_iters', 'must be >= 0')
    if streams is None:
        streams = make_streams(config.seed)
    for iteration in range(1, config.burn_in_iters + 1):
        scenes = _sample_scenes(splits.labeled, config.labeled_batch_size, streams['sampling'])
        student, record = supervised_step(student, scenes, splits, config, streams, iteration)
        if history is not None:
            history.append(record)
    return student


def init_teacher(student):
    """
    Teacher equal to the student, sharing no arrays with it
    """
    return student.copy()


def ema_update(teacher, student, alpha):
    """
    alpha * teacher + (1 - alpha) * student over every parameter

    raise: detector.ShapeError if the parameter sets differ
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError('EMA weight must be in [0, 1] (%s)' % alpha)
    teacher.check_shapes(student)
    return teacher.scaled(alpha).axpy(1.0 - alpha, student)


def train_step(student, teacher, labeled_batch, unlabeled_batch, splits, config, streams, iteration=0):
    """
    One semi-supervised iteration

    L = sup_det + lambda_unsup * unsup_det + sup_ood + lambda_ood * unsup_ood,
    one gradient step on the student, then the EMA of the teacher. The OOD
    losses train the head of the configured scorer; unlabeled targets are
    mined only for scorers with a trained ID-vs-not head. With offline_ood
    the OOD heads get no gradient.

    raise: TrainingDivergenceError with the value of every component
    return: (student', teacher', StepRecord)
    """
    scorer = oodHeads.get_scorer(config.scorer)
    heads = () if config.offline_ood else (scorer.head, )
    mine_head = scorer.head if scorer.mines_unlabeled and not config.offline_ood else None

    record = StepRecord(iteration)
    sup_det, sup_det_grads, sup_ood, sup_ood_grads = _labeled_losses(student, labeled_batch, splits, config,
                                                                     streams, heads)
    unsup_det, unsup_det_grads, unsup_ood, unsup_ood_grads = _unlabeled_losses(
        student, teacher, unlabeled_batch, splits, config, streams, mine_head, record)

    record.sup_det = sup_det
    record.unsup_det = unsup_det
    record.sup_ood = sup_ood
    record.unsup_ood = unsup_ood
    record.total = sup_det + config.lambda_unsup * unsup_det + sup_ood + config.lambda_ood * unsup_ood

    gradients = (sup_det_grads.axpy(config.lambda_unsup, unsup_det_grads)
                 .axpy(1.0, sup_ood_grads).axpy(config.lambda_ood, unsup_ood_grads))
    student = _apply(student, gradients, record, config)
    teacher = ema_update(teacher, student, config.alpha)
    log.debug('iteration %d: %s total=%r pseudo=%d', iteration, _diagnostic(record), record.total,
              record.filtered)
    return student, teacher, record


def evaluate_teacher(teacher, splits, eval_scenes, config, iteration=0, step=None):
    """
    Metrics of the teacher

    Detection AP on the held-out scenes, OOD AUROC on the ground truth boxes of
    the unlabeled pool and the quality of the pseudo-labels the teacher would
    produce on that pool. Reads hidden annotations, never trains.

    step: StepRecord whose losses go in the record

    return: evaluation.MetricsRecord
    """
    rng = synthBench.derived_rng(config.seed, synthBench.stream_key('eval'))
    scorer = oodHeads.get_scorer(config.scorer)
    noise = config.weak_noise * splits.feature_spread
    n = teacher.num_classes

    dets = dict((c, []) for c in range(n))
    gts = dict((c, []) for c in range(n))
    for scene in eval_scenes:
        proposals = synthBench.propose(splits, scene, rng)
        features = synthBench.render_features(splits, scene, proposals, noise, rng)
        for det in detector.detect(teacher, proposals, features, config.nms_threshold, config.eval_score_floor,
                                   scorer, config.energy_temperature):
            dets[det.class_id].append((scene.scene_id, det.box, det.cls_score))
        for box, c in synthBench.ground_truth(scene):
            if c < n:
                gts[c].append((scene.scene_id, box))

    per_class, mean = evaluation.class_aps(dets, gts)
    curves = {}
    for c in range(n):
        precision, recall = evaluation.precision_recall_curve(dets[c], gts[c])
        curves[c] = {'precision': [float(v) for v in precision], 'recall': [float(v) for v in recall]}

    pseudo_sets = [generate_pseudo_labels(teacher, splits, scene, config, rng) for scene in splits.unlabeled]
    hidden = dict((scene.scene_id, synthBench.ground_truth(scene)) for scene in splits.unlabeled)
    precision, recall, precision_defined = evaluation.pseudo_label_quality(pseudo_sets, hidden, n)
    counts = (sum(len(p.accepted_id) for p in pseudo_sets), sum(len(p.ignored) for p in pseudo_sets),
              sum(len(p.rejected_ood) for p in pseudo_sets))

    scores = []
    for scene in splits.unlabeled:
        gt = hidden[scene.scene_id]
        if not gt:
            continue
        boxes = geometry.boxes_to_array([box for box, _ in gt])
        out = detector.forward_proposals(teacher, synthBench.render_features(splits, scene, boxes, noise, rng))
        for k, (_, c) in enumerate(gt):
            y = int(out['probs'][k, :n].argmax())
            inputs = oodHeads.ScoreInputs(y, out['probs'][k], out['logits'][k], out['ova'][k], out['binary'][k])
            value = scorer.score(inputs, config.energy_temperature)
            scores.append((oodHeads.id_confidence(scorer, value), c < n))
    try:
        auroc = evaluation.ood_auroc(scores)
        auroc_defined = True
    except evaluation.MetricError:
        auroc = float('nan')
        auroc_defined = False

    if step is None:
        step = StepRecord(iteration)
    record = evaluation.MetricsRecord(
        iteration, mean, [float('nan') if ap is None else ap for ap in per_class], auroc, auroc_defined,
        precision, precision_defined, recall, (step.sup_det, step.unsup_det, step.sup_ood, step.unsup_ood),
        step.total, counts, curves)
    log.info('iteration %d: mAP %.4f AUROC %.4f pseudo P %.3f R %.3f (%d/%d/%d)', iteration, mean, auroc,
             precision, recall, counts[0], counts[1], counts[2])
    return record


def run_experiment(config, splits, eval_scenes=None, on_evaluation=None):
    """
    Full training run: burn-in, teacher initialization and the semi-supervised
    loop, evaluating the teacher after burn-in, every eval_interval iterations
    and at the end

    eval_scenes: held-out scenes (generated from the run seed if None)
    on_evaluation: optional callable(record, teacher, student) after each evaluation

    raise: InvalidConfigError, TrainingDivergenceError
    return: list of evaluation.MetricsRecord
    """
    config.validate()
    if eval_scenes is None:
        settings = splits.proposal_settings
        eval_scenes = synthBench.generate_eval_scenes(splits, 60, (2, 5), config.seed, settings.box_size_range)
    streams = make_streams(config.seed)
    student = detector.ModelParams.create(splits.id_class_count, splits.feature_dim, config.hidden_dim,
                                          streams['init'])

    log.info('Burn-in for %d iterations', config.burn_in_iters)
    history = []
    student = burn_in(student, splits, config, streams, history)
    teacher = init_teacher(student)

    records = []

    def evaluate(iteration, step):
        record = evaluate_teacher(teacher, splits, eval_scenes, config, iteration, step)
        records.append(record)
        if on_evaluation is not None:
            on_evaluation(record, teacher, student)

    evaluate(config.burn_in_iters, history[-1] if history else None)
    for iteration in range(config.burn_in_iters + 1, config.total_iters + 1):
        labeled = _sample_scenes(splits.labeled, config.labeled_batch_size, streams['sampling'])
        unlabeled = _sample_scenes(splits.unlabeled, config.unlabeled_batch_size, streams['sampling'])
        student, teacher, step = train_step(student, teacher, labeled, unlabeled, splits, config, streams,
                                            iteration)
        if (iteration - config.burn_in_iters) % config.eval_interval == 0 or iteration == config.total_iters:
            evaluate(iteration, step)
    return records
