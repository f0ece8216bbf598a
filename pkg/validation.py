# -*- coding: utf-8 -*-
"""
 Consistency checks of generated benchmarks and pseudo-labels (module of OSSOD-Bench)

 Every check logs the first violated invariant and returns False, or returns
 True when everything holds.
"""
import logging

import numpy

import geometry
import synthBench
import trainer

log = logging.getLogger(__name__)


def check_world(classes):
    """
    Check the classes of a world: ID classes numbered [0, N) before the OOD
    ones, at least one of each, and means separated by twice the spread
    """
    if not classes:
        log.error('WRONG WORLD: no classes')
        return False

    for index, spec in enumerate(classes):
        if spec.class_id != index:
            log.error("WRONG WORLD: class at position %d has id %d", index, spec.class_id)
            return False

    flags = [spec.is_id for spec in classes]
    n = sum(flags)
    if n == 0 or n == len(classes):
        log.error('WRONG WORLD: %d ID classes out of %d', n, len(classes))
        return False
    if flags != [True] * n + [False] * (len(classes) - n):
        log.error('WRONG WORLD: ID classes are not numbered [0, %d)', n)
        return False

    for a in range(len(classes)):
        for b in range(a + 1, len(classes)):
            distance = numpy.linalg.norm(numpy.subtract(classes[a].feature_mean, classes[b].feature_mean))
            needed = 2 * max(classes[a].feature_spread, classes[b].feature_spread)
            if distance < needed:
                log.error('WRONG WORLD: classes %d and %d are %.4f apart (need %.4f)', a, b, distance, needed)
                return False
    return True


def check_splits(splits):
    """
    Check the scenes of a benchmark: unique ids, labeled scenes are ID scenes,
    scene composition follows the split tag and every box lies in the scene
    """
    if not check_world(splits.classes):
        return False
    if not splits.labeled:
        log.error('WRONG SPLITS: no labeled scene')
        return False

    n = splits.id_class_count
    seen = set()
    for scene in splits.labeled + splits.unlabeled:
        if scene.scene_id in seen:
            log.error('WRONG SPLITS: scene id %d repeated', scene.scene_id)
            return False
        seen.add(scene.scene_id)

        if scene.labeled and scene.split_tag != synthBench.TAG_ID:
            log.error('WRONG SPLITS: labeled scene %d is tagged %s', scene.scene_id, scene.split_tag)
            return False
        if scene.labeled == (scene in splits.unlabeled):
            log.error('WRONG SPLITS: scene %d labeled flag does not match its partition', scene.scene_id)
            return False

        instances = synthBench.ground_truth(scene)
        if not instances:
            log.error('WRONG SPLITS: scene %d has no instances', scene.scene_id)
            return False
        classes = [c for _, c in instances]
        has_id = any(c < n for c in classes)
        has_ood = any(c >= n for c in classes)
        expected = {synthBench.TAG_ID: (True, False), synthBench.TAG_OOD: (False, True),
                    synthBench.TAG_MIX: (True, True)}.get(scene.split_tag)
        if expected != (has_id, has_ood):
            log.error('WRONG SPLITS: scene %d tagged %s has classes %s', scene.scene_id, scene.split_tag,
                      sorted(classes))
            return False

        for box, _ in instances:
            if not (0.0 <= box.x_min <= box.x_max <= 1.0 and 0.0 <= box.y_min <= box.y_max <= 1.0):
                log.error('WRONG SPLITS: scene %d box %s out of the scene', scene.scene_id, tuple(box))
                return False
    return True


def check_pseudo_partition(pseudo, config):
    """
    Check a PseudoLabelSet: the three bands partition the detections and match
    their OOD scores, and every detection is above tau
    """
    members = [id(d) for d in pseudo.accepted_id + pseudo.ignored + pseudo.rejected_ood]
    if len(members) != len(set(members)) or set(members) != set(id(d) for d in pseudo.detections):
        log.error('WRONG PSEUDO-LABELS: bands of scene %d are not a partition', pseudo.scene_id)
        return False

    for band, members in ((trainer.ACCEPTED, pseudo.accepted_id), (trainer.IGNORED, pseudo.ignored),
                          (trainer.REJECTED, pseudo.rejected_ood)):
        for det in members:
            if trainer.ood_band(det.ood_score, config.tau_ood) != band:
                log.error('WRONG PSEUDO-LABELS: score %.4f placed in band %s', det.ood_score, band)
                return False

    for det in pseudo.detections:
        if det.cls_score < config.tau:
            log.error('WRONG PSEUDO-LABELS: detection with score %.4f below tau %.4f', det.cls_score, config.tau)
            return False
        if not 0.0 <= geometry.area(det.box) <= 1.0:
            log.error('WRONG PSEUDO-LABELS: box %s out of the scene', tuple(det.box))
            return False
    if any(id(d) not in set(id(x) for x in pseudo.detections) for d in pseudo.filtered):
        log.error('WRONG PSEUDO-LABELS: filtered detection not among the detections')
        return False
    return True
