# -*- coding: utf-8 -*-
import logging

import synthBench
import trainer
import validation
from detector import Detection
from geometry import BBox


def spec(class_id, is_id, mean):
    return synthBench.ClassSpec(class_id, is_id, mean, 0.25)


def test_check_world(caplog):
    good = [spec(0, True, (0.0, 0.0)), spec(1, False, (1.0, 0.0))]
    assert validation.check_world(good)
    assert not validation.check_world([])
    assert not validation.check_world([spec(1, True, (0.0, 0.0)), spec(0, False, (1.0, 0.0))])
    assert not validation.check_world([spec(0, False, (0.0, 0.0)), spec(1, True, (1.0, 0.0))])
    assert not validation.check_world([spec(0, True, (0.0, 0.0)), spec(1, True, (1.0, 0.0))])
    with caplog.at_level(logging.ERROR):
        assert not validation.check_world([spec(0, True, (0.0, 0.0)), spec(1, False, (0.3, 0.0))])
    assert 'WRONG WORLD' in caplog.text


def test_generated_splits_are_consistent(splits):
    assert validation.check_splits(splits)


def test_check_splits_finds_broken_scenes(splits, caplog):
    ood_scene = next(s for s in splits.unlabeled if s.split_tag == synthBench.TAG_OOD)
    labeled_ood = synthBench.Scene(ood_scene.scene_id + 1000, synthBench.TAG_OOD,
                                   synthBench.ground_truth(ood_scene), True)
    with caplog.at_level(logging.ERROR):
        assert not validation.check_splits(splits.replace(labeled=splits.labeled + [labeled_ood]))
    assert 'WRONG SPLITS' in caplog.text

    assert not validation.check_splits(splits.replace(labeled=splits.labeled + [splits.labeled[0]]))

    mislabeled = synthBench.Scene(5000, synthBench.TAG_ID, synthBench.ground_truth(ood_scene), False)
    assert not validation.check_splits(splits.replace(unlabeled=splits.unlabeled + [mislabeled]))

    outside = synthBench.Scene(5001, synthBench.TAG_ID, [(BBox(0.5, 0.5, 1.5, 0.9), 0)], True)
    assert not validation.check_splits(splits.replace(labeled=splits.labeled + [outside]))

    assert not validation.check_splits(splits.replace(labeled=[]))


def test_check_pseudo_partition(trainer_config, caplog):
    dets = [Detection(BBox(0, 0, 0.2, 0.2), 0, 0.9, s) for s in (0.1, 0.6, 0.9)]
    pseudo = trainer.partition_pseudo_labels(0, dets, trainer_config, 3)
    assert validation.check_pseudo_partition(pseudo, trainer_config)

    swapped = trainer.PseudoLabelSet(0, dets, pseudo.ignored, pseudo.accepted_id, pseudo.rejected_ood,
                                     pseudo.filtered, 3)
    with caplog.at_level(logging.ERROR):
        assert not validation.check_pseudo_partition(swapped, trainer_config)
    assert 'WRONG PSEUDO-LABELS' in caplog.text

    missing = trainer.PseudoLabelSet(0, dets, pseudo.accepted_id, [], pseudo.rejected_ood, pseudo.filtered, 3)
    assert not validation.check_pseudo_partition(missing, trainer_config)

    trainer_config.tau = 0.95
    assert not validation.check_pseudo_partition(pseudo, trainer_config)
