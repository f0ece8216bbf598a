# -*- coding: utf-8 -*-
import numpy
import pytest

import detector
import geometry
import oodHeads
from conftest import numeric_gradient, relative_error
from geometry import BBox


def random_batch(rng, num_classes, feature_dim, size):
    features = rng.normal(0.0, 1.0, size=(size, feature_dim))
    targets = rng.integers(0, num_classes + 1, size=size)
    targets[0] = 0  # at least one foreground row
    anchors = geometry.clip_boxes(rng.uniform(0.0, 1.0, size=(size, 4)))
    offsets = rng.normal(0.0, 0.3, size=(size, 4))
    return detector.ProposalBatch(features, targets, anchors, offsets)


def check_gradient(params, loss_function):
    loss, grads = loss_function(params)
    numeric = numeric_gradient(lambda v: loss_function(params.from_vector(v))[0], params.to_vector())
    return relative_error(grads.to_vector(), numeric)


@pytest.mark.parametrize('hidden_dim', [0, 5])
def test_supervised_detection_gradient(random_params, hidden_dim):
    rng = numpy.random.default_rng(10 + hidden_dim)
    for case in range(20):
        params = random_params(num_classes=3, feature_dim=6, hidden_dim=hidden_dim, seed=case)
        batch = random_batch(rng, 3, 6, int(rng.integers(1, 9)))
        error = check_gradient(params, lambda p: detector.supervised_detection_loss(p, batch))
        assert error < 1e-4


@pytest.mark.parametrize('hidden_dim', [0, 4])
def test_unsupervised_detection_gradient(random_params, hidden_dim):
    rng = numpy.random.default_rng(20 + hidden_dim)
    for case in range(20):
        params = random_params(num_classes=4, feature_dim=5, hidden_dim=hidden_dim, seed=100 + case)
        batch = random_batch(rng, 4, 5, int(rng.integers(1, 9)))
        regression = bool(case % 2)
        error = check_gradient(params, lambda p: detector.unsupervised_detection_loss(p, batch, regression))
        assert error < 1e-4


@pytest.mark.parametrize('head, hidden_dim', [('ova', 0), ('ova', 3), ('binary', 0), ('binary', 3)])
def test_ood_head_gradient(random_params, head, hidden_dim):
    rng = numpy.random.default_rng(30)
    for case in range(20):
        params = random_params(num_classes=3, feature_dim=6, hidden_dim=hidden_dim, seed=200 + case)
        size = int(rng.integers(1, 9))
        features = rng.normal(0.0, 1.0, size=(size, 6))
        targets = rng.integers(0, 4, size=size)
        error = check_gradient(params, lambda p: detector.ood_head_loss(p, features, targets, head))
        assert error < 1e-4


def test_losses_of_empty_batches():
    params = detector.ModelParams.create(3, 4)
    with pytest.raises(detector.EmptyBatchError):
        detector.supervised_detection_loss(params, None)
    loss, grads = detector.unsupervised_detection_loss(params, None)
    assert loss == 0.0
    assert not numpy.any(grads.to_vector())
    loss, grads = detector.ood_head_loss(params, numpy.zeros((0, 4)), [])
    assert loss == 0.0
    assert not numpy.any(grads.to_vector())


def test_build_detection_batch_drops_ignored_and_targets_background():
    proposals = numpy.array([[0, 0, 0.5, 0.5], [0, 0, 0.25, 0.5], [0.6, 0.6, 0.9, 0.9]], dtype=float)
    gt = [(BBox(0, 0, 0.5, 0.5), 1)]
    labels = geometry.assign_proposal_labels(proposals, gt, 0.7, 0.3)
    features = numpy.arange(6, dtype=float).reshape(3, 2)
    batch = detector.build_detection_batch(features, proposals, labels, [BBox(0, 0, 0.5, 0.5)], 3)
    assert list(batch.targets) == [1, 3]
    numpy.testing.assert_array_equal(batch.features, features[[0, 2]])
    numpy.testing.assert_allclose(batch.offsets[0], numpy.zeros(4), atol=1e-12)


def test_classify_is_a_distribution(random_params):
    params = random_params()
    probs = detector.classify(params, numpy.ones(6))
    assert probs.shape == (4, )
    assert probs.sum() == pytest.approx(1.0)
    assert numpy.all(probs >= 0)


def test_regress_returns_a_box_in_the_scene(random_params):
    box = detector.regress(random_params(), numpy.ones(6), BBox(0.2, 0.2, 0.4, 0.5))
    assert 0.0 <= box.x_min <= box.x_max <= 1.0
    assert 0.0 <= box.y_min <= box.y_max <= 1.0


def test_sgd_step_moves_against_the_gradient_and_detects_divergence(random_params):
    params = random_params()
    grads = params.zeros_like()
    grads['cls_b'][:] = 1.0
    stepped = detector.sgd_step(params, grads, 0.5)
    numpy.testing.assert_allclose(stepped['cls_b'], params['cls_b'] - 0.5)
    grads['cls_w'][0, 0] = numpy.nan
    with pytest.raises(detector.DivergenceError):
        detector.sgd_step(params, grads, 0.5)
    with pytest.raises(ValueError):
        detector.sgd_step(params, params.zeros_like(), 0.0)


def test_gradient_descent_reduces_supervised_loss(random_params):
    rng = numpy.random.default_rng(0)
    params = random_params(scale=0.01)
    batch = random_batch(rng, 3, 6, 8)
    first, _ = detector.supervised_detection_loss(params, batch)
    for _ in range(50):
        _, grads = detector.supervised_detection_loss(params, batch)
        params = detector.sgd_step(params, grads, 0.1)
    last, _ = detector.supervised_detection_loss(params, batch)
    assert last < first


def test_supervised_loss_vanishes_on_separable_classes(random_params):
    rng = numpy.random.default_rng(2)
    targets = numpy.repeat(numpy.arange(4), 10)
    features = 4.0 * numpy.eye(6)[targets] + rng.normal(0.0, 0.1, size=(40, 6))
    anchors = geometry.clip_boxes(rng.uniform(0.0, 1.0, size=(40, 4)))
    batch = detector.ProposalBatch(features, targets, anchors, numpy.zeros((40, 4)))
    params = random_params(scale=0.01)
    for _ in range(5000):
        loss, grads = detector.supervised_detection_loss(params, batch, regression=False)
        if loss < 0.05:
            break
        params = detector.sgd_step(params, grads, 0.5)
    assert loss < 0.05


def test_model_params_helpers(random_params):
    params = random_params(hidden_dim=4)
    assert params.num_classes == 3
    assert params.hidden_dim == 4
    assert params.feature_dim == 6
    assert params.from_vector(params.to_vector()).equals(params)
    copy = params.copy()
    copy['cls_w'][0, 0] += 1.0
    assert not copy.equals(params)
    with pytest.raises(detector.ShapeError):
        params.check_shapes(random_params(hidden_dim=0))


def test_detect_scores_and_suppresses(random_params):
    params = random_params(num_classes=3, feature_dim=6)
    rng = numpy.random.default_rng(2)
    proposals = geometry.clip_boxes(rng.uniform(0, 1, size=(30, 4)))
    features = rng.normal(0, 1, size=(30, 6))
    scorer = oodHeads.get_scorer('ova')
    dets = detector.detect(params, proposals, features, 0.5, 0.0, scorer)
    assert dets
    scores = [d.cls_score for d in dets]
    assert scores == sorted(scores, reverse=True)
    out = detector.forward_proposals(params, features)
    for det in dets:
        assert 0 <= det.class_id < 3
        assert det.ood_score == pytest.approx(out['ova'][det.proposal_index, det.class_id])
        assert det.filter_score == pytest.approx(det.ood_score)
    for a in dets:
        for b in dets:
            if a is not b:
                assert geometry.iou(a.box, b.box) <= 0.5
    assert detector.detect(params, proposals, features, 0.5, 1.01, scorer) == []
    assert detector.detect(params, numpy.zeros((0, 4)), numpy.zeros((0, 6)), 0.5) == []
