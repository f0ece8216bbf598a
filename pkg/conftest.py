# -*- coding: utf-8 -*-
"""
 Shared fixtures of the test suite: a tiny world, a short training schedule
 and a central finite-difference helper.
"""
import dataclasses

import numpy
import pytest

import detector
import synthBench
import trainer


TINY_BENCH = synthBench.BenchConfig(num_classes=6, num_id_classes=3, feature_dim=8, num_labeled=8,
                                    unlabeled_id=4, unlabeled_mix=4, unlabeled_ood=4, per_gt_copies=8,
                                    num_random=16, num_eval_scenes=6)

TINY_TRAINER = trainer.TrainerConfig(burn_in_iters=4, total_iters=8, eval_interval=4, proposals_per_image=64,
                                     ood_subsample=16, labeled_batch_size=2, unlabeled_batch_size=2,
                                     learning_rate=0.1)


def pytest_addoption(parser):
    parser.addoption('--slow', action='store_true', default=False, help='Also run the slow experiments')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--slow'):
        return
    skip = pytest.mark.skip(reason='slow experiment, run with --slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def bench_config():
    return dataclasses.replace(TINY_BENCH)


@pytest.fixture
def trainer_config():
    return dataclasses.replace(TINY_TRAINER)


@pytest.fixture(scope='session')
def benchmark():
    """
    (DatasetSplits, eval scenes) of the tiny world, seed 0
    """
    return synthBench.build_benchmark(TINY_BENCH, 0)


@pytest.fixture
def splits(benchmark):
    return benchmark[0]


@pytest.fixture
def eval_scenes(benchmark):
    return benchmark[1]


@pytest.fixture
def random_params():
    """
    Factory of parameters with non trivial weights
    """
    def create(num_classes=3, feature_dim=6, hidden_dim=0, seed=0, scale=0.5):
        rng = numpy.random.default_rng(seed)
        return detector.ModelParams.create(num_classes, feature_dim, hidden_dim, rng, scale)
    return create


def numeric_gradient(function, vector, h=1e-5):
    """
    Central finite differences of a scalar function of a vector
    """
    vector = numpy.array(vector, dtype=float)
    grad = numpy.zeros_like(vector)
    for i in range(len(vector)):
        old = vector[i]
        vector[i] = old + h
        plus = function(vector)
        vector[i] = old - h
        minus = function(vector)
        vector[i] = old
        grad[i] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    """
    Largest absolute difference over the largest magnitude
    """
    analytic = numpy.asarray(analytic, dtype=float)
    numeric = numpy.asarray(numeric, dtype=float)
    scale = max(numpy.max(numpy.abs(analytic)), numpy.max(numpy.abs(numeric)), 1e-8)
    return numpy.max(numpy.abs(analytic - numeric)) / scale
