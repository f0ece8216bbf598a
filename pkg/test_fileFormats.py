# -*- coding: utf-8 -*-
import json
import math

import numpy
import pytest

import evaluation
import fileFormats
import synthBench


def scene_signature(scene):
    return scene.scene_id, scene.split_tag, scene.labeled, synthBench.ground_truth(scene)


def test_benchmark_save_and_load(tmp_path, splits, eval_scenes):
    filename = str(tmp_path / 'tiny.ossod')
    fileFormats.BenchmarkFileFormat().save((splits, eval_scenes), filename)
    loaded, loaded_eval = fileFormats.BenchmarkFileFormat().load(filename)

    assert [scene_signature(s) for s in loaded.labeled] == [scene_signature(s) for s in splits.labeled]
    assert [scene_signature(s) for s in loaded.unlabeled] == [scene_signature(s) for s in splits.unlabeled]
    assert [scene_signature(s) for s in loaded_eval] == [scene_signature(s) for s in eval_scenes]
    assert loaded.classes == splits.classes
    assert loaded.id_class_count == splits.id_class_count
    assert numpy.array_equal(loaded.background_feature_mean, splits.background_feature_mean)
    assert loaded.proposal_settings == splits.proposal_settings


def test_loaded_benchmark_renders_the_same_features(tmp_path, splits, eval_scenes):
    filename = str(tmp_path / 'tiny.ossod')
    fileFormats.BenchmarkFileFormat().save((splits, eval_scenes), filename)
    loaded, _ = fileFormats.BenchmarkFileFormat().load(filename)
    scene, copy = splits.unlabeled[2], loaded.unlabeled[2]
    a = synthBench.render_features(splits, scene, synthBench.propose(splits, scene, numpy.random.default_rng(1)),
                                   0.1, numpy.random.default_rng(2))
    b = synthBench.render_features(loaded, copy, synthBench.propose(loaded, copy, numpy.random.default_rng(1)),
                                   0.1, numpy.random.default_rng(2))
    assert numpy.array_equal(a, b)


@pytest.mark.parametrize('content', ['', 'not json\n', '{"version": 99}\n',
                                     '{"version": 1, "classes": []}\n'])
def test_benchmark_load_rejects_bad_files(tmp_path, content):
    filename = tmp_path / 'bad.ossod'
    filename.write_text(content)
    with pytest.raises(fileFormats.InvalidFileFormatException):
        fileFormats.BenchmarkFileFormat().load(str(filename))


@pytest.mark.parametrize('box', [[0.6, 0.2, 0.4, 0.5], [0.1, 0.1, 0.3], [0.1, 0.1, 0.3, 'nan']])
def test_benchmark_load_rejects_bad_boxes(tmp_path, splits, eval_scenes, box):
    filename = tmp_path / 'tiny.ossod'
    fileFormats.BenchmarkFileFormat().save((splits, eval_scenes), str(filename))
    lines = filename.read_text().splitlines()
    index = next(i for i, line in enumerate(lines[1:], 1) if json.loads(line)['instances'])
    record = json.loads(lines[index])
    record['instances'][0][0] = box
    lines[index] = json.dumps(record)
    filename.write_text('\n'.join(lines) + '\n')
    with pytest.raises(fileFormats.InvalidFileFormatException):
        fileFormats.BenchmarkFileFormat().load(str(filename))


def test_checkpoint_save_and_load_is_bit_exact(tmp_path, random_params):
    data = {'teacher': random_params(hidden_dim=5, seed=1), 'student': random_params(hidden_dim=5, seed=2),
            'config_hash': 'abc123', 'iteration': 300}
    filename = str(tmp_path / 'iter_000300.npz')
    fileFormats.CheckpointFileFormat().save(data, filename)
    loaded = fileFormats.CheckpointFileFormat().load(filename)
    assert loaded['teacher'].equals(data['teacher'])
    assert loaded['student'].equals(data['student'])
    assert list(loaded['teacher'].keys()) == list(data['teacher'].keys())
    assert loaded['config_hash'] == 'abc123'
    assert loaded['iteration'] == 300


def test_checkpoint_load_rejects_other_files(tmp_path):
    filename = tmp_path / 'bad.npz'
    filename.write_text('iteration,map\n')
    with pytest.raises(fileFormats.InvalidFileFormatException):
        fileFormats.CheckpointFileFormat().load(str(filename))


def metrics_record(iteration, per_class_ap):
    return evaluation.MetricsRecord(iteration, 0.1 + 1e-17 * iteration, per_class_ap, float('nan'), False,
                                    1.0 / 3.0, True, 2.0 / 7.0, (0.5, 0.25, 0.125, 1e-9), 0.875000001, (3, 1, 4))


def test_metrics_save_and_load(tmp_path):
    records = [metrics_record(300, [0.5, float('nan'), 1.0 / 3.0]), metrics_record(600, [0.1, 0.2, 0.3])]
    filename = str(tmp_path / 'metrics.csv')
    fileFormats.MetricsCsvFormat().save(records, filename)
    with open(filename) as f:
        header = f.readline().strip().split(',')
    assert header == fileFormats.METRICS_COLUMNS + ['ap_0', 'ap_1', 'ap_2']

    rows = fileFormats.MetricsCsvFormat().load(filename)
    assert [r['iteration'] for r in rows] == [300, 600]
    first = rows[0]
    assert first['map'] == records[0].map
    assert math.isnan(first['ood_auroc']) and first['auroc_defined'] == 0
    assert first['pseudo_precision'] == 1.0 / 3.0 and first['precision_defined'] == 1
    assert first['pseudo_recall'] == 2.0 / 7.0
    assert (first['loss_sup_det'], first['loss_unsup_det'], first['loss_sup_ood'], first['loss_unsup_ood']) == \
        (0.5, 0.25, 0.125, 1e-9)
    assert first['loss_total'] == 0.875000001
    assert (first['n_accepted'], first['n_ignored'], first['n_rejected']) == (3, 1, 4)
    assert first['ap_0'] == 0.5 and math.isnan(first['ap_1']) and first['ap_2'] == 1.0 / 3.0


@pytest.mark.parametrize('content', ['', 'step,value\n1,2\n',
                                     ','.join(fileFormats.METRICS_COLUMNS) + '\n1,2\n'])
def test_metrics_load_rejects_bad_files(tmp_path, content):
    filename = tmp_path / 'metrics.csv'
    filename.write_text(content)
    with pytest.raises(fileFormats.InvalidFileFormatException):
        fileFormats.MetricsCsvFormat().load(str(filename))


def test_load_with_some_format_falls_back_on_content(tmp_path, splits, eval_scenes):
    formats = [fileFormats.CheckpointFileFormat(), fileFormats.MetricsCsvFormat(),
               fileFormats.BenchmarkFileFormat()]
    renamed = str(tmp_path / 'bench.txt')
    fileFormats.BenchmarkFileFormat().save((splits, eval_scenes), renamed)
    loaded = fileFormats.load_with_some_format(renamed, formats)
    assert loaded is not None
    assert len(loaded[0].labeled) == len(splits.labeled)

    garbage = tmp_path / 'noise.ossod'
    garbage.write_text('nothing to see\n')
    assert fileFormats.load_with_some_format(str(garbage), formats) is None


def test_formats_describe_themselves():
    for format, extension in ((fileFormats.BenchmarkFileFormat(), '*.ossod'),
                              (fileFormats.CheckpointFileFormat(), '*.npz'),
                              (fileFormats.MetricsCsvFormat(), '*.csv')):
        assert format.canLoad() and format.canSave()
        assert extension in str(format)
    with pytest.raises(Exception):
        fileFormats.FileFormat()


def test_settings_hash_ignores_key_order():
    a = fileFormats.settings_hash({'tau': 0.7, 'seeds': [0, 1]})
    assert a == fileFormats.settings_hash({'seeds': [0, 1], 'tau': 0.7})
    assert a != fileFormats.settings_hash({'tau': 0.6, 'seeds': [0, 1]})
    assert len(a) == 32
