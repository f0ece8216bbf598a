# -*- coding: utf-8 -*-
import dataclasses
import math
import os

import pytest

import experiments
import fileFormats
import ossod
import synthBench
import trainer
from conftest import TINY_BENCH, TINY_TRAINER


def tiny_overrides():
    """
    key=value overrides turning the default settings into the tiny ones
    """
    overrides = []
    for config, default in ((TINY_TRAINER, trainer.TrainerConfig()), (TINY_BENCH, synthBench.BenchConfig())):
        for field in dataclasses.fields(config):
            value = getattr(config, field.name)
            if field.name != 'seed' and value != getattr(default, field.name):
                overrides.append('%s=%s' % (field.name, value))
    return overrides


def tiny_manifest(output_dir, variant_axis='none'):
    return experiments.ExperimentManifest(dataclasses.replace(TINY_TRAINER), dataclasses.replace(TINY_BENCH),
                                          [0], variant_axis, str(output_dir))


# --- Configuration

def test_parse_config_defaults():
    manifest = experiments.parse_config()
    assert manifest.training == trainer.TrainerConfig()
    assert manifest.training.tau_prime == 0.5
    assert manifest.bench == synthBench.BenchConfig()
    assert manifest.seeds == [0, 1, 2]
    assert manifest.variant_axis == 'none'


def test_parse_config_file_then_overrides(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('# tiny run\n'
                    'tau_prime = 0.6   # stricter filter\n'
                    'num_labeled = 20\n'
                    '\n'
                    'seeds = 3, 4\n'
                    'offline_ood = yes\n'
                    'scorer_threshold = none\n'
                    'variant_axis = scorer-ablation\n')
    manifest = experiments.parse_config(str(path), ['tau_prime=0.4'])
    assert manifest.training.tau_prime == 0.4
    assert manifest.training.offline_ood is True
    assert manifest.training.scorer_threshold is None
    assert manifest.bench.num_labeled == 20
    assert manifest.seeds == [3, 4]
    assert manifest.variant_axis == 'scorer-ablation'


def test_config_hash_is_stable_and_ignores_output_dir():
    a = experiments.parse_config(overrides=['tau=0.8'])
    b = experiments.parse_config(overrides=['tau=0.8', 'output_dir=/somewhere/else'])
    assert a.config_hash == b.config_hash
    assert a.config_hash == experiments.parse_config(overrides=['tau=0.8']).config_hash
    assert a.config_hash != experiments.parse_config(overrides=['tau=0.9']).config_hash
    assert a.config_hash != experiments.parse_config(overrides=['tau=0.8', 'seeds=0']).config_hash


@pytest.mark.parametrize('overrides, key', [
    (['tau_ood=0.3'], 'tau_ood'),
    (['tau_prime=0.9'], 'tau_prime'),
    (['tau_prime=0.2', 'tau_ood=0.3'], 'tau_ood'),
    (['warmup=10'], 'warmup'),
    (['tau=high'], 'tau'),
    (['burn_in_iters=1.5'], 'burn_in_iters'),
    (['offline_ood=maybe'], 'offline_ood'),
    (['seeds=a b'], 'seeds'),
    (['variant_axis=everything'], 'variant_axis'),
    (['num_id_classes=20'], 'num_id_classes'),
    (['tau'], 'tau'),
])
def test_invalid_settings_are_rejected_by_name(overrides, key):
    with pytest.raises(trainer.InvalidConfigError) as error:
        experiments.parse_config(overrides=overrides)
    assert error.value.key == key


def test_config_file_lines_need_an_equal_sign(tmp_path):
    path = tmp_path / 'bad.cfg'
    path.write_text('tau 0.7\n')
    with pytest.raises(experiments.ConfigError):
        experiments.parse_config(str(path))


def test_every_setting_has_a_key():
    keys = experiments.config_keys()
    assert 'tau_prime' in keys and 'num_labeled' in keys and 'seeds' in keys
    assert 'seed' not in keys
    assert len(keys) == len(set(keys))


# --- Presets

@pytest.mark.parametrize('preset', list(experiments.PRESETS))
def test_presets_give_valid_runs(preset):
    manifest = experiments.ExperimentManifest(variant_axis=preset)
    variants = manifest.variants()
    assert variants
    assert len(set(v.name for v in variants)) == len(variants)
    for variant in variants:
        trainer_config, bench_config = manifest.run_configs(variant, 7)
        assert trainer_config.seed == 7
        trainer_config.validate()
        bench_config.validate()


def test_sweeps_compare_both_methods():
    names = [v.name for v in experiments.PRESETS['combo-sweep']()]
    assert names == ['ID-baseline', 'ID-ours', 'ID+MIX-baseline', 'ID+MIX-ours', 'ID+MIX+OOD-baseline',
                     'ID+MIX+OOD-ours']
    baseline = experiments.PRESETS['combo-sweep']()[0]
    assert baseline.trainer == {'tau_prime': 0.0, 'lambda_ood': 0.0}
    assert baseline.bench == {'unlabeled_mix': 0, 'unlabeled_ood': 0}
    assert len(experiments.PRESETS['label-sweep']()) == 6
    assert len(experiments.PRESETS['idclass-sweep']()) == 6


def test_run_configs_do_not_touch_the_manifest():
    manifest = experiments.ExperimentManifest(variant_axis='no-filter-baseline')
    trainer_config, _ = manifest.run_configs(manifest.variants()[0], 1)
    assert trainer_config.tau_prime == 0.0
    assert manifest.training.tau_prime == 0.5


# --- Matrices

def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def test_run_matrix_writes_runs_and_summary(tmp_path):
    manifest = tiny_manifest(tmp_path / 'a')
    assert experiments.run_matrix(manifest, progress=False) == 0
    matrix_dir = manifest.matrix_dir()
    assert matrix_dir == os.path.join(str(tmp_path / 'a'), manifest.config_hash)
    run_dir = os.path.join(matrix_dir, 'default', '0')
    for name in ('metrics.csv', 'summary.json', 'pr_curves.json'):
        assert os.path.isfile(os.path.join(run_dir, name))
    assert sorted(os.listdir(os.path.join(run_dir, 'checkpoints'))) == ['iter_000004.npz', 'iter_000008.npz']
    for name in ('manifest.json', 'summary.csv', 'summary.txt'):
        assert os.path.isfile(os.path.join(matrix_dir, name))

    rows = fileFormats.MetricsCsvFormat().load(os.path.join(run_dir, 'metrics.csv'))
    assert [r['iteration'] for r in rows] == [4, 8]
    summary = fileFormats.load_json(os.path.join(run_dir, 'summary.json'))
    assert summary['final']['map'] == rows[-1]['map']
    assert summary['best']['map'] == max(r['map'] for r in rows)
    checkpoint = fileFormats.CheckpointFileFormat().load(os.path.join(run_dir, 'checkpoints', 'iter_000008.npz'))
    assert checkpoint['config_hash'] == summary['config_hash']
    assert checkpoint['iteration'] == 8
    assert fileFormats.load_json(os.path.join(matrix_dir, 'manifest.json'))['config_hash'] == manifest.config_hash


def test_run_matrix_is_reproducible(tmp_path):
    first = tiny_manifest(tmp_path / 'a')
    second = tiny_manifest(tmp_path / 'b')
    assert experiments.run_matrix(first, checkpoints=False, progress=False) == 0
    assert experiments.run_matrix(second, checkpoints=False, progress=False) == 0
    for name in (os.path.join('default', '0', 'metrics.csv'), os.path.join('default', '0', 'summary.json'),
                 os.path.join('default', '0', 'pr_curves.json'), 'summary.csv', 'manifest.json'):
        assert read_bytes(os.path.join(first.matrix_dir(), name)) == read_bytes(os.path.join(second.matrix_dir(),
                                                                                              name))


def test_failed_runs_are_reported_and_do_not_stop_the_matrix(tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise trainer.TrainingDivergenceError('Non finite loss at iteration 5')

    monkeypatch.setattr(trainer, 'run_experiment', diverge)
    manifest = tiny_manifest(tmp_path)
    assert experiments.run_matrix(manifest, checkpoints=False, progress=False) == 1
    error = os.path.join(manifest.matrix_dir(), 'default', '0', 'error.txt')
    assert 'Non finite loss' in read_bytes(error).decode('utf-8')
    assert os.path.isfile(os.path.join(manifest.matrix_dir(), 'summary.txt'))


def test_summarize_averages_seeds():
    variants = [experiments.Variant('ours', {}, {})]

    def summary(value):
        return {'final': {'map': value, 'ood_auroc': float('nan'), 'pseudo_precision': 1.0,
                          'pseudo_recall': 0.5}}

    rows = experiments.summarize([('ours', 0, summary(0.2)), ('ours', 1, summary(0.4)), ('ours', 2, None)],
                                 variants)
    row = rows[0]
    assert (row['runs'], row['failed']) == (2, 1)
    assert row['map_mean'] == pytest.approx(0.3)
    assert row['map_std'] == pytest.approx(math.sqrt(0.02))
    assert math.isnan(row['ood_auroc_mean'])
    assert row['pseudo_precision_std'] == 0.0
    assert 'ours' in experiments.format_summary(rows)


# --- Comparison

@pytest.fixture
def matrix(tmp_path):
    manifest = tiny_manifest(tmp_path / 'runs')
    experiments.run_matrix(manifest, checkpoints=False, progress=False)
    return manifest.matrix_dir()


def test_comparing_a_matrix_with_itself_gives_zero_deltas(matrix):
    report = experiments.compare_runs(matrix, matrix, ['map', 'pseudo_recall'])
    assert list(report) == ['default']
    for comparison in report['default'].values():
        assert comparison['deltas'] == [0.0]
        assert comparison['delta'] == 0.0
        assert (comparison['wins'], comparison['losses'], comparison['ties']) == (0, 0, 1)
        assert comparison['p_value'] == 1.0
    assert 'default' in experiments.format_report(report)


def test_compare_variant_directories(matrix):
    variant_dir = os.path.join(matrix, 'default')
    report = experiments.compare_runs(variant_dir, variant_dir, ['map'])
    assert list(report) == ['']
    assert report['']['map']['seeds'] == ['0']


def test_compare_rejects_incompatible_directories(matrix, tmp_path):
    with pytest.raises(experiments.IncompatibleRunsError):
        experiments.compare_runs(matrix, matrix, ['no_such_metric'])
    with pytest.raises(experiments.IncompatibleRunsError):
        experiments.compare_runs(matrix, os.path.join(matrix, 'default'), ['map'])
    with pytest.raises(experiments.IncompatibleRunsError):
        experiments.compare_runs(matrix, str(tmp_path / 'missing'), ['map'])
    empty = tmp_path / 'empty'
    empty.mkdir()
    with pytest.raises(experiments.IncompatibleRunsError):
        experiments.compare_runs(matrix, str(empty), ['map'])


# --- Command line

def test_command_line_generate_train_evaluate_compare(tmp_path):
    settings = []
    for override in tiny_overrides():
        settings += ['-s', override]
    bench = str(tmp_path / 'tiny.ossod')
    run_dir = str(tmp_path / 'variant' / '0')

    assert ossod.main(['-q', 'gen', bench] + settings) == 0
    splits, eval_scenes = fileFormats.BenchmarkFileFormat().load(bench)
    assert len(splits.labeled) == TINY_BENCH.num_labeled
    assert len(eval_scenes) == TINY_BENCH.num_eval_scenes

    assert ossod.main(['-q', 'train', '-b', bench, '-o', run_dir] + settings) == 0
    assert os.path.isfile(os.path.join(run_dir, 'summary.json'))
    checkpoint = os.path.join(run_dir, 'checkpoints', 'iter_000008.npz')
    assert ossod.main(['-q', 'eval', checkpoint, bench] + settings) == 0
    variant_dir = str(tmp_path / 'variant')
    assert ossod.main(['-q', 'compare', variant_dir, variant_dir, '--metrics', 'map']) == 0


def test_command_line_reports_bad_settings(tmp_path, capsys):
    assert ossod.main(['-q', 'gen', str(tmp_path / 'x.ossod'), '-s', 'warmup=3']) == 1
    assert 'warmup' in capsys.readouterr().err
    assert ossod.main(['-q', 'compare', str(tmp_path), str(tmp_path)]) == 1
