#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Experiment manifests, run matrices and run comparison (module of OSSOD-Bench)

 A manifest holds the trainer and benchmark settings, the seeds and the
 variant axis (a preset name). Runs are written to

     <output root>/<config hash>/<variant>/<seed>/
         metrics.csv  summary.json  pr_curves.json  checkpoints/  [error.txt]

 and every matrix directory gets manifest.json, summary.csv and summary.txt
 with the mean and standard deviation across seeds.

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
import concurrent.futures
import csv
import dataclasses
import logging
import math
import os
import traceback

import namedlist
import numpy
import scipy.stats
import tqdm

import fileFormats
import synthBench
import trainer
import validation

log = logging.getLogger(__name__)

RUNS_ENVIRONMENT = 'OSSOD_RUNS'
DEFAULT_RUNS = 'runs'

SUMMARY_METRICS = ['map', 'ood_auroc', 'pseudo_precision', 'pseudo_recall']

# name: directory of the variant; trainer, bench: setting overrides
Variant = namedlist.namedtuple('Variant', ['name', 'trainer', 'bench'])

# Training methods every sweep compares
METHODS = collections.OrderedDict([
    ('baseline', {'tau_prime': 0.0, 'lambda_ood': 0.0}),
    ('ours', {}),
])


class ConfigError(trainer.InvalidConfigError):
    """
    Raised when a configuration file or override is not valid

    key: name of the offending setting
    """
    pass


class IncompatibleRunsError(Exception):
    """
    Raised when two run directories can not be compared
    """
    pass


def _method_variants(prefix='', bench=None):
    return [Variant(prefix + name, dict(overrides), dict(bench or {})) for name, overrides in METHODS.items()]


def _combo_sweep():
    combos = [('ID', {'unlabeled_mix': 0, 'unlabeled_ood': 0}),
              ('ID+MIX', {'unlabeled_ood': 0}),
              ('ID+MIX+OOD', {})]
    variants = []
    for combo, bench in combos:
        variants += _method_variants(combo + '-', bench)
    return variants


def _label_sweep():
    variants = []
    for count in (25, 50, 100):
        variants += _method_variants('labeled%d-' % count, {'num_labeled': count})
    return variants


def _idclass_sweep():
    variants = []
    for count in (3, 5, 7):
        variants += _method_variants('id%d-' % count, {'num_id_classes': count})
    return variants


PRESETS = collections.OrderedDict([
    ('none', lambda: [Variant('default', {}, {})]),
    ('combo-sweep', _combo_sweep),
    ('label-sweep', _label_sweep),
    ('idclass-sweep', _idclass_sweep),
    ('scorer-ablation', lambda: [Variant(name, {'scorer': name}, {})
                                 for name in ('msp', 'energy', 'entropy', 'ova')]),
    ('no-filter-baseline', lambda: [Variant('baseline', dict(METHODS['baseline']), {})]),
    ('method-comparison', lambda: [Variant('baseline', dict(METHODS['baseline']), {}),
                                   Variant('offline-ood', {'offline_ood': True}, {}),
                                   Variant('ours', {}, {})]),
    ('supervised-reference', lambda: [Variant('labeled-only', {'lambda_unsup': 0.0, 'lambda_ood': 0.0}, {}),
                                      Variant('labeled+id-annotated', {'lambda_unsup': 0.0, 'lambda_ood': 0.0},
                                              {'label_unlabeled_id': True}),
                                      Variant('ours', {}, {})]),
])


@dataclasses.dataclass
class ExperimentManifest:
    """
    Everything a matrix of runs depends on

    training.seed is replaced by each seed of seeds.
    """
    training: trainer.TrainerConfig = dataclasses.field(default_factory=trainer.TrainerConfig)
    bench: synthBench.BenchConfig = dataclasses.field(default_factory=synthBench.BenchConfig)
    seeds: list = dataclasses.field(default_factory=lambda: [0, 1, 2])
    variant_axis: str = 'none'
    output_dir: str = None

    def settings(self):
        """
        Settings the results depend on (output_dir excluded)
        """
        trainer_settings = dataclasses.asdict(self.training)
        del trainer_settings['seed']
        return collections.OrderedDict([('trainer', trainer_settings), ('bench', dataclasses.asdict(self.bench)),
                                        ('seeds', list(self.seeds)), ('variant_axis', self.variant_axis)])

    @property
    def config_hash(self):
        return fileFormats.settings_hash(self.settings())

    def variants(self):
        return PRESETS[self.variant_axis]()

    def output_root(self):
        if self.output_dir:
            return self.output_dir
        return os.environ.get(RUNS_ENVIRONMENT, DEFAULT_RUNS)

    def matrix_dir(self):
        return os.path.join(self.output_root(), self.config_hash)

    def run_configs(self, variant, seed):
        """
        return: (TrainerConfig, BenchConfig) of one run
        """
        return (dataclasses.replace(self.training, seed=seed, **variant.trainer),
                dataclasses.replace(self.bench, **variant.bench))


# --- Configuration files

_EXTRA_KEYS = ('seeds', 'variant_axis', 'output_dir')


def _coerce(key, field, text):
    """
    Convert a configuration value to the type of its field
    """
    text = text.strip()
    if field.default is None and text.lower() in ('none', ''):
        return None
    try:
        if field.type is bool:
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if field.type is int:
            return int(text)
        if field.type is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(key, 'expected %s, got %r' % (getattr(field.type, '__name__', field.type), text))


def config_keys():
    """
    Keys accepted in configuration files and overrides, in documentation order
    """
    trainer_keys = [f.name for f in dataclasses.fields(trainer.TrainerConfig) if f.name != 'seed']
    return trainer_keys + [f.name for f in dataclasses.fields(synthBench.BenchConfig)] + list(_EXTRA_KEYS)


def _read_pairs(path):
    pairs = []
    with open(path) as f:
        for number, line in enumerate(f, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError('line %d' % number, 'expected "key = value" in %s' % path)
            key, value = line.split('=', 1)
            pairs.append((key.strip(), value))
    return pairs


def parse_config(path=None, overrides=()):
    """
    Build a manifest from defaults, a configuration file and overrides

    path: line-oriented "key = value" file (# starts a comment), or None
    overrides: list of "key=value" strings applied after the file

    raise: ConfigError naming an unknown key or badly typed value,
           trainer.InvalidConfigError naming a setting that breaks an invariant,
           IOError if the file can not be read
    return: ExperimentManifest
    """
    pairs = _read_pairs(path) if path is not None else []
    for override in overrides:
        if '=' not in override:
            raise ConfigError(override, 'overrides are written key=value')
        key, value = override.split('=', 1)
        pairs.append((key.strip(), value))

    trainer_fields = dict((f.name, f) for f in dataclasses.fields(trainer.TrainerConfig) if f.name != 'seed')
    bench_fields = dict((f.name, f) for f in dataclasses.fields(synthBench.BenchConfig))
    trainer_values = {}
    bench_values = {}
    manifest = ExperimentManifest()
    for key, value in pairs:
        if key in trainer_fields:
            trainer_values[key] = _coerce(key, trainer_fields[key], value)
        elif key in bench_fields:
            bench_values[key] = _coerce(key, bench_fields[key], value)
        elif key == 'seeds':
            try:
                manifest.seeds = [int(s) for s in value.replace(',', ' ').split()]
            except ValueError:
                raise ConfigError(key, 'expected a list of integers, got %r' % value.strip())
            if not manifest.seeds:
                raise ConfigError(key, 'at least one seed is needed')
        elif key == 'variant_axis':
            manifest.variant_axis = value.strip()
            if manifest.variant_axis not in PRESETS:
                raise ConfigError(key, 'unknown preset %r (choose from %s)'
                                  % (manifest.variant_axis, ', '.join(PRESETS)))
        elif key == 'output_dir':
            manifest.output_dir = value.strip() or None
        else:
            raise ConfigError(key, 'unknown setting')

    manifest.training = trainer.TrainerConfig(**trainer_values)
    manifest.bench = synthBench.BenchConfig(**bench_values)
    manifest.training.validate()
    try:
        manifest.bench.validate()
    except synthBench.WorldGenerationError as e:
        raise ConfigError(str(e).split()[0], str(e))
    return manifest


# --- Single runs

def record_row(record):
    """
    JSON friendly dict of a MetricsRecord (PR curves excluded)
    """
    return collections.OrderedDict([
        ('iteration', record.iteration), ('map', record.map), ('per_class_ap', list(record.per_class_ap)),
        ('ood_auroc', record.ood_auroc), ('auroc_defined', bool(record.auroc_defined)),
        ('pseudo_precision', record.pseudo_precision), ('precision_defined', bool(record.precision_defined)),
        ('pseudo_recall', record.pseudo_recall), ('loss_components', list(record.loss_components)),
        ('loss_total', record.loss_total), ('pseudo_counts', list(record.pseudo_counts)),
    ])


def run_single(trainer_config, bench_config, run_dir, variant='default', checkpoints=True, benchmark=None):
    """
    Train one (variant, seed) and write its files in run_dir

    benchmark: (DatasetSplits, eval scenes) to use instead of generating them
               from bench_config and the trainer seed

    return: summary dict (also written to summary.json)
    """
    os.makedirs(run_dir, exist_ok=True)
    run_hash = fileFormats.settings_hash({'trainer': dataclasses.asdict(trainer_config),
                                          'bench': dataclasses.asdict(bench_config)})
    if benchmark is None:
        benchmark = synthBench.build_benchmark(bench_config, trainer_config.seed)
    splits, eval_scenes = benchmark
    if not validation.check_splits(splits):
        raise synthBench.WorldGenerationError('Generated benchmark failed the consistency checks')

    checkpoint_dir = os.path.join(run_dir, 'checkpoints')
    checkpoint_format = fileFormats.CheckpointFileFormat()

    def save_checkpoint(record, teacher, student):
        if not checkpoints:
            return
        os.makedirs(checkpoint_dir, exist_ok=True)
        checkpoint_format.save({'teacher': teacher, 'student': student, 'config_hash': run_hash,
                                'iteration': record.iteration},
                               os.path.join(checkpoint_dir, 'iter_%06d.npz' % record.iteration))

    records = trainer.run_experiment(trainer_config, splits, eval_scenes, save_checkpoint)
    fileFormats.MetricsCsvFormat().save(records, os.path.join(run_dir, 'metrics.csv'))
    fileFormats.save_json(dict((str(c), curve) for c, curve in records[-1].pr_curves.items()),
                          os.path.join(run_dir, 'pr_curves.json'))

    best = max(records, key=lambda r: r.map)
    summary = collections.OrderedDict([
        ('variant', variant), ('seed', trainer_config.seed), ('config_hash', run_hash),
        ('final', record_row(records[-1])), ('best', record_row(best)),
    ])
    fileFormats.save_json(summary, os.path.join(run_dir, 'summary.json'))
    return summary


def _run_task(task):
    """
    Worker of run_matrix: never raises, failures are written to error.txt

    return: (variant name, seed, summary or None)
    """
    variant, seed, trainer_config, bench_config, run_dir, checkpoints = task
    try:
        return variant, seed, run_single(trainer_config, bench_config, run_dir, variant, checkpoints)
    except Exception:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, 'error.txt'), 'w') as f:
            f.write(traceback.format_exc())
        log.error('Run %s seed %d failed (see %s)', variant, seed, os.path.join(run_dir, 'error.txt'))
        return variant, seed, None


# --- Matrices

def _stdev(values):
    return float(numpy.std(values, ddof=1)) if len(values) > 1 else 0.0


def summarize(results, variants):
    """
    Mean and standard deviation across seeds of the final metrics

    results: list of (variant name, seed, summary or None)

    return: list of OrderedDict rows, one per variant
    """
    rows = []
    for variant in variants:
        summaries = [s for name, _, s in results if name == variant.name and s is not None]
        row = collections.OrderedDict([('variant', variant.name), ('runs', len(summaries)),
                                       ('failed', sum(1 for name, _, s in results
                                                      if name == variant.name and s is None))])
        for metric in SUMMARY_METRICS:
            values = [s['final'][metric] for s in summaries]
            values = [v for v in values if not math.isnan(v)]
            row[metric + '_mean'] = float(numpy.mean(values)) if values else float('nan')
            row[metric + '_std'] = _stdev(values)
        rows.append(row)
    return rows


def format_summary(rows):
    lines = ['%-28s %4s ' % ('variant', 'runs') + ' '.join('%-20s' % m for m in SUMMARY_METRICS)]
    for row in rows:
        cells = ['%.4f (±%.4f)' % (row[m + '_mean'], row[m + '_std']) for m in SUMMARY_METRICS]
        lines.append('%-28s %4d ' % (row['variant'], row['runs']) + ' '.join('%-20s' % c for c in cells))
    return '\n'.join(lines) + '\n'


def run_matrix(manifest, jobs=1, checkpoints=True, progress=True):
    """
    Run every (variant, seed) of a manifest and write the matrix summary

    jobs: number of worker processes (1 runs in this process)

    return: exit status, 0 if every run succeeded
    """
    variants = manifest.variants()
    matrix_dir = manifest.matrix_dir()
    os.makedirs(matrix_dir, exist_ok=True)
    manifest_data = manifest.settings()
    manifest_data['config_hash'] = manifest.config_hash
    manifest_data['variants'] = [[v.name, v.trainer, v.bench] for v in variants]
    fileFormats.save_json(manifest_data, os.path.join(matrix_dir, 'manifest.json'))

    tasks = []
    for variant in variants:
        for seed in manifest.seeds:
            trainer_config, bench_config = manifest.run_configs(variant, seed)
            tasks.append((variant.name, seed, trainer_config, bench_config,
                          os.path.join(matrix_dir, variant.name, str(seed)), checkpoints))
    log.info('Running %d runs in %s', len(tasks), matrix_dir)

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(tqdm.tqdm(executor.map(_run_task, tasks), total=len(tasks), disable=not progress))
    else:
        results = [_run_task(task) for task in tqdm.tqdm(tasks, disable=not progress)]

    rows = summarize(results, variants)
    with open(os.path.join(matrix_dir, 'summary.csv'), 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(dict((k, repr(v) if isinstance(v, float) else v) for k, v in row.items()))
    with open(os.path.join(matrix_dir, 'summary.txt'), 'w') as f:
        f.write(format_summary(rows))

    failed = sum(1 for _, _, s in results if s is None)
    if failed:
        log.error('%d of %d runs failed', failed, len(results))
        return 1
    return 0


# --- Comparison

def _seed_dirs(variant_dir):
    seeds = {}
    for name in sorted(os.listdir(variant_dir)):
        path = os.path.join(variant_dir, name, 'summary.json')
        if os.path.isfile(path):
            seeds[name] = fileFormats.load_json(path)
    return seeds


def _load_runs(directory):
    """
    return: {variant name: {seed: summary}} of a matrix or a variant directory
    """
    if not os.path.isdir(directory):
        raise IncompatibleRunsError('%s is not a directory' % directory)
    seeds = _seed_dirs(directory)
    if seeds:
        return {'': seeds}
    variants = {}
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if os.path.isdir(path):
            found = _seed_dirs(path)
            if found:
                variants[name] = found
    if not variants:
        raise IncompatibleRunsError('No run summaries under %s' % directory)
    return variants


def _metric(summary, metric, where):
    try:
        value = summary['final'][metric]
    except KeyError:
        raise IncompatibleRunsError('Metric %s missing in %s' % (metric, where))
    if value is None:
        raise IncompatibleRunsError('Metric %s missing in %s' % (metric, where))
    return float(value)


def compare_runs(baseline_dir, treatment_dir, metrics=SUMMARY_METRICS):
    """
    Per metric deltas (treatment - baseline) of the final metrics, seed by
    seed, with a two sided sign test over the seeds that differ

    Both directories are matrix directories with the same variants, or
    variant directories with the same seeds.

    raise: IncompatibleRunsError
    return: OrderedDict {variant: {metric: comparison}}
    """
    baseline = _load_runs(baseline_dir)
    treatment = _load_runs(treatment_dir)
    if sorted(baseline) != sorted(treatment):
        raise IncompatibleRunsError('Variant axes differ: %s / %s' % (sorted(baseline), sorted(treatment)))

    report = collections.OrderedDict()
    for variant in sorted(baseline):
        seeds_b = baseline[variant]
        seeds_t = treatment[variant]
        if sorted(seeds_b) != sorted(seeds_t):
            raise IncompatibleRunsError('Seeds of %s differ: %s / %s'
                                        % (variant or treatment_dir, sorted(seeds_b), sorted(seeds_t)))
        seeds = sorted(seeds_b, key=lambda s: (len(s), s))
        entry = collections.OrderedDict()
        for metric in metrics:
            b = [_metric(seeds_b[s], metric, os.path.join(baseline_dir, variant, s)) for s in seeds]
            t = [_metric(seeds_t[s], metric, os.path.join(treatment_dir, variant, s)) for s in seeds]
            deltas = [y - x for x, y in zip(b, t)]
            wins = sum(1 for d in deltas if d > 0)
            losses = sum(1 for d in deltas if d < 0)
            p_value = scipy.stats.binomtest(wins, wins + losses, 0.5).pvalue if wins + losses else 1.0
            entry[metric] = collections.OrderedDict([
                ('seeds', seeds), ('baseline', b), ('treatment', t), ('deltas', deltas),
                ('baseline_mean', float(numpy.mean(b))), ('treatment_mean', float(numpy.mean(t))),
                ('delta', float(numpy.mean(deltas))), ('wins', wins), ('losses', losses),
                ('ties', len(deltas) - wins - losses), ('p_value', float(p_value)),
            ])
        report[variant] = entry
    return report


def format_report(report):
    """
    Text table of a compare_runs report
    """
    lines = ['%-28s %-18s %10s %10s %10s %8s %8s' % ('variant', 'metric', 'baseline', 'treatment', 'delta',
                                                     'sign', 'p')]
    for variant, entry in report.items():
        for metric, c in entry.items():
            lines.append('%-28s %-18s %10.4f %10.4f %+10.4f %8s %8.3f'
                         % (variant or '-', metric, c['baseline_mean'], c['treatment_mean'], c['delta'],
                            '%d/%d' % (c['wins'], len(c['deltas'])), c['p_value']))
    return '\n'.join(lines) + '\n'
