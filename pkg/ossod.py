#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Command line front end of OSSOD-Bench

    ossod.py gen      generate a benchmark file
    ossod.py train    train one run
    ossod.py matrix   run a preset or manifest over its variants and seeds
    ossod.py compare  compare two run or matrix directories
    ossod.py eval     evaluate a checkpoint on a benchmark file

 Settings come from a "key = value" file (-c) and key=value overrides (-s).
 Runs are written under $OSSOD_RUNS (default: runs).

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
import argparse
import dataclasses
import json
import logging
import os
import sys

import experiments
import fileFormats
import synthBench
import trainer

log = logging.getLogger(__name__)


def _manifest(args):
    """
    return: ExperimentManifest or None after printing the error
    """
    try:
        return experiments.parse_config(args.config, args.set)
    except trainer.InvalidConfigError as e:
        print('ERROR: invalid setting %s' % e, file=sys.stderr)
    except IOError as e:
        print('ERROR: reading configuration file: %s' % e, file=sys.stderr)
    return None


def _load_benchmark(filename):
    data = fileFormats.load_with_some_format(filename, [fileFormats.BenchmarkFileFormat()])
    if data is None:
        print('ERROR: Unexpected format for file %s' % filename, file=sys.stderr)
    return data


def command_gen(args):
    manifest = _manifest(args)
    if manifest is None:
        return 1
    seed = args.seed if args.seed is not None else manifest.seeds[0]
    try:
        data = synthBench.build_benchmark(manifest.bench, seed)
    except synthBench.WorldGenerationError as e:
        print('ERROR: %s' % e, file=sys.stderr)
        return 1
    fileFormats.BenchmarkFileFormat().save(data, args.outfile)
    splits, eval_scenes = data
    print('%s: %d labeled, %d unlabeled and %d evaluation scenes' % (args.outfile, len(splits.labeled),
                                                                     len(splits.unlabeled), len(eval_scenes)))
    return 0


def command_train(args):
    manifest = _manifest(args)
    if manifest is None:
        return 1
    seed = args.seed if args.seed is not None else manifest.seeds[0]
    variant = experiments.Variant('default', {}, {})
    trainer_config, bench_config = manifest.run_configs(variant, seed)
    benchmark = None
    if args.benchmark:
        benchmark = _load_benchmark(args.benchmark)
        if benchmark is None:
            return 1
    run_dir = args.output or os.path.join(manifest.matrix_dir(), variant.name, str(seed))
    try:
        summary = experiments.run_single(trainer_config, bench_config, run_dir, variant.name,
                                         not args.no_checkpoints, benchmark)
    except (trainer.TrainingDivergenceError, synthBench.WorldGenerationError) as e:
        print('ERROR: %s' % e, file=sys.stderr)
        return 1
    final = summary['final']
    print('%s: mAP %.4f  AUROC %.4f  pseudo-label precision %.4f recall %.4f'
          % (run_dir, final['map'], final['ood_auroc'], final['pseudo_precision'], final['pseudo_recall']))
    return 0


def command_matrix(args):
    if args.preset:
        args.set = list(args.set) + ['variant_axis=%s' % args.preset]
    manifest = _manifest(args)
    if manifest is None:
        return 1
    status = experiments.run_matrix(manifest, args.jobs, not args.no_checkpoints, not args.no_progress)
    with open(os.path.join(manifest.matrix_dir(), 'summary.txt')) as f:
        print(f.read(), end='')
    return status


def command_compare(args):
    try:
        report = experiments.compare_runs(args.baseline, args.treatment, args.metrics)
    except experiments.IncompatibleRunsError as e:
        print('ERROR: %s' % e, file=sys.stderr)
        return 1
    print(experiments.format_report(report), end='')
    if args.json:
        fileFormats.save_json(report, args.json)
    return 0


def command_eval(args):
    manifest = _manifest(args)
    if manifest is None:
        return 1
    try:
        checkpoint = fileFormats.CheckpointFileFormat().load(args.checkpoint)
    except fileFormats.InvalidFileFormatException as e:
        print('ERROR: %s' % e, file=sys.stderr)
        return 1
    benchmark = _load_benchmark(args.benchmark)
    if benchmark is None:
        return 1
    splits, eval_scenes = benchmark
    seed = args.seed if args.seed is not None else manifest.seeds[0]
    trainer_config, bench_config = manifest.run_configs(experiments.Variant('default', {}, {}), seed)
    run_hash = fileFormats.settings_hash({'trainer': dataclasses.asdict(trainer_config),
                                          'bench': dataclasses.asdict(bench_config)})
    if run_hash != checkpoint['config_hash']:
        log.warning('Checkpoint was trained with other settings (%s, now %s)', checkpoint['config_hash'], run_hash)

    model = checkpoint['student' if args.student else 'teacher']
    record = trainer.evaluate_teacher(model, splits, eval_scenes, trainer_config, checkpoint['iteration'])
    print(json.dumps(experiments.record_row(record), indent=2))
    return 0


def _parser():
    parser = argparse.ArgumentParser(description='Open-set semi-supervised object detection benchmark')
    parser.add_argument('-v', '--verbose', action='store_true', help='Log debugging messages')
    parser.add_argument('-q', '--quiet', action='store_true', help='Log only warnings and errors')
    commands = parser.add_subparsers(dest='command', required=True)

    def settings(command):
        command.add_argument('-c', '--config', default=None, help='Configuration file (key = value lines)')
        command.add_argument('-s', '--set', action='append', default=[], metavar='KEY=VALUE',
                             help='Override a setting (repeatable)')

    gen = commands.add_parser('gen', help='Generate a benchmark file')
    settings(gen)
    gen.add_argument('outfile', help='Benchmark file to write (.ossod)')
    gen.add_argument('--seed', type=int, default=None, help='Benchmark seed (default: first of seeds)')
    gen.set_defaults(function=command_gen)

    train = commands.add_parser('train', help='Train one run')
    settings(train)
    train.add_argument('--seed', type=int, default=None, help='Run seed (default: first of seeds)')
    train.add_argument('--benchmark', '-b', default=None, help='Benchmark file (default: generate from seed)')
    train.add_argument('--output', '-o', default=None, help='Run directory (default: under $OSSOD_RUNS)')
    train.add_argument('--no-checkpoints', action='store_true', help='Do not write checkpoints')
    train.set_defaults(function=command_train)

    matrix = commands.add_parser('matrix', help='Run every variant and seed of a manifest')
    settings(matrix)
    matrix.add_argument('--preset', '-p', default=None, choices=list(experiments.PRESETS),
                        help='Variant axis (overrides variant_axis)')
    matrix.add_argument('--jobs', '-j', type=int, default=1, help='Worker processes (default: 1)')
    matrix.add_argument('--no-checkpoints', action='store_true', help='Do not write checkpoints')
    matrix.add_argument('--no-progress', action='store_true', help='Hide the progress bar')
    matrix.set_defaults(function=command_matrix)

    compare = commands.add_parser('compare', help='Compare two run or matrix directories')
    compare.add_argument('baseline', help='Baseline directory')
    compare.add_argument('treatment', help='Treatment directory')
    compare.add_argument('--metrics', nargs='+', default=experiments.SUMMARY_METRICS,
                         help='Metrics to compare (default: %(default)s)')
    compare.add_argument('--json', default=None, help='Also write the report as JSON')
    compare.set_defaults(function=command_compare)

    evaluate = commands.add_parser('eval', help='Evaluate a checkpoint on a benchmark file')
    settings(evaluate)
    evaluate.add_argument('checkpoint', help='Checkpoint file (.npz)')
    evaluate.add_argument('benchmark', help='Benchmark file (.ossod)')
    evaluate.add_argument('--seed', type=int, default=None, help='Evaluation seed (default: first of seeds)')
    evaluate.add_argument('--student', action='store_true', help='Evaluate the student instead of the teacher')
    evaluate.set_defaults(function=command_eval)
    return parser


def main(argv=None):
    """
    Run a command

    return: exit status (0 ok, 1 error)
    """
    args = _parser().parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    return args.function(args)


# If the program is run directly
if __name__ == '__main__':
    sys.exit(main())
