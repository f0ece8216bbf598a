#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Load and save benchmark, checkpoint and metric files (module of OSSOD-Bench)

  Classes here should deal with data storing and recovering. They should
  not have anything to do with the command line interface (filenames,
  and options should be received by parameter).

  Benchmark files (.ossod) are line-delimited JSON: one header record with
  the world (classes, background mean, proposal settings, evaluation scene
  ids) followed by one record per scene:

      {"scene_id": 0, "split_tag": "ID", "labeled": true,
       "instances": [[[x_min, y_min, x_max, y_max], class_id], ...]}

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
import csv
import hashlib
import json
import logging
import os.path
import zipfile

import numpy

import detector
import geometry
import synthBench

log = logging.getLogger(__name__)

BENCHMARK_VERSION = 1

METRICS_COLUMNS = ['iteration', 'map', 'ood_auroc', 'auroc_defined', 'pseudo_precision', 'precision_defined',
                   'pseudo_recall', 'loss_sup_det', 'loss_unsup_det', 'loss_sup_ood', 'loss_unsup_ood',
                   'loss_total', 'n_accepted', 'n_ignored', 'n_rejected']


def load_with_some_format(filename, formats):
    """
    Try to load a file with any of the formats

    filename: the name of the file to read
    formats: a list of FileFormat objects with formats to use

    raise: IOError if there are problems reading the file
    return: loaded data - if ok
            None - if unknown format
    """
    # Try to load file with formats that match its extension in format order
    data = None
    extension = os.path.splitext(filename)[1][1:]

    for format in formats:
        if extension in format.filenameExtensions:
            try:
                data = format.load(filename)
                break
            except InvalidFileFormatException:
                pass

    # If load by extension failed, try to load files in any format independently of their extension
    if data is None:
        for format in formats:
            try:
                data = format.load(filename)
                break
            except InvalidFileFormatException:
                pass
    return data


def settings_hash(settings):
    """
    md5 of the canonical JSON of a settings mapping
    """
    text = json.dumps(settings, sort_keys=True, separators=(',', ':'))
    return hashlib.md5(text.encode('utf-8')).hexdigest()


def save_json(data, filename):
    with open(filename, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def load_json(filename):
    """
    raise: InvalidFileFormatException if the file is not JSON
    """
    with open(filename) as f:
        try:
            return json.load(f)
        except ValueError as e:
            raise InvalidFileFormatException('%s: %s' % (filename, e))


class InvalidFileFormatException(Exception):
    """
    Raised when a file does not contain data in the expected format
    """
    pass


class FileFormat(object):
    """
    Base class for file format loaders and savers
    """
    def __init__(self):
        """
        Initializes self.filenameExtensions as a list of strings with
        the filename extensions (excluding '.') supported by this format
        """
        self.filenameExtensions = []  # Example: ['ossod']
        raise Exception('Virtual class can not be instantiated')

    def filenamePatterns(self):
        """
        Returns a list of the wildcard pattern that matches files on this format.

        Implementing this function on subclasses is: not appropiate.
        """
        return ['*.' + e for e in self.filenameExtensions]

    def __str__(self):
        """
        Returns a string with the name or description of this format

        Implementing this function on subclasses is: recommended.
        Example string: 'OSSOD benchmark (*.ossod)'
        """
        return ''.join(['(', ', '.join(self.filenamePatterns()), ')'])

    def canLoad(self):
        """
        Returns if this format allows to load data

        Implementing this function on subclasses is: not appropiate.
        """
        return any('load' in klass.__dict__ for klass in type(self).__mro__[:-2])

    def load(self, filename):
        """
        Raises: InvalidFileFormatException if data in file does not follow the format
        Implementing this function on subclasses is: optional.
        """
        raise Exception('Virtual method not implemented (base class reached)')

    def canSave(self):
        """
        Return: if this format allows to save data

        Implementing this function on subclasses is: not appropiate.
        """
        return any('save' in klass.__dict__ for klass in type(self).__mro__[:-2])

    def save(self, data, filename):
        """
        data: exactly the same structure the load method returns
        filename: path and filename to save (should include extension)
        Returns: None

        Implementing this function on subclasses is: optional.
        """
        raise Exception('Virtual method not implemented (base class reached)')


class BenchmarkFileFormat(FileFormat):
    """
    Synthetic benchmarks: (DatasetSplits, list of evaluation Scene)
    """
    def __init__(self):
        self.filenameExtensions = ['ossod']

    def __str__(self):
        return 'OSSOD benchmark ' + ''.join(['(', ', '.join(self.filenamePatterns()), ')'])

    def save(self, data, filename):
        """
        Saves splits and evaluation scenes (see class docstring), with every
        annotation, hidden ones included
        """
        splits, eval_scenes = data
        settings = splits.proposal_settings
        header = collections.OrderedDict([
            ('version', BENCHMARK_VERSION),
            ('id_class_count', splits.id_class_count),
            ('background_feature_mean', [float(v) for v in splits.background_feature_mean]),
            ('classes', [[c.class_id, c.is_id, list(c.feature_mean), c.feature_spread] for c in splits.classes]),
            ('proposal_settings', [settings.per_gt_copies, settings.jitter_scale, settings.num_random,
                                   list(settings.box_size_range)]),
            ('eval_scene_ids', [s.scene_id for s in eval_scenes]),
        ])
        with open(filename, 'w') as f:
            f.write(json.dumps(header) + '\n')
            for scene in splits.labeled + splits.unlabeled + list(eval_scenes):
                record = collections.OrderedDict([
                    ('scene_id', scene.scene_id),
                    ('split_tag', scene.split_tag),
                    ('labeled', scene.labeled),
                    ('instances', [[list(box), c] for box, c in synthBench.ground_truth(scene)]),
                ])
                f.write(json.dumps(record) + '\n')

    def load(self, filename):
        """
        Load a benchmark (see class docstring)
        """
        try:
            with open(filename) as f:
                lines = [line for line in f if line.strip()]
            header = json.loads(lines[0])
            if header['version'] != BENCHMARK_VERSION:
                raise InvalidFileFormatException('Unsupported benchmark version %r' % header['version'])
            classes = [synthBench.ClassSpec(int(c[0]), bool(c[1]), tuple(float(v) for v in c[2]), float(c[3]))
                       for c in header['classes']]
            per_gt, jitter, num_random, sizes = header['proposal_settings']
            settings = synthBench.ProposalSettings(int(per_gt), float(jitter), int(num_random), tuple(sizes))
            eval_ids = set(header['eval_scene_ids'])
            labeled = []
            unlabeled = []
            eval_scenes = []
            for line in lines[1:]:
                record = json.loads(line)
                instances = [(geometry.make_box(*box), int(c)) for box, c in record['instances']]
                scene = synthBench.Scene(record['scene_id'], record['split_tag'], instances, record['labeled'])
                if scene.split_tag not in synthBench.SPLIT_TAGS:
                    raise InvalidFileFormatException('Unknown split tag %r' % scene.split_tag)
                if scene.scene_id in eval_ids:
                    eval_scenes.append(scene)
                elif scene.labeled:
                    labeled.append(scene)
                else:
                    unlabeled.append(scene)
            splits = synthBench.DatasetSplits(labeled, unlabeled, header['id_class_count'],
                                              header['background_feature_mean'], classes, settings)
        except (IndexError, KeyError, TypeError, ValueError, geometry.InvalidBoxError) as e:
            raise InvalidFileFormatException('Incorrect data on file %s: %s' % (filename, e))
        return splits, eval_scenes


class CheckpointFileFormat(FileFormat):
    """
    Teacher and student parameters of a run:

        {'teacher': ModelParams, 'student': ModelParams,
         'config_hash': str, 'iteration': int}
    """
    def __init__(self):
        self.filenameExtensions = ['npz']

    def __str__(self):
        return 'Model checkpoint ' + ''.join(['(', ', '.join(self.filenamePatterns()), ')'])

    def save(self, data, filename):
        arrays = collections.OrderedDict()
        for role in ('teacher', 'student'):
            for name, value in data[role].items():
                arrays['%s.%s' % (role, name)] = value
        arrays['config_hash'] = numpy.array(data['config_hash'])
        arrays['iteration'] = numpy.array(int(data['iteration']))
        with open(filename, 'wb') as f:
            numpy.savez(f, **arrays)

    def load(self, filename):
        try:
            with numpy.load(filename, allow_pickle=False) as npz:
                params = {'teacher': collections.OrderedDict(), 'student': collections.OrderedDict()}
                for key in npz.files:
                    role, _, name = key.partition('.')
                    if role in params:
                        params[role][name] = npz[key]
                data = {'config_hash': str(npz['config_hash']), 'iteration': int(npz['iteration'])}
        except (OSError, KeyError, ValueError, zipfile.BadZipFile) as e:
            raise InvalidFileFormatException('Incorrect checkpoint %s: %s' % (filename, e))
        for role, arrays in params.items():
            if not arrays:
                raise InvalidFileFormatException('Checkpoint %s has no %s parameters' % (filename, role))
            data[role] = detector.ModelParams(arrays)
        return data


def metrics_header(num_classes):
    return METRICS_COLUMNS + ['ap_%d' % c for c in range(num_classes)]


class MetricsCsvFormat(FileFormat):
    """
    One row per evaluation of a run (evaluation.MetricsRecord), fixed header

    Floats are written with repr so rereading is exact. load returns a list of
    dicts of floats (iteration and counts as int).
    """
    def __init__(self):
        self.filenameExtensions = ['csv']

    def __str__(self):
        return 'Metrics table ' + ''.join(['(', ', '.join(self.filenamePatterns()), ')'])

    def save(self, records, filename):
        num_classes = len(records[0].per_class_ap) if records else 0
        with open(filename, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(metrics_header(num_classes))
            for r in records:
                row = [r.iteration, repr(float(r.map)), repr(float(r.ood_auroc)), int(r.auroc_defined),
                       repr(float(r.pseudo_precision)), int(r.precision_defined), repr(float(r.pseudo_recall))]
                row += [repr(float(v)) for v in r.loss_components]
                row += [repr(float(r.loss_total))]
                row += [int(v) for v in r.pseudo_counts]
                row += [repr(float(v)) for v in r.per_class_ap]
                writer.writerow(row)

    def load(self, filename):
        with open(filename, newline='') as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise InvalidFileFormatException('Empty metrics file %s' % filename)
            except (UnicodeDecodeError, csv.Error) as e:
                raise InvalidFileFormatException('Not a metrics table %s: %s' % (filename, e))
            if header[:len(METRICS_COLUMNS)] != METRICS_COLUMNS:
                raise InvalidFileFormatException('Unexpected metrics header in %s' % filename)
            integers = ('iteration', 'auroc_defined', 'precision_defined', 'n_accepted', 'n_ignored',
                        'n_rejected')
            rows = []
            for line in reader:
                if len(line) != len(header):
                    raise InvalidFileFormatException('Row with %d fields in %s (header has %d)'
                                                     % (len(line), filename, len(header)))
                try:
                    rows.append(collections.OrderedDict(
                        (k, int(v) if k in integers else float(v)) for k, v in zip(header, line)))
                except ValueError as e:
                    raise InvalidFileFormatException('Incorrect value in %s: %s' % (filename, e))
        return rows
