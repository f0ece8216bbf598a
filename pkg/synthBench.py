#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
 Synthetic open-set detection benchmark (module of OSSOD-Bench)

 Generates a world of classes split into in-distribution (ID) and
 out-of-distribution (OOD) classes, scenes tagged ID / MIX / OOD, the labeled
 and unlabeled partitions, the proposal generator standing in for a region
 proposal network and the feature oracle standing in for ROI-pooled features.

 Data structures used:

     ClassSpec  (class_id, is_id, feature_mean, feature_spread)
        ID classes are numbered [0, N), OOD classes [N, num_classes)

     Scene instances
        [(BBox, class_id), ...]   boxes inside the unit square

 OOD class means are placed next to an ID class (its anchor), pulled toward the
 closest point of the hull of the other ID means and moved off the ID subspace.
 A linear classifier still prefers the anchor there, while a single one-vs-all
 hyperplane of the anchor has already been crossed.

 A scene keeps two copies of its instances: the rendered content, used only by
 the proposal generator and the feature oracle (the "image"), and the
 annotations. Annotations of unlabeled scenes can only be read through
 ground_truth(), which is reserved for evaluation.

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
import zlib

import namedlist
import numpy
import scipy.optimize

import geometry

log = logging.getLogger(__name__)

TAG_ID = 'ID'
TAG_MIX = 'MIX'
TAG_OOD = 'OOD'
SPLIT_TAGS = (TAG_ID, TAG_MIX, TAG_OOD)

ClassSpec = namedlist.namedtuple('ClassSpec', ['class_id', 'is_id', 'feature_mean', 'feature_spread'])
# per_gt_copies, jitter_scale, num_random, box_size_range of generate_proposals
ProposalSettings = namedlist.namedtuple('ProposalSettings', [('per_gt_copies', 16), ('jitter_scale', 0.3),
                                                             ('num_random', 48),
                                                             ('box_size_range', (0.05, 0.3))])


class WorldGenerationError(Exception):
    """
    Raised when a world or split can not be generated with the given parameters
    """
    pass


class HiddenAnnotationError(Exception):
    """
    Raised when the annotations of an unlabeled scene are read outside evaluation
    """
    pass


@dataclasses.dataclass
class BenchConfig:
    """
    Parameters of a synthetic benchmark

    Sizes are small enough to train in seconds. ID means are about five spreads
    apart, so supervised training converges without saturating, and OOD means
    sit next to ID means (see generate_world).
    """
    num_classes: int = 10
    num_id_classes: int = 4
    feature_dim: int = 16
    feature_spread: float = 0.25
    mean_scale: float = 0.24
    ood_near_id: bool = True
    ood_pull: float = 0.6
    ood_offset: float = 2.0
    num_labeled: int = 50
    unlabeled_id: int = 100
    unlabeled_mix: int = 100
    unlabeled_ood: int = 100
    min_instances: int = 2
    max_instances: int = 5
    min_box_size: float = 0.05
    max_box_size: float = 0.3
    mix_ood_fraction: float = 0.5
    per_gt_copies: int = 16
    jitter_scale: float = 0.3
    num_random: int = 48
    num_eval_scenes: int = 60
    label_unlabeled_id: bool = False

    def validate(self):
        """
        raise: WorldGenerationError naming the first invalid setting
        """
        if not 0 < self.num_id_classes < self.num_classes:
            raise WorldGenerationError('num_id_classes must be in (0, num_classes)')
        if self.feature_dim < 2:
            raise WorldGenerationError('feature_dim must be >= 2')
        if self.feature_spread <= 0:
            raise WorldGenerationError('feature_spread must be > 0')
        if self.mean_scale <= 0:
            raise WorldGenerationError('mean_scale must be > 0')
        if not 0 <= self.ood_pull < 1:
            raise WorldGenerationError('ood_pull must be in [0, 1)')
        if self.ood_offset < 0:
            raise WorldGenerationError('ood_offset must be >= 0')
        if self.num_labeled < 1:
            raise WorldGenerationError('num_labeled must be >= 1')
        if min(self.unlabeled_id, self.unlabeled_mix, self.unlabeled_ood) < 0:
            raise WorldGenerationError('unlabeled scene counts must be >= 0')
        if self.unlabeled_id + self.unlabeled_mix + self.unlabeled_ood < 1:
            raise WorldGenerationError('at least one unlabeled scene is needed')
        if not 1 <= self.min_instances <= self.max_instances:
            raise WorldGenerationError('instances per scene must satisfy 1 <= min <= max')
        if not 0 < self.min_box_size <= self.max_box_size <= 1:
            raise WorldGenerationError('box sizes must satisfy 0 < min <= max <= 1')
        if not 0 <= self.mix_ood_fraction <= 1:
            raise WorldGenerationError('mix_ood_fraction must be in [0, 1]')
        if self.per_gt_copies < 0 or self.num_random < 0 or self.jitter_scale < 0:
            raise WorldGenerationError('proposal settings must be >= 0')
        if self.num_eval_scenes < 1:
            raise WorldGenerationError('num_eval_scenes must be >= 1')


class Scene(object):
    """
    A synthetic "image": a set of instances and its split tag

    instances: annotations, readable only for labeled scenes
    """
    def __init__(self, scene_id, split_tag, instances, labeled, annotations=None):
        self.scene_id = int(scene_id)
        self.split_tag = split_tag
        self.labeled = bool(labeled)
        self._content = tuple((geometry.BBox(*box), int(c)) for box, c in instances)
        if annotations is None:
            self._annotations = self._content
        else:
            self._annotations = tuple((geometry.BBox(*box), int(c)) for box, c in annotations)

    def __repr__(self):
        return 'Scene(%d, %s, labeled=%s)' % (self.scene_id, self.split_tag, self.labeled)

    @property
    def instances(self):
        """
        Annotated instances of a labeled scene

        raise: HiddenAnnotationError if the scene is unlabeled
        """
        if not self.labeled:
            raise HiddenAnnotationError('Annotations of unlabeled scene %d are hidden' % self.scene_id)
        return list(self._annotations)


def ground_truth(scene):
    """
    Annotations of any scene (evaluation only)
    """
    return list(scene._annotations)


class DatasetSplits(object):
    """
    Labeled and unlabeled partitions of a benchmark plus the feature space

    labeled: list of Scene (annotations visible)
    unlabeled: list of Scene (annotations hidden from the trainer)
    id_class_count: N, number of ID classes
    background_feature_mean: feature mean of background regions
    classes: list of ClassSpec of the world
    proposal_settings: ProposalSettings of the proposal generator
    """
    def __init__(self, labeled, unlabeled, id_class_count, background_feature_mean, classes,
                 proposal_settings=None):
        self.labeled = list(labeled)
        self.unlabeled = list(unlabeled)
        self.id_class_count = int(id_class_count)
        self.background_feature_mean = numpy.asarray(background_feature_mean, dtype=float)
        self.classes = list(classes)
        self.class_means = numpy.array([c.feature_mean for c in self.classes], dtype=float)
        self.class_spreads = numpy.array([c.feature_spread for c in self.classes], dtype=float)
        self.proposal_settings = ProposalSettings() if proposal_settings is None else proposal_settings

    @property
    def feature_dim(self):
        return len(self.background_feature_mean)

    @property
    def feature_spread(self):
        """
        Mean spread of the world classes, the unit of the trainer noise scales
        """
        return float(self.class_spreads.mean())

    def replace(self, labeled=None, unlabeled=None):
        """
        Copy sharing the feature space with other scene lists
        """
        return DatasetSplits(self.labeled if labeled is None else labeled,
                             self.unlabeled if unlabeled is None else unlabeled,
                             self.id_class_count, self.background_feature_mean, self.classes,
                             self.proposal_settings)


def derived_rng(seed, *keys):
    """
    Independent generator derived from a seed and integer keys
    """
    return numpy.random.default_rng(numpy.random.SeedSequence(int(seed), spawn_key=tuple(keys)))


def stream_key(name):
    """
    Stable integer key for a named random stream
    """
    return zlib.crc32(name.encode('utf-8'))


def _draw_separated(rng, count, dim, scale, min_distance, existing, max_attempts):
    """
    Rejection sample count points from N(0, scale^2 I) at least min_distance
    apart from each other and from the existing points
    """
    points = [numpy.asarray(p, dtype=float) for p in existing]
    new = []
    attempts = 0
    while len(new) < count:
        if attempts >= max_attempts:
            raise WorldGenerationError('Could not separate %d means by %.3f in dimension %d after %d attempts'
                                       % (count, min_distance, dim, max_attempts))
        attempts += 1
        candidate = rng.normal(0.0, scale, size=dim)
        if all(numpy.linalg.norm(candidate - p) >= min_distance for p in points):
            points.append(candidate)
            new.append(candidate)
    return new


def closest_hull_point(points, target):
    """
    Point of the convex hull of points closest to target

    Non-negative least squares over convex weights; the weights summing to one
    is a heavily weighted extra row.

    return: vector
    """
    points = numpy.atleast_2d(numpy.asarray(points, dtype=float))
    target = numpy.asarray(target, dtype=float)
    if len(points) == 1:
        return points[0].copy()
    weight = 1e3 * max(1.0, float(numpy.abs(points).max()))
    system = numpy.vstack([points.T, numpy.full((1, len(points)), weight)])
    rhs = numpy.concatenate([target, [weight]])
    coefficients, _ = scipy.optimize.nnls(system, rhs)
    return (coefficients / coefficients.sum()) @ points


def _off_subspace_basis(means):
    """
    Orthonormal rows spanning the complement of the affine span of means
    """
    means = numpy.asarray(means, dtype=float)
    if len(means) < 2:
        return numpy.eye(means.shape[1])
    _, singular, vt = numpy.linalg.svd(means[1:] - means[0])
    rank = int(numpy.sum(singular > 1e-10 * max(float(singular.max()), 1.0)))
    return vt[rank:]


def _place_ood_means(rng, id_means, count, spread, pull, offset, min_distance, max_attempts):
    """
    OOD means next to ID anchors (round robin over a random order)

    Each one starts at its anchor, moves the fraction pull of the way to the
    closest point of the hull of the other ID means, then offset * spread off
    the affine span of the ID means. With offset >= 2 every OOD mean is at
    least 2 * spread from every ID mean.
    """
    basis = _off_subspace_basis(id_means)
    order = rng.permutation(len(id_means))
    placed = []
    for k in range(count):
        anchor = int(order[k % len(order)])
        center = numpy.array(id_means[anchor])
        others = [m for i, m in enumerate(id_means) if i != anchor]
        if others:
            center = center + pull * (closest_hull_point(others, center) - center)
        for _ in range(max_attempts):
            if len(basis):
                direction = rng.standard_normal(len(basis)) @ basis
            else:
                direction = rng.standard_normal(len(center))
            candidate = center + offset * spread * direction / numpy.linalg.norm(direction)
            if all(numpy.linalg.norm(candidate - p) >= min_distance for p in list(id_means) + placed):
                placed.append(candidate)
                break
        else:
            raise WorldGenerationError('Could not place OOD class %d next to ID class %d after %d attempts'
                                       % (k, anchor, max_attempts))
    return placed


def generate_world(num_classes, num_id_classes, feature_dim, seed, feature_spread=0.25,
                   mean_scale=0.24, max_attempts=10000, ood_near_id=True, ood_pull=0.6, ood_offset=2.0):
    """
    Draw the classes of a world

    ID means come from N(0, mean_scale^2 I) by rejection. OOD means are placed
    next to ID means (_place_ood_means) or, without ood_near_id, drawn like
    the ID ones.

    num_classes: total number of classes
    num_id_classes: number of ID classes (N)
    feature_dim: dimension d of the feature space
    seed: world seed

    raise: WorldGenerationError if a precondition fails or the separation
           2 * feature_spread can not be reached
    return: list of ClassSpec, ID classes first with ids [0, N)
    """
    if not 0 < num_id_classes < num_classes:
        raise WorldGenerationError('0 < num_id_classes < num_classes does not hold (%s, %s)'
                                   % (num_id_classes, num_classes))
    if feature_dim < 2:
        raise WorldGenerationError('feature_dim must be >= 2 (%s)' % feature_dim)
    if feature_spread <= 0:
        raise WorldGenerationError('feature_spread must be > 0 (%s)' % feature_spread)

    rng = derived_rng(seed, stream_key('world'))
    separation = 2 * feature_spread
    id_means = _draw_separated(rng, num_id_classes, feature_dim, mean_scale, separation, [], max_attempts)
    if ood_near_id:
        ood_means = _place_ood_means(rng, id_means, num_classes - num_id_classes, feature_spread, ood_pull,
                                     ood_offset, separation, max_attempts)
    else:
        ood_means = _draw_separated(rng, num_classes - num_id_classes, feature_dim, mean_scale, separation,
                                    id_means, max_attempts)
    classes = []
    for mean in id_means:
        classes.append(ClassSpec(len(classes), True, tuple(float(v) for v in mean), float(feature_spread)))
    for mean in ood_means:
        classes.append(ClassSpec(len(classes), False, tuple(float(v) for v in mean), float(feature_spread)))
    return classes


def _sample_box(rng, min_size, max_size):
    cx, cy = rng.uniform(0.0, 1.0, size=2)
    w, h = rng.uniform(min_size, max_size, size=2)
    box = geometry.clip_boxes([[cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2]])[0]
    return geometry.BBox(*(float(v) for v in box))


def _scene_classes(rng, tag, count, id_classes, ood_classes, mix_ood_fraction):
    """
    Class composition of one scene following its split tag
    """
    if tag == TAG_ID:
        return [int(rng.choice(id_classes)) for _ in range(count)]
    if tag == TAG_OOD:
        return [int(rng.choice(ood_classes)) for _ in range(count)]
    # MIX: at least one ID and one OOD instance
    count = max(count, 2)
    classes = [int(rng.choice(id_classes)), int(rng.choice(ood_classes))]
    for _ in range(count - 2):
        if rng.uniform() < mix_ood_fraction:
            classes.append(int(rng.choice(ood_classes)))
        else:
            classes.append(int(rng.choice(id_classes)))
    return [classes[i] for i in rng.permutation(len(classes))]


def generate_scene(scene_id, tag, classes, instances_per_scene, seed, labeled=False,
                   box_size_range=(0.05, 0.3), mix_ood_fraction=0.5):
    """
    Generate one scene from its own derived seed

    return: Scene
    """
    rng = derived_rng(seed, stream_key('scene'), scene_id)
    id_classes = [c.class_id for c in classes if c.is_id]
    ood_classes = [c.class_id for c in classes if not c.is_id]
    low, high = instances_per_scene
    count = int(rng.integers(low, high + 1))
    scene_classes = _scene_classes(rng, tag, count, id_classes, ood_classes, mix_ood_fraction)
    instances = [(_sample_box(rng, *box_size_range), c) for c in scene_classes]
    return Scene(scene_id, tag, instances, labeled)


def generate_splits(classes, num_labeled, num_unlabeled_per_tag, instances_per_scene, seed,
                    box_size_range=(0.05, 0.3), mix_ood_fraction=0.5, label_unlabeled_id=False,
                    max_attempts=10000):
    """
    Generate the labeled and unlabeled scenes of a benchmark

    classes: list of ClassSpec (from generate_world)
    num_labeled: number of labeled ID scenes
    num_unlabeled_per_tag: (ID, MIX, OOD) unlabeled scene counts
    instances_per_scene: (min, max) instances per scene, inclusive
    seed: split seed; each scene uses a seed derived from it and its index
    label_unlabeled_id: move the unlabeled ID scenes into the labeled set

    return: DatasetSplits
    """
    n_id, n_mix, n_ood = num_unlabeled_per_tag
    if num_labeled < 1:
        raise WorldGenerationError('num_labeled must be >= 1 (%s)' % num_labeled)
    if min(num_unlabeled_per_tag) < 0 or n_id + n_mix + n_ood < 1:
        raise WorldGenerationError('at least one unlabeled scene is needed (%s)' % (num_unlabeled_per_tag, ))
    if not any(c.is_id for c in classes) or not any(not c.is_id for c in classes):
        raise WorldGenerationError('the world needs ID and OOD classes')

    spread = min(c.feature_spread for c in classes)
    dim = len(classes[0].feature_mean)
    rng = derived_rng(seed, stream_key('background'))
    background = _draw_separated(rng, 1, dim, 1.0, 2 * spread, [c.feature_mean for c in classes],
                                 max_attempts)[0]

    labeled = []
    unlabeled = []
    scene_id = 0
    for _ in range(num_labeled):
        labeled.append(generate_scene(scene_id, TAG_ID, classes, instances_per_scene, seed, True,
                                      box_size_range, mix_ood_fraction))
        scene_id += 1
    for tag, count in zip(SPLIT_TAGS, (n_id, n_mix, n_ood)):
        for _ in range(count):
            moved = label_unlabeled_id and tag == TAG_ID
            scene = generate_scene(scene_id, tag, classes, instances_per_scene, seed, moved,
                                   box_size_range, mix_ood_fraction)
            if moved:
                labeled.append(scene)
            else:
                unlabeled.append(scene)
            scene_id += 1

    n_id_classes = sum(1 for c in classes if c.is_id)
    log.debug('Generated %d labeled and %d unlabeled scenes', len(labeled), len(unlabeled))
    return DatasetSplits(labeled, unlabeled, n_id_classes, background, classes)


def generate_eval_scenes(splits, count, instances_per_scene, seed, box_size_range=(0.05, 0.3)):
    """
    Held-out pure ID scenes for measuring detection quality

    Scene ids start after the scenes in splits, and annotations are hidden
    from the trainer like those of the unlabeled scenes.
    """
    first = 1 + max([s.scene_id for s in splits.labeled + splits.unlabeled] + [-1])
    eval_seed = int(derived_rng(seed, stream_key('eval-scenes')).integers(2 ** 31))
    return [generate_scene(first + i, TAG_ID, splits.classes, instances_per_scene, eval_seed, False,
                           box_size_range)
            for i in range(count)]


def build_benchmark(config, seed):
    """
    Generate world, splits and evaluation scenes from a BenchConfig

    return: (DatasetSplits, list of evaluation Scene)
    """
    config.validate()
    classes = generate_world(config.num_classes, config.num_id_classes, config.feature_dim, seed,
                             config.feature_spread, config.mean_scale, ood_near_id=config.ood_near_id,
                             ood_pull=config.ood_pull, ood_offset=config.ood_offset)
    instances = (config.min_instances, config.max_instances)
    sizes = (config.min_box_size, config.max_box_size)
    splits = generate_splits(classes, config.num_labeled,
                             (config.unlabeled_id, config.unlabeled_mix, config.unlabeled_ood),
                             instances, seed, sizes, config.mix_ood_fraction, config.label_unlabeled_id)
    splits.proposal_settings = ProposalSettings(config.per_gt_copies, config.jitter_scale, config.num_random,
                                                sizes)
    eval_scenes = generate_eval_scenes(splits, config.num_eval_scenes, instances, seed, sizes)
    return splits, eval_scenes


def render_features(splits, scene, proposals, noise_scale, rng):
    """
    Features of many proposals of a scene (vectorized feature oracle)

    proposals: (P, 4) array or list of BBox
    noise_scale: standard deviation of the view noise
    rng: numpy.random.Generator

    return: (P, d) array
    """
    boxes = numpy.asarray(proposals, dtype=float).reshape(-1, 4)
    count = len(boxes)
    dim = splits.feature_dim
    noise = rng.standard_normal((count, dim))
    background = splits.background_feature_mean

    if not scene._content:
        return background[None, :] + noise_scale * noise

    overlaps = geometry.iou_matrix(boxes, [tuple(b) for b, _ in scene._content])
    best = overlaps.argmax(axis=1)
    m = overlaps[numpy.arange(count), best]
    classes = numpy.array([c for _, c in scene._content])[best]

    means = splits.class_means[classes]
    spreads = splits.class_spreads[classes]
    std = noise_scale + m * spreads
    return m[:, None] * means + (1.0 - m[:, None]) * background[None, :] + std[:, None] * noise


def feature_oracle(splits, scene, proposal, noise_scale, rng):
    """
    Feature of one proposal: m * mean(class of g) + (1 - m) * background + noise,
    where g is the instance with the largest IoU m with the proposal

    return: vector of dimension d
    """
    return render_features(splits, scene, [tuple(proposal)], noise_scale, rng)[0]


def generate_proposals(scene, jitter_scale, num_random, rng, per_gt_copies=16,
                       box_size_range=(0.05, 0.3)):
    """
    Region proposals of a scene (stand-in for an RPN)

    Each instance gives per_gt_copies jittered copies, whose corners move by a
    random fraction (up to 2 * jitter_scale) of the box size, and num_random
    boxes are placed uniformly. All are clipped to the scene.

    return: (per_gt_copies * |instances| + num_random, 4) array
    """
    parts = []
    for box, _ in scene._content:
        base = numpy.array(tuple(box), dtype=float)
        size = numpy.array([box.x_max - box.x_min, box.y_max - box.y_min] * 2)
        magnitude = rng.uniform(0.0, 2.0, size=(per_gt_copies, 1)) * jitter_scale
        offsets = rng.standard_normal((per_gt_copies, 4)) * magnitude * size
        parts.append(base[None, :] + offsets)

    centers = rng.uniform(0.0, 1.0, size=(num_random, 2))
    sizes = rng.uniform(box_size_range[0], box_size_range[1], size=(num_random, 2))
    parts.append(numpy.concatenate([centers - sizes / 2, centers + sizes / 2], axis=1))
    return geometry.clip_boxes(numpy.concatenate(parts, axis=0))


def poison_hidden_annotations(splits, seed):
    """
    Copy of splits whose unlabeled scenes carry random annotations

    The rendered content is untouched, so a trainer that never reads hidden
    annotations produces exactly the same trajectory on both.
    """
    rng = derived_rng(seed, stream_key('poison'))
    poisoned = []
    for scene in splits.unlabeled:
        fake = [(_sample_box(rng, 0.05, 0.3), int(rng.integers(len(splits.classes))))
                for _ in range(int(rng.integers(1, 6)))]
        poisoned.append(Scene(scene.scene_id, scene.split_tag, scene._content, False, annotations=fake))
    return splits.replace(unlabeled=poisoned)


def propose(splits, scene, rng):
    """
    Proposals of a scene with the proposal settings of its benchmark
    """
    settings = splits.proposal_settings
    return generate_proposals(scene, settings.jitter_scale, settings.num_random, rng,
                              settings.per_gt_copies, settings.box_size_range)
