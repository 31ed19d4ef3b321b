# Copyright 2024, Clumio, a Commvault Company.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Synthetic dataset generation and the canary families."""

from __future__ import annotations

import dataclasses
import enum
import logging
from collections.abc import Callable, Mapping
from typing import Any, Final

import numpy as np
from common import ConfigError, StrEnum, ValidationError
from miaudit_core import Dataset, Example, stack_examples, with_audit
from utils import seeds

# Displacement of the rare per-class sub-clusters, in units of the within-class std.
TAIL_DISPLACEMENT: Final = 3.0
WITHIN_CLASS_STD: Final = 1.0

logger = logging.getLogger(__name__)


class CanaryFamily(StrEnum):
    NONE = 'none'
    MISLABELED = 'mislabeled'
    MISLABELED_DUPLICATE = 'mislabeled-duplicate'
    MISLABELED_DUPLICATE_FIXED = 'mislabeled-duplicate-fixed'
    OOD = 'ood'
    UNIFORM = 'uniform'


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    dim: int = 8
    per_class: int = 500
    separation: float = 6.0
    tail_fraction: float = 0.0
    num_audit: int = 500
    test_per_class: int = 250
    seed: int = 0

    def validate(self) -> None:
        """Raise if these settings cannot produce a dataset."""
        if self.num_classes < 2:  # noqa: PLR2004
            raise ValidationError(f'num_classes must be >= 2, got {self.num_classes}')
        if self.dim < 2:  # noqa: PLR2004
            raise ValidationError(f'dim must be >= 2, got {self.dim}')
        if self.per_class < 1:
            raise ValidationError(f'per_class must be >= 1, got {self.per_class}')
        if self.separation < 0:
            raise ValidationError(f'separation must be >= 0, got {self.separation}')
        if not 0 <= self.tail_fraction < 1:
            raise ValidationError(f'tail_fraction must be in [0, 1), got {self.tail_fraction}')
        if not 1 <= self.num_audit <= self.num_classes * self.per_class:
            raise ValidationError(
                f'num_audit must be in [1, {self.num_classes * self.per_class}], '
                f'got {self.num_audit}'
            )
        if self.test_per_class < 0:
            raise ValidationError(f'test_per_class must be >= 0, got {self.test_per_class}')
        if self.dim < self.num_classes:
            raise ValidationError(
                f'dim {self.dim} is too small to place {self.num_classes} equidistant class means'
            )


@dataclasses.dataclass(frozen=True)
class CanarySet:
    """Examples occupying the audit slots and the mask of slots that are scored."""

    family: CanaryFamily
    examples: tuple[Example, ...]
    eval_mask: np.ndarray
    # Examples appended to the fixed set of every model (stronger duplicate threat model).
    extra_fixed: tuple[Example, ...] = ()

    def __post_init__(self) -> None:
        mask = np.asarray(self.eval_mask, dtype=bool)
        if mask.shape != (len(self.examples),):
            raise ValidationError(
                f'eval mask has {mask.size} entries for {len(self.examples)} canaries'
            )
        mask.setflags(write=False)
        object.__setattr__(self, 'eval_mask', mask)
        object.__setattr__(self, 'examples', tuple(self.examples))
        object.__setattr__(self, 'extra_fixed', tuple(self.extra_fixed))

    @property
    def eval_indices(self) -> np.ndarray:
        return np.flatnonzero(self.eval_mask)


def _class_means(spec: SyntheticSpec) -> np.ndarray:
    # Scaled basis vectors are pairwise sqrt(2) apart before scaling.
    means = np.zeros((spec.num_classes, spec.dim))
    means[np.arange(spec.num_classes), np.arange(spec.num_classes)] = spec.separation / np.sqrt(2)
    return means - means.mean(axis=0)


def _draw_class(
    rng: np.random.Generator, mean: np.ndarray, tail_shift: np.ndarray, count: int, tail: float
) -> np.ndarray:
    features = mean + WITHIN_CLASS_STD * rng.standard_normal((count, mean.size))
    num_tail = int(round(tail * count))
    features[:num_tail] += tail_shift
    return features


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a Gaussian class-mixture dataset split into fixed, audit and test examples."""
    spec.validate()
    rng = seeds.rng_for(spec.seed, 'synthetic')
    means = _class_means(spec)
    directions = rng.standard_normal((spec.num_classes, spec.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    tail_shifts = TAIL_DISPLACEMENT * WITHIN_CLASS_STD * directions

    train_parts, train_labels = [], []
    for k in range(spec.num_classes):
        train_parts.append(
            _draw_class(rng, means[k], tail_shifts[k], spec.per_class, spec.tail_fraction)
        )
        train_labels.append(np.full(spec.per_class, k))
    features = np.concatenate(train_parts)
    labels = np.concatenate(train_labels)
    order = rng.permutation(labels.size)
    features, labels = features[order], labels[order]

    test_parts, test_labels = [], []
    for k in range(spec.num_classes):
        test_parts.append(
            _draw_class(rng, means[k], tail_shifts[k], spec.test_per_class, spec.tail_fraction)
        )
        test_labels.append(np.full(spec.test_per_class, k))

    audit_rows = range(spec.num_audit)
    fixed_rows = range(spec.num_audit, labels.size)
    next_id = 0
    fixed = []
    for row in fixed_rows:
        fixed.append(Example(features[row], int(labels[row]), next_id))
        next_id += 1
    audit = []
    for row in audit_rows:
        audit.append(Example(features[row], int(labels[row]), next_id))
        next_id += 1
    test = []
    for part, part_labels in zip(test_parts, test_labels, strict=True):
        for row in range(part_labels.size):
            test.append(Example(part[row], int(part_labels[row]), next_id))
            next_id += 1
    logger.info(
        'Generated synthetic dataset: %s fixed, %s audit, %s test examples.',
        len(fixed),
        len(audit),
        len(test),
    )
    return Dataset(tuple(fixed), tuple(audit), spec.num_classes, spec.dim, tuple(test))


def _wrong_labels(rng: np.random.Generator, labels: np.ndarray, num_classes: int) -> np.ndarray:
    # Uniform over the K - 1 classes that differ from the original.
    return (labels + rng.integers(1, num_classes, size=labels.size)) % num_classes


def make_none(dataset: Dataset, seed: int = 0) -> CanarySet:
    """Use the unmodified audit samples, all of them scored."""
    return CanarySet(
        CanaryFamily.NONE, dataset.audit, np.ones(dataset.num_audit, dtype=bool)
    )


def make_mislabeled(dataset: Dataset, seed: int) -> CanarySet:
    """Replace every audit label by a uniformly random different class."""
    if dataset.num_classes < 2:  # noqa: PLR2004
        raise ValidationError('mislabeled canaries need at least two classes')
    rng = seeds.rng_for(seed, 'canary', CanaryFamily.MISLABELED)
    _, labels = stack_examples(dataset.audit)
    new_labels = _wrong_labels(rng, labels, dataset.num_classes)
    examples = tuple(
        example.relabeled(int(label))
        for example, label in zip(dataset.audit, new_labels, strict=True)
    )
    return CanarySet(CanaryFamily.MISLABELED, examples, np.ones(len(examples), dtype=bool))


def make_duplicated_mislabeled(dataset: Dataset, seed: int) -> CanarySet:
    """Pair half of the audit set with exact copies and mislabel one element of each pair.

    Originals fill the first C/2 slots and copies the last C/2 slots, so slot j and slot
    j + C/2 form a pair. Only the mislabeled element of each pair is scored.
    """
    num_audit = dataset.num_audit
    if num_audit % 2:
        raise ValidationError(f'duplicated canaries need an even audit size, got {num_audit}')
    if dataset.num_classes < 2:  # noqa: PLR2004
        raise ValidationError('mislabeled canaries need at least two classes')
    rng = seeds.rng_for(seed, 'canary', CanaryFamily.MISLABELED_DUPLICATE)
    half = num_audit // 2
    originals = dataset.audit[:half]
    _, labels = stack_examples(originals)
    wrong = _wrong_labels(rng, labels, dataset.num_classes)
    copy_is_wrong = rng.random(half) < 0.5  # noqa: PLR2004
    first_id = dataset.next_id()

    left, right = [], []
    eval_mask = np.zeros(num_audit, dtype=bool)
    for j, original in enumerate(originals):
        copy_id = first_id + j
        if copy_is_wrong[j]:
            left.append(original)
            right.append(Example(original.features, int(wrong[j]), copy_id))
            eval_mask[half + j] = True
        else:
            left.append(original.relabeled(int(wrong[j])))
            right.append(Example(original.features, original.label, copy_id))
            eval_mask[j] = True
    return CanarySet(CanaryFamily.MISLABELED_DUPLICATE, (*left, *right), eval_mask)


def make_duplicated_mislabeled_fixed(dataset: Dataset, seed: int) -> CanarySet:
    """Mislabel every audit sample and add a copy of each to the fixed set of every model."""
    mislabeled = make_mislabeled(dataset, seed)
    first_id = dataset.next_id()
    copies = tuple(
        Example(example.features, example.label, first_id + j)
        for j, example in enumerate(mislabeled.examples)
    )
    return CanarySet(
        CanaryFamily.MISLABELED_DUPLICATE_FIXED,
        mislabeled.examples,
        mislabeled.eval_mask,
        extra_fixed=copies,
    )


def make_ood(dataset: Dataset, shift: float, seed: int) -> CanarySet:
    """Redraw audit features around points displaced from the global data mean.

    Each canary gets its own displacement direction; labels are uniform over all classes.
    """
    if shift < 0:
        raise ValidationError(f'OOD shift must be >= 0, got {shift}')
    rng = seeds.rng_for(seed, 'canary', CanaryFamily.OOD)
    reference = dataset.fixed or dataset.audit
    center = stack_examples(reference)[0].mean(axis=0)
    directions = rng.standard_normal((dataset.num_audit, dataset.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    noise = WITHIN_CLASS_STD * rng.standard_normal((dataset.num_audit, dataset.dim))
    features = center + shift * directions + noise
    labels = rng.integers(0, dataset.num_classes, size=dataset.num_audit)
    examples = tuple(
        Example(features[j], int(labels[j]), example.id) for j, example in enumerate(dataset.audit)
    )
    return CanarySet(CanaryFamily.OOD, examples, np.ones(len(examples), dtype=bool))


def make_uniform(dataset: Dataset, lo: float, hi: float, seed: int) -> CanarySet:
    """Draw audit features uniformly from the cube [lo, hi]^d with uniform labels."""
    if lo >= hi:
        raise ValidationError(f'uniform canaries need lo < hi, got [{lo}, {hi}]')
    rng = seeds.rng_for(seed, 'canary', CanaryFamily.UNIFORM)
    features = rng.uniform(lo, hi, size=(dataset.num_audit, dataset.dim))
    labels = rng.integers(0, dataset.num_classes, size=dataset.num_audit)
    examples = tuple(
        Example(features[j], int(labels[j]), example.id) for j, example in enumerate(dataset.audit)
    )
    return CanarySet(CanaryFamily.UNIFORM, examples, np.ones(len(examples), dtype=bool))


CANARY_BUILDERS: Final[Mapping[CanaryFamily, Callable[..., CanarySet]]] = {
    CanaryFamily.NONE: make_none,
    CanaryFamily.MISLABELED: make_mislabeled,
    CanaryFamily.MISLABELED_DUPLICATE: make_duplicated_mislabeled,
    CanaryFamily.MISLABELED_DUPLICATE_FIXED: make_duplicated_mislabeled_fixed,
    CanaryFamily.OOD: make_ood,
    CanaryFamily.UNIFORM: make_uniform,
}


def make_canaries(
    dataset: Dataset, family: str, seed: int, params: Mapping[str, Any] | None = None
) -> CanarySet:
    """Build a canary set by family id with family-specific parameters."""
    try:
        builder = CANARY_BUILDERS[CanaryFamily(family)]
    except ValueError as e:
        raise ConfigError(f'canaries.family: unknown canary family {family!r}') from e
    try:
        return builder(dataset, seed=seed, **dict(params or {}))
    except TypeError as e:
        raise ConfigError(f'canaries.params: {e}') from e


def apply_canaries(dataset: Dataset, canaries: CanarySet) -> Dataset:
    """Return the dataset whose audit slots hold the canaries."""
    return with_audit(dataset, canaries.examples, canaries.extra_fixed)
