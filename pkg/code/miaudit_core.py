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

"""Domain types shared by the audit engine, plus balanced membership assignment."""

from __future__ import annotations

import dataclasses
import enum
import logging
from collections.abc import Sequence
from typing import Protocol

import numpy as np
from common import BalanceError, StrEnum, ValidationError
from utils import seeds

logger = logging.getLogger(__name__)


class ModelKind(StrEnum):
    LINEAR_SOFTMAX = 'linear-softmax'
    MLP_1HIDDEN = 'mlp-1hidden'
    SPLIT_AI_ENSEMBLE = 'split-ai-ensemble'
    DISTILLED_STUDENT = 'distilled-student'
    CONTRASTIVE = 'contrastive-encoder+head'
    MASKED_WRAPPER = 'masked-wrapper'


@dataclasses.dataclass(frozen=True, eq=False)
class Example:
    """A labeled feature vector with a stable identifier."""

    features: np.ndarray
    label: int
    id: int

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 1:
            raise ValidationError(f'example {self.id}: features must be a flat vector')
        if not np.all(np.isfinite(features)):
            raise ValidationError(f'example {self.id}: features must be finite')
        if self.label < 0:
            raise ValidationError(f'example {self.id}: negative label {self.label}')
        features.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'label', int(self.label))
        object.__setattr__(self, 'id', int(self.id))

    def relabeled(self, label: int) -> Example:
        """Return a copy carrying a different label and the same id."""
        return Example(self.features, label, self.id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Example):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and np.array_equal(self.features, other.features)
        )

    def __hash__(self) -> int:
        return hash((self.id, self.label, self.features.tobytes()))


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Fixed (always-member) examples, audit slots, and an optional held-out test split."""

    fixed: tuple[Example, ...]
    audit: tuple[Example, ...]
    num_classes: int
    dim: int
    test: tuple[Example, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, 'fixed', tuple(self.fixed))
        object.__setattr__(self, 'audit', tuple(self.audit))
        object.__setattr__(self, 'test', tuple(self.test))
        if not self.audit:
            raise ValidationError('dataset needs at least one audit example')
        seen: set[int] = set()
        for example in (*self.fixed, *self.audit, *self.test):
            if example.features.shape != (self.dim,):
                raise ValidationError(
                    f'example {example.id} has dimension {example.features.shape[0]}, '
                    f'expected {self.dim}'
                )
            if example.label >= self.num_classes:
                raise ValidationError(
                    f'example {example.id} has label {example.label} >= {self.num_classes}'
                )
            if example.id in seen:
                raise ValidationError(f'duplicate example id {example.id}')
            seen.add(example.id)

    @property
    def num_audit(self) -> int:
        return len(self.audit)

    def next_id(self) -> int:
        """Return the smallest id greater than every id in the dataset."""
        return 1 + max(example.id for example in (*self.fixed, *self.audit, *self.test))


@dataclasses.dataclass(frozen=True)
class MembershipMatrix:
    """S x C membership bits; row = model, column = audit sample."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:  # noqa: PLR2004
            raise ValidationError('membership bits must be a 2-D matrix')
        num_models, num_audit = bits.shape
        if num_models < 2 or num_models % 2:  # noqa: PLR2004
            raise BalanceError(f'number of models must be even and >= 2, got {num_models}')
        if num_audit < 1:
            raise ValidationError('membership needs at least one audit column')
        column_sums = bits.sum(axis=0)
        if np.any(column_sums != num_models // 2):
            bad = int(np.flatnonzero(column_sums != num_models // 2)[0])
            raise BalanceError(
                f'audit column {bad} has {column_sums[bad]} members, expected {num_models // 2}'
            )
        bits.setflags(write=False)
        object.__setattr__(self, 'bits', bits)

    @property
    def num_models(self) -> int:
        return int(self.bits.shape[0])

    @property
    def num_audit(self) -> int:
        return int(self.bits.shape[1])


@dataclasses.dataclass(frozen=True)
class ScoreTensor:
    """S models x C audit samples x A query variants of attack statistics."""

    values: np.ndarray
    variant_names: tuple[str, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:  # noqa: PLR2004
            raise ValidationError('score tensor must have shape (models, audit, variants)')
        if values.shape[2] != len(self.variant_names):
            raise ValidationError(
                f'{values.shape[2]} variants but {len(self.variant_names)} variant names'
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError('score tensor contains non-finite entries')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'variant_names', tuple(self.variant_names))

    @property
    def shape(self) -> tuple[int, int, int]:
        num_models, num_audit, num_variants = self.values.shape
        return num_models, num_audit, num_variants

    def check_matches(self, membership: MembershipMatrix) -> None:
        """Raise if the tensor does not cover the membership matrix."""
        if self.values.shape[:2] != membership.bits.shape:
            raise ValidationError(
                f'scores cover {self.values.shape[:2]} but membership is {membership.bits.shape}'
            )

    def variant(self, index: int) -> ScoreTensor:
        """Return the single-variant tensor for one query variant."""
        return ScoreTensor(self.values[:, :, index : index + 1], (self.variant_names[index],))

    def slice_models(self, indices: Sequence[int] | np.ndarray) -> ScoreTensor:
        """Return the tensor restricted to a subset of models, in the given order."""
        return ScoreTensor(self.values[np.asarray(indices, dtype=np.int64)], self.variant_names)


@dataclasses.dataclass(frozen=True)
class GaussianPair:
    """Member/non-member Gaussian fits for one audit sample.

    Univariate pairs hold scalar means and standard deviations; multivariate pairs hold mean
    vectors and covariance matrices in the sigma fields.
    """

    mu_in: float | np.ndarray
    mu_out: float | np.ndarray
    sigma_in: float | np.ndarray
    sigma_out: float | np.ndarray

    @property
    def multivariate(self) -> bool:
        return np.ndim(self.mu_in) > 0


class Classifier(Protocol):
    """Query surface shared by every trained model kind.

    Contrastive models additionally expose `embed`, and SELENA models `predict_for_ids`.
    """

    kind: ModelKind
    num_classes: int
    seed: int

    @property
    def supports_logits(self) -> bool: ...

    def predict(self, features: np.ndarray) -> np.ndarray: ...

    def logits(self, features: np.ndarray) -> np.ndarray: ...

    def mechanism_params(self) -> dict[str, float | int | str]: ...


def stack_examples(examples: Sequence[Example]) -> tuple[np.ndarray, np.ndarray]:
    """Return the (n, d) feature matrix and the label vector of a sequence of examples."""
    if not examples:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    features = np.stack([example.features for example in examples])
    labels = np.fromiter((example.label for example in examples), dtype=np.int64)
    return features, labels


def with_audit(
    dataset: Dataset, audit: Sequence[Example], extra_fixed: Sequence[Example] = ()
) -> Dataset:
    """Return a dataset whose audit slots are replaced, optionally appending fixed examples."""
    return Dataset(
        fixed=(*dataset.fixed, *extra_fixed),
        audit=tuple(audit),
        num_classes=dataset.num_classes,
        dim=dataset.dim,
        test=dataset.test,
    )


def assign_memberships(num_models: int, num_audit: int, seed: int) -> MembershipMatrix:
    """Include every audit sample in a uniformly random half of the models.

    Columns are drawn independently, so row sums are free to deviate from C/2.

    Raises:
        BalanceError: the number of models is odd or smaller than two.
        ValidationError: there are no audit samples.
    """
    if num_models < 2 or num_models % 2:  # noqa: PLR2004
        raise BalanceError(f'number of models must be even and >= 2, got {num_models}')
    if num_audit < 1:
        raise ValidationError(f'number of audit samples must be positive, got {num_audit}')
    rng = seeds.rng_for(seed, 'membership')
    keys = rng.random((num_models, num_audit))
    ranks = np.argsort(keys, axis=0, kind='stable')
    bits = np.zeros((num_models, num_audit), dtype=bool)
    np.put_along_axis(bits, ranks[: num_models // 2], True, axis=0)
    logger.debug('Assigned memberships for %s models x %s audit samples.', num_models, num_audit)
    return MembershipMatrix(bits)


def training_set_for(
    dataset: Dataset, membership: MembershipMatrix, model_index: int
) -> tuple[Example, ...]:
    """Return the fixed set followed by the audit samples included for one model."""
    if not 0 <= model_index < membership.num_models:
        raise ValidationError(
            f'model index {model_index} out of range for {membership.num_models} models'
        )
    if membership.num_audit != dataset.num_audit:
        raise ValidationError(
            f'membership has {membership.num_audit} columns, dataset has {dataset.num_audit}'
        )
    row = membership.bits[model_index]
    return (*dataset.fixed, *(example for j, example in enumerate(dataset.audit) if row[j]))
