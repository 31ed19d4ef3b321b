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

"""Membership scores, LiRA score models and the adaptive attacks."""

from __future__ import annotations

import dataclasses
import enum
import logging
from collections.abc import Iterable, Iterator, Mapping, Sequence
from typing import Any, Final

import numpy as np
from common import (
    CONTRASTIVE_REPEATS,
    COVARIANCE_SHRINKAGE,
    FISHER_CLAMP,
    LABEL_ONLY_AUGMENTATIONS,
    LABEL_ONLY_RIDGE,
    PROBABILITY_CLAMP,
    VARIANCE_FLOOR_ABS,
    VARIANCE_FLOOR_RATIO,
    AttackError,
    StrEnum,
    ValidationError,
)
from miaudit_core import Example, GaussianPair, MembershipMatrix, ScoreTensor, stack_examples
from miaudit_models import AugmentationPolicy, FixedAugmentation
from scipy import stats
from sklearn.linear_model import LogisticRegression
from utils import seeds

# Minimum number of member and of non-member shadow models per audit sample.
MIN_SHADOWS_PER_SIDE: Final = 2

logger = logging.getLogger(__name__)


class AttackId(StrEnum):
    LIRA = 'lira'
    LIRA_HINGE = 'lira-hinge'
    LIRA_LOGIT = 'lira-logit'
    GLOBAL_THRESHOLD = 'global-threshold'
    LABEL_ONLY = 'label-only'
    CONTRASTIVE_WHITE_BOX = 'contrastive-white-box'
    CONTRASTIVE_BLACK_BOX = 'contrastive-black-box'


VARIANT_MODES: Final = ('single', 'multivariate')
STATISTICS: Final = ('hinge', 'logit')


@dataclasses.dataclass(frozen=True)
class AttackSpec:
    """An attack id plus the parameters that shape the model queries it needs."""

    id: str = AttackId.LIRA.value
    variant_mode: str = 'single'
    statistic: str = 'logit'
    num_queries: int = 4
    label_only_augmentations: int = LABEL_ONLY_AUGMENTATIONS
    repeats: int = CONTRASTIVE_REPEATS

    def __post_init__(self) -> None:
        try:
            AttackId(self.id)
        except ValueError as e:
            raise ValidationError(f'unknown attack {self.id!r}') from e
        if self.variant_mode not in VARIANT_MODES:
            raise ValidationError(f'variant_mode must be one of {VARIANT_MODES}')
        if self.statistic not in STATISTICS:
            raise ValidationError(f'statistic must be one of {STATISTICS}')
        if self.num_queries < 1:
            raise ValidationError(f'num_queries must be >= 1, got {self.num_queries}')
        if self.label_only_augmentations < 1:
            raise ValidationError('label_only_augmentations must be >= 1')
        if self.repeats < 1:
            raise ValidationError(f'repeats must be >= 1, got {self.repeats}')

    @property
    def statistics(self) -> tuple[str, ...]:
        """Return the names of the per-model statistics the attack consumes."""
        attack_id = AttackId(self.id)
        if attack_id == AttackId.LIRA:
            return STATISTICS
        if attack_id == AttackId.LIRA_HINGE:
            return ('hinge',)
        if attack_id == AttackId.LIRA_LOGIT:
            return ('logit',)
        if attack_id == AttackId.GLOBAL_THRESHOLD:
            return (self.statistic,)
        return (attack_id.value,)


@dataclasses.dataclass(frozen=True)
class AttackScoreRecord:
    victim_index: int
    audit_index: int
    attack_score: float
    is_member: bool

    def __post_init__(self) -> None:
        if not np.isfinite(self.attack_score):
            raise ValidationError(
                f'record ({self.victim_index}, {self.audit_index}) has a non-finite score'
            )


@dataclasses.dataclass(frozen=True)
class RecordBatch:
    """Attack score records stored column-wise."""

    victim: np.ndarray
    audit: np.ndarray
    score: np.ndarray
    member: np.ndarray

    def __post_init__(self) -> None:
        victim = np.asarray(self.victim, dtype=np.int32).ravel()
        audit = np.asarray(self.audit, dtype=np.int32).ravel()
        score = np.asarray(self.score, dtype=np.float64).ravel()
        member = np.asarray(self.member, dtype=bool).ravel()
        if not victim.size == audit.size == score.size == member.size:
            raise ValidationError('record columns must have equal lengths')
        if not np.all(np.isfinite(score)):
            raise ValidationError('attack scores must be finite')
        for name, column in (('victim', victim), ('audit', audit), ('score', score)):
            column.setflags(write=False)
            object.__setattr__(self, name, column)
        member.setflags(write=False)
        object.__setattr__(self, 'member', member)

    def __len__(self) -> int:
        return int(self.score.size)

    def __iter__(self) -> Iterator[AttackScoreRecord]:
        for v, j, s, m in zip(self.victim, self.audit, self.score, self.member, strict=True):
            yield AttackScoreRecord(int(v), int(j), float(s), bool(m))

    @classmethod
    def empty(cls) -> RecordBatch:
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def from_records(cls, records: Iterable[AttackScoreRecord]) -> RecordBatch:
        records = list(records)
        return cls(
            np.array([r.victim_index for r in records]),
            np.array([r.audit_index for r in records]),
            np.array([r.attack_score for r in records], dtype=np.float64),
            np.array([r.is_member for r in records], dtype=bool),
        )

    @classmethod
    def coerce(cls, records: RecordBatch | Iterable[AttackScoreRecord]) -> RecordBatch:
        return records if isinstance(records, RecordBatch) else cls.from_records(records)

    @classmethod
    def concat(cls, batches: Sequence[RecordBatch]) -> RecordBatch:
        if not batches:
            return cls.empty()
        return cls(
            np.concatenate([b.victim for b in batches]),
            np.concatenate([b.audit for b in batches]),
            np.concatenate([b.score for b in batches]),
            np.concatenate([b.member for b in batches]),
        )

    def select(self, mask: np.ndarray) -> RecordBatch:
        return RecordBatch(self.victim[mask], self.audit[mask], self.score[mask], self.member[mask])


@dataclasses.dataclass(frozen=True)
class LabelOnlyFeature:
    bits: np.ndarray


def _check_label(true_label: int, num_classes: int) -> None:
    if not 0 <= true_label < num_classes:
        raise ValidationError(f'label {true_label} out of range for {num_classes} classes')


def logit_scores(probabilities: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized logit score over the last axis; labels broadcast over the leading axes."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    true_prob = np.take_along_axis(probabilities, labels[..., None], axis=-1)[..., 0]
    true_prob = np.clip(true_prob, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    return np.log(true_prob) - np.log1p(-true_prob)


def hinge_scores(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized hinge score: true-class logit minus the largest other logit."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    true_logit = np.take_along_axis(logits, labels[..., None], axis=-1)
    others = logits.copy()
    np.put_along_axis(others, labels[..., None], -np.inf, axis=-1)
    return (true_logit - others.max(axis=-1, keepdims=True))[..., 0]


def logit_score(probabilities: np.ndarray, true_label: int) -> float:
    """Return ln(p_y) - ln(1 - p_y) with p_y clamped away from 0 and 1."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    _check_label(true_label, probabilities.shape[-1])
    return float(logit_scores(probabilities, np.int64(true_label)))


def hinge_score(logits: np.ndarray, true_label: int) -> float:
    """Return z_y - max_{j != y} z_j."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 2:  # noqa: PLR2004
        raise ValidationError('hinge score needs at least two classes')
    _check_label(true_label, logits.shape[-1])
    return float(hinge_scores(logits, np.int64(true_label)))


def _univariate_fits(
    values: np.ndarray, member: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-column unbiased mean and floored std on each side of the membership split."""
    n_in = member.sum(axis=0)
    n_out = (~member).sum(axis=0)
    mu_in = np.where(member, values, 0.0).sum(axis=0) / n_in
    mu_out = np.where(member, 0.0, values).sum(axis=0) / n_out
    ss_in = np.where(member, (values - mu_in) ** 2, 0.0).sum(axis=0)
    ss_out = np.where(member, 0.0, (values - mu_out) ** 2).sum(axis=0)
    pooled = np.sqrt((ss_in + ss_out) / (n_in + n_out - 2))
    floor = np.maximum(VARIANCE_FLOOR_ABS, VARIANCE_FLOOR_RATIO * pooled)
    sd_in = np.maximum(np.sqrt(ss_in / (n_in - 1)), floor)
    sd_out = np.maximum(np.sqrt(ss_out / (n_out - 1)), floor)
    return mu_in, mu_out, sd_in, sd_out


def _shrunk_covariance(scores: np.ndarray, floor: np.ndarray) -> np.ndarray:
    cov = np.atleast_2d(np.cov(scores, rowvar=False, ddof=1))
    variances = np.maximum(np.diag(cov), floor**2)
    np.fill_diagonal(cov, variances)
    cov = (1.0 - COVARIANCE_SHRINKAGE) * cov + COVARIANCE_SHRINKAGE * np.diag(variances)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        logger.warning('Covariance is not positive definite; falling back to its diagonal.')
        cov = np.diag(variances)
    return cov


def fit_gaussian_pair(in_scores: Sequence[Any], out_scores: Sequence[Any]) -> GaussianPair:
    """Fit member and non-member Gaussians to shadow scores.

    One-dimensional inputs give a univariate pair with unbiased standard deviations floored at
    max(1e-8, 0.05 * pooled std). Two-dimensional inputs (shadows x variants) give mean vectors
    and shrunk covariance matrices with the same floor on every variance.

    Raises:
        AttackError: either side has fewer than two scores.
    """
    in_arr = np.asarray(in_scores, dtype=np.float64)
    out_arr = np.asarray(out_scores, dtype=np.float64)
    if len(in_arr) < MIN_SHADOWS_PER_SIDE or len(out_arr) < MIN_SHADOWS_PER_SIDE:
        raise AttackError(
            f'need at least two scores per side, got {len(in_arr)} in and {len(out_arr)} out'
        )
    if in_arr.ndim == 1:
        values = np.concatenate([in_arr, out_arr])[:, None]
        member = np.r_[np.ones(len(in_arr), bool), np.zeros(len(out_arr), bool)][:, None]
        mu_in, mu_out, sd_in, sd_out = _univariate_fits(values, member)
        return GaussianPair(float(mu_in[0]), float(mu_out[0]), float(sd_in[0]), float(sd_out[0]))

    values = np.concatenate([in_arr, out_arr])
    member = np.r_[np.ones(len(in_arr), bool), np.zeros(len(out_arr), bool)]
    member = np.repeat(member[:, None], values.shape[1], axis=1)
    mu_in, mu_out, _, _ = _univariate_fits(values, member)
    ss = ((in_arr - mu_in) ** 2).sum(axis=0) + ((out_arr - mu_out) ** 2).sum(axis=0)
    pooled = np.sqrt(ss / (len(values) - 2))
    floor = np.maximum(VARIANCE_FLOOR_ABS, VARIANCE_FLOOR_RATIO * pooled)
    return GaussianPair(
        mu_in, mu_out, _shrunk_covariance(in_arr, floor), _shrunk_covariance(out_arr, floor)
    )


def lira_score(score: float | np.ndarray, pair: GaussianPair) -> float | np.ndarray:
    """Return the log-likelihood ratio of a score under the member vs non-member fits."""
    if pair.multivariate:
        return stats.multivariate_normal.logpdf(
            score, pair.mu_in, pair.sigma_in
        ) - stats.multivariate_normal.logpdf(score, pair.mu_out, pair.sigma_out)
    return stats.norm.logpdf(score, pair.mu_in, pair.sigma_in) - stats.norm.logpdf(
        score, pair.mu_out, pair.sigma_out
    )


def _shadow_split(
    membership: MembershipMatrix, victim_index: int, audit_indices: Sequence[int] | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return shadow rows, the usable audit columns and the shadow membership bits for them."""
    if not 0 <= victim_index < membership.num_models:
        raise ValidationError(
            f'victim index {victim_index} out of range for {membership.num_models} models'
        )
    columns = (
        np.arange(membership.num_audit)
        if audit_indices is None
        else np.asarray(audit_indices, dtype=np.int64)
    )
    shadows = np.delete(np.arange(membership.num_models), victim_index)
    bits = membership.bits[np.ix_(shadows, columns)]
    n_in = bits.sum(axis=0)
    usable = (n_in >= MIN_SHADOWS_PER_SIDE) & (len(shadows) - n_in >= MIN_SHADOWS_PER_SIDE)
    if not np.all(usable):
        logger.warning(
            'Victim %s: skipping %s audit samples with fewer than two in or out shadow models.',
            victim_index,
            int((~usable).sum()),
        )
    return shadows, columns[usable], bits[:, usable]


def _records(
    membership: MembershipMatrix, victim_index: int, columns: np.ndarray, scores: np.ndarray
) -> RecordBatch:
    return RecordBatch(
        np.full(columns.size, victim_index),
        columns,
        scores,
        membership.bits[victim_index, columns],
    )


def lira_attack(
    scores: ScoreTensor,
    membership: MembershipMatrix,
    victim_index: int,
    variant_mode: str = 'single',
    audit_indices: Sequence[int] | None = None,
) -> RecordBatch:
    """Score the victim's audit samples against Gaussians fit on the remaining shadow models.

    Single mode uses the first query variant (the unaugmented query); multivariate mode fits
    all variants jointly.
    """
    scores.check_matches(membership)
    if variant_mode not in VARIANT_MODES:
        raise ValidationError(f'unknown variant mode {variant_mode!r}')
    shadows, columns, bits = _shadow_split(membership, victim_index, audit_indices)
    if variant_mode == 'single':
        unaugmented = scores.variant(0)
        values = unaugmented.slice_models(shadows).values[:, columns, 0]
        victim_values = unaugmented.values[victim_index, columns, 0]
        mu_in, mu_out, sd_in, sd_out = _univariate_fits(values, bits)
        attack = stats.norm.logpdf(victim_values, mu_in, sd_in) - stats.norm.logpdf(
            victim_values, mu_out, sd_out
        )
        return _records(membership, victim_index, columns, attack)

    shadow_scores = scores.slice_models(shadows)
    attack = np.empty(columns.size)
    for position, column in enumerate(columns):
        shadow_values = shadow_scores.values[:, column, :]
        pair = fit_gaussian_pair(
            shadow_values[bits[:, position]], shadow_values[~bits[:, position]]
        )
        attack[position] = lira_score(scores.values[victim_index, column, :], pair)
    return _records(membership, victim_index, columns, attack)


def lira_candidates(
    statistics: Mapping[str, ScoreTensor],
    membership: MembershipMatrix,
    victim_index: int,
    audit_indices: Sequence[int] | None = None,
) -> dict[str, RecordBatch]:
    """Run every available {hinge, logit} x {single, multivariate} combination in fixed order."""
    candidates = {}
    for statistic in STATISTICS:
        if statistic not in statistics:
            continue
        for mode in VARIANT_MODES:
            candidates[f'{statistic}/{mode}'] = lira_attack(
                statistics[statistic], membership, victim_index, mode, audit_indices
            )
    if not candidates:
        raise AttackError('no hinge or logit statistics available for LiRA')
    return candidates


def global_threshold_scores(
    scores: ScoreTensor,
    membership: MembershipMatrix,
    victim_index: int,
    audit_indices: Sequence[int] | None = None,
) -> RecordBatch:
    """Baseline attack: the victim's raw unaugmented score, with no per-sample calibration."""
    scores.check_matches(membership)
    if not 0 <= victim_index < membership.num_models:
        raise ValidationError(f'victim index {victim_index} out of range')
    columns = (
        np.arange(membership.num_audit)
        if audit_indices is None
        else np.asarray(audit_indices, dtype=np.int64)
    )
    return _records(membership, victim_index, columns, scores.values[victim_index, columns, 0])


def fisher_transform(rho: float | np.ndarray) -> float | np.ndarray:
    """Return ln((1 + rho) / (1 - rho)) with rho clamped inside (-1, 1)."""
    rho = np.clip(rho, -1.0 + FISHER_CLAMP, 1.0 - FISHER_CLAMP)
    return np.log1p(rho) - np.log1p(-rho)


def contrastive_views(
    examples: Sequence[Example], repeats: int, policy: AugmentationPolicy, seed: int
) -> np.ndarray:
    """Draw the augmentation pairs for every example and repeat, shape (2, R, n, d).

    Each (example id, repeat) owns its own stream, so the views do not depend on the model or
    on the order in which examples are processed.
    """
    features, _ = stack_examples(examples)
    views = np.empty((2, repeats, *features.shape))
    for row, example in enumerate(examples):
        for repeat in range(repeats):
            rng = seeds.rng_for(seed, 'contrastive', example.id, repeat)
            pair = policy.apply(np.stack([example.features, example.features]), rng)
            views[:, repeat, row] = pair
    return views


def _contrastive_outputs(model: Any, features: np.ndarray, mode: str) -> np.ndarray:
    if mode == 'white-box':
        if not hasattr(model, 'embed'):
            raise AttackError(f'white-box contrastive attack needs an encoder, got {model.kind}')
        return np.asarray(model.embed(features))
    if mode == 'black-box':
        if not model.supports_logits:
            raise AttackError(f'black-box contrastive attack needs logits, got {model.kind}')
        return np.asarray(model.logits(features))
    raise ValidationError(f'unknown contrastive attack mode {mode!r}')


def contrastive_scores_from_views(model: Any, views: np.ndarray, mode: str) -> np.ndarray:
    """Return the mean Fisher-transformed cosine similarity per example."""
    _, repeats, num_examples, dim = views.shape
    outputs = _contrastive_outputs(model, views.reshape(-1, dim), mode)
    outputs = outputs.reshape(2, repeats, num_examples, -1)
    norms = np.linalg.norm(outputs, axis=-1)
    if np.any(norms == 0):
        raise AttackError('contrastive attack hit a zero-norm output vector')
    rho = np.sum(outputs[0] * outputs[1], axis=-1) / (norms[0] * norms[1])
    return np.mean(fisher_transform(rho), axis=0)


def contrastive_similarity_score(
    model: Any,
    x: Example,
    repeats: int = CONTRASTIVE_REPEATS,
    policy: AugmentationPolicy | None = None,
    mode: str = 'white-box',
    seed: int = 0,
) -> float:
    """Average positive-pair similarity of two augmentations of `x` over `repeats` draws."""
    policy = policy or AugmentationPolicy(noise_std=0.1, flip_prob=0.25)
    views = contrastive_views([x], repeats, policy, seed)
    return float(contrastive_scores_from_views(model, views, mode)[0])


def query_probabilities(
    model: Any, examples: Sequence[Example], features: np.ndarray
) -> np.ndarray:
    """Query a model's confidences, routing through example ids when the model needs them."""
    if hasattr(model, 'predict_for_ids'):
        return np.asarray(model.predict_for_ids([e.id for e in examples], features))
    return np.asarray(model.predict(features))


def query_scores(
    model: Any, examples: Sequence[Example], augmentations: Sequence[FixedAugmentation]
) -> dict[str, np.ndarray]:
    """Return logit (and, when logits are exposed, hinge) scores of shape (n, A)."""
    features, labels = stack_examples(examples)
    with_hinge = bool(model.supports_logits)
    logit = np.empty((len(examples), len(augmentations)))
    hinge = np.empty_like(logit)
    for column, augmentation in enumerate(augmentations):
        queried = augmentation.apply(features)
        logit[:, column] = logit_scores(query_probabilities(model, examples, queried), labels)
        if with_hinge:
            hinge[:, column] = hinge_scores(model.logits(queried), labels)
    return {'logit': logit, 'hinge': hinge} if with_hinge else {'logit': logit}


def label_only_bits(
    model: Any, examples: Sequence[Example], augmentations: Sequence[FixedAugmentation]
) -> np.ndarray:
    """Return, per example, whether the top-1 prediction is correct under each augmentation."""
    features, labels = stack_examples(examples)
    bits = np.empty((len(examples), len(augmentations)), dtype=bool)
    for column, augmentation in enumerate(augmentations):
        predictions = query_probabilities(model, examples, augmentation.apply(features))
        bits[:, column] = np.argmax(predictions, axis=1) == labels
    return bits


def label_only_features(
    model: Any, x: Example, augmentations: Sequence[FixedAugmentation]
) -> LabelOnlyFeature:
    return LabelOnlyFeature(label_only_bits(model, [x], augmentations)[0])


def label_only_attack(
    shadow_features: np.ndarray, shadow_members: np.ndarray, victim_feature: np.ndarray
) -> float:
    """Predicted membership probability from a ridge logistic regression on shadow bit vectors.

    Raises:
        AttackError: fewer than two members or two non-members among the shadows.
    """
    shadow_features = np.asarray(shadow_features, dtype=np.float64)
    shadow_members = np.asarray(shadow_members, dtype=bool)
    num_in = int(shadow_members.sum())
    if num_in < MIN_SHADOWS_PER_SIDE or shadow_members.size - num_in < MIN_SHADOWS_PER_SIDE:
        raise AttackError('label-only attack needs two members and two non-members')
    classifier = LogisticRegression(C=1.0 / LABEL_ONLY_RIDGE)
    classifier.fit(shadow_features, shadow_members)
    member_column = int(np.flatnonzero(classifier.classes_)[0])
    victim = np.asarray(victim_feature, dtype=np.float64).reshape(1, -1)
    return float(classifier.predict_proba(victim)[0, member_column])


def label_only_fleet_attack(
    bits: ScoreTensor,
    membership: MembershipMatrix,
    victim_index: int,
    audit_indices: Sequence[int] | None = None,
) -> RecordBatch:
    """Run the label-only attack for every usable audit sample of one victim."""
    bits.check_matches(membership)
    shadows, columns, shadow_bits = _shadow_split(membership, victim_index, audit_indices)
    attack = np.empty(columns.size)
    for position, column in enumerate(columns):
        attack[position] = label_only_attack(
            bits.values[shadows, column, :],
            shadow_bits[:, position],
            bits.values[victim_index, column, :],
        )
    return _records(membership, victim_index, columns, attack)


def run_variant(
    variant: str,
    scores: ScoreTensor,
    membership: MembershipMatrix,
    victim_index: int,
    audit_indices: Sequence[int] | None = None,
) -> RecordBatch:
    """Recompute one named candidate (for example 'logit/multivariate') from its statistic."""
    _, _, mode = variant.partition('/')
    if variant == AttackId.LABEL_ONLY:
        return label_only_fleet_attack(scores, membership, victim_index, audit_indices)
    if mode == 'global':
        return global_threshold_scores(scores, membership, victim_index, audit_indices)
    if mode in VARIANT_MODES:
        return lira_attack(scores, membership, victim_index, mode, audit_indices)
    raise ValidationError(f'unknown attack variant {variant!r}')


def run_attack(
    spec: AttackSpec,
    statistics: Mapping[str, ScoreTensor],
    membership: MembershipMatrix,
    victim_index: int,
    audit_indices: Sequence[int] | None = None,
) -> dict[str, RecordBatch]:
    """Return the candidate record sets an attack produces for one victim, in fixed order."""
    missing = [name for name in spec.statistics if name not in statistics]
    attack_id = AttackId(spec.id)
    if attack_id == AttackId.LIRA:
        return lira_candidates(statistics, membership, victim_index, audit_indices)
    if missing:
        raise AttackError(f'attack {spec.id} needs statistics {missing} the fleet did not record')
    if attack_id in (AttackId.LIRA_HINGE, AttackId.LIRA_LOGIT):
        statistic = spec.statistics[0]
        return {
            f'{statistic}/{spec.variant_mode}': lira_attack(
                statistics[statistic], membership, victim_index, spec.variant_mode, audit_indices
            )
        }
    if attack_id == AttackId.GLOBAL_THRESHOLD:
        return {
            f'{spec.statistic}/global': global_threshold_scores(
                statistics[spec.statistic], membership, victim_index, audit_indices
            )
        }
    if attack_id == AttackId.LABEL_ONLY:
        return {
            'label-only': label_only_fleet_attack(
                statistics[attack_id.value], membership, victim_index, audit_indices
            )
        }
    return {
        f'{attack_id.value}/single': lira_attack(
            statistics[attack_id.value], membership, victim_index, 'single', audit_indices
        )
    }
