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

"""ROC machinery, population and sample-level reports, and the audit protocols."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Iterable, Mapping, Sequence
from concurrent import futures
from typing import Any, Final

import miaudit_attacks
import numpy as np
from common import DEFAULT_FPR_TARGETS, ENGINE_VERSION, BalanceError, ValidationError
from miaudit_attacks import AttackScoreRecord, AttackSpec, RecordBatch
from miaudit_core import (
    Dataset,
    MembershipMatrix,
    ModelKind,
    ScoreTensor,
    assign_memberships,
)
from miaudit_data import CanaryFamily, CanarySet, apply_canaries
from miaudit_defenses import TrainConfig
from miaudit_fleet import FleetOutputs, FleetStore, QueryPlan, train_fleet
from scipy import stats
from sklearn import metrics
from utils import seeds

MEMBERSHIP_MODES: Final = ('fix-non-audit', 'vary-all')
SAMPLE_LEVEL_MODES: Final = ('pooled-canaries', 'per-sample')
MIN_FLEET_SIZE: Final = 4
CONFIDENCE_LEVEL: Final = 0.95

logger = logging.getLogger(__name__)

Records = RecordBatch | Iterable[AttackScoreRecord]


@dataclasses.dataclass(frozen=True)
class RocCurve:
    """Exact ROC points by descending threshold, starting at (inf, 0, 0).

    The last point is the lowest score bucket, where every guess is positive.
    """

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    n_pos: int
    n_neg: int

    def __post_init__(self) -> None:
        for name in ('thresholds', 'tpr', 'fpr'):
            column = np.asarray(getattr(self, name), dtype=np.float64)
            column.setflags(write=False)
            object.__setattr__(self, name, column)
        if not self.thresholds.size == self.tpr.size == self.fpr.size:
            raise ValidationError('ROC columns must have equal lengths')
        if self.thresholds[0] != np.inf or self.tpr[0] != 0 or self.fpr[0] != 0:
            raise ValidationError('ROC curve must start at (inf, 0, 0)')
        if np.any(np.diff(self.tpr) < 0) or np.any(np.diff(self.fpr) < 0):
            raise ValidationError('ROC rates must be non-decreasing')
        if np.any(np.diff(self.thresholds) >= 0):
            raise ValidationError('ROC thresholds must be strictly decreasing')
        if self.tpr[-1] > 1 or self.fpr[-1] > 1:
            raise ValidationError('ROC rates must lie in [0, 1]')

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return [
            (float(t), float(p), float(f))
            for t, p, f in zip(self.thresholds, self.tpr, self.fpr, strict=True)
        ]

    @classmethod
    def from_points(
        cls, points: Sequence[tuple[float, float, float]], n_pos: int = 0, n_neg: int = 0
    ) -> RocCurve:
        thresholds, tpr, fpr = (np.array(column, dtype=np.float64) for column in zip(*points))
        return cls(thresholds, tpr, fpr, n_pos, n_neg)


def roc_curve(records: Records) -> RocCurve:
    """Build the exact ROC curve; records sharing a score flip together in one bucket.

    Raises:
        ValidationError: the records contain no positives or no negatives.
    """
    batch = RecordBatch.coerce(records)
    n_pos = int(batch.member.sum())
    n_neg = len(batch) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError(
            f'ROC needs members and non-members, got {n_pos} and {n_neg}'
        )
    fpr, tpr, thresholds = metrics.roc_curve(batch.member, batch.score, drop_intermediate=False)
    return RocCurve(thresholds, tpr, fpr, n_pos, n_neg)


def _operating_index(curve: RocCurve, alpha: float) -> int:
    if not 0 <= alpha <= 1:
        raise ValidationError(f'target FPR must be in [0, 1], got {alpha}')
    return int(np.searchsorted(curve.fpr, alpha, side='right')) - 1


def tpr_at_fpr(curve: RocCurve, alpha: float) -> float:
    """Return the TPR at the lowest threshold whose FPR does not exceed alpha."""
    return float(curve.tpr[_operating_index(curve, alpha)])


def threshold_at_fpr(curve: RocCurve, alpha: float) -> float:
    return float(curve.thresholds[_operating_index(curve, alpha)])


def is_resolved(num_negatives: int, alpha: float) -> bool:
    """Whether enough non-member guesses exist for a false positive rate of alpha to be observed."""
    return alpha > 0 and num_negatives * alpha >= 1.0 - 1e-9


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    """Return the 95% Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    interval = stats.binomtest(successes, trials).proportion_ci(
        confidence_level=CONFIDENCE_LEVEL, method='wilson'
    )
    return float(interval.low), float(interval.high)


def select_strongest(
    candidates: Mapping[str, RecordBatch], alpha: float
) -> tuple[str, RecordBatch]:
    """Pick the candidate with the highest TPR at alpha; ties keep the earliest candidate."""
    best_name, best_tpr = '', -1.0
    for name, batch in candidates.items():
        try:
            tpr = tpr_at_fpr(roc_curve(batch), alpha)
        except ValidationError:
            logger.warning('Candidate %s has one-class records; skipping it.', name)
            continue
        if tpr > best_tpr:
            best_name, best_tpr = name, tpr
    if not best_name:
        raise ValidationError('no attack candidate produced usable records')
    return best_name, candidates[best_name]


@dataclasses.dataclass(frozen=True)
class ReportContext:
    """Run identity copied into every report."""

    canary_family: str = CanaryFamily.NONE.value
    defense_id: str = 'undefended'
    attack_id: str = 'lira'
    attack_variant: str = ''
    num_models: int = 0
    num_audit: int = 0
    seed: int = 0
    membership_mode: str = 'fix-non-audit'
    mechanism: Mapping[str, Any] = dataclasses.field(default_factory=dict)
    test_accuracy: float | None = None
    config_hash: str = ''


@dataclasses.dataclass(frozen=True)
class TargetResult:
    alpha: float
    tpr: float
    threshold: float
    resolved: bool
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict[str, Any]:
        return {
            'alpha': self.alpha,
            'tpr': self.tpr,
            # JSON has no infinity; the (inf, 0, 0) operating point is written as null.
            'threshold': None if np.isinf(self.threshold) else self.threshold,
            'resolved': self.resolved,
            'ci_low': self.ci_low,
            'ci_high': self.ci_high,
        }


@dataclasses.dataclass(frozen=True)
class SampleResult:
    audit_index: int
    tpr_at: tuple[float, ...]
    n_pos: int
    n_neg: int


@dataclasses.dataclass(frozen=True)
class AuditReport:
    """TPR at each target FPR for one protocol, with the identity of the audited run."""

    protocol: str
    mode: str | None
    context: ReportContext
    targets: tuple[TargetResult, ...]
    n_pos: int
    n_neg: int
    per_sample: tuple[SampleResult, ...] = ()

    @property
    def fpr_targets(self) -> tuple[float, ...]:
        return tuple(result.alpha for result in self.targets)

    @property
    def under_resolved(self) -> tuple[float, ...]:
        return tuple(result.alpha for result in self.targets if not result.resolved)

    def result(self, alpha: float) -> TargetResult:
        for target in self.targets:
            if target.alpha == alpha:
                return target
        raise ValidationError(f'report has no target FPR {alpha}')

    def tpr_at(self, alpha: float) -> float:
        return self.result(alpha).tpr

    def to_dict(self) -> dict[str, Any]:
        context = dataclasses.asdict(self.context)
        context['mechanism'] = dict(self.context.mechanism)
        report: dict[str, Any] = {
            'protocol': self.protocol,
            'mode': self.mode,
            **context,
            'engine_version': ENGINE_VERSION,
            'fpr_targets': list(self.fpr_targets),
            'targets': [target.to_dict() for target in self.targets],
            'n_pos': self.n_pos,
            'n_neg': self.n_neg,
            'under_resolved': list(self.under_resolved),
        }
        if self.per_sample:
            report['per_sample'] = [
                {
                    'audit_index': sample.audit_index,
                    'tpr_at': list(sample.tpr_at),
                    'n_pos': sample.n_pos,
                    'n_neg': sample.n_neg,
                }
                for sample in self.per_sample
            ]
            report['per_sample_max'] = [
                max(sample.tpr_at[i] for sample in self.per_sample)
                for i in range(len(self.targets))
            ]
        return report


def _target_results(curve: RocCurve, fpr_targets: Sequence[float]) -> tuple[TargetResult, ...]:
    results = []
    for alpha in fpr_targets:
        tpr = tpr_at_fpr(curve, alpha)
        low, high = wilson_interval(round(tpr * curve.n_pos), curve.n_pos)
        results.append(
            TargetResult(
                alpha, tpr, threshold_at_fpr(curve, alpha), is_resolved(curve.n_neg, alpha),
                low, high,
            )
        )
    return tuple(results)


def _log_resolution(report: AuditReport) -> AuditReport:
    if report.under_resolved:
        logger.warning(
            'The %s report is under-resolved at FPR %s (%s effective negatives).',
            report.protocol,
            list(report.under_resolved),
            report.n_neg,
        )
    return report


def population_report(
    records: Records,
    fpr_targets: Sequence[float] = DEFAULT_FPR_TARGETS,
    context: ReportContext | None = None,
) -> AuditReport:
    """Pool every guess into one ROC curve."""
    batch = RecordBatch.coerce(records)
    if not len(batch):
        raise ValidationError('population report needs at least one record')
    curve = roc_curve(batch)
    report = AuditReport(
        protocol='population',
        mode=None,
        context=context or ReportContext(),
        targets=_target_results(curve, fpr_targets),
        n_pos=curve.n_pos,
        n_neg=curve.n_neg,
    )
    return _log_resolution(report)


def _group_by_sample(batch: RecordBatch) -> Iterable[tuple[int, RecordBatch]]:
    order = np.argsort(batch.audit, kind='stable')
    audit = batch.audit[order]
    starts = np.flatnonzero(np.r_[True, audit[1:] != audit[:-1]])
    ends = np.r_[starts[1:], audit.size]
    for start, end in zip(starts, ends, strict=True):
        rows = order[start:end]
        yield int(audit[start]), batch.select(rows)


def sample_level_report(
    records: Records,
    mode: str = 'pooled-canaries',
    fpr_targets: Sequence[float] = DEFAULT_FPR_TARGETS,
    context: ReportContext | None = None,
) -> AuditReport:
    """Report leakage on the most vulnerable samples.

    Pooled-canaries mode draws one ROC over canary guesses. Per-sample mode draws one ROC per
    audit sample across victims and reports the largest per-sample TPR at each target; its
    effective negative count is the smallest per-sample non-member count.
    """
    context = context or ReportContext()
    batch = RecordBatch.coerce(records)
    if not len(batch):
        raise ValidationError('sample-level report needs at least one record')
    if mode == 'pooled-canaries':
        if context.canary_family == CanaryFamily.NONE:
            raise ValidationError('pooled-canaries mode needs a canary family other than none')
        curve = roc_curve(batch)
        report = AuditReport(
            'sample-level', mode, context, _target_results(curve, fpr_targets),
            curve.n_pos, curve.n_neg,
        )
        return _log_resolution(report)
    if mode != 'per-sample':
        raise ValidationError(f'unknown sample-level mode {mode!r}')

    samples, curves = [], []
    for audit_index, sample_batch in _group_by_sample(batch):
        n_pos = int(sample_batch.member.sum())
        if n_pos == 0 or n_pos == len(sample_batch):
            logger.warning('Sample %s has one-class guesses; leaving it out.', audit_index)
            continue
        curve = roc_curve(sample_batch)
        curves.append(curve)
        samples.append(
            SampleResult(
                audit_index,
                tuple(tpr_at_fpr(curve, alpha) for alpha in fpr_targets),
                curve.n_pos,
                curve.n_neg,
            )
        )
    if not samples:
        raise ValidationError('no audit sample has both member and non-member guesses')
    min_neg = min(sample.n_neg for sample in samples)
    targets = []
    for i, alpha in enumerate(fpr_targets):
        best = max(range(len(samples)), key=lambda k: samples[k].tpr_at[i])
        curve = curves[best]
        tpr = samples[best].tpr_at[i]
        low, high = wilson_interval(round(tpr * curve.n_pos), curve.n_pos)
        targets.append(
            TargetResult(
                alpha, tpr, threshold_at_fpr(curve, alpha), is_resolved(min_neg, alpha), low, high
            )
        )
    report = AuditReport(
        'sample-level', mode, context, tuple(targets),
        min(sample.n_pos for sample in samples), min_neg, tuple(samples),
    )
    return _log_resolution(report)


@dataclasses.dataclass(frozen=True)
class LeaveOneOutResult:
    """Everything a leave-one-out run produced, restricted to the evaluated audit columns."""

    scores: ScoreTensor
    membership: MembershipMatrix
    records: RecordBatch
    attack_variant: str
    eval_indices: np.ndarray
    fleet: FleetOutputs

    @property
    def test_accuracy(self) -> float | None:
        accuracies = self.fleet.test_accuracy
        if accuracies.size == 0 or np.all(np.isnan(accuracies)):
            return None
        return float(np.nanmean(accuracies))


def attack_fleet(
    spec: AttackSpec,
    statistics: Mapping[str, ScoreTensor],
    membership: MembershipMatrix,
    audit_indices: Sequence[int] | np.ndarray,
    alpha: float,
    threads: int = 1,
) -> tuple[str, RecordBatch]:
    """Run the attack once per victim against the other models and keep the strongest variant."""

    def attack_victim(victim_index: int) -> dict[str, RecordBatch]:
        return miaudit_attacks.run_attack(
            spec, statistics, membership, victim_index, audit_indices
        )

    with futures.ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_victim = list(pool.map(attack_victim, range(membership.num_models)))
    candidates = {
        name: RecordBatch.concat([victim[name] for victim in per_victim])
        for name in per_victim[0]
    }
    return select_strongest(candidates, alpha)


def run_leave_one_out(
    dataset: Dataset,
    canaries: CanarySet,
    defense_id: str,
    defense_cfg: TrainConfig,
    attack: AttackSpec,
    num_models: int,
    seed: int,
    *,
    kind: ModelKind | str = ModelKind.MLP_1HIDDEN,
    membership_mode: str = 'fix-non-audit',
    fpr_targets: Sequence[float] = DEFAULT_FPR_TARGETS,
    threads: int = 1,
    store: FleetStore | None = None,
    cache_key: str | None = None,
) -> LeaveOneOutResult:
    """Train S models on balanced memberships and attack each one with the rest as shadows.

    In vary-all mode the fixed examples become extra membership-varied columns; only the
    original audit columns are evaluated. Record audit indices always refer to the canary set.
    """
    if num_models < MIN_FLEET_SIZE:
        raise BalanceError(
            f'leave-one-out needs at least {MIN_FLEET_SIZE} models, got {num_models}'
        )
    if membership_mode not in MEMBERSHIP_MODES:
        raise ValidationError(f'unknown membership mode {membership_mode!r}')
    audited = apply_canaries(dataset, canaries)
    offset = 0
    if membership_mode == 'vary-all':
        offset = len(audited.fixed)
        audited = Dataset(
            fixed=(),
            audit=(*audited.fixed, *audited.audit),
            num_classes=audited.num_classes,
            dim=audited.dim,
            test=audited.test,
        )
    membership = assign_memberships(num_models, audited.num_audit, seed)

    fleet = store.load(cache_key, membership) if store and cache_key else None
    if fleet is None:
        plan = QueryPlan(attack, defense_cfg.policy, seed)
        fleet = train_fleet(
            audited, membership, defense_id, defense_cfg, plan, kind=kind, threads=threads
        )
        if store and cache_key:
            store.save(cache_key, fleet)
    else:
        logger.info('Reusing cached fleet %s.', cache_key)

    columns = offset + canaries.eval_indices
    variant, records = attack_fleet(
        attack, fleet.statistics, membership, columns, min(fpr_targets), threads
    )
    logger.info('Attack %s kept variant %s with %s records.', attack.id, variant, len(records))
    statistic = variant.split('/')[0]
    kept = np.arange(offset, audited.num_audit)
    return LeaveOneOutResult(
        scores=ScoreTensor(
            fleet.statistics[statistic].values[:, kept, :],
            fleet.statistics[statistic].variant_names,
        ),
        membership=MembershipMatrix(membership.bits[:, kept]),
        records=RecordBatch(
            records.victim, records.audit - offset, records.score, records.member
        ),
        attack_variant=variant,
        eval_indices=canaries.eval_indices,
        fleet=fleet,
    )


def name_and_shame_sim(
    dataset_size: int,
    target_index: int,
    num_trials: int,
    seed: int,
    fpr_targets: Sequence[float] = DEFAULT_FPR_TARGETS,
) -> tuple[AuditReport, AuditReport]:
    """Simulate a mechanism that publishes exactly whether one target is in its training set.

    Every trial draws a balanced membership; the target's attack score is its membership bit and
    every other sample gets an independent uniform score.

    Returns:
        The population report over all guesses and the per-sample sample-level report.
    """
    if dataset_size < 2:  # noqa: PLR2004
        raise ValidationError(f'name-and-shame needs at least two samples, got {dataset_size}')
    if not 0 <= target_index < dataset_size:
        raise ValidationError(f'target index {target_index} out of range')
    if num_trials < 2 or num_trials % 2:  # noqa: PLR2004
        raise BalanceError(
            f'name-and-shame needs an even number of trials >= 2 so the target is a member in'
            f' exactly half of them, got {num_trials}'
        )
    membership = assign_memberships(num_trials, dataset_size, seed)
    scores = seeds.rng_for(seed, 'name-and-shame').random((num_trials, dataset_size))
    scores[:, target_index] = membership.bits[:, target_index]

    # Audit-major order keeps the per-sample grouping cheap.
    records = RecordBatch(
        victim=np.tile(np.arange(num_trials, dtype=np.int32), dataset_size),
        audit=np.repeat(np.arange(dataset_size, dtype=np.int32), num_trials),
        score=scores.T.ravel(),
        member=membership.bits.T.ravel(),
    )
    context = ReportContext(
        canary_family='name-and-shame',
        defense_id='name-and-shame',
        attack_id='membership-bit',
        num_models=num_trials,
        num_audit=dataset_size,
        seed=seed,
    )
    population = population_report(records, fpr_targets, context)
    sample_level = sample_level_report(records, 'per-sample', fpr_targets, context)
    return population, sample_level


def membership_mode_check(
    dataset: Dataset,
    canaries: CanarySet,
    defense_id: str,
    defense_cfg: TrainConfig,
    attack: AttackSpec,
    num_models: int,
    seed: int,
    *,
    kind: ModelKind | str = ModelKind.MLP_1HIDDEN,
    fpr_targets: Sequence[float] = DEFAULT_FPR_TARGETS,
    threads: int = 1,
) -> tuple[AuditReport, AuditReport]:
    """Run the same attack with audit-only and with full membership resampling.

    Returns:
        Population reports for the fix-non-audit run and the vary-all run, in that order.
    """
    reports = []
    for mode in MEMBERSHIP_MODES:
        result = run_leave_one_out(
            dataset, canaries, defense_id, defense_cfg, attack, num_models, seed,
            kind=kind, membership_mode=mode, fpr_targets=fpr_targets, threads=threads,
        )
        context = ReportContext(
            canary_family=canaries.family.value,
            defense_id=defense_id,
            attack_id=attack.id,
            attack_variant=result.attack_variant,
            num_models=num_models,
            num_audit=result.membership.num_audit,
            seed=seed,
            membership_mode=mode,
            mechanism=result.fleet.mechanism,
            test_accuracy=result.test_accuracy,
        )
        reports.append(population_report(result.records, fpr_targets, context))
    fix_report, vary_report = reports
    alpha = fpr_targets[min(1, len(fpr_targets) - 1)]
    logger.info(
        'Membership modes at FPR %s: fix-non-audit TPR %.4f, vary-all TPR %.4f.',
        alpha,
        fix_report.tpr_at(alpha),
        vary_report.tpr_at(alpha),
    )
    return fix_report, vary_report
