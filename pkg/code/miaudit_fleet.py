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

"""Train a fleet of models on balanced memberships and record their audit-sample queries."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Mapping, Sequence
from concurrent import futures
from typing import Any, Protocol

import miaudit_attacks
import numpy as np
from miaudit_attacks import AttackId, AttackSpec
from miaudit_core import (
    Dataset,
    Example,
    MembershipMatrix,
    ModelKind,
    ScoreTensor,
    training_set_for,
)
from miaudit_defenses import TrainConfig, train_defense
from miaudit_models import AugmentationPolicy, FixedAugmentation, fixed_augmentations
from miaudit_models import test_accuracy as model_accuracy
from utils import seeds

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class QueryPlan:
    """Which statistics to record per model and the fixed queries used to obtain them."""

    spec: AttackSpec
    policy: AugmentationPolicy
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return {
            'attack': dataclasses.asdict(self.spec),
            'policy': dataclasses.asdict(self.policy),
            'seed': self.seed,
        }


@dataclasses.dataclass(frozen=True)
class PreparedQueries:
    """Model-independent query inputs shared by every model of a fleet."""

    score_augmentations: tuple[FixedAugmentation, ...]
    label_only_augmentations: tuple[FixedAugmentation, ...]
    contrastive_views: np.ndarray | None


@dataclasses.dataclass(frozen=True)
class FleetOutputs:
    """Per-model statistics stacked into score tensors, plus per-model utility."""

    membership: MembershipMatrix
    statistics: Mapping[str, ScoreTensor]
    test_accuracy: np.ndarray
    mechanism: Mapping[str, Any]


class FleetStore(Protocol):
    """Persistence for trained-fleet outputs keyed by a fleet hash."""

    def load(self, key: str, membership: MembershipMatrix) -> FleetOutputs | None: ...

    def save(self, key: str, outputs: FleetOutputs) -> None: ...


def prepare_queries(audit: Sequence[Example], dim: int, plan: QueryPlan) -> PreparedQueries:
    """Build the fixed augmentations and contrastive views once per fleet."""
    spec = plan.spec
    views = None
    if spec.id in (AttackId.CONTRASTIVE_WHITE_BOX, AttackId.CONTRASTIVE_BLACK_BOX):
        views = miaudit_attacks.contrastive_views(audit, spec.repeats, plan.policy, plan.seed)
    return PreparedQueries(
        score_augmentations=fixed_augmentations(
            dim, spec.num_queries, plan.policy, seeds.derive_seed(plan.seed, 'score-queries')
        ),
        label_only_augmentations=fixed_augmentations(
            dim,
            spec.label_only_augmentations,
            plan.policy,
            seeds.derive_seed(plan.seed, 'label-only-queries'),
        ),
        contrastive_views=views,
    )


def query_model(
    model: Any, audit: Sequence[Example], spec: AttackSpec, prepared: PreparedQueries
) -> dict[str, np.ndarray]:
    """Return every statistic the attack needs for one model, each shaped (C, A)."""
    wanted = spec.statistics
    outputs: dict[str, np.ndarray] = {}
    if 'hinge' in wanted or 'logit' in wanted:
        scores = miaudit_attacks.query_scores(model, audit, prepared.score_augmentations)
        outputs.update({name: scores[name] for name in wanted if name in scores})
    if AttackId.LABEL_ONLY in wanted:
        bits = miaudit_attacks.label_only_bits(model, audit, prepared.label_only_augmentations)
        outputs[AttackId.LABEL_ONLY.value] = bits.astype(np.float64)
    for attack_id, mode in (
        (AttackId.CONTRASTIVE_WHITE_BOX, 'white-box'),
        (AttackId.CONTRASTIVE_BLACK_BOX, 'black-box'),
    ):
        if attack_id in wanted and prepared.contrastive_views is not None:
            scores_1d = miaudit_attacks.contrastive_scores_from_views(
                model, prepared.contrastive_views, mode
            )
            outputs[attack_id.value] = scores_1d[:, None]
    return outputs


def _variant_names(name: str, spec: AttackSpec, prepared: PreparedQueries) -> tuple[str, ...]:
    if name in ('hinge', 'logit'):
        return tuple(f'{name}:{a.name}' for a in prepared.score_augmentations)
    if name == AttackId.LABEL_ONLY:
        return tuple(f'correct:{a.name}' for a in prepared.label_only_augmentations)
    return (f'{name}:mean-of-{spec.repeats}',)


def train_fleet(
    dataset: Dataset,
    membership: MembershipMatrix,
    defense_id: str,
    cfg: TrainConfig,
    plan: QueryPlan,
    kind: ModelKind | str = ModelKind.MLP_1HIDDEN,
    threads: int = 1,
) -> FleetOutputs:
    """Train one model per membership row and query it on the audit samples.

    Model i trains with seed derive_seed(plan.seed, 'model', i), so outputs are identical for
    any number of worker threads.
    """
    prepared = prepare_queries(dataset.audit, dataset.dim, plan)

    def train_one(model_index: int) -> tuple[dict[str, np.ndarray], float, dict[str, Any]]:
        train = training_set_for(dataset, membership, model_index)
        model_cfg = cfg.with_seed(seeds.derive_seed(plan.seed, 'model', model_index))
        model = train_defense(defense_id, train, model_cfg, kind, dataset.num_classes)
        outputs = query_model(model, dataset.audit, plan.spec, prepared)
        accuracy = model_accuracy(model, dataset.test)
        logger.debug('Trained model %s on %s examples.', model_index, len(train))
        return outputs, accuracy, model.mechanism_params()

    logger.info(
        'Training %s %s models on %s worker threads.', membership.num_models, defense_id, threads
    )
    with futures.ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(train_one, range(membership.num_models)))

    names = list(results[0][0])
    statistics = {
        name: ScoreTensor(
            np.stack([outputs[name] for outputs, _, _ in results]),
            _variant_names(name, plan.spec, prepared),
        )
        for name in names
    }
    accuracies = np.array([accuracy for _, accuracy, _ in results])
    logger.info('Fleet trained; mean test accuracy %.4f.', float(np.mean(accuracies)))
    return FleetOutputs(membership, statistics, accuracies, results[0][2])
