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

"""Experiment configuration documents and the registries their ids resolve against."""

from __future__ import annotations

import dataclasses
import json
import logging
import pathlib
from collections.abc import Mapping
from typing import Any, Final

import common
from miaudit_attacks import AttackId, AttackSpec
from miaudit_core import ModelKind
from miaudit_data import CanaryFamily, SyntheticSpec
from miaudit_defenses import DEFENSE_CONFIGS, TrainConfig, build_defense_config
from miaudit_eval import MEMBERSHIP_MODES, MIN_FLEET_SIZE, SAMPLE_LEVEL_MODES

# Parameters filled in for canary families that need them when the document omits them.
CANARY_DEFAULT_PARAMS: Final[Mapping[str, Mapping[str, float]]] = {
    CanaryFamily.OOD: {'shift': 10.0},
    CanaryFamily.UNIFORM: {'lo': -5.0, 'hi': 5.0},
}
TOP_LEVEL_KEYS: Final = frozenset(
    {
        'schema_version',
        'dataset',
        'canaries',
        'defense',
        'attack',
        'num_models',
        'fpr_targets',
        'seed',
        'output_dir',
        'membership_mode',
        'sample_level_mode',
        'threads',
    }
)
SUPERVISED_KINDS: Final = (ModelKind.LINEAR_SOFTMAX.value, ModelKind.MLP_1HIDDEN.value)

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class CanarySection:
    family: str = CanaryFamily.MISLABELED.value
    params: Mapping[str, Any] = dataclasses.field(default_factory=dict)

    def resolved_params(self) -> dict[str, Any]:
        return {**CANARY_DEFAULT_PARAMS.get(self.family, {}), **self.params}


@dataclasses.dataclass(frozen=True)
class DefenseSection:
    id: str = 'undefended'
    kind: str = ModelKind.MLP_1HIDDEN.value
    params: Mapping[str, Any] = dataclasses.field(default_factory=dict)

    def train_config(self, seed: int) -> TrainConfig:
        """Build the trainer configuration; the augmentation seed defaults to the experiment's."""
        return build_defense_config(self.id, {'augmentation_seed': seed, **self.params})


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """A parsed and validated experiment document."""

    dataset: SyntheticSpec = SyntheticSpec()
    canaries: CanarySection = CanarySection()
    defense: DefenseSection = DefenseSection()
    attack: AttackSpec = AttackSpec()
    num_models: int = 8
    fpr_targets: tuple[float, ...] = common.DEFAULT_FPR_TARGETS
    seed: int = 0
    output_dir: str = 'miaudit-out'
    membership_mode: str = 'fix-non-audit'
    sample_level_mode: str = 'pooled-canaries'
    threads: int = 1

    def to_dict(self) -> dict[str, Any]:
        """Return the resolved document; output location and thread count are left out."""
        return {
            'schema_version': common.SCHEMA_VERSION,
            'dataset': dataclasses.asdict(self.dataset),
            'canaries': {'family': self.canaries.family, 'params': self.canaries.resolved_params()},
            'defense': {
                'id': self.defense.id,
                'kind': self.defense.kind,
                'params': dataclasses.asdict(self.defense.train_config(self.seed)),
            },
            'attack': dataclasses.asdict(self.attack),
            'num_models': self.num_models,
            'fpr_targets': list(self.fpr_targets),
            'seed': self.seed,
            'membership_mode': self.membership_mode,
            'sample_level_mode': self.sample_level_mode,
        }

    @property
    def config_hash(self) -> str:
        return common.config_hash(self.to_dict())

    def fleet_key(self) -> str:
        """Hash of everything that determines the trained fleet and its recorded queries."""
        resolved = self.to_dict()
        return common.config_hash(
            {
                'dataset': resolved['dataset'],
                'canaries': resolved['canaries'],
                'defense': resolved['defense'],
                'attack': resolved['attack'],
                'num_models': self.num_models,
                'seed': self.seed,
                'membership_mode': self.membership_mode,
                'engine_version': common.ENGINE_VERSION,
            }
        )


def _section(doc: Mapping[str, Any], name: str, cls: type[Any]) -> Any:
    values = doc.get(name, {})
    if not isinstance(values, Mapping):
        raise common.ConfigError(f'{name}: expected an object, got {type(values).__name__}')
    known = {field.name for field in dataclasses.fields(cls)}
    for key in sorted(values):
        if key not in known:
            raise common.ConfigError(f'{name}.{key}: unknown key')
    try:
        return cls(**values)
    except (common.ValidationError, TypeError) as e:
        raise common.ConfigError(f'{name}: {e}') from e


def _check_ids(config: ExperimentConfig) -> None:
    try:
        CanaryFamily(config.canaries.family)
    except ValueError as e:
        raise common.ConfigError(
            f'canaries.family: unknown canary family {config.canaries.family!r}'
        ) from e
    if config.defense.id not in DEFENSE_CONFIGS:
        raise common.ConfigError(f'defense.id: unknown defense {config.defense.id!r}')
    if config.defense.kind not in SUPERVISED_KINDS:
        raise common.ConfigError(f'defense.kind: unsupported model kind {config.defense.kind!r}')
    contrastive_defense = config.defense.id == 'contrastive'
    if config.attack.id == AttackId.CONTRASTIVE_WHITE_BOX and not contrastive_defense:
        raise common.ConfigError('attack.id: the white-box contrastive attack needs an encoder')


def parse_config(doc: Mapping[str, Any]) -> ExperimentConfig:
    """Validate an experiment document and return the typed configuration.

    Raises:
        ConfigError: unknown keys or ids, or malformed values; the message names the field.
        BalanceError: the number of models is odd or too small.
    """
    if not isinstance(doc, Mapping):
        raise common.ConfigError('config: expected a JSON object')
    for key in sorted(doc):
        if key not in TOP_LEVEL_KEYS:
            raise common.ConfigError(f'{key}: unknown key')
    schema_version = doc.get('schema_version', common.SCHEMA_VERSION)
    if schema_version != common.SCHEMA_VERSION:
        raise common.ConfigError(f'schema_version: unsupported version {schema_version}')

    attack_doc = doc.get('attack', {})
    if isinstance(attack_doc, Mapping) and 'id' in attack_doc:
        try:
            AttackId(attack_doc['id'])
        except ValueError as e:
            raise common.ConfigError(f'attack.id: unknown attack {attack_doc["id"]!r}') from e

    dataset = _section(doc, 'dataset', SyntheticSpec)
    try:
        dataset.validate()
    except common.ValidationError as e:
        raise common.ConfigError(f'dataset: {e}') from e
    num_models = doc.get('num_models', 8)
    if not isinstance(num_models, int) or num_models < MIN_FLEET_SIZE or num_models % 2:
        raise common.BalanceError(
            f'num_models: must be an even integer >= {MIN_FLEET_SIZE}, got {num_models}'
        )
    raw_targets = doc.get('fpr_targets', common.DEFAULT_FPR_TARGETS)
    try:
        fpr_targets = tuple(float(alpha) for alpha in raw_targets)
    except (TypeError, ValueError) as e:
        raise common.ConfigError(f'fpr_targets: expected a list of numbers: {e}') from e
    if not fpr_targets or any(not 0 <= alpha <= 1 for alpha in fpr_targets):
        raise common.ConfigError(f'fpr_targets: values must lie in [0, 1], got {fpr_targets}')
    membership_mode = doc.get('membership_mode', 'fix-non-audit')
    if membership_mode not in MEMBERSHIP_MODES:
        raise common.ConfigError(f'membership_mode: unknown mode {membership_mode!r}')
    sample_level_mode = doc.get('sample_level_mode', 'pooled-canaries')
    if sample_level_mode not in SAMPLE_LEVEL_MODES:
        raise common.ConfigError(f'sample_level_mode: unknown mode {sample_level_mode!r}')
    threads = doc.get('threads', 1)
    if not isinstance(threads, int) or threads < 1:
        raise common.ConfigError(f'threads: must be a positive integer, got {threads}')

    config = ExperimentConfig(
        dataset=dataset,
        canaries=_section(doc, 'canaries', CanarySection),
        defense=_section(doc, 'defense', DefenseSection),
        attack=_section(doc, 'attack', AttackSpec),
        num_models=num_models,
        fpr_targets=tuple(sorted(set(fpr_targets))),
        seed=int(doc.get('seed', 0)),
        output_dir=str(doc.get('output_dir', 'miaudit-out')),
        membership_mode=membership_mode,
        sample_level_mode=sample_level_mode,
        threads=threads,
    )
    _check_ids(config)
    # Builds the trainer config once so bad defense parameters fail before any training.
    config.defense.train_config(config.seed)
    return config


def load_config(path: str | pathlib.Path) -> ExperimentConfig:
    """Read and parse an experiment document from disk."""
    try:
        doc = json.loads(pathlib.Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise common.ConfigError(f'config: cannot read {path}: {e}') from e
    logger.info('Loaded experiment config from %s.', path)
    return parse_config(doc)
