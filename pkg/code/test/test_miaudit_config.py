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
"""Unit test for miaudit_config."""

from __future__ import annotations

import dataclasses
import json
import pathlib
import tempfile
import unittest

import common
import miaudit_config
from miaudit_defenses import DpSgdConfig

EXAMPLE_CONFIG = pathlib.Path(__file__).parent.parent / 'miaudit_experiment_config_example.json'


def example_doc() -> dict:
    return json.loads(EXAMPLE_CONFIG.read_text(encoding='utf-8'))


class TestParseConfig(unittest.TestCase):
    def test_example_config(self) -> None:
        """Verify the shipped example document parses."""
        config = miaudit_config.load_config(EXAMPLE_CONFIG)
        self.assertEqual(8, config.num_models)
        self.assertEqual('lira', config.attack.id)
        self.assertEqual((0.001, 0.01, 0.1), config.fpr_targets)
        self.assertEqual(20, config.defense.train_config(config.seed).epochs)

    def test_defaults(self) -> None:
        """Verify an empty document takes every default."""
        config = miaudit_config.parse_config({})
        self.assertEqual(miaudit_config.ExperimentConfig(), config)

    def test_unknown_keys_name_the_field(self) -> None:
        """Verify unknown keys are rejected with the offending field in the message."""
        cases = [
            ({'colour': 1}, 'colour'),
            ({'dataset': {'size': 3}}, 'dataset.size'),
            ({'attack': {'id': 'lira', 'depth': 2}}, 'attack.depth'),
            ({'defense': {'id': 'dpsgd', 'params': {'sigma': 1.0}}}, 'defense.params'),
        ]
        for doc, field in cases:
            with self.assertRaisesRegex(common.ConfigError, field):
                miaudit_config.parse_config(doc)

    def test_unknown_ids(self) -> None:
        """Verify unknown canary, defense and attack ids are rejected."""
        cases = [
            ({'canaries': {'family': 'poisoned'}}, 'canaries.family'),
            ({'defense': {'id': 'dropout'}}, 'defense.id'),
            ({'defense': {'kind': 'resnet'}}, 'defense.kind'),
            ({'attack': {'id': 'shadow-boost'}}, 'attack.id'),
        ]
        for doc, field in cases:
            with self.assertRaisesRegex(common.ConfigError, field):
                miaudit_config.parse_config(doc)

    def test_white_box_needs_encoder(self) -> None:
        """Verify the white-box contrastive attack needs the contrastive defense."""
        with self.assertRaises(common.ConfigError):
            miaudit_config.parse_config({'attack': {'id': 'contrastive-white-box'}})
        config = miaudit_config.parse_config(
            {'attack': {'id': 'contrastive-white-box'}, 'defense': {'id': 'contrastive'}}
        )
        self.assertEqual('contrastive', config.defense.id)

    def test_num_models(self) -> None:
        """Verify odd and too small fleets are balance errors."""
        for num_models in (7, 2, 'eight'):
            with self.assertRaises(common.BalanceError):
                miaudit_config.parse_config({'num_models': num_models})

    def test_fpr_targets(self) -> None:
        """Verify FPR targets are sorted, deduplicated and range-checked."""
        config = miaudit_config.parse_config({'fpr_targets': [0.1, 0.01, 0.1]})
        self.assertEqual((0.01, 0.1), config.fpr_targets)
        with self.assertRaisesRegex(common.ConfigError, 'fpr_targets'):
            miaudit_config.parse_config({'fpr_targets': [1.5]})
        with self.assertRaisesRegex(common.ConfigError, 'fpr_targets'):
            miaudit_config.parse_config({'fpr_targets': 'all'})

    def test_schema_version(self) -> None:
        """Verify a different schema version is rejected."""
        with self.assertRaisesRegex(common.ConfigError, 'schema_version'):
            miaudit_config.parse_config({'schema_version': 99})

    def test_defense_params(self) -> None:
        """Verify defense parameters build the registered config with the experiment seed."""
        config = miaudit_config.parse_config(
            {'seed': 3, 'defense': {'id': 'dpsgd', 'params': {'noise_multiplier': 0.5}}}
        )
        train_config = config.defense.train_config(config.seed)
        self.assertIsInstance(train_config, DpSgdConfig)
        self.assertEqual(3, train_config.augmentation_seed)
        with self.assertRaisesRegex(common.ConfigError, 'defense.params'):
            miaudit_config.parse_config(
                {'defense': {'id': 'dpsgd', 'params': {'noise_multiplier': -1}}}
            )

    def test_canary_defaults(self) -> None:
        """Verify families with parameters get their defaults filled in."""
        config = miaudit_config.parse_config({'canaries': {'family': 'ood'}})
        self.assertEqual({'shift': 10.0}, config.canaries.resolved_params())

    def test_load_errors(self) -> None:
        """Verify unreadable files and invalid JSON are config errors."""
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / 'bad.json'
            path.write_text('{', encoding='utf-8')
            with self.assertRaises(common.ConfigError):
                miaudit_config.load_config(path)
            with self.assertRaises(common.ConfigError):
                miaudit_config.load_config(pathlib.Path(tmp) / 'missing.json')


class TestConfigHash(unittest.TestCase):
    def test_hash_ignores_output_and_threads(self) -> None:
        """Verify the hash and echo exclude the output location and thread count."""
        config = miaudit_config.parse_config(example_doc())
        moved = dataclasses.replace(config, output_dir='elsewhere', threads=4)
        self.assertEqual(config.config_hash, moved.config_hash)
        self.assertEqual(config.to_dict(), moved.to_dict())
        self.assertNotIn('threads', config.to_dict())

    def test_hash_tracks_content(self) -> None:
        """Verify semantic changes change both hashes and the fleet key ignores the grid."""
        doc = example_doc()
        config = miaudit_config.parse_config(doc)
        reseeded = miaudit_config.parse_config({**doc, 'seed': 1})
        regridded = miaudit_config.parse_config({**doc, 'fpr_targets': [0.05]})
        self.assertNotEqual(config.config_hash, reseeded.config_hash)
        self.assertNotEqual(config.fleet_key(), reseeded.fleet_key())
        self.assertNotEqual(config.config_hash, regridded.config_hash)
        self.assertEqual(config.fleet_key(), regridded.fleet_key())
