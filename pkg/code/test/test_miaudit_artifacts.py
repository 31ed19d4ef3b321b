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
"""Unit test for miaudit_artifacts."""

from __future__ import annotations

import json
import pathlib
import tempfile
import unittest
from collections.abc import Sequence
from typing import Any

import common
import miaudit_artifacts as artifacts
import numpy as np
from miaudit_attacks import RecordBatch
from miaudit_core import MembershipMatrix, ScoreTensor
from miaudit_eval import ReportContext, RocCurve, population_report
from miaudit_fleet import FleetOutputs

MEMBERSHIP = MembershipMatrix(np.array([[1, 0, 1], [0, 1, 0]], dtype=bool))


def score_tensor() -> ScoreTensor:
    values = np.arange(12, dtype=np.float64).reshape(2, 3, 2) / 7
    return ScoreTensor(values, ('logit/0', 'logit/1'))


def report_doc(
    scores: np.ndarray, members: np.ndarray, targets: Sequence[float], defense_id: str
) -> dict[str, Any]:
    records = RecordBatch(np.zeros(scores.size), np.arange(scores.size), scores, members)
    report = population_report(records, targets, ReportContext(defense_id=defense_id))
    return {'reports': [report.to_dict()], 'schema_version': common.SCHEMA_VERSION}


def separable_doc(targets: Sequence[float], defense_id: str = 'undefended') -> dict[str, Any]:
    members = np.arange(400) % 2 == 0
    scores = np.where(members, 1000.0 + np.arange(400), -np.arange(400, dtype=np.float64))
    return report_doc(scores, members, targets, defense_id)


def blind_doc(targets: Sequence[float], defense_id: str = 'dpsgd') -> dict[str, Any]:
    members = np.arange(400) % 2 == 0
    return report_doc(np.zeros(400), members, targets, defense_id)


class TestMiat(unittest.TestCase):
    def test_decode_encoded(self) -> None:
        """Verify a decoded block keeps shape and values."""
        scores = score_tensor()
        data = artifacts.encode_miat(scores)
        self.assertEqual(artifacts.MIAT_HEADER.size + 12 * 8, len(data))
        np.testing.assert_array_equal(scores.values, artifacts.decode_miat(data))

    def test_corrupt_blocks(self) -> None:
        """Verify bad magic, unknown version and truncation are rejected."""
        data = artifacts.encode_miat(score_tensor())
        size = artifacts.MIAT_HEADER.size
        bad_version = artifacts.MIAT_HEADER.pack(common.MIAT_MAGIC, 99, 2, 3, 2) + data[size:]
        for corrupt in (b'XXXX' + data[4:], bad_version, data[:-8], data[:5]):
            with self.assertRaises(common.ArtifactError):
                artifacts.decode_miat(corrupt)


class TestDumps(unittest.TestCase):
    def test_dump_json_is_canonical(self) -> None:
        """Verify key order does not change the bytes."""
        self.assertEqual(
            artifacts.dump_json({'b': 1, 'a': 2}), artifacts.dump_json({'a': 2, 'b': 1})
        )
        self.assertTrue(artifacts.dump_json({}).endswith('\n'))

    def test_roc_csv(self) -> None:
        """Verify the ROC dump starts with the header and the (inf, 0, 0) point."""
        curve = RocCurve.from_points([(np.inf, 0.0, 0.0), (0.5, 1.0, 0.5)], 1, 2)
        self.assertEqual(
            ['threshold,tpr,fpr', 'inf,0.0,0.0', '0.5,1.0,0.5'],
            artifacts.roc_csv(curve).splitlines(),
        )


class TestArtifactWriter(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out_dir = pathlib.Path(self.tmp.name) / 'run'
        self.writer = artifacts.ArtifactWriter(self.out_dir, 'abc123')

    def test_config_is_stamped(self) -> None:
        """Verify written documents carry the hash and versions."""
        path = self.writer.write_config({'seed': 4})
        doc = json.loads(path.read_text(encoding='utf-8'))
        self.assertEqual('abc123', doc['config_hash'])
        self.assertEqual(common.ENGINE_VERSION, doc['engine_version'])
        self.assertEqual(common.SCHEMA_VERSION, doc['schema_version'])
        self.assertEqual(4, doc['seed'])
        self.assertEqual([artifacts.CONFIG_FILE], [p.name for p in self.out_dir.iterdir()])

    def test_read_scores(self) -> None:
        """Verify scores and sidecar read back into typed objects."""
        self.writer.write_scores(score_tensor(), MEMBERSHIP, 'logit/single', [0, 2])
        run = artifacts.read_scores(self.out_dir)
        np.testing.assert_array_equal(score_tensor().values, run.scores.values)
        self.assertEqual(('logit/0', 'logit/1'), run.scores.variant_names)
        np.testing.assert_array_equal(MEMBERSHIP.bits, run.membership.bits)
        self.assertEqual('logit/single', run.attack_variant)
        np.testing.assert_array_equal([0, 2], run.eval_indices)

    def test_write_scores_checks_shape(self) -> None:
        """Verify scores that do not match the membership are refused."""
        other = MembershipMatrix(np.array([[1, 0], [0, 1]], dtype=bool))
        with self.assertRaises(common.ValidationError):
            self.writer.write_scores(score_tensor(), other, 'logit/single', [0])

    def test_read_scores_missing(self) -> None:
        """Verify a directory without scores is an artifact error."""
        with self.assertRaises(common.ArtifactError):
            artifacts.read_scores(self.out_dir)

    def test_read_scores_detects_altered_block(self) -> None:
        """Verify a score block that no longer matches its sidecar digest is refused."""
        self.writer.write_scores(score_tensor(), MEMBERSHIP, 'logit/single', [0])
        path = self.out_dir / artifacts.SCORES_FILE
        data = bytearray(path.read_bytes())
        data[-1] ^= 0xFF
        path.write_bytes(bytes(data))
        with self.assertRaisesRegex(common.ArtifactError, 'digest'):
            artifacts.read_scores(self.out_dir)

    def test_manifest(self) -> None:
        """Verify the manifest stamps the digest of every file and catches later edits."""
        self.writer.write_scores(score_tensor(), MEMBERSHIP, 'logit/single', [0])
        self.writer.write_roc(RocCurve.from_points([(np.inf, 0.0, 0.0), (0.5, 1.0, 1.0)], 1, 1))
        path = self.writer.write_manifest()
        doc = json.loads(path.read_text(encoding='utf-8'))
        self.assertEqual('abc123', doc['config_hash'])
        self.assertEqual(
            [artifacts.ROC_FILE, artifacts.SCORES_FILE, artifacts.SIDECAR_FILE],
            list(doc['files']),
        )
        for name, digest in doc['files'].items():
            self.assertEqual(artifacts.sha256_hex((self.out_dir / name).read_bytes()), digest)
        self.assertEqual(doc['files'], artifacts.verify_manifest(self.out_dir))
        (self.out_dir / artifacts.ROC_FILE).write_text('threshold,tpr,fpr\n', encoding='utf-8')
        with self.assertRaisesRegex(common.ArtifactError, 'manifest digest'):
            artifacts.verify_manifest(self.out_dir)

    def test_read_reports_schema(self) -> None:
        """Verify report files from another schema version are rejected."""
        path = self.writer.write_reports([])
        self.assertEqual([], artifacts.read_reports(path)['reports'])
        stale = self.out_dir / 'stale.json'
        stale.write_text(json.dumps({'schema_version': 0, 'reports': []}), encoding='utf-8')
        with self.assertRaisesRegex(common.ArtifactError, 'schema version'):
            artifacts.read_reports(stale)


class TestNpzFleetStore(unittest.TestCase):
    def setUp(self) -> None:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.store = artifacts.NpzFleetStore(pathlib.Path(tmp.name) / 'cache')
        self.outputs = FleetOutputs(
            MEMBERSHIP, {'logit': score_tensor()}, np.array([0.5, 0.75]), {'kind': 'none'}
        )

    def test_save_then_load(self) -> None:
        """Verify a saved fleet loads back under the same membership."""
        self.assertIsNone(self.store.load('k1', MEMBERSHIP))
        self.store.save('k1', self.outputs)
        loaded = self.store.load('k1', MEMBERSHIP)
        self.assertIsNotNone(loaded)
        np.testing.assert_array_equal(score_tensor().values, loaded.statistics['logit'].values)
        self.assertEqual(('logit/0', 'logit/1'), loaded.statistics['logit'].variant_names)
        np.testing.assert_array_equal([0.5, 0.75], loaded.test_accuracy)
        self.assertEqual({'kind': 'none'}, loaded.mechanism)

    def test_membership_mismatch(self) -> None:
        """Verify a cached fleet with other membership bits is ignored."""
        self.store.save('k1', self.outputs)
        flipped = MembershipMatrix(~MEMBERSHIP.bits)
        with self.assertLogs('miaudit_artifacts', level='WARNING'):
            self.assertIsNone(self.store.load('k1', flipped))


class TestCompareReports(unittest.TestCase):
    def test_orders_by_leakage(self) -> None:
        """Verify the leakier run comes first whatever the input order."""
        grid, rows = artifacts.compare_reports(
            [blind_doc((0.01, 0.1)), separable_doc((0.01, 0.1))]
        )
        self.assertEqual([0.01, 0.1], grid)
        self.assertEqual(['undefended', 'dpsgd'], [row['defense_id'] for row in rows])
        self.assertEqual(1.0, rows[0]['tpr@0.01'])
        self.assertEqual(0.0, rows[1]['tpr@0.01'])

    def test_under_resolved_cells(self) -> None:
        """Verify unresolved and missing targets read as under-resolved."""
        grid, rows = artifacts.compare_reports(
            [separable_doc((0.001, 0.1)), blind_doc((0.1,))]
        )
        self.assertEqual([0.001, 0.1], grid)
        self.assertEqual(artifacts.UNDER_RESOLVED, rows[0]['tpr@0.001'])
        self.assertEqual(artifacts.UNDER_RESOLVED, rows[1]['tpr@0.001'])
        self.assertEqual(1.0, rows[0]['tpr@0.1'])

    def test_invalid_inputs(self) -> None:
        """Verify single runs, disjoint grids and mixed schemas are rejected."""
        with self.assertRaises(common.ArtifactError):
            artifacts.compare_reports([separable_doc((0.1,))])
        with self.assertRaisesRegex(common.ArtifactError, 'FPR grids'):
            artifacts.compare_reports([separable_doc((0.1,)), blind_doc((0.01,))])
        stale = {**blind_doc((0.1,)), 'schema_version': 0}
        with self.assertRaises(common.ArtifactError):
            artifacts.compare_reports([separable_doc((0.1,)), stale])

    def test_comparison_csv(self) -> None:
        """Verify the CSV has one header and one line per row."""
        _, rows = artifacts.compare_reports([separable_doc((0.1,)), blind_doc((0.1,))])
        lines = artifacts.comparison_csv(rows).splitlines()
        self.assertEqual(3, len(lines))
        self.assertTrue(lines[0].startswith('defense_id,canary_family,attack_id'))
        self.assertTrue(lines[0].endswith('tpr@0.1'))
