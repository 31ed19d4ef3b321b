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

"""Artifact persistence: MIAT score files, JSON reports, ROC CSV dumps and the fleet cache."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import pathlib
import struct
import threading
from collections.abc import Mapping, Sequence
from typing import Any, Final

import common
import numpy as np
from miaudit_core import MembershipMatrix, ScoreTensor
from miaudit_eval import AuditReport, RocCurve
from miaudit_fleet import FleetOutputs

MIAT_HEADER: Final = struct.Struct('<4sIIII')
CONFIG_FILE: Final = 'config.json'
SCORES_FILE: Final = 'scores.miat'
SIDECAR_FILE: Final = 'scores.json'
REPORTS_FILE: Final = 'reports.json'
ROC_FILE: Final = 'roc.csv'
MANIFEST_FILE: Final = 'manifest.json'
COMPARISON_CSV: Final = 'comparison.csv'
COMPARISON_JSON: Final = 'comparison.json'
UNDER_RESOLVED: Final = 'under-resolved'

logger = logging.getLogger(__name__)


def encode_miat(scores: ScoreTensor) -> bytes:
    """Serialize a score tensor as the MIAT header followed by row-major little-endian f8."""
    num_models, num_audit, num_variants = scores.shape
    header = MIAT_HEADER.pack(
        common.MIAT_MAGIC, common.MIAT_VERSION, num_models, num_audit, num_variants
    )
    return header + np.ascontiguousarray(scores.values, dtype='<f8').tobytes()


def decode_miat(data: bytes) -> np.ndarray:
    """Parse a MIAT block into an (S, C, A) array.

    Raises:
        ArtifactError: bad magic, unsupported version or truncated payload.
    """
    if len(data) < MIAT_HEADER.size:
        raise common.ArtifactError('MIAT block is shorter than its header')
    magic, version, num_models, num_audit, num_variants = MIAT_HEADER.unpack_from(data)
    if magic != common.MIAT_MAGIC:
        raise common.ArtifactError(f'bad MIAT magic {magic!r}')
    if version != common.MIAT_VERSION:
        raise common.ArtifactError(f'unsupported MIAT version {version}')
    expected = num_models * num_audit * num_variants * 8
    payload = data[MIAT_HEADER.size :]
    if len(payload) != expected:
        raise common.ArtifactError(f'MIAT payload has {len(payload)} bytes, expected {expected}')
    values = np.frombuffer(payload, dtype='<f8').astype(np.float64)
    return values.reshape(num_models, num_audit, num_variants)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dump_json(obj: Any) -> str:
    """Pretty, key-sorted JSON with a trailing newline; identical input gives identical bytes."""
    return json.dumps(obj, sort_keys=True, indent=2) + '\n'


def roc_csv(curve: RocCurve) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['threshold', 'tpr', 'fpr'])
    for threshold, tpr, fpr in curve.points:
        writer.writerow([repr(threshold), repr(tpr), repr(fpr)])
    return buffer.getvalue()


class ArtifactWriter:
    """Single writer for one run directory; every file goes through one lock."""

    def __init__(self, out_dir: str | pathlib.Path, config_hash: str) -> None:
        self.out_dir = pathlib.Path(out_dir)
        self.config_hash = config_hash
        self._lock = threading.Lock()
        self._digests: dict[str, str] = {}

    def _write(self, name: str, data: bytes) -> pathlib.Path:
        path = self.out_dir / name
        with self._lock:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + '.tmp')
            tmp.write_bytes(data)
            os.replace(tmp, path)
            if name != MANIFEST_FILE:
                self._digests[name] = sha256_hex(data)
        logger.info('Wrote %s.', path)
        return path

    def _stamp(self, doc: Mapping[str, Any]) -> dict[str, Any]:
        return {
            **doc,
            'config_hash': self.config_hash,
            'engine_version': common.ENGINE_VERSION,
            'schema_version': common.SCHEMA_VERSION,
        }

    def write_config(self, config_doc: Mapping[str, Any]) -> pathlib.Path:
        return self._write(CONFIG_FILE, dump_json(self._stamp(config_doc)).encode('utf-8'))

    def write_scores(
        self,
        scores: ScoreTensor,
        membership: MembershipMatrix,
        attack_variant: str,
        eval_indices: Sequence[int] | np.ndarray,
    ) -> tuple[pathlib.Path, pathlib.Path]:
        """Write the MIAT block and its sidecar: membership, variant names and the block digest."""
        scores.check_matches(membership)
        block = encode_miat(scores)
        sidecar = self._stamp(
            {
                'scores_sha256': sha256_hex(block),
                'variant_names': list(scores.variant_names),
                'membership': membership.bits.astype(int).tolist(),
                'attack_variant': attack_variant,
                'eval_indices': [int(j) for j in eval_indices],
            }
        )
        return (
            self._write(SCORES_FILE, block),
            self._write(SIDECAR_FILE, dump_json(sidecar).encode('utf-8')),
        )

    def write_reports(
        self, reports: Sequence[AuditReport], name: str = REPORTS_FILE
    ) -> pathlib.Path:
        doc = self._stamp({'reports': [report.to_dict() for report in reports]})
        return self._write(name, dump_json(doc).encode('utf-8'))

    def write_roc(self, curve: RocCurve, name: str = ROC_FILE) -> pathlib.Path:
        return self._write(name, roc_csv(curve).encode('utf-8'))

    def write_text(self, name: str, text: str) -> pathlib.Path:
        return self._write(name, text.encode('utf-8'))

    def write_manifest(self) -> pathlib.Path:
        """Write the stamped SHA-256 digest of every file this writer produced so far."""
        with self._lock:
            files = dict(sorted(self._digests.items()))
        doc = self._stamp({'files': files})
        return self._write(MANIFEST_FILE, dump_json(doc).encode('utf-8'))


@dataclasses.dataclass(frozen=True)
class ScoreRun:
    scores: ScoreTensor
    membership: MembershipMatrix
    sidecar: Mapping[str, Any]

    @property
    def attack_variant(self) -> str:
        return str(self.sidecar['attack_variant'])

    @property
    def eval_indices(self) -> np.ndarray:
        return np.asarray(self.sidecar['eval_indices'], dtype=np.int64)


def _read_json(path: pathlib.Path) -> dict[str, Any]:
    try:
        doc = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise common.ArtifactError(f'cannot read {path}: {e}') from e
    if doc.get('schema_version') != common.SCHEMA_VERSION:
        raise common.ArtifactError(
            f'{path} has schema version {doc.get("schema_version")}, '
            f'expected {common.SCHEMA_VERSION}'
        )
    return doc


def read_scores(run_dir: str | pathlib.Path) -> ScoreRun:
    """Load a run's MIAT scores and sidecar back into typed objects."""
    run_dir = pathlib.Path(run_dir)
    sidecar = _read_json(run_dir / SIDECAR_FILE)
    try:
        data = (run_dir / SCORES_FILE).read_bytes()
    except OSError as e:
        raise common.ArtifactError(f'cannot read {run_dir / SCORES_FILE}: {e}') from e
    if sha256_hex(data) != sidecar.get('scores_sha256'):
        raise common.ArtifactError(f'{run_dir / SCORES_FILE} does not match its sidecar digest')
    try:
        membership = MembershipMatrix(np.asarray(sidecar['membership'], dtype=bool))
        scores = ScoreTensor(decode_miat(data), tuple(sidecar['variant_names']))
        scores.check_matches(membership)
    except (KeyError, common.ValidationError) as e:
        raise common.ArtifactError(f'{run_dir}: inconsistent score artifacts: {e}') from e
    return ScoreRun(scores, membership, sidecar)


def read_reports(path: str | pathlib.Path) -> dict[str, Any]:
    return _read_json(pathlib.Path(path))


def verify_manifest(run_dir: str | pathlib.Path) -> dict[str, str]:
    """Check every file listed in a run's manifest against its recorded digest.

    Raises:
        ArtifactError: the manifest is missing, or a listed file is missing or altered.
    """
    run_dir = pathlib.Path(run_dir)
    files = _read_json(run_dir / MANIFEST_FILE).get('files', {})
    for name, digest in files.items():
        try:
            data = (run_dir / name).read_bytes()
        except OSError as e:
            raise common.ArtifactError(f'cannot read {run_dir / name}: {e}') from e
        if sha256_hex(data) != digest:
            raise common.ArtifactError(f'{run_dir / name} does not match its manifest digest')
    return dict(files)


class NpzFleetStore:
    """Fleet cache of per-model query outputs, one `<key>.npz` file per fleet."""

    def __init__(self, cache_dir: str | pathlib.Path) -> None:
        self.cache_dir = pathlib.Path(cache_dir)

    def path_for(self, key: str) -> pathlib.Path:
        return self.cache_dir / f'{key}.npz'

    def load(self, key: str, membership: MembershipMatrix) -> FleetOutputs | None:
        path = self.path_for(key)
        if not path.exists():
            logger.info('Fleet cache miss for %s.', key)
            return None
        with np.load(path, allow_pickle=False) as archive:
            cached_bits = archive['membership']
            if not np.array_equal(cached_bits, membership.bits):
                logger.warning('Cached fleet %s has a different membership; ignoring it.', key)
                return None
            meta = json.loads(str(archive['meta']))
            statistics = {
                name: ScoreTensor(archive[f'stat__{name}'], tuple(variant_names))
                for name, variant_names in meta['variant_names'].items()
            }
            accuracy = np.array(archive['test_accuracy'])
        logger.info('Fleet cache hit for %s.', key)
        return FleetOutputs(membership, statistics, accuracy, meta['mechanism'])

    def save(self, key: str, outputs: FleetOutputs) -> None:
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        meta = {
            'variant_names': {
                name: list(tensor.variant_names) for name, tensor in outputs.statistics.items()
            },
            'mechanism': dict(outputs.mechanism),
        }
        arrays = {f'stat__{name}': tensor.values for name, tensor in outputs.statistics.items()}
        path = self.path_for(key)
        tmp = path.with_name(path.name + '.tmp')
        with tmp.open('wb') as handle:
            np.savez(
                handle,
                membership=outputs.membership.bits,
                test_accuracy=outputs.test_accuracy,
                meta=np.array(json.dumps(meta, sort_keys=True)),
                **arrays,
            )
        os.replace(tmp, path)
        logger.info('Cached fleet %s at %s.', key, path)


def _cell(target: Mapping[str, Any] | None) -> float | str:
    if target is None or not target['resolved']:
        return UNDER_RESOLVED
    return float(target['tpr'])


def compare_reports(report_docs: Sequence[Mapping[str, Any]]) -> tuple[list[float], list[dict]]:
    """Build comparison rows, one per (run, protocol), sorted by decreasing leakage.

    Runs are ordered by their sample-level TPR at the smallest FPR target that every run
    resolves (the smallest shared target when none is resolved everywhere); rows of one run
    keep their protocol order.

    Raises:
        ArtifactError: fewer than two runs, mismatched schema versions, or FPR grids without
            a shared target.
    """
    if len(report_docs) < 2:  # noqa: PLR2004
        raise common.ArtifactError('compare needs at least two report files')
    versions = {doc.get('schema_version') for doc in report_docs}
    if versions != {common.SCHEMA_VERSION}:
        raise common.ArtifactError(f'cannot compare schema versions {sorted(map(str, versions))}')
    grids = [
        tuple(report['fpr_targets']) for doc in report_docs for report in doc['reports']
    ]
    shared = set(grids[0]).intersection(*grids[1:])
    if not shared:
        raise common.ArtifactError(f'incompatible FPR grids: {sorted(set(grids))}')
    grid = sorted(set().union(*grids))

    def sample_level(doc: Mapping[str, Any]) -> Mapping[str, Any]:
        reports = doc['reports']
        return next((r for r in reports if r['protocol'] == 'sample-level'), reports[0])

    resolved_everywhere = [
        alpha
        for alpha in sorted(shared)
        if all(
            alpha in sample_level(doc)['fpr_targets']
            and alpha not in sample_level(doc)['under_resolved']
            for doc in report_docs
        )
    ]
    key_alpha = resolved_everywhere[0] if resolved_everywhere else min(shared)

    def leakage(doc: Mapping[str, Any]) -> float:
        report = sample_level(doc)
        return next(t['tpr'] for t in report['targets'] if t['alpha'] == key_alpha)

    rows = []
    for doc in sorted(report_docs, key=leakage, reverse=True):
        for report in doc['reports']:
            by_alpha = {target['alpha']: target for target in report['targets']}
            row: dict[str, Any] = {
                'defense_id': report['defense_id'],
                'canary_family': report['canary_family'],
                'attack_id': report['attack_id'],
                'attack_variant': report['attack_variant'],
                'protocol': report['protocol'],
                'mode': report['mode'] or '',
                'test_accuracy': report['test_accuracy'],
                'config_hash': report['config_hash'],
            }
            for alpha in grid:
                row[f'tpr@{alpha}'] = _cell(by_alpha.get(alpha))
            rows.append(row)
    return grid, rows


def comparison_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0]), lineterminator='\n')
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()
