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

"""Command line entry point: run, compare, roc-dump and nameshame."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from collections.abc import Callable, Sequence
from concurrent import futures
from typing import Any

import common
import miaudit_artifacts
import miaudit_attacks
import miaudit_eval
from miaudit_attacks import RecordBatch
from miaudit_config import ExperimentConfig, load_config
from miaudit_data import CanaryFamily, gen_synthetic, make_canaries
from utils import seeds

LOG_FORMAT = '%(levelname)s %(name)s: %(message)s'

logger = logging.getLogger(__name__)


def resolve_cache_dir(flag: str | None) -> str | None:
    """Return the cache directory: the flag, then the environment variable, else no cache."""
    return flag or os.environ.get(common.CACHE_ENV_VAR) or None


def _guarded(handler: Callable[..., dict[str, Any]]) -> Callable[..., dict[str, Any]]:
    """Turn engine errors raised by a handler into status dictionaries."""

    def wrapper(*args: Any, **kwargs: Any) -> dict[str, Any]:
        try:
            return handler(*args, **kwargs)
        except common.ArtifactError as e:
            msg = f'Incompatible artifacts: {e}'
            logger.error(msg)
            return common.status(common.STATUS_CONFLICT, msg)
        except common.Error as e:
            msg = f'Invalid input: {e}'
            logger.error(msg)
            return common.status(common.STATUS_INVALID, msg)
        except Exception as e:
            logger.exception('Unexpected failure.')
            return common.status(common.STATUS_FAILED, f'Unexpected failure: {e}')

    wrapper.__name__ = handler.__name__
    wrapper.__doc__ = handler.__doc__
    return wrapper


def _report_context(
    config: ExperimentConfig, result: miaudit_eval.LeaveOneOutResult
) -> miaudit_eval.ReportContext:
    return miaudit_eval.ReportContext(
        canary_family=config.canaries.family,
        defense_id=config.defense.id,
        attack_id=config.attack.id,
        attack_variant=result.attack_variant,
        num_models=config.num_models,
        num_audit=result.membership.num_audit,
        seed=config.seed,
        membership_mode=config.membership_mode,
        mechanism=result.fleet.mechanism,
        test_accuracy=result.test_accuracy,
        config_hash=config.config_hash,
    )


@_guarded
def run_experiment(
    config_path: str,
    out: str | None = None,
    threads: int | None = None,
    cache_dir: str | None = None,
) -> dict[str, Any]:
    """Train the fleet, attack it and write config, scores, reports and ROC points."""
    logger.info('Run experiment...')
    config = load_config(config_path)
    config = dataclasses.replace(
        config, output_dir=out or config.output_dir, threads=threads or config.threads
    )
    dataset = gen_synthetic(config.dataset)
    canaries = make_canaries(
        dataset,
        config.canaries.family,
        seeds.derive_seed(config.seed, 'canaries'),
        config.canaries.resolved_params(),
    )
    logger.info(
        'Built %s audit canaries (%s evaluated).', len(canaries.examples), canaries.eval_mask.sum()
    )
    cache = resolve_cache_dir(cache_dir)
    result = miaudit_eval.run_leave_one_out(
        dataset,
        canaries,
        config.defense.id,
        config.defense.train_config(config.seed),
        config.attack,
        config.num_models,
        config.seed,
        kind=config.defense.kind,
        membership_mode=config.membership_mode,
        fpr_targets=config.fpr_targets,
        threads=config.threads,
        store=miaudit_artifacts.NpzFleetStore(cache) if cache else None,
        cache_key=config.fleet_key(),
    )

    context = _report_context(config, result)
    sample_mode = config.sample_level_mode
    if config.canaries.family == CanaryFamily.NONE and sample_mode == 'pooled-canaries':
        logger.info('No canaries planted; the sample-level report uses per-sample mode.')
        sample_mode = 'per-sample'
    reports = [
        miaudit_eval.population_report(result.records, config.fpr_targets, context),
        miaudit_eval.sample_level_report(
            result.records, sample_mode, config.fpr_targets, context
        ),
    ]

    writer = miaudit_artifacts.ArtifactWriter(config.output_dir, config.config_hash)
    writer.write_config(config.to_dict())
    writer.write_scores(
        result.scores, result.membership, result.attack_variant, result.eval_indices
    )
    writer.write_reports(reports)
    writer.write_roc(miaudit_eval.roc_curve(result.records))
    writer.write_manifest()
    logger.info('Run experiment complete.')
    return common.status(
        common.STATUS_OK,
        f'Wrote artifacts to {config.output_dir}.',
        output_dir=config.output_dir,
        config_hash=config.config_hash,
        under_resolved=sorted({a for r in reports for a in r.under_resolved}),
    )


@_guarded
def compare(report_paths: Sequence[str], out: str) -> dict[str, Any]:
    """Tabulate several runs' reports as CSV and JSON."""
    logger.info('Compare %s report files...', len(report_paths))
    docs = [miaudit_artifacts.read_reports(path) for path in report_paths]
    grid, rows = miaudit_artifacts.compare_reports(docs)
    writer = miaudit_artifacts.ArtifactWriter(
        out, common.config_hash(sorted(doc['config_hash'] for doc in docs))
    )
    writer.write_text(miaudit_artifacts.COMPARISON_CSV, miaudit_artifacts.comparison_csv(rows))
    writer.write_text(
        miaudit_artifacts.COMPARISON_JSON,
        miaudit_artifacts.dump_json(
            {'fpr_targets': grid, 'rows': rows, 'schema_version': common.SCHEMA_VERSION}
        ),
    )
    writer.write_manifest()
    return common.status(common.STATUS_OK, f'Compared {len(rows)} rows.', rows=len(rows))


@_guarded
def roc_dump(run_dir: str, out: str, threads: int = 1) -> dict[str, Any]:
    """Recompute a finished run's attack records from its stored scores and dump the ROC."""
    logger.info('ROC dump for %s...', run_dir)
    miaudit_artifacts.verify_manifest(run_dir)
    run = miaudit_artifacts.read_scores(run_dir)

    def attack_victim(victim_index: int) -> RecordBatch:
        return miaudit_attacks.run_variant(
            run.attack_variant, run.scores, run.membership, victim_index, run.eval_indices
        )

    with futures.ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        batches = list(pool.map(attack_victim, range(run.membership.num_models)))
    curve = miaudit_eval.roc_curve(RecordBatch.concat(batches))
    writer = miaudit_artifacts.ArtifactWriter(out, str(run.sidecar['config_hash']))
    path = writer.write_roc(curve)
    writer.write_manifest()
    return common.status(common.STATUS_OK, f'Wrote {path}.', points=len(curve.points))


@_guarded
def nameshame(size: int, trials: int, target: int, seed: int, out: str) -> dict[str, Any]:
    """Run the name-and-shame simulation and write both reports."""
    logger.info('Name-and-shame simulation with |D|=%s over %s trials...', size, trials)
    population, sample_level = miaudit_eval.name_and_shame_sim(
        size, target, trials, seed, (0.0, *common.DEFAULT_FPR_TARGETS)
    )
    params = {'size': size, 'trials': trials, 'target': target, 'seed': seed}
    writer = miaudit_artifacts.ArtifactWriter(out, common.config_hash(params))
    writer.write_reports([population, sample_level])
    writer.write_manifest()
    return common.status(
        common.STATUS_OK,
        f'Target TPR at 0% FPR: {sample_level.per_sample[target].tpr_at[0]}.',
    )


def build_parser() -> argparse.ArgumentParser:
    common_flags = argparse.ArgumentParser(add_help=False)
    common_flags.add_argument(
        '--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR']
    )
    parser = argparse.ArgumentParser(prog='miaudit', description=__doc__)
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', parents=[common_flags], help='run an experiment')
    run.add_argument('--config', required=True, help='experiment JSON document')
    run.add_argument('--out', help='output directory, overrides output_dir')
    run.add_argument('--threads', type=int, help='worker threads, overrides threads')
    run.add_argument('--cache-dir', help=f'fleet cache directory (else ${common.CACHE_ENV_VAR})')

    cmp = commands.add_parser('compare', parents=[common_flags], help='compare report files')
    cmp.add_argument('reports', nargs='+', help='reports.json files')
    cmp.add_argument('--out', required=True)

    dump = commands.add_parser('roc-dump', parents=[common_flags], help='dump a run ROC curve')
    dump.add_argument('run_dir')
    dump.add_argument('--out', required=True)
    dump.add_argument('--threads', type=int, default=1)

    shame = commands.add_parser(
        'nameshame', parents=[common_flags], help='simulate the name-and-shame mechanism'
    )
    shame.add_argument('--size', type=int, default=1000)
    shame.add_argument('--trials', type=int, default=20000)
    shame.add_argument('--target', type=int, default=0)
    shame.add_argument('--seed', type=int, default=0)
    shame.add_argument('--out', required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, dispatch to a handler and map its status to an exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, stream=sys.stderr)
    if args.command == 'run':
        result = run_experiment(args.config, args.out, args.threads, args.cache_dir)
    elif args.command == 'compare':
        result = compare(args.reports, args.out)
    elif args.command == 'roc-dump':
        result = roc_dump(args.run_dir, args.out, args.threads)
    else:
        result = nameshame(args.size, args.trials, args.target, args.seed, args.out)
    logger.info('%s: %s', result['status'], result['msg'])
    return 0 if result['status'] == common.STATUS_OK else 1


if __name__ == '__main__':
    sys.exit(main())
