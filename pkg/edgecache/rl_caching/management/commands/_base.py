"""
Shared plumbing for the experiment commands: common flags, config
loading, run tracking (with a run.json summary in the output directory),
seed fan-out and exit codes.

Exit codes: 0 success, 2 config error, 3 runtime, training or I/O error.
"""
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from config.run_context import make_run_id, set_run_id
from rl_caching.exceptions import ConfigError, EdgeCacheError
from rl_caching.experiment import load_experiment, write_resolved_config
from rl_caching.models import ExperimentRun, KpiRecord
from rl_caching.report_service import write_run_summary

logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3
RUN_SUMMARY_NAME = 'run.json'


def parse_seeds(value):
    """--seed 0,1,2 -> '0,1,2' after checking every entry is an integer."""
    if value is None:
        return None
    parts = [part.strip() for part in str(value).split(',') if part.strip()]
    if not parts or not all(part.lstrip('-').isdigit() for part in parts):
        raise ConfigError(f"--seed expects comma-separated integers, got {value!r}", field='seeds')
    return ','.join(parts)


class ExperimentCommand(BaseCommand):
    """
    Base class for experiment commands. Subclasses implement run(config, options, run)
    and return a JSON-safe result stored on the ExperimentRun row.
    """
    requires_system_checks = []
    command_name = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Experiment file (default: experiments/default.env)')
        parser.add_argument('--seed', help='Comma-separated seeds, overrides `seeds`')
        parser.add_argument('--out', help='Output directory, overrides `out`')
        parser.add_argument('--policy', help='Policy name, overrides `policy`')
        parser.add_argument('--checkpoint', help='Agent checkpoint file or directory of per-seed checkpoints')
        parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                            help='Override one config key (repeatable)')

    def load_config(self, options):
        return load_experiment(
            options.get('config'),
            options.get('overrides') or (),
            seeds=parse_seeds(options.get('seed')),
            out=options.get('out'),
            policy=options.get('policy'),
        )

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
        except ConfigError as e:
            raise CommandError(f"Config error: {e}", returncode=EXIT_CONFIG_ERROR) from e

        name = self.command_name or self.__module__.rsplit('.', 1)[-1]
        run_id = make_run_id(name, config.config_hash())
        set_run_id(run_id)
        out_dir = Path(config.out)
        out_dir.mkdir(parents=True, exist_ok=True)

        run = ExperimentRun.objects.create(
            run_id=run_id,
            command=name,
            status='processing',
            config=config.to_mapping(),
            config_hash=config.config_hash(),
            output_dir=str(out_dir),
            total_items=len(config.seeds),
        )
        self.run_id = run_id
        try:
            write_resolved_config(config, out_dir)
            result = self.run(config, options, run)
        except ConfigError as e:
            run.mark_failed(e)
            raise CommandError(f"Config error: {e}", returncode=EXIT_CONFIG_ERROR) from e
        except (EdgeCacheError, OSError) as e:
            run.mark_failed(e)
            logger.error(f"{name} failed: {e}")
            raise CommandError(f"{type(e).__name__}: {e}", returncode=EXIT_RUNTIME_ERROR) from e
        finally:
            set_run_id(None)

        run.mark_completed(result)
        run.refresh_from_db()
        write_run_summary(run, out_dir / RUN_SUMMARY_NAME)
        logger.info(f"{name} finished; outputs in {out_dir}")

    def run(self, config, options, run):
        raise NotImplementedError

    def gather(self, results):
        """Collect fanned-out Celery results in submission order."""
        return [result.get() for result in results]

    def record_kpis(self, run, reports):
        KpiRecord.objects.bulk_create([KpiRecord.from_report(run, report) for report in reports])
