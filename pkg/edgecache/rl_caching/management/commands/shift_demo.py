from pathlib import Path

from rl_caching.exceptions import ConfigError
from rl_caching.metrics import ShiftSummary
from rl_caching.report_service import write_shift_summary
from rl_caching.tasks import shift_demo_task, train_agent_task

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = ('Hit ratio over time for the agent and window LFU on identical traces with a '
            'popularity shift; writes shift_series_seed<seed>.csv and shift_summary.csv. '
            'Without --checkpoint, agents are first trained on the unshifted workload.')

    def run(self, config, options, run):
        events = [step for step, _ in config.schedule.events if step < config.trace_steps]
        if not events:
            raise ConfigError("shift_demo needs at least one shift inside the trace", field='shift_schedule')
        if events[0] < 1:
            raise ConfigError("The first shift needs at least one request before it", field='shift_schedule')

        out_dir = Path(config.out)
        checkpoint = options.get('checkpoint')
        if not checkpoint:
            agents_dir = out_dir / 'agents'
            stationary = config.with_values(shift_schedule='').to_mapping()
            self.gather([
                train_agent_task.delay(stationary, seed, str(agents_dir), run_id=self.run_id)
                for seed in config.seeds
            ])
            checkpoint = str(agents_dir)

        outputs = self.gather([
            shift_demo_task.delay(config.to_mapping(), seed, checkpoint, str(out_dir),
                                  run_pk=run.pk, run_id=self.run_id)
            for seed in config.seeds
        ])
        summaries = [ShiftSummary(**s) for output in outputs for s in output['summaries']]
        write_shift_summary(summaries, out_dir / 'shift_summary.csv')

        for s in summaries:
            recovery = 'never' if s.recovery_steps is None else f"{s.recovery_steps} steps"
            self.stdout.write(
                f"seed {s.seed} {s.policy}: pre {s.pre_shift_hit_ratio:.4f}, "
                f"post {s.post_shift_hit_ratio:.4f}, recovery {recovery}"
            )
        return {'summaries': [output['summaries'] for output in outputs]}
