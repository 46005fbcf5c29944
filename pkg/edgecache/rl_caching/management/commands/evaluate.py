from pathlib import Path

from rl_caching.exceptions import ConfigError
from rl_caching.metrics import KpiReport, aggregate_reports
from rl_caching.policies import PolicyKind
from rl_caching.report_service import write_report
from rl_caching.tasks import evaluate_policy_task

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = ('Evaluate a baseline policy, or a trained agent (--policy rl_agent --checkpoint ...), '
            'on every seed and write report_<policy>.csv and .md.')

    def run(self, config, options, run):
        policy = config.policy
        checkpoint = options.get('checkpoint')
        if policy is PolicyKind.RL_AGENT and not checkpoint:
            raise ConfigError("rl_agent needs --checkpoint", field='checkpoint')

        out_dir = Path(config.out)
        results = [
            evaluate_policy_task.delay(
                config.to_mapping(), seed, policy.value, checkpoint=checkpoint,
                run_log_dir=str(out_dir), run_pk=run.pk, run_id=self.run_id,
            )
            for seed in config.seeds
        ]
        reports = [KpiReport.from_dict(data) for data in self.gather(results)]

        write_report(reports, out_dir / f"report_{policy.value}.csv", 'csv')
        write_report(reports, out_dir / f"report_{policy.value}.md", 'markdown',
                     title=f"{policy.value} on M={config.M}, C={config.C}, L={config.L}")
        self.record_kpis(run, reports)

        for row in aggregate_reports(reports):
            self.stdout.write(
                f"{row.policy}: hit ratio {row.hit_ratio_mean:.4f} ± {row.hit_ratio_std:.4f} "
                f"over {row.n_seeds} seeds, latency {row.latency_mean_ms:.2f} ms"
            )
        return {'reports': [report.to_dict() for report in reports]}
