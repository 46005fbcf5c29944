import logging
from pathlib import Path

from django.conf import settings

from rl_caching.metrics import KpiReport, Scenario, aggregate_reports, scenario_table
from rl_caching.policies import PolicyKind
from rl_caching.report_service import write_report
from rl_caching.tasks import evaluate_policy_task, train_agent_task

from ._base import ExperimentCommand

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = ('Reproduce the four storage / effective-contents scenarios: calibrate, train and '
            'evaluate the agent plus every baseline per seed; writes table1.csv and table1.md.')

    def run(self, config, options, run):
        out_dir = Path(config.out)
        scenarios = Scenario.defaults()
        baselines = settings.EDGE_CACHE['BASELINES']
        run.mark_processing(len(scenarios) * len(config.seeds) * (2 + len(baselines)))

        def run_scenario(scenario):
            scenario_config = config.with_values(
                C=scenario.capacity(config.M),
                effective_target=scenario.effective_target,
                zipf_s=None,
                shift_schedule='',
            )
            logger.info(
                f"{scenario.label}: C={scenario_config.C}, calibrated s={scenario_config.exponent:.4f} "
                f"(reference exponent {settings.EDGE_CACHE['REFERENCE_ZIPF_S']})"
            )
            scenario_dir = out_dir / f"storage{scenario.storage_fraction:.2f}_effective{scenario.effective_target:.2f}"
            mapping = scenario_config.to_mapping()

            self.gather([
                train_agent_task.delay(mapping, seed, str(scenario_dir), run_pk=run.pk, run_id=self.run_id)
                for seed in config.seeds
            ])
            policies = [PolicyKind.RL_AGENT.value, *baselines]
            results = [
                evaluate_policy_task.delay(mapping, seed, policy, checkpoint=str(scenario_dir),
                                           run_pk=run.pk, run_id=self.run_id)
                for policy in policies
                for seed in config.seeds
            ]
            return [KpiReport.from_dict(data) for data in self.gather(results)]

        table = scenario_table(scenarios, run_scenario)
        write_report(table, out_dir / 'table1.csv', 'csv')
        write_report(table, out_dir / 'table1.md', 'markdown',
                     title=f"KPIs for different scenarios (M={config.M}, L={config.L})")
        self.record_kpis(run, table)

        tolerance = settings.EDGE_CACHE['TABLE1_TOLERANCE']
        summary = []
        for row in aggregate_reports(table):
            if row.policy != PolicyKind.RL_AGENT.value:
                continue
            line = (f"storage {row.storage_pct:.0f}% / effective {row.effective_pct:.1f}%: "
                    f"RL hit ratio {row.hit_ratio_mean:.3f} ± {row.hit_ratio_std:.3f}")
            within = None
            if row.reference_hit_ratio is not None:
                within = abs(row.hit_ratio_mean - row.reference_hit_ratio) <= tolerance
                line += f" vs reference {row.reference_hit_ratio:.2f} ({'ok' if within else f'outside ±{tolerance}'})"
            summary.append({'storage_pct': row.storage_pct, 'hit_ratio': row.hit_ratio_mean,
                            'reference': row.reference_hit_ratio, 'within_tolerance': within})
            self.stdout.write(line)
        return {'rows': len(table), 'rl': summary}
