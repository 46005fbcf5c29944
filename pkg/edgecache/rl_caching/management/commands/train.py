from pathlib import Path

from rl_caching.tasks import train_agent_task

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = ('Train one SAC caching agent per seed; writes agent_seed<seed>.npz and '
            'curve_seed<seed>.csv. With --checkpoint, fine-tunes an existing agent.')

    def run(self, config, options, run):
        out_dir = Path(config.out)
        results = [
            train_agent_task.delay(
                config.to_mapping(), seed, str(out_dir),
                checkpoint=options.get('checkpoint'), run_pk=run.pk, run_id=self.run_id,
            )
            for seed in config.seeds
        ]
        outputs = self.gather(results)

        for output in outputs:
            self.stdout.write(
                f"seed {output['seed']}: final greedy hit ratio {output['final_hit_ratio']:.4f} "
                f"({output['updates']} updates, alpha {output['alpha']:.4f}) -> {output['checkpoint']}"
            )
        return {'seeds': outputs}
