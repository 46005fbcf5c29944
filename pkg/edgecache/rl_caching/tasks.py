"""
Celery tasks for seed-level experiment runs
- Training one agent per seed
- Evaluating one policy on one seed's trace
- Shift-demo time series for the agent and window LFU

Tasks take and return JSON-safe dicts; configs travel as their resolved
key=value mapping and agents as checkpoint paths.
"""
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np
from celery import shared_task
from django.db.models import F

from config.run_context import make_run_id, set_run_id

from .cache_sim import EnvRunLog, rollout
from .experiment import ExperimentConfig
from .metrics import evaluate, summarize_shift
from .models import ExperimentRun
from .policies import PolicyKind, build_policy
from .report_service import write_curve, write_shift_series
from .sac_agent import load_agent, save_agent, train

logger = logging.getLogger(__name__)


def checkpoint_path(out_dir, seed) -> Path:
    return Path(out_dir) / f"agent_seed{seed}.npz"


def resolve_checkpoint(checkpoint, seed) -> Path:
    """A checkpoint file, or a directory holding one agent_seed<seed>.npz per seed."""
    path = Path(checkpoint)
    return checkpoint_path(path, seed) if path.is_dir() else path


def _enter(command, config, seed, run_id=None):
    run_id = run_id or make_run_id(command, config.config_hash())
    set_run_id(f"{run_id}-s{seed}")
    return run_id


def _record_progress(run_pk):
    if run_pk is not None:
        ExperimentRun.objects.filter(pk=run_pk).update(processed_items=F('processed_items') + 1)


@shared_task(bind=True)
def train_agent_task(self, config_mapping, seed, out_dir, checkpoint=None, run_pk=None, run_id=None):
    """
    Train (or fine-tune from `checkpoint`) one agent and save it with its curve.

    Returns:
        dict: seed, checkpoint, curve, final_hit_ratio, updates, alpha
    """
    config = ExperimentConfig.from_mapping(config_mapping)
    _enter('train', config, seed, run_id)
    train_config = config.train_config(seed)
    logger.info(f"Training seed {seed}", extra={'task_id': self.request.id})

    agent = None
    if checkpoint:
        agent = load_agent(resolve_checkpoint(checkpoint, seed), capacity=config.C, config=train_config)
        logger.info(f"Fine-tuning from {checkpoint} ({agent.update_count} prior updates)")

    result = train(config.env_factory(), train_config, config.trace_factory(), agent=agent)
    saved = save_agent(result.agent, checkpoint_path(out_dir, seed))
    curve = write_curve(result.curve, Path(out_dir) / f"curve_seed{seed}.csv")
    _record_progress(run_pk)

    return {
        'seed': seed,
        'checkpoint': str(saved),
        'curve': str(curve),
        'final_hit_ratio': result.final_hit_ratio,
        'updates': result.agent.update_count,
        'alpha': result.agent.alpha,
    }


def build_task_policy(config, policy, seed, checkpoint=None):
    kind = PolicyKind.parse(policy)
    agent = None
    if kind is PolicyKind.RL_AGENT:
        agent = load_agent(resolve_checkpoint(checkpoint, seed), capacity=config.C,
                           config=config.train_config(seed))
    return build_policy(kind, capacity=config.C, pmf=config.popularity.pmf, seed=seed, agent=agent)


@shared_task(bind=True)
def evaluate_policy_task(self, config_mapping, seed, policy, checkpoint=None, run_log_dir=None,
                         run_pk=None, run_id=None):
    """
    Evaluate one policy on the seed's trace.

    Returns:
        dict: KpiReport fields
    """
    config = ExperimentConfig.from_mapping(config_mapping)
    _enter('evaluate', config, seed, run_id)
    cache_policy = build_task_policy(config, policy, seed, checkpoint)
    trace = config.evaluation_trace(seed)

    if config.run_log and run_log_dir:
        log_path = Path(run_log_dir) / f"run_log_{cache_policy.kind.value}_seed{seed}.csv"
        with EnvRunLog(log_path) as run_log:
            report = evaluate(cache_policy, trace, config.C, config.L, config.latency, seed,
                              model=config.popularity, traffic_share=config.traffic_share, run_log=run_log)
    else:
        report = evaluate(cache_policy, trace, config.C, config.L, config.latency, seed,
                          model=config.popularity, traffic_share=config.traffic_share)

    logger.info(f"{report.policy} seed {seed}: hit ratio {report.hit_ratio:.4f}",
                extra={'task_id': self.request.id})
    _record_progress(run_pk)
    return report.to_dict()


@shared_task(bind=True)
def shift_demo_task(self, config_mapping, seed, checkpoint, out_dir, pre_window=None, run_pk=None, run_id=None):
    """
    Run the agent and window LFU on the same shifted trace.

    Writes shift_series_seed<seed>.csv (step, shift flag, one hit-ratio
    column per policy) and returns one summary per policy.
    """
    config = ExperimentConfig.from_mapping(config_mapping)
    _enter('shift_demo', config, seed, run_id)
    trace = config.evaluation_trace(seed)
    shift_steps = [step for step, _ in config.schedule.events if step < len(trace)]
    first_shift = shift_steps[0]
    pre_window = min(pre_window or config.L, first_shift)

    series = {}
    for policy in (PolicyKind.RL_AGENT.value, PolicyKind.LFU_WINDOW.value):
        cache_policy = build_task_policy(config, policy, seed, checkpoint)
        cache_policy.reset(seed)
        env = config.env_factory()(seed)
        series[policy] = rollout(env, trace.requests, cache_policy.decide).rewards

    path = write_shift_series(series, Path(out_dir) / f"shift_series_seed{seed}.csv", shift_steps)
    summaries = [
        asdict(summarize_shift(values, policy, seed, first_shift, pre_window))
        for policy, values in series.items()
    ]
    logger.info(f"Shift demo seed {seed}: " + ', '.join(
        f"{s['policy']} recovery={s['recovery_steps']}" for s in summaries
    ), extra={'task_id': self.request.id})
    _record_progress(run_pk)
    return {
        'seed': seed,
        'series': str(path),
        'summaries': summaries,
        'mean_hit_ratio': {policy: float(np.mean(values)) for policy, values in series.items()},
    }
