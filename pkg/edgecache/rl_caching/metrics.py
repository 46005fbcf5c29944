"""
KPI computation: hit ratio, storage usage, effective contents, backhaul
share and latency for one policy over one trace, plus scenario tables,
seed aggregation and post-shift recovery analysis.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np
from django.conf import settings

from .cache_sim import CachingEnv, EnvRunLog, LatencyModel, rollout
from .exceptions import InsufficientDataError, InvalidParameterError
from .policies import CachePolicy
from .workload import PopularityModel, RequestTrace, effective_contents

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KpiReport:
    """
    KPIs of one policy on one trace and seed.

    Ratios and latencies are measured over the second half of the run
    (steady state); hit_ratio_final is P_h after the last request.
    """
    policy: str
    seed: int
    n_steps: int
    storage_fraction: float
    effective_contents: float
    hit_ratio: float
    hit_ratio_final: float
    miss_ratio: float
    latency_mean_ms: float
    latency_p95_ms: float
    effective_target: Optional[float] = None
    reference_hit_ratio: Optional[float] = None

    @property
    def storage_pct(self) -> float:
        return 100.0 * self.storage_fraction

    @property
    def effective_pct(self) -> float:
        return 100.0 * self.effective_contents

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'KpiReport':
        return cls(**data)

    def with_reference(self, reference: Optional[float], effective_target: Optional[float] = None) -> 'KpiReport':
        data = self.to_dict()
        data['reference_hit_ratio'] = reference
        if effective_target is not None:
            data['effective_target'] = effective_target
        return KpiReport(**data)


def steady_state_hit_ratio(rewards: np.ndarray) -> float:
    """Mean per-step windowed hit ratio over the second half of a run."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise InsufficientDataError("No steps to average")
    return float(rewards[rewards.size // 2:].mean())


def evaluate(policy: CachePolicy, trace: RequestTrace, capacity: int, window_size: int,
             latency: Optional[LatencyModel] = None, seed: int = 0,
             model: Optional[PopularityModel] = None, traffic_share: Optional[float] = None,
             run_log: Optional[EnvRunLog] = None) -> KpiReport:
    """
    Run a policy deterministically over a trace and fill every KPI.

    Args:
        policy: Baseline or AgentPolicy in greedy mode; reset with `seed` first
        trace: Requests to replay
        model: Popularity behind the trace; defaults to the unshifted Zipf(M, s)
        run_log: Optional per-step CSV log

    Raises:
        InsufficientDataError: trace shorter than the window
    """
    if len(trace) < window_size:
        raise InsufficientDataError(
            f"Trace has {len(trace)} requests, fewer than the window L={window_size}"
        )
    if capacity > trace.M:
        raise InvalidParameterError(f"C={capacity} exceeds M={trace.M}")
    if traffic_share is None:
        traffic_share = settings.EDGE_CACHE['TRAFFIC_SHARE']
    if model is None:
        model = PopularityModel.zipf(trace.M, trace.s)

    policy.reset(seed)
    env = CachingEnv(capacity, window_size, latency=latency, seed=seed, run_log=run_log)
    result = rollout(env, trace.requests, policy.decide)
    half = len(trace) // 2
    steady_latency = result.latencies[half:]

    report = KpiReport(
        policy=policy.kind.value,
        seed=seed,
        n_steps=len(trace),
        storage_fraction=capacity / trace.M,
        effective_contents=effective_contents(model, traffic_share),
        hit_ratio=steady_state_hit_ratio(result.rewards),
        hit_ratio_final=float(result.rewards[-1]),
        miss_ratio=float(1.0 - result.hits[half:].mean()),
        latency_mean_ms=float(steady_latency.mean()),
        latency_p95_ms=float(np.percentile(steady_latency, 95)),
    )
    logger.debug(f"{report.policy} seed={seed}: hit_ratio={report.hit_ratio:.4f}")
    return report


@dataclass(frozen=True)
class Scenario:
    """One scenario: storage fraction C/M and effective-contents target."""
    storage_fraction: float
    effective_target: float
    reference_hit_ratio: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.storage_fraction <= 1:
            raise InvalidParameterError(f"storage_fraction must be in (0, 1], got {self.storage_fraction}")
        if not 0 < self.effective_target <= 1:
            raise InvalidParameterError(f"effective_target must be in (0, 1], got {self.effective_target}")

    def capacity(self, M: int) -> int:
        return max(1, int(round(self.storage_fraction * M)))

    @property
    def label(self) -> str:
        return f"storage {self.storage_fraction:.0%} / effective {self.effective_target:.0%}"

    @classmethod
    def defaults(cls) -> List['Scenario']:
        return [cls(*row) for row in settings.EDGE_CACHE['TABLE1_SCENARIOS']]


# runner(scenario) -> reports for the RL agent and every baseline, all seeds
ScenarioRunner = Callable[[Scenario], List[KpiReport]]


def scenario_table(scenarios: Sequence[Scenario], runner: ScenarioRunner) -> List[KpiReport]:
    """
    Run each scenario (calibrate, train, evaluate agent and baselines) and
    tag its rows with the scenario's target and reference hit ratio.
    """
    if not scenarios:
        raise InvalidParameterError("scenario_table needs at least one scenario")
    table = []
    for scenario in scenarios:
        logger.info(f"Running scenario {scenario.label}")
        rows = runner(scenario)
        table.extend(
            row.with_reference(scenario.reference_hit_ratio if row.policy == 'rl_agent' else None,
                               effective_target=scenario.effective_target)
            for row in rows
        )
    return table


@dataclass(frozen=True)
class AggregateRow:
    """Mean and spread of one policy's KPIs over seeds."""
    policy: str
    storage_pct: float
    effective_pct: float
    n_seeds: int
    hit_ratio_mean: float
    hit_ratio_std: float
    hit_ratio_final_mean: float
    miss_ratio_mean: float
    latency_mean_ms: float
    latency_p95_ms: float
    reference_hit_ratio: Optional[float] = None


def _std(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def aggregate_reports(reports: Iterable[KpiReport]) -> List[AggregateRow]:
    """Group by (storage, effective contents, policy) in first-seen order and average over seeds."""
    groups = {}
    for report in reports:
        target = report.effective_target if report.effective_target is not None else report.effective_contents
        key = (round(report.storage_fraction, 9), round(target, 9), report.policy)
        groups.setdefault(key, []).append(report)

    rows = []
    for (storage, _, policy), members in groups.items():
        hit = np.array([r.hit_ratio for r in members])
        references = [r.reference_hit_ratio for r in members if r.reference_hit_ratio is not None]
        rows.append(AggregateRow(
            policy=policy,
            storage_pct=100.0 * storage,
            effective_pct=100.0 * float(np.mean([r.effective_contents for r in members])),
            n_seeds=len(members),
            hit_ratio_mean=float(hit.mean()),
            hit_ratio_std=_std(hit),
            hit_ratio_final_mean=float(np.mean([r.hit_ratio_final for r in members])),
            miss_ratio_mean=float(np.mean([r.miss_ratio for r in members])),
            latency_mean_ms=float(np.mean([r.latency_mean_ms for r in members])),
            latency_p95_ms=float(np.mean([r.latency_p95_ms for r in members])),
            reference_hit_ratio=references[0] if references else None,
        ))
    return rows


def recovery_steps(series: np.ndarray, shift_step: int, pre_window: int,
                   fraction: float = 0.9) -> Optional[int]:
    """
    Steps after a shift until the windowed hit ratio is back to `fraction`
    of its mean over the `pre_window` steps before the shift.

    Returns 0 when the series never drops below that level, None when it
    never recovers.

    Raises:
        InsufficientDataError: not enough history before or after the shift
    """
    series = np.asarray(series, dtype=np.float64)
    if pre_window < 1 or shift_step < pre_window:
        raise InsufficientDataError(f"Need {pre_window} steps before the shift at {shift_step}")
    if shift_step >= len(series):
        raise InsufficientDataError(f"Shift at {shift_step} is past the end of a {len(series)}-step series")
    if not 0 < fraction <= 1:
        raise InvalidParameterError(f"fraction must be in (0, 1], got {fraction}")

    threshold = fraction * series[shift_step - pre_window:shift_step].mean()
    post = series[shift_step:]
    below = np.flatnonzero(post < threshold)
    if below.size == 0:
        return 0
    recovered = np.flatnonzero(post[below[0]:] >= threshold)
    if recovered.size == 0:
        return None
    return int(below[0] + recovered[0])


@dataclass(frozen=True)
class ShiftSummary:
    seed: int
    policy: str
    pre_shift_hit_ratio: float
    post_shift_hit_ratio: float
    recovery_steps: Optional[int]


def summarize_shift(series: np.ndarray, policy: str, seed: int, shift_step: int,
                    pre_window: int, fraction: float = 0.9) -> ShiftSummary:
    """Pre-shift mean, post-shift mean and recovery time of one hit-ratio series."""
    series = np.asarray(series, dtype=np.float64)
    return ShiftSummary(
        seed=seed,
        policy=policy,
        pre_shift_hit_ratio=float(series[shift_step - pre_window:shift_step].mean()),
        post_shift_hit_ratio=float(series[shift_step:].mean()),
        recovery_steps=recovery_steps(series, shift_step, pre_window, fraction),
    )
