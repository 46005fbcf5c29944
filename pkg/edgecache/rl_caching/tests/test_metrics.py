import numpy as np
import pytest

from rl_caching.cache_sim import CachingEnv, LatencyModel, rollout
from rl_caching.exceptions import InsufficientDataError, InvalidParameterError
from rl_caching.metrics import (
    KpiReport,
    Scenario,
    aggregate_reports,
    evaluate,
    recovery_steps,
    scenario_table,
    steady_state_hit_ratio,
    summarize_shift,
)
from rl_caching.policies import build_policy, never_replace_decide
from rl_caching.workload import PopularityModel, ShiftSchedule, generate_trace, top_mass


def zipf_trace(M=100, s=1.0, n_steps=4000, seed=0):
    return generate_trace(PopularityModel.zipf(M, s), ShiftSchedule.empty(), n_steps, seed)


def make_report(policy='lru', seed=0, hit_ratio=0.5, storage_fraction=0.1, effective=0.05, **extra):
    values = dict(policy=policy, seed=seed, n_steps=1000, storage_fraction=storage_fraction,
                  effective_contents=effective, hit_ratio=hit_ratio, hit_ratio_final=hit_ratio,
                  miss_ratio=1 - hit_ratio, latency_mean_ms=20.0, latency_p95_ms=60.0)
    values.update(extra)
    return KpiReport(**values)


@pytest.mark.unit
class TestEvaluate:
    """Test single-policy KPI evaluation"""

    def test_storage_fraction_is_c_over_m(self):
        """Test storage usage reports C / M"""
        report = evaluate(build_policy('lru'), zipf_trace(), capacity=10, window_size=100)
        assert report.storage_fraction == pytest.approx(0.1)
        assert report.storage_pct == pytest.approx(10.0)

    def test_never_replace_from_empty_scores_zero(self):
        """Test a policy that never admits anything never hits"""
        report = evaluate(build_policy('never_replace'), zipf_trace(), capacity=10, window_size=100)
        assert report.hit_ratio == 0.0
        assert report.miss_ratio == 1.0
        assert report.latency_mean_ms > LatencyModel().edge_ms

    def test_hit_ratio_is_steady_state_mean_of_rewards(self):
        """Test hit_ratio averages the second half of the per-step rewards"""
        trace = zipf_trace(seed=3)
        report = evaluate(build_policy('lru'), trace, capacity=5, window_size=200, seed=3)
        result = rollout(CachingEnv(5, 200, LatencyModel(), seed=3), trace.requests, build_policy('lru'))
        assert report.hit_ratio == pytest.approx(steady_state_hit_ratio(result.rewards))
        assert report.hit_ratio_final == pytest.approx(result.rewards[-1])

    def test_effective_contents_from_model(self, settings):
        """Test the effective-contents KPI uses the configured traffic share"""
        settings.EDGE_CACHE = {**settings.EDGE_CACHE, 'TRAFFIC_SHARE': 1.0}
        report = evaluate(build_policy('fifo'), zipf_trace(M=20), capacity=2, window_size=100)
        assert report.effective_contents == pytest.approx(1.0)

    def test_trace_shorter_than_window(self):
        """Test traces shorter than L raise"""
        with pytest.raises(InsufficientDataError):
            evaluate(build_policy('lru'), zipf_trace(n_steps=50), capacity=5, window_size=100)

    def test_capacity_above_catalog(self):
        """Test C > M raises"""
        with pytest.raises(InvalidParameterError):
            evaluate(build_policy('lru'), zipf_trace(M=10), capacity=11, window_size=100)

    def test_evaluation_is_deterministic(self):
        """Test the same policy, trace and seed give identical reports"""
        trace = zipf_trace(seed=8)
        first = evaluate(build_policy('random', seed=1), trace, capacity=5, window_size=100, seed=8)
        second = evaluate(build_policy('random', seed=99), trace, capacity=5, window_size=100, seed=8)
        assert first == second

    @pytest.mark.slow
    def test_oracle_matches_top_mass(self):
        """Test the static oracle's hit fraction approaches the top-C probability mass"""
        model = PopularityModel.zipf(100, 1.0)
        trace = generate_trace(model, ShiftSchedule.empty(), 20000, seed=4)
        policy = build_policy('static_oracle', capacity=10, pmf=model.pmf)
        report = evaluate(policy, trace, capacity=10, window_size=500, seed=4)
        expected = top_mass(model, 10)
        standard_error = np.sqrt(expected * (1 - expected) / 10000)
        assert 1 - report.miss_ratio == pytest.approx(expected, abs=3 * standard_error)

    @pytest.mark.slow
    def test_oracle_dominates_simple_baselines(self):
        """Test no recency or random baseline beats the static oracle on a stationary trace"""
        model = PopularityModel.zipf(100, 1.0)
        trace = generate_trace(model, ShiftSchedule.empty(), 10000, seed=6)
        oracle = evaluate(build_policy('static_oracle', capacity=10, pmf=model.pmf), trace, 10, 500, seed=6)
        for kind in ('lru', 'fifo', 'random'):
            baseline = evaluate(build_policy(kind), trace, 10, 500, seed=6)
            assert oracle.hit_ratio >= baseline.hit_ratio - 0.01, kind

    def test_prefilled_never_replace_hits_c_over_m(self):
        """Test a full cache that never changes hits C / M of a flat workload"""
        M, C = 50, 5
        env = CachingEnv(C, 100, LatencyModel(), seed=0)
        for content_id in range(1, C + 1):
            env.step(content_id, lambda state, cache, requested: cache.first_empty_slot() + 1)
        trace = generate_trace(PopularityModel.zipf(M, 1e-9), ShiftSchedule.empty(), 20000, seed=2)
        result = rollout(env, trace.requests, lambda state, cache, requested: never_replace_decide(cache, requested))
        assert result.hits.mean() == pytest.approx(C / M, abs=0.01)


@pytest.mark.unit
class TestKpiReport:
    """Test report helpers"""

    def test_dict_round_trip(self):
        """Test to_dict/from_dict preserve every field"""
        report = make_report(effective_target=0.05, reference_hit_ratio=0.74)
        assert KpiReport.from_dict(report.to_dict()) == report

    def test_with_reference(self):
        """Test tagging keeps the KPIs and sets target and reference"""
        tagged = make_report().with_reference(0.8, effective_target=0.1)
        assert tagged.reference_hit_ratio == 0.8
        assert tagged.effective_target == 0.1
        assert tagged.hit_ratio == 0.5

    def test_steady_state_of_nothing(self):
        """Test an empty reward series raises"""
        with pytest.raises(InsufficientDataError):
            steady_state_hit_ratio(np.array([]))


@pytest.mark.unit
class TestScenarios:
    """Test scenario definitions and the scenario table"""

    def test_capacity_rounds_with_floor_of_one(self):
        """Test C = max(1, round(f * M))"""
        scenario = Scenario(0.1, 0.05)
        assert scenario.capacity(1000) == 100
        assert scenario.capacity(4) == 1

    @pytest.mark.parametrize('fraction, target', [(0.0, 0.05), (1.2, 0.05), (0.1, 0.0)])
    def test_invalid_scenarios(self, fraction, target):
        """Test fractions outside (0, 1] raise"""
        with pytest.raises(InvalidParameterError):
            Scenario(fraction, target)

    def test_defaults_from_settings(self, settings):
        """Test default scenarios come from settings"""
        settings.EDGE_CACHE = {**settings.EDGE_CACHE, 'TABLE1_SCENARIOS': [(0.5, 0.2, 0.9)]}
        assert Scenario.defaults() == [Scenario(0.5, 0.2, 0.9)]

    def test_table_tags_rows(self):
        """Test every row gets the target and only agent rows get the reference"""
        def runner(scenario):
            return [make_report('rl_agent', storage_fraction=scenario.storage_fraction),
                    make_report('lru', storage_fraction=scenario.storage_fraction)]

        table = scenario_table([Scenario(0.1, 0.05, 0.74), Scenario(0.2, 0.1, 0.75)], runner)
        assert [row.policy for row in table] == ['rl_agent', 'lru', 'rl_agent', 'lru']
        assert [row.effective_target for row in table] == [0.05, 0.05, 0.1, 0.1]
        assert [row.reference_hit_ratio for row in table] == [0.74, None, 0.75, None]

    def test_empty_table_rejected(self):
        """Test at least one scenario is required"""
        with pytest.raises(InvalidParameterError):
            scenario_table([], lambda scenario: [])


@pytest.mark.unit
class TestAggregation:
    """Test averaging over seeds"""

    def test_groups_by_scenario_and_policy(self):
        """Test seeds collapse into one row per policy and scenario, first-seen order"""
        reports = [
            make_report('rl_agent', seed=0, hit_ratio=0.6, reference_hit_ratio=0.74),
            make_report('lru', seed=0, hit_ratio=0.4),
            make_report('rl_agent', seed=1, hit_ratio=0.8, reference_hit_ratio=0.74),
            make_report('lru', seed=1, hit_ratio=0.4),
            make_report('lru', seed=0, hit_ratio=0.3, storage_fraction=0.2),
        ]
        rows = aggregate_reports(reports)
        assert [(row.policy, row.n_seeds) for row in rows] == [('rl_agent', 2), ('lru', 2), ('lru', 1)]
        assert [row.storage_pct for row in rows] == pytest.approx([10.0, 10.0, 20.0])
        assert rows[0].hit_ratio_mean == pytest.approx(0.7)
        assert rows[0].hit_ratio_std == pytest.approx(np.std([0.6, 0.8], ddof=1))
        assert rows[0].reference_hit_ratio == 0.74
        assert rows[1].hit_ratio_std == 0.0
        assert rows[2].hit_ratio_std == 0.0

    def test_target_groups_calibrated_scenarios(self):
        """Test rows with the same target group together despite calibration noise"""
        reports = [make_report(seed=0, effective=0.049, effective_target=0.05),
                   make_report(seed=1, effective=0.051, effective_target=0.05)]
        rows = aggregate_reports(reports)
        assert len(rows) == 1
        assert rows[0].effective_pct == pytest.approx(5.0)


@pytest.mark.unit
class TestRecovery:
    """Test post-shift recovery time"""

    def test_dip_and_recovery(self):
        """Test steps counted from the shift to the first recovered step"""
        series = np.concatenate([np.ones(100), np.full(10, 0.5), np.ones(50)])
        assert recovery_steps(series, shift_step=100, pre_window=50) == 10

    def test_late_dip(self):
        """Test a dip that starts after the shift is still measured from the shift"""
        series = np.concatenate([np.ones(100), np.ones(5), np.full(10, 0.5), np.ones(50)])
        assert recovery_steps(series, shift_step=100, pre_window=50) == 15

    def test_no_dip(self):
        """Test a series that never drops recovers in zero steps"""
        assert recovery_steps(np.ones(200), shift_step=100, pre_window=50) == 0

    def test_never_recovers(self):
        """Test a series that stays low returns None"""
        series = np.concatenate([np.ones(100), np.full(100, 0.2)])
        assert recovery_steps(series, shift_step=100, pre_window=50) is None

    @pytest.mark.parametrize('shift_step, pre_window', [(10, 50), (200, 50), (100, 0)])
    def test_insufficient_history(self, shift_step, pre_window):
        """Test too little history before or after the shift raises"""
        with pytest.raises(InsufficientDataError):
            recovery_steps(np.ones(200), shift_step, pre_window)

    def test_summary(self):
        """Test pre- and post-shift means alongside recovery"""
        series = np.concatenate([np.full(100, 0.8), np.full(100, 0.4)])
        summary = summarize_shift(series, 'lfu_window', seed=2, shift_step=100, pre_window=100)
        assert summary.pre_shift_hit_ratio == pytest.approx(0.8)
        assert summary.post_shift_hit_ratio == pytest.approx(0.4)
        assert summary.recovery_steps is None
