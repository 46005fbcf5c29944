import pytest

from config.run_context import get_run_id
from rl_caching.experiment import ExperimentConfig
from rl_caching.models import ExperimentRun
from rl_caching.tasks import (
    checkpoint_path,
    evaluate_policy_task,
    resolve_checkpoint,
    shift_demo_task,
    train_agent_task,
)

TINY = {
    'M': '20', 'C': '2', 'L': '50', 'zipf_s': '1.0', 'trace_steps': '400', 'seeds': '0',
    'train_steps': '300', 'warmup_steps': '50', 'batch_size': '16', 'eval_interval': '150',
    'eval_steps': '100', 'episode_length': '300', 'hidden_sizes': '8,8', 'buffer_capacity': '1000',
}


@pytest.fixture
def mapping():
    return ExperimentConfig.from_mapping(TINY).to_mapping()


@pytest.fixture
def trained_dir(mapping, tmp_path):
    out_dir = tmp_path / 'agents'
    train_agent_task.delay(mapping, 0, str(out_dir)).get()
    return out_dir


@pytest.mark.django_db
@pytest.mark.integration
class TestTrainAgentTask:
    """Test per-seed training tasks"""

    def test_writes_checkpoint_and_curve(self, mapping, tmp_path):
        """Test one checkpoint and one curve per seed"""
        output = train_agent_task.delay(mapping, 0, str(tmp_path)).get()
        assert output['checkpoint'] == str(checkpoint_path(tmp_path, 0))
        assert (tmp_path / 'agent_seed0.npz').exists()
        assert (tmp_path / 'curve_seed0.csv').read_text().splitlines()[0] == 'eval_step,greedy_hit_ratio,mean_entropy'
        assert output['updates'] > 0
        assert 0.0 <= output['final_hit_ratio'] <= 1.0

    def test_fine_tune_from_directory(self, mapping, trained_dir, tmp_path):
        """Test --checkpoint directories resolve per seed and training continues"""
        first = resolve_checkpoint(trained_dir, 0)
        assert first == trained_dir / 'agent_seed0.npz'
        output = train_agent_task.delay(mapping, 0, str(tmp_path / 'tuned'), checkpoint=str(trained_dir)).get()
        baseline = train_agent_task.delay(mapping, 0, str(tmp_path / 'fresh')).get()
        assert output['updates'] > baseline['updates']

    def test_records_progress_and_run_id(self, mapping, tmp_path):
        """Test the task bumps the run's progress and tags logs with the seed"""
        run = ExperimentRun.objects.create(run_id='train-test', command='train', config_hash='0' * 64,
                                           total_items=1)
        train_agent_task.delay(mapping, 0, str(tmp_path), run_pk=run.pk, run_id='train-test').get()
        run.refresh_from_db()
        assert run.processed_items == 1
        assert get_run_id() == 'train-test-s0'


@pytest.mark.django_db
@pytest.mark.integration
class TestEvaluatePolicyTask:
    """Test per-seed evaluation tasks"""

    def test_baseline(self, mapping):
        """Test a baseline returns a full KPI dict"""
        report = evaluate_policy_task.delay(mapping, 0, 'lfu_window').get()
        assert report['policy'] == 'lfu_window'
        assert report['storage_fraction'] == pytest.approx(0.1)
        assert 0.0 <= report['hit_ratio'] <= 1.0

    def test_agent_from_checkpoint(self, mapping, trained_dir):
        """Test the agent is evaluated greedily from its checkpoint"""
        report = evaluate_policy_task.delay(mapping, 0, 'rl_agent', checkpoint=str(trained_dir)).get()
        again = evaluate_policy_task.delay(mapping, 0, 'rl_agent', checkpoint=str(trained_dir)).get()
        assert report['policy'] == 'rl_agent'
        assert report == again

    def test_run_log(self, tmp_path):
        """Test run_log=true writes the per-step log next to the reports"""
        config = ExperimentConfig.from_mapping({**TINY, 'run_log': 'true'})
        evaluate_policy_task.delay(config.to_mapping(), 0, 'lru', run_log_dir=str(tmp_path)).get()
        lines = (tmp_path / 'run_log_lru_seed0.csv').read_text().splitlines()
        assert len(lines) == 1 + 400

    def test_scores_the_held_out_trace(self, tmp_path):
        """Test evaluation replays the seed's evaluation trace, not its training trace"""
        config = ExperimentConfig.from_mapping({**TINY, 'run_log': 'true'})
        evaluate_policy_task.delay(config.to_mapping(), 0, 'lru', run_log_dir=str(tmp_path)).get()
        rows = (tmp_path / 'run_log_lru_seed0.csv').read_text().splitlines()[1:]
        requested = [int(row.split(',')[1]) for row in rows]
        assert requested == config.evaluation_trace(0).requests.tolist()
        assert requested != config.trace(0).requests.tolist()


@pytest.mark.django_db
@pytest.mark.integration
class TestShiftDemoTask:
    """Test the shift-demo task"""

    def test_series_and_summaries(self, trained_dir, tmp_path):
        """Test both policies run on the same shifted trace"""
        mapping = ExperimentConfig.from_mapping({**TINY, 'shift_schedule': '200:reverse'}).to_mapping()
        output = shift_demo_task.delay(mapping, 0, str(trained_dir), str(tmp_path)).get()
        lines = (tmp_path / 'shift_series_seed0.csv').read_text().splitlines()
        assert lines[0] == 'step,shift,rl_agent,lfu_window'
        assert len(lines) == 1 + 400
        assert lines[201].startswith('200,1,')
        assert [s['policy'] for s in output['summaries']] == ['rl_agent', 'lfu_window']
        assert set(output['mean_hit_ratio']) == {'rl_agent', 'lfu_window'}
