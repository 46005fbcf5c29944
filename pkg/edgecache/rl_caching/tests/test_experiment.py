import numpy as np
import pytest

from rl_caching.exceptions import ConfigError
from rl_caching.experiment import (
    RESOLVED_CONFIG_NAME,
    ExperimentConfig,
    load_experiment,
    parse_overrides,
    read_config_file,
    write_resolved_config,
)
from rl_caching.policies import PolicyKind


@pytest.fixture
def config_file(tmp_path):
    def write(text):
        path = tmp_path / 'experiment.env'
        path.write_text(text)
        return path
    return write


@pytest.mark.unit
class TestLoadExperiment:
    """Test reading, overriding and validating experiment files"""

    def test_shipped_example_loads(self):
        """Test the default experiment file is valid"""
        config = load_experiment()
        assert (config.M, config.C, config.L) == (1000, 100, 1000)
        assert config.zipf_s is None
        assert config.effective_target == 0.05
        assert config.policy is PolicyKind.LFU_WINDOW
        assert config.seeds == [0, 1, 2]
        assert config.train.hidden_sizes == (64, 64)
        assert config.train.target_entropy is None

    def test_defaults_fill_missing_keys(self, config_file):
        """Test only M and a popularity key are required"""
        config = load_experiment(config_file('M=200\nzipf_s=1.1\n'))
        assert config.C == 20
        assert config.L == 1000
        assert config.train.gamma == 0.95
        assert config.latency.edge_ms == 5.0

    def test_missing_m(self, config_file):
        """Test M is required"""
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(config_file('zipf_s=1.0\n'))
        assert exc_info.value.field == 'M'

    def test_capacity_above_catalog_reports_line(self, config_file):
        """Test C > M names the key and its line"""
        path = config_file('# catalog\nM=10\nC=11\nzipf_s=1.0\n')
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(path)
        assert exc_info.value.field == 'C'
        assert exc_info.value.line == 3
        assert 'C (line 3)' in str(exc_info.value)

    @pytest.mark.parametrize('text', ['M=10\nzipf_s=1.0\neffective_target=0.2\n', 'M=10\n'])
    def test_exactly_one_popularity_key(self, config_file, text):
        """Test zipf_s and effective_target are mutually exclusive and one is required"""
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(config_file(text))
        assert exc_info.value.field == 'zipf_s'

    def test_effective_target_below_one_content(self, config_file):
        """Test targets under 1/M raise"""
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(config_file('M=10\neffective_target=0.01\n'))
        assert exc_info.value.field == 'effective_target'

    def test_unknown_key(self, config_file):
        """Test typos are rejected with their line"""
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(config_file('M=10\nzipf_s=1.0\ncapacity=3\n'))
        assert (exc_info.value.field, exc_info.value.line) == ('capacity', 3)

    def test_bad_seed_list(self, config_file):
        """Test seeds must be comma-separated integers"""
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(config_file('M=10\nzipf_s=1.0\nseeds=0,one\n'))
        assert exc_info.value.field == 'seeds'

    def test_unknown_policy(self, config_file):
        """Test policy names are validated"""
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(config_file('M=10\nzipf_s=1.0\npolicy=belady\n'))
        assert exc_info.value.field == 'policy'

    def test_transition_reward_choices(self, config_file):
        """Test the decision reward is 'hits' by default and validated"""
        assert load_experiment(config_file('M=10\nzipf_s=1.0\n')).train.transition_reward == 'hits'
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(config_file('M=10\nzipf_s=1.0\ntransition_reward=latency\n'))
        assert exc_info.value.field == 'transition_reward'

    def test_window_longer_than_eval(self, config_file):
        """Test evaluation traces must cover the window"""
        with pytest.raises(ConfigError) as exc_info:
            load_experiment(config_file('M=10\nzipf_s=1.0\nL=500\neval_steps=100\n'))
        assert exc_info.value.field == 'eval_steps'

    def test_missing_file(self, tmp_path):
        """Test a missing file is a config error"""
        with pytest.raises(ConfigError):
            load_experiment(tmp_path / 'absent.env')

    def test_overrides_and_flags_win(self, config_file):
        """Test --set overrides beat the file and command flags beat both"""
        path = config_file('M=100\nC=5\nzipf_s=1.0\nseeds=0\n')
        config = load_experiment(path, overrides=['C=7', 'gamma=0.9', 'seeds=4,5'], seeds='9')
        assert config.C == 7
        assert config.train.gamma == 0.9
        assert config.seeds == [9]
        assert config.train.seed == 9

    def test_override_without_equals(self):
        """Test malformed --set entries raise"""
        with pytest.raises(ConfigError):
            parse_overrides(['gamma'])

    def test_override_splits_on_first_equals(self):
        """Test values may contain '='"""
        assert parse_overrides(['shift_schedule=a=b']) == {'shift_schedule': 'a=b'}

    def test_file_lines_recorded(self, config_file):
        """Test raw reads keep each key's line number"""
        raw = read_config_file(config_file('\n# x\nM=10\n'))
        assert raw['M'] == '10'
        assert raw['__lines__'] == {'M': 3}


@pytest.mark.unit
class TestExperimentConfig:
    """Test the validated config object"""

    def test_mapping_round_trip(self):
        """Test to_mapping feeds back into the same config"""
        config = load_experiment()
        again = ExperimentConfig.from_mapping(config.to_mapping())
        assert again.to_mapping() == config.to_mapping()
        assert again.config_hash() == config.config_hash()

    def test_with_values_switches_popularity(self):
        """Test replacing the target by an exponent"""
        config = load_experiment().with_values(zipf_s=1.2, effective_target=None)
        assert config.zipf_s == 1.2
        assert config.exponent == 1.2
        assert config.effective_target is None

    def test_exponent_is_calibrated(self, config_file):
        """Test an effective-contents target calibrates the exponent"""
        config = load_experiment(config_file('M=1000\neffective_target=0.05\n'))
        assert 0.5 < config.exponent < 2.0

    def test_train_config_per_seed(self):
        """Test each seed gets its own TrainConfig"""
        config = load_experiment()
        assert config.train_config(2).seed == 2
        assert config.train_config(2).gamma == config.train.gamma

    def test_bad_schedule_is_config_error(self, config_file):
        """Test schedule errors surface as ConfigError on shift_schedule"""
        config = load_experiment(config_file('M=10\nzipf_s=1.0\nshift_schedule=10:shuffle\n'))
        with pytest.raises(ConfigError) as exc_info:
            config.schedule
        assert exc_info.value.field == 'shift_schedule'

    def test_traces_follow_config(self, config_file):
        """Test factories build traces and environments from the config"""
        config = load_experiment(config_file('M=30\nC=3\nL=20\nzipf_s=1.0\ntrace_steps=200\neval_steps=50\n'))
        assert len(config.trace(0)) == 200
        assert len(config.trace_factory()(1, 40)) == 40
        env = config.env_factory()(0)
        assert (env.capacity, env.window_size) == (3, 20)

    def test_evaluation_trace_is_held_out(self, config_file):
        """Test scoring traces come from a different stream than the training trace"""
        config = load_experiment(config_file('M=30\nC=3\nL=20\nzipf_s=1.0\ntrace_steps=200\neval_steps=50\n'))
        training = config.trace_factory()(0, 200)
        held_out = config.evaluation_trace(0).requests
        assert len(held_out) == 200
        assert not np.array_equal(training, held_out)
        assert np.array_equal(held_out, config.evaluation_trace(0).requests)

    def test_resolved_config_echo(self, tmp_path):
        """Test the echo is sorted key=value with the calibrated exponent as a comment"""
        config = load_experiment()
        path = write_resolved_config(config, tmp_path)
        lines = path.read_text().splitlines()
        assert path.name == RESOLVED_CONFIG_NAME
        keys = [line.split('=', 1)[0] for line in lines if not line.startswith('#')]
        assert keys == sorted(keys)
        assert lines[-1].startswith('# calibrated zipf_s=')
        assert load_experiment(path).config_hash() == config.config_hash()
