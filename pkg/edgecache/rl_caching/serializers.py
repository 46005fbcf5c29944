from django.conf import settings
from rest_framework import serializers

from .cache_sim import LatencyModel
from .exceptions import InvalidParameterError
from .models import ExperimentRun, KpiRecord
from .policies import PolicyKind
from .sac_agent import TRANSITION_REWARDS, TrainConfig

EDGE_CACHE = settings.EDGE_CACHE


class TrainConfigSerializer(serializers.Serializer):
    """
    SAC hyperparameters of an experiment config
    Defaults mirror TrainConfig; target_entropy left out means 0.98 * log(C + 1)
    """
    gamma = serializers.FloatField(default=TrainConfig.gamma)
    tau = serializers.FloatField(default=TrainConfig.tau)
    lr_actor = serializers.FloatField(default=TrainConfig.lr_actor)
    lr_critic = serializers.FloatField(default=TrainConfig.lr_critic)
    lr_alpha = serializers.FloatField(default=TrainConfig.lr_alpha)
    batch_size = serializers.IntegerField(min_value=1, default=TrainConfig.batch_size)
    buffer_capacity = serializers.IntegerField(min_value=1, default=TrainConfig.buffer_capacity)
    warmup_steps = serializers.IntegerField(min_value=1, default=TrainConfig.warmup_steps)
    updates_per_step = serializers.IntegerField(min_value=1, default=TrainConfig.updates_per_step)
    target_entropy = serializers.FloatField(required=False, allow_null=True, default=None)
    hidden_sizes = serializers.ListField(
        child=serializers.IntegerField(min_value=1), allow_empty=False, default=list(TrainConfig.hidden_sizes)
    )
    episode_length = serializers.IntegerField(min_value=1, default=TrainConfig.episode_length)
    train_steps = serializers.IntegerField(min_value=1, default=TrainConfig.train_steps)
    eval_interval = serializers.IntegerField(min_value=1, default=TrainConfig.eval_interval)
    eval_steps = serializers.IntegerField(min_value=1, default=TrainConfig.eval_steps)
    transition_reward = serializers.ChoiceField(choices=TRANSITION_REWARDS, default=TrainConfig.transition_reward)

    def validate_gamma(self, value):
        if not 0 < value < 1:
            raise serializers.ValidationError("gamma must be in (0, 1).")
        return value

    def validate_tau(self, value):
        if not 0 < value <= 1:
            raise serializers.ValidationError("tau must be in (0, 1].")
        return value


class ExperimentConfigSerializer(TrainConfigSerializer):
    """
    Validates a flat experiment config (file values merged with --set overrides)
    Field errors carry the key name so the loader can point at its line
    """
    M = serializers.IntegerField(min_value=1)
    C = serializers.IntegerField(min_value=1, required=False)
    L = serializers.IntegerField(min_value=1, default=EDGE_CACHE['DEFAULT_WINDOW'])
    zipf_s = serializers.FloatField(required=False, allow_null=True, default=None)
    effective_target = serializers.FloatField(required=False, allow_null=True, default=None)
    traffic_share = serializers.FloatField(default=EDGE_CACHE['TRAFFIC_SHARE'])
    trace_steps = serializers.IntegerField(min_value=1, default=100_000)
    shift_schedule = serializers.CharField(allow_blank=True, default='')
    policy = serializers.CharField(default=PolicyKind.LFU_WINDOW.value)
    seeds = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=False, default=[0, 1, 2])
    out = serializers.CharField(default='results')
    edge_ms = serializers.FloatField(default=EDGE_CACHE['LATENCY']['edge_ms'])
    remote_base_ms = serializers.FloatField(default=EDGE_CACHE['LATENCY']['remote_base_ms'])
    remote_jitter_ms = serializers.FloatField(default=EDGE_CACHE['LATENCY']['remote_jitter_ms'])
    run_log = serializers.BooleanField(default=False)

    def validate_zipf_s(self, value):
        if value is not None and not value > 0:
            raise serializers.ValidationError("Zipf exponent must be > 0.")
        return value

    def validate_traffic_share(self, value):
        if not 0 < value <= 1:
            raise serializers.ValidationError("traffic_share must be in (0, 1].")
        return value

    def validate_policy(self, value):
        try:
            return PolicyKind.parse(value).value
        except InvalidParameterError as e:
            raise serializers.ValidationError(str(e))

    def validate(self, data):
        """Cross-field checks: capacity, workload, latency and training consistency"""
        M = data['M']
        if data.get('C') is None:
            data['C'] = max(1, M // 10)
        if data['C'] > M:
            raise serializers.ValidationError({'C': f"C={data['C']} exceeds M={M}."})

        has_s = data.get('zipf_s') is not None
        has_target = data.get('effective_target') is not None
        if has_s == has_target:
            raise serializers.ValidationError(
                {'zipf_s': "Give exactly one of zipf_s and effective_target."}
            )
        if has_target and not 1.0 / M - 1e-12 <= data['effective_target'] <= 1:
            raise serializers.ValidationError(
                {'effective_target': f"effective_target must be in [1/M, 1] = [{1.0 / M}, 1]."}
            )

        try:
            LatencyModel(data['edge_ms'], data['remote_base_ms'], data['remote_jitter_ms'])
        except InvalidParameterError as e:
            raise serializers.ValidationError({'remote_base_ms': str(e)})

        if data['eval_steps'] < data['L']:
            raise serializers.ValidationError(
                {'eval_steps': f"eval_steps={data['eval_steps']} is shorter than the window L={data['L']}."}
            )
        if data['trace_steps'] < data['L']:
            raise serializers.ValidationError(
                {'trace_steps': f"trace_steps={data['trace_steps']} is shorter than the window L={data['L']}."}
            )
        return data


class KpiRecordSerializer(serializers.ModelSerializer):
    """Persisted KPI row of a run"""

    class Meta:
        model = KpiRecord
        fields = [
            'id', 'run', 'policy', 'seed', 'n_steps', 'storage_fraction', 'effective_contents',
            'effective_target', 'hit_ratio', 'hit_ratio_final', 'miss_ratio', 'latency_mean_ms',
            'latency_p95_ms', 'reference_hit_ratio',
        ]
        read_only_fields = fields


class ExperimentRunSerializer(serializers.ModelSerializer):
    """
    Serializer for ExperimentRun model
    Summarizes a command invocation and its progress
    """
    progress_percentage = serializers.ReadOnlyField()
    kpis = KpiRecordSerializer(many=True, read_only=True)

    class Meta:
        model = ExperimentRun
        fields = [
            'id', 'run_id', 'command', 'status', 'config', 'config_hash', 'total_items',
            'processed_items', 'failed_items', 'progress_percentage', 'result', 'error_message',
            'created_at', 'updated_at', 'kpis',
        ]
        read_only_fields = fields
