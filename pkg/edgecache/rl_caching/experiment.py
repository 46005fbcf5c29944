"""
Experiment configuration.

Experiment files are flat `key=value` files read with python-decouple's
RepositoryEnv; `--set key=value` overrides win over file values. The
merged mapping is validated by ExperimentConfigSerializer and failures
become ConfigError with the offending key and, where known, its line.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from decouple import Csv, RepositoryEnv
from django.conf import settings

from .cache_sim import CachingEnv, LatencyModel
from .exceptions import ConfigError, InvalidParameterError
from .policies import PolicyKind
from .sac_agent import TrainConfig, evaluation_seed
from .serializers import ExperimentConfigSerializer, TrainConfigSerializer
from .workload import PopularityModel, ShiftSchedule, calibrate_zipf, generate_trace, load_schedule

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = 'resolved_config.env'
LIST_KEYS = ('seeds', 'hidden_sizes')
KNOWN_KEYS = frozenset(ExperimentConfigSerializer().fields)
TRAIN_KEYS = tuple(TrainConfigSerializer().fields)


def _line_numbers(path: Path) -> Dict[str, int]:
    lines = {}
    for number, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith('#') and '=' in line:
            lines[line.split('=', 1)[0].strip()] = number
    return lines


def parse_overrides(overrides: Iterable[str]) -> Dict[str, str]:
    """`key=value` strings from --set flags."""
    parsed = {}
    for item in overrides or ():
        key, sep, value = item.partition('=')
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"Override {item!r} is not key=value")
        parsed[key] = value.strip()
    return parsed


def read_config_file(path) -> Dict[str, str]:
    """Raw values of an experiment file plus `<key>` -> line number under '__lines__'."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file {path} does not exist")
    env = RepositoryEnv(str(path))
    values = {key: str(value).strip() for key, value in env.data.items()}
    values['__lines__'] = _line_numbers(path)
    return values


def _cast_lists(raw: Dict[str, str], lines: Dict[str, int]) -> dict:
    data = {}
    for key, value in raw.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"Unknown key {key!r}", field=key, line=lines.get(key))
        if value == '':
            # Blank means "use the default"
            continue
        if key in LIST_KEYS:
            try:
                value = Csv(cast=int)(value)
            except ValueError:
                raise ConfigError(f"Expected comma-separated integers, got {value!r}",
                                  field=key, line=lines.get(key)) from None
        data[key] = value
    return data


def validate_mapping(raw: Dict[str, str], lines: Optional[Dict[str, int]] = None) -> dict:
    """
    Validate a flat mapping and return the serializer's validated data.

    Raises:
        ConfigError: first failing field, with its line when known
    """
    lines = lines or {}
    serializer = ExperimentConfigSerializer(data=_cast_lists(raw, lines))
    if serializer.is_valid():
        return dict(serializer.validated_data)

    field_name, messages = next(iter(serializer.errors.items()))
    message = ' '.join(str(m) for m in messages)
    if field_name == 'non_field_errors':
        raise ConfigError(message)
    raise ConfigError(message, field=field_name, line=lines.get(field_name))


def _format(value) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple)):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentConfig:
    """A validated experiment with every default expanded."""
    M: int
    C: int
    L: int
    zipf_s: Optional[float]
    effective_target: Optional[float]
    traffic_share: float
    trace_steps: int
    shift_schedule: str
    policy: PolicyKind
    seeds: List[int]
    out: Path
    latency: LatencyModel
    train: TrainConfig
    run_log: bool = False
    values: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_mapping(cls, raw: Dict[str, str], lines: Optional[Dict[str, int]] = None) -> 'ExperimentConfig':
        data = validate_mapping(raw, lines)
        train_values = {key: data[key] for key in TRAIN_KEYS}
        train_values['hidden_sizes'] = tuple(train_values['hidden_sizes'])
        try:
            train = TrainConfig(seed=data['seeds'][0], **train_values)
        except InvalidParameterError as e:
            raise ConfigError(str(e)) from None
        return cls(
            M=data['M'],
            C=data['C'],
            L=data['L'],
            zipf_s=data.get('zipf_s'),
            effective_target=data.get('effective_target'),
            traffic_share=data['traffic_share'],
            trace_steps=data['trace_steps'],
            shift_schedule=data['shift_schedule'],
            policy=PolicyKind(data['policy']),
            seeds=list(data['seeds']),
            out=Path(data['out']),
            latency=LatencyModel(data['edge_ms'], data['remote_base_ms'], data['remote_jitter_ms']),
            train=train,
            run_log=data['run_log'],
            values=data,
        )

    def to_mapping(self) -> Dict[str, str]:
        """Flat string mapping, all keys, sorted; feeding it back gives the same config."""
        return {key: _format(self.values.get(key)) for key in sorted(self.values)}

    def config_hash(self) -> str:
        payload = json.dumps(self.to_mapping(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def with_values(self, **changes) -> 'ExperimentConfig':
        mapping = self.to_mapping()
        mapping.update({key: _format(value) for key, value in changes.items()})
        return ExperimentConfig.from_mapping(mapping)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig.from_dict({**self.train.to_dict(), 'seed': seed})

    @cached_property
    def exponent(self) -> float:
        """zipf_s, or the calibrated exponent for effective_target."""
        if self.zipf_s is not None:
            return self.zipf_s
        return calibrate_zipf(self.M, self.effective_target, self.traffic_share)

    @cached_property
    def popularity(self) -> PopularityModel:
        return PopularityModel.zipf(self.M, self.exponent)

    @cached_property
    def schedule(self) -> ShiftSchedule:
        try:
            return load_schedule(self.shift_schedule, self.M)
        except InvalidParameterError as e:
            raise ConfigError(str(e), field='shift_schedule') from None

    def trace(self, seed: int, n_steps: Optional[int] = None):
        return generate_trace(self.popularity, self.schedule, n_steps or self.trace_steps, seed)

    def evaluation_trace(self, seed: int, n_steps: Optional[int] = None):
        """Held-out trace for scoring a seed, drawn from its evaluation stream rather than the training one."""
        return self.trace(evaluation_seed(seed), n_steps)

    def trace_factory(self):
        def make(seed, n_steps):
            return self.trace(seed, n_steps).requests
        return make

    def env_factory(self):
        def make(seed):
            return CachingEnv(self.C, self.L, latency=self.latency, seed=seed)
        return make


def load_experiment(path=None, overrides: Iterable[str] = (), **flags) -> ExperimentConfig:
    """
    Load the experiment file (default: the shipped example), apply --set
    overrides and command flags (seeds, out, policy), and validate.

    Raises:
        ConfigError: unreadable file, unknown key, malformed override, or invalid value
    """
    path = Path(path) if path else Path(settings.EDGE_CACHE['EXAMPLE_CONFIG'])
    raw = read_config_file(path)
    lines = raw.pop('__lines__')
    raw.update(parse_overrides(overrides))
    for key, value in flags.items():
        if value is not None:
            raw[key] = value
    config = ExperimentConfig.from_mapping(raw, lines)
    logger.debug(f"Loaded experiment config {path} ({config.config_hash()[:10]})")
    return config


def write_resolved_config(config: ExperimentConfig, out_dir) -> Path:
    """Echo the resolved config, sorted by key; a calibrated exponent goes in a comment."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_CONFIG_NAME
    lines = [f"{key}={value}" for key, value in config.to_mapping().items()]
    if config.zipf_s is None:
        lines.append(f"# calibrated zipf_s={config.exponent!r}")
    path.write_text('\n'.join(lines) + '\n')
    return path
