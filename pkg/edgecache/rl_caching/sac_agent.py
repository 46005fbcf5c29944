"""
Discrete soft actor-critic agent for the replace-or-keep caching decision.

Provides:
- Actor (softmax over C + 1 actions) and twin critics with Polyak-averaged targets
- Learned entropy temperature
- Replay buffer and the training loop coupled to CachingEnv
- Self-describing .npz checkpoints
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from django.conf import settings

from .cache_sim import CacheState, CachingEnv, StepOutcome, rollout
from .exceptions import (
    IncompatibleCheckpointError,
    InvalidParameterError,
    ShapeError,
    TrainingDivergenceError,
)
from .networks import (
    AdamState,
    MlpParams,
    adam_step,
    init_mlp,
    log_softmax,
    mlp_backward,
    mlp_forward,
    polyak_update,
)
from .policies import CachePolicy, PolicyKind
from .workload import STREAM_AGENT, STREAM_EVAL, STREAM_INIT, STREAM_REPLAY, make_rng

logger = logging.getLogger(__name__)

NETWORK_NAMES = ('actor', 'critic1', 'critic2', 'target1', 'target2')
OPTIMIZED_NAMES = ('actor', 'critic1', 'critic2', 'alpha')

# Reward credited to a replacement decision when the next decision arrives:
# 'hits' counts the hits in between, 'window' is the windowed hit ratio just before it
TRANSITION_REWARDS = ('hits', 'window')


@dataclass
class TrainConfig:
    """SAC hyperparameters and the training schedule."""
    gamma: float = 0.95
    tau: float = 0.005
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    batch_size: int = 64
    buffer_capacity: int = 50_000
    warmup_steps: int = 1_000
    updates_per_step: int = 1
    # None means 0.98 * log(C + 1), 98% of the maximum policy entropy
    target_entropy: Optional[float] = None
    hidden_sizes: Tuple[int, ...] = (64, 64)
    seed: int = 0
    episode_length: int = 5_000
    train_steps: int = 50_000
    eval_interval: int = 5_000
    eval_steps: int = 2_000
    transition_reward: str = 'hits'
    initial_log_alpha: float = 0.0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.transition_reward not in TRANSITION_REWARDS:
            raise InvalidParameterError(
                f"transition_reward must be one of {', '.join(TRANSITION_REWARDS)}, got {self.transition_reward!r}"
            )
        if not 0 < self.gamma < 1:
            raise InvalidParameterError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0 < self.tau <= 1:
            raise InvalidParameterError(f"tau must be in (0, 1], got {self.tau}")
        for name in ('lr_actor', 'lr_critic', 'lr_alpha'):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be > 0")
        for name in ('batch_size', 'buffer_capacity', 'warmup_steps', 'updates_per_step',
                     'episode_length', 'train_steps', 'eval_interval', 'eval_steps'):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be >= 1")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise InvalidParameterError(f"hidden_sizes must be positive, got {self.hidden_sizes}")

    def resolved_target_entropy(self, capacity: int) -> float:
        if self.target_entropy is not None:
            return float(self.target_entropy)
        return 0.98 * float(np.log(capacity + 1))

    def to_dict(self) -> dict:
        data = asdict(self)
        data['hidden_sizes'] = list(self.hidden_sizes)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        known = {name: data[name] for name in cls.__dataclass_fields__ if name in data}
        return cls(**known)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool = False


@dataclass
class PendingDecision:
    """
    A miss whose action is waiting for the next decision point.

    The transition runs from this miss's pre-action state to the next
    miss's pre-action state; hits in between are credited to the action.
    """
    state: np.ndarray
    action: int
    window_ratio: float
    hits: int = 0

    def credit(self, outcome: StepOutcome) -> None:
        if outcome.hit:
            self.hits += 1
        self.window_ratio = outcome.reward

    def reward(self, mode: str) -> float:
        return float(self.hits) if mode == 'hits' else self.window_ratio

    def close(self, next_state: np.ndarray, mode: str) -> Transition:
        return Transition(self.state, self.action, self.reward(mode), next_state, False)


class ReplayBuffer:
    """Fixed-capacity ring buffer; batches are uniform without replacement."""

    def __init__(self, capacity: int, state_dim: int, seed: int = 0):
        if capacity < 1:
            raise InvalidParameterError(f"Replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.position = 0
        self.size = 0
        self.rng = make_rng(seed, STREAM_REPLAY)

    def __len__(self):
        return self.size

    def push(self, transition: Transition) -> None:
        if transition.state.shape != (self.state_dim,) or transition.next_state.shape != (self.state_dim,):
            raise ShapeError(f"Transition vectors must have length {self.state_dim}")
        i = self.position
        self.states[i] = transition.state
        self.next_states[i] = transition.next_state
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.dones[i] = float(transition.done)
        self.position = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        if self.size == 0:
            raise InvalidParameterError("Cannot sample from an empty replay buffer")
        index = self.rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return Batch(
            states=self.states[index],
            actions=self.actions[index],
            rewards=self.rewards[index],
            next_states=self.next_states[index],
            dones=self.dones[index],
        )


class SacAgent:
    """
    Agent parameters: actor, twin critics, their targets, log temperature
    and one Adam state per optimized network.
    """

    def __init__(self, capacity: int, config: TrainConfig = None):
        self.config = config or TrainConfig()
        self.capacity = capacity
        self.state_dim = 2 * capacity
        self.n_actions = capacity + 1
        sizes = [self.state_dim, *self.config.hidden_sizes, self.n_actions]

        init_rng = make_rng(self.config.seed, STREAM_INIT)
        self.actor = init_mlp(sizes, init_rng, zero_last=True)
        self.critic1 = init_mlp(sizes, init_rng)
        self.critic2 = init_mlp(sizes, init_rng)
        self.target1 = self.critic1.copy()
        self.target2 = self.critic2.copy()
        self.log_alpha = np.array([self.config.initial_log_alpha], dtype=np.float64)
        self.target_entropy = self.config.resolved_target_entropy(capacity)
        self.optimizers = {
            'actor': AdamState.zeros_like(self.actor.tensors()),
            'critic1': AdamState.zeros_like(self.critic1.tensors()),
            'critic2': AdamState.zeros_like(self.critic2.tensors()),
            'alpha': AdamState.zeros_like([self.log_alpha]),
        }
        self.rng = make_rng(self.config.seed, STREAM_AGENT)
        self.update_count = 0

    def __repr__(self):
        return f"SacAgent(C={self.capacity}, hidden={list(self.config.hidden_sizes)}, updates={self.update_count})"

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def networks(self) -> dict:
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def is_finite(self) -> bool:
        return all(net.is_finite() for net in self.networks().values()) and bool(np.isfinite(self.log_alpha).all())


def actor_forward(actor: MlpParams, state: np.ndarray) -> np.ndarray:
    """Action probabilities; a single state gives a vector, a batch a matrix."""
    logits, _ = mlp_forward(actor, state)
    probs = np.exp(log_softmax(logits))
    return probs[0] if np.ndim(state) == 1 else probs


def critic_forward(critic: MlpParams, state: np.ndarray) -> np.ndarray:
    values, _ = mlp_forward(critic, state)
    return values[0] if np.ndim(state) == 1 else values


def compute_targets(batch: Batch, target1: MlpParams, target2: MlpParams, actor: MlpParams,
                    alpha: float, gamma: float) -> np.ndarray:
    """
    Soft Bellman backup:
    y = r + gamma * (1 - done) * sum_a' pi(a'|s') * (min(Q1', Q2')(s', a') - alpha * log pi(a'|s'))
    """
    logits, _ = mlp_forward(actor, batch.next_states)
    log_probs = log_softmax(logits)
    probs = np.exp(log_probs)
    q_next = np.minimum(critic_forward(target1, batch.next_states), critic_forward(target2, batch.next_states))
    soft_value = (probs * (q_next - alpha * log_probs)).sum(axis=1)
    return batch.rewards + gamma * (1.0 - batch.dones) * soft_value


def critic_loss_and_grads(critic: MlpParams, states: np.ndarray, actions: np.ndarray,
                          targets: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """Mean squared error of Q(s, a) against fixed targets."""
    q, layer_inputs = mlp_forward(critic, states)
    rows = np.arange(len(actions))
    diff = q[rows, actions] - targets
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = 2.0 * diff / len(actions)
    return float(np.mean(diff ** 2)), mlp_backward(critic, layer_inputs, grad_out)


def actor_loss_and_grads(actor: MlpParams, states: np.ndarray, q_min: np.ndarray,
                         alpha: float) -> Tuple[float, List[np.ndarray], np.ndarray, np.ndarray]:
    """
    E_s[ sum_a pi(a|s) * (alpha * log pi(a|s) - min Q(s, a)) ] with Q held fixed.

    Returns:
        (loss, gradients, probabilities, log-probabilities)
    """
    logits, layer_inputs = mlp_forward(actor, states)
    log_probs = log_softmax(logits)
    probs = np.exp(log_probs)
    per_action = alpha * log_probs - q_min
    per_state = (probs * per_action).sum(axis=1)
    # d/dz_k sum_a pi_a f_a = pi_k (f_k - sum_a pi_a f_a); the alpha terms cancel
    grad_logits = probs * (per_action - per_state[:, None]) / len(states)
    return float(per_state.mean()), mlp_backward(actor, layer_inputs, grad_logits), probs, log_probs


def alpha_loss_and_grad(log_alpha: float, probs: np.ndarray, log_probs: np.ndarray,
                        target_entropy: float) -> Tuple[float, float]:
    """-log_alpha * E[target_entropy + sum_a pi log pi]; zero gradient at the target entropy."""
    gap = float(np.mean(target_entropy + (probs * log_probs).sum(axis=1)))
    return -log_alpha * gap, -gap


@dataclass(frozen=True)
class LossReport:
    critic1: float
    critic2: float
    actor: float
    alpha: float
    alpha_value: float
    entropy: float

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in (self.critic1, self.critic2, self.actor, self.alpha))


def _divergence(agent: SacAgent, message: str, **losses) -> TrainingDivergenceError:
    diagnostics = {
        'update_count': agent.update_count,
        'alpha': agent.alpha,
        **{name: float(value) for name, value in losses.items()},
    }
    for name, net in agent.networks().items():
        diagnostics[f'{name}_max_abs'] = float(max(np.abs(t).max() for t in net.tensors()))
    logger.error(f"Training diverged: {message}", extra={'diagnostics': diagnostics})
    return TrainingDivergenceError(message, diagnostics=diagnostics)


def sac_update(agent: SacAgent, batch: Batch) -> LossReport:
    """
    One gradient step for both critics, the actor and the temperature,
    then Polyak-average the targets.

    Raises:
        TrainingDivergenceError: a loss or parameter became non-finite
    """
    config = agent.config
    alpha = agent.alpha
    targets = compute_targets(batch, agent.target1, agent.target2, agent.actor, alpha, config.gamma)

    critic1_loss, critic1_grads = critic_loss_and_grads(agent.critic1, batch.states, batch.actions, targets)
    critic2_loss, critic2_grads = critic_loss_and_grads(agent.critic2, batch.states, batch.actions, targets)
    if not (np.isfinite(critic1_loss) and np.isfinite(critic2_loss)):
        raise _divergence(agent, "critic loss is not finite", critic1=critic1_loss, critic2=critic2_loss)
    adam_step(agent.critic1.tensors(), critic1_grads, agent.optimizers['critic1'], config.lr_critic)
    adam_step(agent.critic2.tensors(), critic2_grads, agent.optimizers['critic2'], config.lr_critic)

    q_min = np.minimum(critic_forward(agent.critic1, batch.states), critic_forward(agent.critic2, batch.states))
    actor_loss, actor_grads, probs, log_probs = actor_loss_and_grads(agent.actor, batch.states, q_min, alpha)
    alpha_loss, alpha_grad = alpha_loss_and_grad(float(agent.log_alpha[0]), probs, log_probs,
                                                 agent.target_entropy)
    if not (np.isfinite(actor_loss) and np.isfinite(alpha_loss)):
        raise _divergence(agent, "actor or temperature loss is not finite", actor=actor_loss, alpha=alpha_loss)
    adam_step(agent.actor.tensors(), actor_grads, agent.optimizers['actor'], config.lr_actor)
    adam_step([agent.log_alpha], [np.array([alpha_grad])], agent.optimizers['alpha'], config.lr_alpha)

    polyak_update(agent.target1, agent.critic1, config.tau)
    polyak_update(agent.target2, agent.critic2, config.tau)
    agent.update_count += 1

    if not agent.is_finite():
        raise _divergence(agent, "parameters are not finite after update", critic1=critic1_loss,
                          critic2=critic2_loss, actor=actor_loss, alpha=alpha_loss)

    entropy = float(-(probs * log_probs).sum(axis=1).mean())
    return LossReport(critic1=critic1_loss, critic2=critic2_loss, actor=actor_loss, alpha=alpha_loss,
                      alpha_value=agent.alpha, entropy=entropy)


def select_action(agent: SacAgent, state: np.ndarray, mode: str = 'sample') -> int:
    """Sample from the policy with the agent's generator, or take the argmax (lowest index on ties)."""
    probs = actor_forward(agent.actor, state)
    if mode == 'greedy':
        return int(np.argmax(probs))
    if mode != 'sample':
        raise InvalidParameterError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    index = int(np.searchsorted(np.cumsum(probs), agent.rng.random(), side='right'))
    return min(index, len(probs) - 1)


class AgentPolicy(CachePolicy):
    """The RL agent behind the common policy interface; fills EMPTY slots first."""

    kind = PolicyKind.RL_AGENT

    def __init__(self, agent: SacAgent, mode: str = 'greedy'):
        self.agent = agent
        self.mode = mode
        self.entropies = []

    def reset(self, seed: Optional[int] = None):
        self.entropies = []

    def decide(self, state: np.ndarray, cache: CacheState, requested: int) -> int:
        empty = cache.first_empty_slot()
        if empty is not None:
            return empty + 1
        if self.mode == 'greedy':
            probs = actor_forward(self.agent.actor, state)
            self.entropies.append(float(-(probs * np.log(np.clip(probs, 1e-300, None))).sum()))
            return int(np.argmax(probs))
        return select_action(self.agent, state, self.mode)

    @property
    def mean_entropy(self) -> float:
        return float(np.mean(self.entropies)) if self.entropies else 0.0


@dataclass(frozen=True)
class CurvePoint:
    eval_step: int
    greedy_hit_ratio: float
    mean_entropy: float


@dataclass
class TrainingResult:
    agent: SacAgent
    curve: List[CurvePoint] = field(default_factory=list)
    losses: List[LossReport] = field(default_factory=list)

    @property
    def final_hit_ratio(self) -> float:
        return self.curve[-1].greedy_hit_ratio if self.curve else float('nan')


# env_factory(seed) -> CachingEnv ; trace_factory(seed, n_steps) -> request IDs
EnvFactory = Callable[[int], CachingEnv]
TraceFactory = Callable[[int, int], np.ndarray]


def evaluation_seed(seed: int) -> int:
    """Seed of the held-out evaluation trace used for the training curve."""
    return int(make_rng(seed, STREAM_EVAL).integers(0, 2 ** 31 - 1))


def evaluate_greedy(agent: SacAgent, env_factory: EnvFactory, requests: np.ndarray, seed: int) -> CurvePoint:
    from .metrics import steady_state_hit_ratio

    policy = AgentPolicy(agent, mode='greedy')
    result = rollout(env_factory(seed), requests, policy.decide)
    return CurvePoint(eval_step=agent.update_count, greedy_hit_ratio=steady_state_hit_ratio(result.rewards),
                      mean_entropy=policy.mean_entropy)


def train(env_factory: EnvFactory, config: TrainConfig, trace_factory: TraceFactory,
          agent: Optional[SacAgent] = None) -> TrainingResult:
    """
    Train on a trace of config.train_steps requests.

    Each miss asks the sampling policy for an action (EMPTY slots are
    filled first). Its transition is stored at the next miss, with that
    miss's pre-action state as next_state and the reward chosen by
    config.transition_reward; once the buffer holds warmup_steps
    transitions, every stored transition is followed by updates_per_step
    SAC updates. The cache is reset every episode_length requests; episode
    ends are time limits, so the open transition bootstraps from the final
    state and is never terminal. Every eval_interval requests the greedy
    policy is scored on a held-out trace.

    Passing an existing agent continues training it (fine-tuning).
    """
    env = env_factory(config.seed)
    if agent is None:
        agent = SacAgent(env.capacity, config)
    elif agent.capacity != env.capacity:
        raise IncompatibleCheckpointError(
            f"Agent was built for C={agent.capacity}, environment has C={env.capacity}"
        )
    else:
        agent.config = config
        agent.rng = make_rng(config.seed, STREAM_AGENT)

    buffer = ReplayBuffer(config.buffer_capacity, agent.state_dim, seed=config.seed)
    train_requests = trace_factory(config.seed, config.train_steps)
    eval_seed = evaluation_seed(config.seed)
    eval_requests = trace_factory(eval_seed, config.eval_steps)
    result = TrainingResult(agent=agent)
    logger.info(f"Training SAC agent: C={agent.capacity}, steps={config.train_steps}, "
                f"config_hash={config.config_hash()[:10]}")

    def decide(state, cache, requested):
        empty = cache.first_empty_slot()
        if empty is not None:
            return empty + 1
        return select_action(agent, state, 'sample')

    def store(transition):
        buffer.push(transition)
        if len(buffer) >= config.warmup_steps:
            for _ in range(config.updates_per_step):
                result.losses.append(sac_update(agent, buffer.sample(config.batch_size)))

    pending = None
    for step, requested in enumerate(train_requests.tolist()):
        if step and step % config.episode_length == 0:
            if pending is not None:
                store(pending.close(env.observe(), config.transition_reward))
                pending = None
            env.reset()
        outcome = env.step(requested, decide)
        if outcome.hit:
            if pending is not None:
                pending.credit(outcome)
        else:
            if pending is not None:
                store(pending.close(outcome.state, config.transition_reward))
            pending = PendingDecision(outcome.state, outcome.action, window_ratio=outcome.reward)
        if (step + 1) % config.eval_interval == 0:
            point = evaluate_greedy(agent, env_factory, eval_requests, eval_seed)
            point = CurvePoint(step + 1, point.greedy_hit_ratio, point.mean_entropy)
            result.curve.append(point)
            logger.info(f"step {point.eval_step}: greedy hit ratio {point.greedy_hit_ratio:.4f}, "
                        f"entropy {point.mean_entropy:.4f}, alpha {agent.alpha:.4f}")

    if not result.curve:
        point = evaluate_greedy(agent, env_factory, eval_requests, eval_seed)
        result.curve.append(CurvePoint(config.train_steps, point.greedy_hit_ratio, point.mean_entropy))
    return result


def save_agent(agent: SacAgent, path) -> Path:
    """
    Write a self-describing .npz checkpoint.

    Arrays, in order: per network (actor, critic1, critic2, target1,
    target2) `<net>/W<i>`, `<net>/b<i>`; `log_alpha`; per optimizer
    (actor, critic1, critic2, alpha) `opt/<name>/m<j>`, `opt/<name>/v<j>`,
    `opt/<name>/t`. Metadata: format_version, capacity, sizes,
    config_json, config_hash, update_count.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        'format_version': np.array(settings.EDGE_CACHE['CHECKPOINT_FORMAT_VERSION']),
        'capacity': np.array(agent.capacity),
        'sizes': np.array(agent.actor.sizes),
        'config_json': np.array(json.dumps(agent.config.to_dict(), sort_keys=True)),
        'config_hash': np.array(agent.config.config_hash()),
        'update_count': np.array(agent.update_count),
        'log_alpha': agent.log_alpha,
    }
    for name, net in agent.networks().items():
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f'{name}/W{i}'] = w
            arrays[f'{name}/b{i}'] = b
    for name, state in agent.optimizers.items():
        for j, (m, v) in enumerate(zip(state.m, state.v)):
            arrays[f'opt/{name}/m{j}'] = m
            arrays[f'opt/{name}/v{j}'] = v
        arrays[f'opt/{name}/t'] = np.array(state.t)
    with open(path, 'wb') as f:
        np.savez(f, **arrays)
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_agent(path, capacity: Optional[int] = None, config: Optional[TrainConfig] = None) -> SacAgent:
    """
    Restore an agent saved by save_agent.

    Raises:
        IncompatibleCheckpointError: unknown format version, or capacity mismatch
    """
    expected_version = settings.EDGE_CACHE['CHECKPOINT_FORMAT_VERSION']
    with np.load(path, allow_pickle=False) as data:
        version = int(data['format_version'])
        if version != expected_version:
            raise IncompatibleCheckpointError(
                f"{path}: checkpoint format v{version}, this build reads v{expected_version}"
            )
        saved_capacity = int(data['capacity'])
        if capacity is not None and saved_capacity != capacity:
            raise IncompatibleCheckpointError(
                f"{path}: checkpoint is for C={saved_capacity}, config has C={capacity}"
            )
        saved_config = TrainConfig.from_dict(json.loads(str(data['config_json'])))
        saved_hash = str(data['config_hash'])
        if config is not None and config.config_hash() != saved_hash:
            logger.warning(f"{path}: checkpoint was trained with a different config "
                           f"({saved_hash[:10]} vs {config.config_hash()[:10]})")

        agent = SacAgent(saved_capacity, saved_config)
        n_layers = len(data['sizes']) - 1
        for name in NETWORK_NAMES:
            tensors = []
            for i in range(n_layers):
                tensors.extend((data[f'{name}/W{i}'].copy(), data[f'{name}/b{i}'].copy()))
            setattr(agent, name, MlpParams.from_tensors(tensors))
        agent.log_alpha = data['log_alpha'].copy()
        for name in OPTIMIZED_NAMES:
            count = 1 if name == 'alpha' else 2 * n_layers
            agent.optimizers[name] = AdamState(
                m=[data[f'opt/{name}/m{j}'].copy() for j in range(count)],
                v=[data[f'opt/{name}/v{j}'].copy() for j in range(count)],
                t=int(data[f'opt/{name}/t']),
            )
        agent.update_count = int(data['update_count'])
    return agent
