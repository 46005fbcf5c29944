"""
Edge cache simulator.

Holds the cache slots, the sliding request window and per-content window
counters, encodes the RL state vector, applies replace-or-keep actions and
draws edge/remote latencies. CachingEnv couples these into a step-based
environment shared by the RL agent and the baseline policies.
"""
import csv
import logging
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
from django.conf import settings

from .exceptions import (
    ContractViolationError,
    InvalidActionError,
    InvalidParameterError,
    UndefinedMetricError,
)
from .workload import STREAM_LATENCY, make_rng

logger = logging.getLogger(__name__)

# Slot value while a slot has never been filled; content IDs start at 1
EMPTY = 0

RUN_LOG_COLUMNS = ['step', 'requested', 'hit', 'action', 'evicted', 'reward', 'latency_ms']


class CacheState:
    """
    C cache slots plus the window of the last L requests.

    Slot k (0-based here, action k + 1) holds a content ID or EMPTY.
    slot_counts[k] is the number of times the occupant of slot k appears
    in the window. Last-access, insertion steps and lifetime counts are
    kept for the recency and lifetime-frequency baselines.
    """

    def __init__(self, capacity: int, window_size: int):
        if capacity < 1:
            raise InvalidParameterError(f"Cache capacity must be >= 1, got {capacity}")
        if window_size < 1:
            raise InvalidParameterError(f"Window size must be >= 1, got {window_size}")
        self.capacity = capacity
        self.window_size = window_size
        self.slots = np.full(capacity, EMPTY, dtype=np.int64)
        self.slot_counts = np.zeros(capacity, dtype=np.int64)
        self.last_access = np.full(capacity, -1, dtype=np.int64)
        self.inserted_at = np.full(capacity, -1, dtype=np.int64)
        self.slot_of = {}
        self.window = deque()
        self.window_counts = Counter()
        self.lifetime_counts = Counter()
        self.clock = 0

    def __repr__(self):
        return f"CacheState(C={self.capacity}, L={self.window_size}, filled={len(self.slot_of)})"

    @property
    def counters(self) -> dict:
        """R: window request count for every cached content."""
        return {int(content_id): int(self.slot_counts[slot]) for content_id, slot in self.slot_of.items()}

    def is_cached(self, content_id: int) -> bool:
        return content_id in self.slot_of

    def window_count(self, content_id: int) -> int:
        return self.window_counts.get(content_id, 0)

    def first_empty_slot(self) -> Optional[int]:
        """0-based index of the first EMPTY slot, or None when full."""
        if len(self.slot_of) == self.capacity:
            return None
        return int(np.flatnonzero(self.slots == EMPTY)[0])


def new_cache(C: int, L: int) -> CacheState:
    """All slots EMPTY, empty window, no counters."""
    return CacheState(capacity=C, window_size=L)


def record_request(cache: CacheState, content_id: int) -> bool:
    """
    Push a request into the window and update counters.

    Returns:
        bool: True when the content is cached (hit)
    """
    step = cache.clock
    cache.clock += 1

    cache.window.append(content_id)
    cache.window_counts[content_id] += 1
    cache.lifetime_counts[content_id] += 1
    if len(cache.window) > cache.window_size:
        head = cache.window.popleft()
        remaining = cache.window_counts[head] - 1
        if remaining:
            cache.window_counts[head] = remaining
        else:
            del cache.window_counts[head]
        head_slot = cache.slot_of.get(head)
        if head_slot is not None:
            cache.slot_counts[head_slot] -= 1

    slot = cache.slot_of.get(content_id)
    if slot is None:
        return False
    cache.slot_counts[slot] += 1
    cache.last_access[slot] = step
    return True


def encode_state(cache: CacheState) -> np.ndarray:
    """
    State vector of length 2C: log(1 + C_k) for every slot, then log(1 + R_k).

    log1p keeps EMPTY slots and zero counts at 0 instead of -inf.
    """
    return np.log1p(np.concatenate((cache.slots, cache.slot_counts)).astype(np.float64))


def apply_action(cache: CacheState, action: int, requested: int) -> Optional[int]:
    """
    Keep (action 0) or put `requested` into slot `action`.

    Returns:
        The evicted content ID, or None for keep or an EMPTY slot

    Raises:
        InvalidActionError: action outside 0..C
        ContractViolationError: requested is already cached
    """
    if not 0 <= action <= cache.capacity:
        raise InvalidActionError(f"Action {action} outside 0..{cache.capacity}")
    if requested < 1:
        raise InvalidParameterError(f"Content IDs start at 1, got {requested}")
    if requested in cache.slot_of:
        raise ContractViolationError(f"Content {requested} is already cached")
    if action == 0:
        return None

    slot = action - 1
    previous = int(cache.slots[slot])
    evicted = None
    if previous != EMPTY:
        del cache.slot_of[previous]
        evicted = previous

    step = max(cache.clock - 1, 0)
    cache.slots[slot] = requested
    cache.slot_of[requested] = slot
    cache.slot_counts[slot] = cache.window_count(requested)
    cache.inserted_at[slot] = step
    cache.last_access[slot] = step
    return evicted


def hit_ratio(cache: CacheState, hit_history: Iterable[bool]) -> float:
    """
    Windowed hit ratio P_h: hits in the last L steps divided by L.

    Before the window fills, divides by the history length instead.

    Raises:
        UndefinedMetricError: empty history
    """
    history = list(hit_history)[-cache.window_size:]
    if not history:
        raise UndefinedMetricError("Hit ratio of an empty history is undefined")
    return sum(history) / len(history)


class HitWindow:
    """Incremental hit ratio over the last L outcomes."""

    def __init__(self, window_size: int):
        self.history = deque(maxlen=window_size)
        self.hits = 0

    def push(self, hit: bool) -> float:
        if len(self.history) == self.history.maxlen and self.history[0]:
            self.hits -= 1
        self.history.append(hit)
        self.hits += hit
        return self.ratio

    @property
    def ratio(self) -> float:
        if not self.history:
            raise UndefinedMetricError("Hit ratio of an empty history is undefined")
        return self.hits / len(self.history)


@dataclass(frozen=True)
class LatencyModel:
    """Constant edge latency; remote latency uniform in base ± jitter."""
    edge_ms: float = 5.0
    remote_base_ms: float = 50.0
    remote_jitter_ms: float = 20.0

    def __post_init__(self):
        if min(self.edge_ms, self.remote_base_ms, self.remote_jitter_ms) < 0:
            raise InvalidParameterError("Latency parameters must be >= 0")
        if self.remote_base_ms - self.remote_jitter_ms < self.edge_ms:
            raise InvalidParameterError(
                f"Remote latency can drop to {self.remote_base_ms - self.remote_jitter_ms} ms, "
                f"below edge latency {self.edge_ms} ms"
            )

    @classmethod
    def default(cls) -> 'LatencyModel':
        return cls(**settings.EDGE_CACHE['LATENCY'])

    def sample(self, hit: bool, rng: np.random.Generator) -> float:
        if hit:
            return self.edge_ms
        return float(rng.uniform(self.remote_base_ms - self.remote_jitter_ms,
                                 self.remote_base_ms + self.remote_jitter_ms))


@dataclass(frozen=True)
class StepOutcome:
    """What one request did to the environment."""
    step: int
    requested: int
    hit: bool
    action: int
    reward: float
    next_state: np.ndarray
    latency_ms: float
    evicted: Optional[int] = None
    state: Optional[np.ndarray] = None


# decide(state, cache, requested) -> action index
DecideFn = Callable[[np.ndarray, CacheState, int], int]


class EnvRunLog:
    """Per-step CSV log: step,requested,hit,action,evicted,reward,latency_ms."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'w', newline='')
        self._writer = csv.writer(self._file)
        self._writer.writerow(RUN_LOG_COLUMNS)

    def write(self, outcome: StepOutcome):
        self._writer.writerow([
            outcome.step,
            outcome.requested,
            int(outcome.hit),
            outcome.action,
            '' if outcome.evicted is None else outcome.evicted,
            f"{outcome.reward:.6f}",
            f"{outcome.latency_ms:.6f}",
        ])

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CachingEnv:
    """
    Step-based edge cache environment.

    On a hit the action is forced to keep; on a miss the decide callback
    sees the current state vector and chooses keep or a slot to replace.
    The reward is the windowed hit ratio after the step.
    """

    def __init__(self, capacity: int, window_size: int, latency: Optional[LatencyModel] = None,
                 seed: int = 0, run_log: Optional[EnvRunLog] = None):
        self.capacity = capacity
        self.window_size = window_size
        self.latency = latency or LatencyModel.default()
        self.seed = seed
        self.run_log = run_log
        self.reset()

    def reset(self) -> np.ndarray:
        self.cache = new_cache(self.capacity, self.window_size)
        self.hits = HitWindow(self.window_size)
        self.rng = make_rng(self.seed, STREAM_LATENCY)
        self.step_index = 0
        return encode_state(self.cache)

    def observe(self) -> np.ndarray:
        return encode_state(self.cache)

    def step(self, requested: int, decide: DecideFn) -> StepOutcome:
        hit = record_request(self.cache, requested)
        action, evicted, state = 0, None, None
        if not hit:
            state = encode_state(self.cache)
            action = int(decide(state, self.cache, requested))
            evicted = apply_action(self.cache, action, requested)
        reward = self.hits.push(hit)
        outcome = StepOutcome(
            step=self.step_index,
            requested=requested,
            hit=hit,
            action=action,
            reward=reward,
            next_state=encode_state(self.cache),
            latency_ms=self.latency.sample(hit, self.rng),
            evicted=evicted,
            state=state,
        )
        self.step_index += 1
        if self.run_log is not None:
            self.run_log.write(outcome)
        return outcome


def env_step(env: CachingEnv, requested: int, decide: DecideFn) -> StepOutcome:
    """One request through the environment; same as env.step."""
    return env.step(requested, decide)


@dataclass(frozen=True)
class Rollout:
    """Per-step arrays from running one policy over a trace."""
    hits: np.ndarray
    rewards: np.ndarray
    latencies: np.ndarray
    actions: np.ndarray


def rollout(env: CachingEnv, requests: np.ndarray, decide: DecideFn) -> Rollout:
    """Run decide over every request; keeps per-step scalars, not states."""
    n = len(requests)
    hits = np.zeros(n, dtype=bool)
    rewards = np.zeros(n, dtype=np.float64)
    latencies = np.zeros(n, dtype=np.float64)
    actions = np.zeros(n, dtype=np.int64)
    for i, requested in enumerate(requests.tolist()):
        outcome = env.step(requested, decide)
        hits[i] = outcome.hit
        rewards[i] = outcome.reward
        latencies[i] = outcome.latency_ms
        actions[i] = outcome.action
    return Rollout(hits=hits, rewards=rewards, latencies=latencies, actions=actions)
