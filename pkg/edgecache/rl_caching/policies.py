"""
Baseline eviction policies and the static-optimal oracle.

Every policy answers decide(state, cache, requested) -> action on a miss,
the same interface the RL agent uses. Slot ties break to the lowest index;
policies fill the first EMPTY slot before evicting anything, except
NEVER_REPLACE (always keeps) and STATIC_ORACLE (only admits top-C items).
"""
import enum
import logging
from typing import Optional

import numpy as np

from .cache_sim import CacheState
from .exceptions import InvalidParameterError
from .workload import STREAM_POLICY, make_rng

logger = logging.getLogger(__name__)

KEEP = 0


class PolicyKind(str, enum.Enum):
    LFU_WINDOW = 'lfu_window'
    LFU_LIFETIME = 'lfu_lifetime'
    LRU = 'lru'
    FIFO = 'fifo'
    RANDOM = 'random'
    NEVER_REPLACE = 'never_replace'
    STATIC_ORACLE = 'static_oracle'
    RL_AGENT = 'rl_agent'

    @classmethod
    def parse(cls, name: str) -> 'PolicyKind':
        """Case-insensitive lookup; hyphens and underscores are interchangeable."""
        key = name.strip().lower().replace('-', '_')
        try:
            return cls(key)
        except ValueError:
            choices = ', '.join(kind.value for kind in cls)
            raise InvalidParameterError(f"Unknown policy {name!r}; choose one of {choices}") from None

    @property
    def needs_pmf(self) -> bool:
        return self is PolicyKind.STATIC_ORACLE


def _fill_empty(cache: CacheState) -> Optional[int]:
    slot = cache.first_empty_slot()
    return None if slot is None else slot + 1


def _argmin_slot(values: np.ndarray) -> int:
    # np.argmin returns the first minimum: lowest slot wins ties
    return int(np.argmin(values)) + 1


def lfu_decide(cache: CacheState, requested: int) -> int:
    """
    Window LFU: replace the cached item with the fewest window requests,
    unless every cached item is strictly more requested than `requested`.
    """
    fill = _fill_empty(cache)
    if fill is not None:
        return fill
    slot = _argmin_slot(cache.slot_counts)
    if cache.slot_counts[slot - 1] > cache.window_count(requested):
        return KEEP
    return slot


def lfu_lifetime_decide(cache: CacheState, requested: int) -> int:
    """LFU over request counts since the start of the run."""
    fill = _fill_empty(cache)
    if fill is not None:
        return fill
    counts = np.fromiter((cache.lifetime_counts[int(c)] for c in cache.slots),
                         dtype=np.int64, count=cache.capacity)
    slot = _argmin_slot(counts)
    if counts[slot - 1] > cache.lifetime_counts[requested]:
        return KEEP
    return slot


def lru_decide(cache: CacheState, requested: int) -> int:
    """Replace the least recently accessed slot; never keeps on a full cache."""
    fill = _fill_empty(cache)
    if fill is not None:
        return fill
    return _argmin_slot(cache.last_access)


def fifo_decide(cache: CacheState, requested: int) -> int:
    """Replace the slot filled longest ago."""
    fill = _fill_empty(cache)
    if fill is not None:
        return fill
    return _argmin_slot(cache.inserted_at)


def never_replace_decide(cache: CacheState, requested: int) -> int:
    return KEEP


def random_decide(cache: CacheState, requested: int, rng: np.random.Generator) -> int:
    """Uniform over 0..C once the cache is full."""
    fill = _fill_empty(cache)
    if fill is not None:
        return fill
    return int(rng.integers(0, cache.capacity + 1))


def static_oracle_decide(cache: CacheState, requested: int, pmf: np.ndarray,
                         top_set: Optional[frozenset] = None) -> int:
    """
    Converge to the top-C contents by true popularity.

    pmf is indexed by content ID - 1. A top-C request replaces the cached
    item with the lowest pmf when that item is outside the top-C set.
    """
    if top_set is None:
        top_set = top_c_set(pmf, cache.capacity)
    if requested not in top_set:
        return KEEP
    fill = _fill_empty(cache)
    if fill is not None:
        return fill
    occupant_pmf = pmf[cache.slots - 1]
    slot = _argmin_slot(occupant_pmf)
    if int(cache.slots[slot - 1]) in top_set:
        return KEEP
    return slot


def top_c_set(pmf: np.ndarray, capacity: int) -> frozenset:
    """IDs of the `capacity` most probable contents (stable order on ties)."""
    order = np.argsort(-pmf, kind='stable')[:capacity]
    return frozenset(int(i) + 1 for i in order)


class CachePolicy:
    """Base class: a named decide callback with an optional reset hook."""

    kind: PolicyKind = None

    def decide(self, state: np.ndarray, cache: CacheState, requested: int) -> int:
        raise NotImplementedError

    def reset(self, seed: Optional[int] = None) -> None:
        """Restore the policy to its initial state before a new run."""

    def __call__(self, state, cache, requested):
        return self.decide(state, cache, requested)

    def __repr__(self):
        return f"{type(self).__name__}({self.kind.value})"


class FunctionPolicy(CachePolicy):
    """Stateless baseline backed by one of the decide functions."""

    def __init__(self, kind: PolicyKind, func):
        self.kind = kind
        self.func = func

    def decide(self, state, cache, requested):
        return self.func(cache, requested)


class RandomPolicy(CachePolicy):
    kind = PolicyKind.RANDOM

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = make_rng(seed, STREAM_POLICY)

    def reset(self, seed: Optional[int] = None):
        if seed is not None:
            self.seed = seed
        self.rng = make_rng(self.seed, STREAM_POLICY)

    def decide(self, state, cache, requested):
        return random_decide(cache, requested, self.rng)


class StaticOraclePolicy(CachePolicy):
    kind = PolicyKind.STATIC_ORACLE

    def __init__(self, pmf: np.ndarray, capacity: int):
        self.pmf = np.asarray(pmf, dtype=np.float64)
        self.top_set = top_c_set(self.pmf, capacity)

    def decide(self, state, cache, requested):
        return static_oracle_decide(cache, requested, self.pmf, self.top_set)


_FUNCTIONS = {
    PolicyKind.LFU_WINDOW: lfu_decide,
    PolicyKind.LFU_LIFETIME: lfu_lifetime_decide,
    PolicyKind.LRU: lru_decide,
    PolicyKind.FIFO: fifo_decide,
    PolicyKind.NEVER_REPLACE: never_replace_decide,
}


def build_policy(kind, *, capacity: int = None, pmf: np.ndarray = None, seed: int = 0,
                 agent=None) -> CachePolicy:
    """
    Construct a policy by kind (a PolicyKind or its name).

    STATIC_ORACLE needs the true pmf and capacity; RL_AGENT needs a trained agent.
    """
    if isinstance(kind, str):
        kind = PolicyKind.parse(kind)
    if kind in _FUNCTIONS:
        return FunctionPolicy(kind, _FUNCTIONS[kind])
    if kind is PolicyKind.RANDOM:
        return RandomPolicy(seed=seed)
    if kind is PolicyKind.STATIC_ORACLE:
        if pmf is None or capacity is None:
            raise InvalidParameterError("static_oracle needs the true pmf and the cache capacity")
        return StaticOraclePolicy(pmf, capacity)
    if kind is PolicyKind.RL_AGENT:
        if agent is None:
            raise InvalidParameterError("rl_agent needs a trained agent (checkpoint)")
        from .sac_agent import AgentPolicy
        return AgentPolicy(agent, mode='greedy')
    raise InvalidParameterError(f"Unsupported policy kind {kind}")
