"""
Request workload service.

Provides:
- Truncated Zipf popularity over M contents (content IDs are 1-based)
- Reproducible request traces with scheduled popularity shifts
- Effective-contents metric and Zipf exponent calibration
- Plain-text trace and shift-schedule files
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from django.conf import settings

from .exceptions import CalibrationError, InvalidParameterError

logger = logging.getLogger(__name__)

# Named sub-streams derived from one seed
STREAM_REQUESTS = 0
STREAM_SHIFTS = 1
STREAM_LATENCY = 2
STREAM_AGENT = 3
STREAM_REPLAY = 4
STREAM_INIT = 5
STREAM_EVAL = 6
STREAM_POLICY = 7

SHIFT_TOKENS = ('random', 'reverse', 'identity')

Permutation = Union[np.ndarray, str]


def make_rng(seed: int, stream: int = STREAM_REQUESTS) -> np.random.Generator:
    """
    Build the repository's pinned generator for a seed and sub-stream.

    Stream 0 is PCG64 seeded directly with the seed; other streams use
    SeedSequence(seed, spawn_key=(stream,)) so they never overlap stream 0.
    """
    algorithm = settings.EDGE_CACHE['RNG_ALGORITHM']
    bit_generator = getattr(np.random, algorithm)
    if stream == STREAM_REQUESTS:
        return np.random.Generator(bit_generator(seed))
    return np.random.Generator(bit_generator(np.random.SeedSequence(seed, spawn_key=(stream,))))


def zipf_pmf(M: int, s: float) -> np.ndarray:
    """
    Truncated Zipf probabilities indexed by rank (entry 0 is rank 1).

    Raises:
        InvalidParameterError: M < 1 or s <= 0
    """
    if M < 1:
        raise InvalidParameterError(f"M must be >= 1, got {M}")
    if not s > 0:
        raise InvalidParameterError(f"Zipf exponent must be > 0, got {s}")
    weights = np.arange(1, M + 1, dtype=np.float64) ** (-float(s))
    return weights / weights.sum()


@dataclass(frozen=True)
class PopularityModel:
    """
    Truncated Zipf popularity with an explicit rank assignment.

    rank_of[i - 1] is the popularity rank of content i; pmf[i - 1] is its
    request probability.
    """
    M: int
    s: float
    rank_of: np.ndarray
    pmf: np.ndarray = field(repr=False)

    @classmethod
    def zipf(cls, M: int, s: float) -> 'PopularityModel':
        """Model where content i has rank i."""
        pmf = zipf_pmf(M, s)
        return cls(M=M, s=float(s), rank_of=np.arange(1, M + 1, dtype=np.int64), pmf=pmf)

    @classmethod
    def from_ranks(cls, M: int, s: float, rank_of: np.ndarray) -> 'PopularityModel':
        by_rank = zipf_pmf(M, s)
        rank_of = np.asarray(rank_of, dtype=np.int64)
        return cls(M=M, s=float(s), rank_of=rank_of, pmf=by_rank[rank_of - 1])

    @property
    def ids_by_rank(self) -> np.ndarray:
        """Content IDs ordered from most to least popular."""
        order = np.empty(self.M, dtype=np.int64)
        order[self.rank_of - 1] = np.arange(1, self.M + 1)
        return order

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    def top_ids(self, count: int) -> np.ndarray:
        return self.ids_by_rank[:count]


@dataclass(frozen=True)
class ShiftSchedule:
    """Ordered popularity shift events: (step_index, permutation or token)."""
    events: Tuple[Tuple[int, Permutation], ...] = ()

    def __post_init__(self):
        previous = -1
        for step_index, permutation in self.events:
            if step_index < 0:
                raise InvalidParameterError(f"Shift step must be >= 0, got {step_index}")
            if step_index <= previous:
                raise InvalidParameterError(
                    f"Shift steps must be strictly increasing: {step_index} after {previous}"
                )
            if isinstance(permutation, str) and permutation not in SHIFT_TOKENS:
                raise InvalidParameterError(f"Unknown shift token: {permutation!r}")
            previous = step_index

    @classmethod
    def empty(cls) -> 'ShiftSchedule':
        return cls(events=())

    def __len__(self):
        return len(self.events)


@dataclass(frozen=True)
class RequestTrace:
    """A request stream plus the parameters that regenerate it."""
    requests: np.ndarray
    seed: int
    M: int
    s: float

    def __len__(self):
        return len(self.requests)

    def __post_init__(self):
        requests = self.requests
        if len(requests) and (requests.min() < 1 or requests.max() > self.M):
            raise InvalidParameterError(f"Trace contains IDs outside 1..{self.M}")


def sample_request(model: PopularityModel, rng: np.random.Generator) -> int:
    """Draw one content ID by inverse-CDF sampling (one uniform per draw)."""
    return int(_inverse_cdf(model.cdf, rng.random(1))[0])


def _inverse_cdf(cdf: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    index = np.searchsorted(cdf, uniforms, side='right')
    # Rounding can leave cdf[-1] a hair below 1
    np.minimum(index, len(cdf) - 1, out=index)
    return index.astype(np.int64) + 1


def effective_contents(model: PopularityModel, traffic_share: float) -> float:
    """
    Smallest fraction of contents whose requests make up traffic_share.

    Raises:
        InvalidParameterError: traffic_share outside (0, 1]
    """
    if not 0 < traffic_share <= 1:
        raise InvalidParameterError(f"traffic_share must be in (0, 1], got {traffic_share}")
    head_mass = np.cumsum(np.sort(model.pmf)[::-1])
    # Tolerance keeps exact shares (0.8 of a uniform pmf) from spilling one item over
    k = int(np.argmax(head_mass >= traffic_share - 1e-12)) + 1
    return k / model.M


def _effective_for_exponent(M: int, s: float, traffic_share: float) -> float:
    head_mass = np.cumsum(zipf_pmf(M, s))
    return (int(np.argmax(head_mass >= traffic_share - 1e-12)) + 1) / M


def calibrate_zipf(M: int, target_effective: float, traffic_share: float = None) -> float:
    """
    Find the Zipf exponent whose effective contents are closest to the target.

    effective_contents is non-increasing in s, so bisection over
    [s_min, s_max] locates the step where it crosses the target; the closer
    of the two sides is returned. A target above what the flattest
    exponent needs is clamped to s_min.

    Raises:
        InvalidParameterError: target outside [1/M, 1]
        CalibrationError: target below what the steepest exponent reaches
    """
    if traffic_share is None:
        traffic_share = settings.EDGE_CACHE['TRAFFIC_SHARE']
    if M < 1:
        raise InvalidParameterError(f"M must be >= 1, got {M}")
    if not 1.0 / M - 1e-12 <= target_effective <= 1:
        raise InvalidParameterError(
            f"target_effective must be in [1/M, 1] = [{1.0 / M}, 1], got {target_effective}"
        )
    if not 0 < traffic_share <= 1:
        raise InvalidParameterError(f"traffic_share must be in (0, 1], got {traffic_share}")

    bounds = settings.EDGE_CACHE['CALIBRATION']
    lo, hi, resolution = bounds['s_min'], bounds['s_max'], bounds['resolution']

    flattest = _effective_for_exponent(M, lo, traffic_share)
    if flattest <= target_effective:
        if flattest < target_effective:
            logger.warning(
                f"Effective target {target_effective} exceeds the flattest reachable "
                f"{flattest}; clamping s to {lo}"
            )
        return lo

    steepest = _effective_for_exponent(M, hi, traffic_share)
    if steepest > target_effective + 0.5 / M:
        raise CalibrationError(
            f"Effective target {target_effective} unreachable for s <= {hi}; "
            f"closest achieved {steepest}",
            closest_s=hi,
            closest_value=steepest,
        )

    # Invariant: eff(lo) > target >= eff(hi)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if _effective_for_exponent(M, mid, traffic_share) <= target_effective:
            hi = mid
        else:
            lo = mid

    above = _effective_for_exponent(M, lo, traffic_share)
    below = _effective_for_exponent(M, hi, traffic_share)
    s = lo if abs(above - target_effective) < abs(below - target_effective) else hi
    logger.info(
        f"Calibrated Zipf exponent s={s:.6f} for M={M}, target={target_effective}, "
        f"share={traffic_share} (achieved {min(above, below, key=lambda v: abs(v - target_effective))})"
    )
    return s


def resolve_permutation(M: int, permutation: Permutation, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Turn a permutation or token into a validated 1-based rank permutation.

    perm[r - 1] is the new rank of whatever content held rank r.
    """
    if isinstance(permutation, str):
        if permutation == 'identity':
            return np.arange(1, M + 1, dtype=np.int64)
        if permutation == 'reverse':
            return np.arange(M, 0, -1, dtype=np.int64)
        if permutation == 'random':
            if rng is None:
                raise InvalidParameterError("A 'random' shift needs a generator")
            return rng.permutation(M).astype(np.int64) + 1
        raise InvalidParameterError(f"Unknown shift token: {permutation!r}")

    perm = np.asarray(permutation, dtype=np.int64)
    if perm.shape != (M,) or not np.array_equal(np.sort(perm), np.arange(1, M + 1)):
        raise InvalidParameterError(f"Permutation is not a bijection on 1..{M}")
    return perm


def apply_shift(model: PopularityModel, permutation: Permutation,
                rng: Optional[np.random.Generator] = None) -> PopularityModel:
    """
    Reassign popularity ranks; the sorted pmf is unchanged.

    Raises:
        InvalidParameterError: permutation is not a bijection on 1..M
    """
    perm = resolve_permutation(model.M, permutation, rng)
    new_rank_of = perm[model.rank_of - 1]
    return PopularityModel.from_ranks(model.M, model.s, new_rank_of)


def generate_trace(model: PopularityModel, schedule: ShiftSchedule, n_steps: int, seed: int) -> RequestTrace:
    """
    Draw n_steps requests, applying each scheduled shift before sampling its step.

    Requests use stream 0 of the seed (one uniform per request), random
    shift permutations use the shift stream, so an empty schedule gives
    the same requests as repeated sample_request calls.
    """
    if n_steps < 1:
        raise InvalidParameterError(f"n_steps must be >= 1, got {n_steps}")

    request_rng = make_rng(seed, STREAM_REQUESTS)
    shift_rng = make_rng(seed, STREAM_SHIFTS)
    requests = np.empty(n_steps, dtype=np.int64)

    current = model
    start = 0
    for step_index, permutation in schedule.events:
        if step_index >= n_steps:
            logger.warning(f"Shift at step {step_index} lies beyond trace length {n_steps}; ignored")
            break
        if step_index > start:
            requests[start:step_index] = _inverse_cdf(current.cdf, request_rng.random(step_index - start))
            start = step_index
        current = apply_shift(current, permutation, shift_rng)
        logger.debug(f"Applied popularity shift at step {step_index}")
    requests[start:] = _inverse_cdf(current.cdf, request_rng.random(n_steps - start))

    return RequestTrace(requests=requests, seed=seed, M=model.M, s=model.s)


def parse_shift_spec(spec: str, M: int) -> ShiftSchedule:
    """
    Parse an inline schedule: comma-separated `<step>:<token>` entries,
    for example `50000:random` or `2000:reverse,8000:identity`.
    """
    events = []
    for chunk in filter(None, (part.strip() for part in spec.split(','))):
        step, _, token = chunk.partition(':')
        token = token.strip().lower()
        try:
            step_index = int(step)
        except ValueError:
            raise InvalidParameterError(f"Bad shift entry {chunk!r}: step is not an integer") from None
        if token not in SHIFT_TOKENS:
            raise InvalidParameterError(f"Bad shift entry {chunk!r}: token must be one of {SHIFT_TOKENS}")
        events.append((step_index, token))
    return ShiftSchedule(events=tuple(events))


def read_schedule(path: Union[str, Path], M: int) -> ShiftSchedule:
    """Read `<step_index> <token>` or `<step_index> <permutation...>` lines."""
    events = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        parts = line.split()
        try:
            step_index = int(parts[0])
        except ValueError:
            raise InvalidParameterError(f"{path}:{line_no}: step index is not an integer") from None
        if len(parts) == 2 and parts[1].lower() in SHIFT_TOKENS:
            events.append((step_index, parts[1].lower()))
            continue
        try:
            perm = resolve_permutation(M, [int(p) for p in parts[1:]])
        except (ValueError, InvalidParameterError) as e:
            raise InvalidParameterError(f"{path}:{line_no}: {e}") from None
        events.append((step_index, perm))
    return ShiftSchedule(events=tuple(events))


def load_schedule(source: str, M: int) -> ShiftSchedule:
    """A schedule from a file path or an inline spec; blank means no shifts."""
    if not source:
        return ShiftSchedule.empty()
    if Path(source).is_file():
        return read_schedule(source, M)
    return parse_shift_spec(source, M)


def write_trace(trace: RequestTrace, path: Union[str, Path]) -> Path:
    """Write `# trace M=.. s=.. seed=..` then one `<step_index> <content_id>` line per request."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write(f"# trace M={trace.M} s={float(trace.s)!r} seed={trace.seed}\n")
        for step_index, content_id in enumerate(trace.requests):
            f.write(f"{step_index} {content_id}\n")
    logger.info(f"Wrote {len(trace)} requests to {path}")
    return path


def read_trace(path: Union[str, Path]) -> RequestTrace:
    """Read a trace file written by write_trace."""
    with open(path) as f:
        header = f.readline().split()
        if not header or header[0] != '#' or header[1] != 'trace':
            raise InvalidParameterError(f"{path}: missing '# trace' header")
        fields = dict(item.split('=', 1) for item in header[2:])
        body = np.loadtxt(f, dtype=np.int64, ndmin=2)
    requests = body[:, 1] if body.size else np.empty(0, dtype=np.int64)
    return RequestTrace(
        requests=requests,
        seed=int(fields['seed']),
        M=int(fields['M']),
        s=float(fields['s']),
    )


def top_mass(model: PopularityModel, count: int) -> float:
    """Probability mass of the `count` most popular contents (static-oracle ceiling)."""
    return float(np.sort(model.pmf)[::-1][:count].sum())
