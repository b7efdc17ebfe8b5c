"""Queue dynamics on top of the backward walk, and the empty-system sampler.

Service times reach the FIFO system in the order in which the random
assignment (RA) system starts serving them: FIFO customer ``k`` receives the
service that the RA system initiates ``k``-th.  With that assignment the RA
system dominates FIFO, so an arrival that finds RA empty also finds FIFO
empty, and a FIFO run started empty at that arrival is exactly stationary at
time 0.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from scipy import optimize

from .distributions import ModelSpec, Truncated, build_model, solve_tilt, supports_allow_emptying
from .errors import NotApplicable, NoValidTruncation
from .rng import Streams, as_streams
from .rw_engine import BackwardWalk, StepBudget
from .scenario import BackwardScenario

__all__ = [
    "BackwardScenario", "DetailedState", "InitiationLog", "SampleRecord", "TruncationRule",
    "kw_step", "kw_run", "ra_step", "reconstruct_ra_forward", "fifo_services", "fifo_detailed",
    "fifo_state_at_zero", "sample_stationary_kw", "truncation_wrap", "make_walk",
]


def kw_step(W, S: float, T: float) -> np.ndarray:
    """One Kiefer-Wolfowitz update: S joins the least loaded server, then T drains all."""
    W = np.sort(np.asarray(W, dtype=float))
    W[0] += S
    return np.sort(np.maximum(W - T, 0.0))


@njit(cache=True)
def _kw_run(W, services, gaps):
    for k in range(services.size):
        x = W[0] + services[k]
        i = 1
        # keep the vector sorted: only the first entry grew
        while i < W.size and W[i] < x:
            W[i - 1] = W[i]
            i += 1
        W[i - 1] = x
        for j in range(W.size):
            W[j] = max(W[j] - gaps[k], 0.0)
    return W


def kw_run(W, services, gaps) -> np.ndarray:
    """Apply ``kw_step`` for each (service, gap) pair in turn."""
    W = np.sort(np.asarray(W, dtype=float))
    return _kw_run(W, np.asarray(services, dtype=float), np.asarray(gaps, dtype=float))


def ra_step(V, S: float, U: int, T: float) -> np.ndarray:
    """Random assignment update; ``U`` is a 0-based node index."""
    V = np.array(V, dtype=float)
    V[U] += S
    return np.maximum(V - T, 0.0)


@dataclass
class InitiationLog:
    """RA service initiations at or after a reference time, in time order.

    ``q`` counts initiations in the log made by customers who arrived before
    the reference time.  ``customers`` uses signed indices (-j backward, k forward).
    """

    ref_time: float
    q: int
    times: np.ndarray
    nodes: np.ndarray
    customers: np.ndarray
    services: np.ndarray
    present: int = 0           # earlier customers still in the RA system at the reference time
    waiting_work: float = 0.0  # their services that have not started by then

    @property
    def count(self) -> int:
        return len(self.services)

    def fifo_services(self, n: int) -> np.ndarray:
        return self.services[self.q:self.q + n]


def reconstruct_ra_forward(scenario: BackwardScenario, depth: int, *, anchors=None, need: int | None = None,
                           model: ModelSpec | None = None, rng: np.random.Generator | None = None) -> InitiationLog:
    """Replay the RA system forward and log service initiations from t_{-depth} on.

    Node ``i`` is replayed from customer ``-anchors[i]``, which must find that
    node empty (default: every node empty at ``-depth``).  The log is long
    enough to fix the ``q + need`` earliest initiations; forward customers are
    drawn as needed and appended to the scenario.
    """
    c = scenario.servers
    need = depth if need is None else int(need)
    anchors = np.full(c, depth, dtype=np.int64) if anchors is None else np.asarray(anchors, dtype=np.int64)
    if depth == 0 and need == 0:
        return InitiationLog(0.0, 0, *(np.zeros(0) for _ in range(2)), np.zeros(0, dtype=np.int64), np.zeros(0))
    tb = scenario.backward_times()
    U, S = scenario.U_back, scenario.S_back
    t_ref = tb[depth - 1] if depth > 0 else 0.0

    times, nodes, custs, servs = [], [], [], []
    free = np.full(c, -math.inf)
    q = present = 0
    waiting_work = 0.0
    for i in range(c):
        js = np.arange(anchors[i], 0, -1)
        js = js[U[js - 1] == i]
        st = _node_starts(tb[js - 1], S[js - 1], -math.inf)
        if js.size:
            free[i] = st[-1] + S[js[-1] - 1]
        keep = st >= t_ref
        times.extend(st[keep])
        nodes.extend([i] * int(keep.sum()))
        custs.extend((-js[keep]).tolist())
        servs.extend(S[js[keep] - 1])
        early = js > depth
        q += int(np.sum(keep & early))
        present += int(np.sum(early & (st + S[js - 1] > t_ref)))
        waiting_work += float(S[js[keep & early] - 1].sum())
    target = q + need
    # starts before the next arrival: backward ones by search, forward ones
    # popped off a heap as the arrival clock advances
    back_sorted = np.sort(np.asarray(times, dtype=float))
    pending, done = [], 0
    ft = scenario.forward_times()
    k = 0
    while True:
        # customer 0 arrives at time 0; later arrival times need forward draws
        if k > 0 and scenario.forward_length < k:
            _extend(scenario, k, model, rng)
            ft = scenario.forward_times()
        t_next = ft[k]
        while pending and pending[0] < t_next:
            heapq.heappop(pending)
            done += 1
        if int(np.searchsorted(back_sorted, t_next)) + done >= target:
            break
        if scenario.forward_length <= k:
            _extend(scenario, k + 1, model, rng)
            ft = scenario.forward_times()
        u = int(scenario.U_fwd[k])
        start = max(t_next, free[u])
        free[u] = start + scenario.S_fwd[k]
        heapq.heappush(pending, start)
        times.append(start)
        nodes.append(u)
        custs.append(k)
        servs.append(scenario.S_fwd[k])
        k += 1
    order = np.lexsort((np.asarray(custs), np.asarray(nodes), np.asarray(times)))
    return InitiationLog(t_ref, q, np.asarray(times)[order], np.asarray(nodes)[order],
                         np.asarray(custs)[order], np.asarray(servs)[order], present, waiting_work)


@njit(cache=True)
def _node_starts(arrivals, services, free):
    starts = np.empty(arrivals.size)
    for n in range(arrivals.size):
        starts[n] = max(arrivals[n], free)
        free = starts[n] + services[n]
    return starts


def _extend(scenario, count, model, rng):
    if model is None or rng is None:
        raise ValueError("forward customers needed but no model/rng supplied")
    scenario.ensure_forward(count, model, rng)


def fifo_services(walk: BackwardWalk, depth: int, rng: np.random.Generator) -> tuple[np.ndarray, InitiationLog]:
    """Services of FIFO customers -depth..-1 in RA initiation order."""
    if depth == 0:
        return np.zeros(0), reconstruct_ra_forward(walk.scenario, 0, need=0)
    anchors = walk.anchors(depth)
    log = reconstruct_ra_forward(walk.scenario, depth, anchors=anchors, need=depth, model=walk.model, rng=rng)
    return log.fifo_services(depth), log


@dataclass
class DetailedState:
    """FIFO state seen by the arrival at time 0."""

    Q0: int
    L0: int
    residuals: np.ndarray
    W0: np.ndarray

    @property
    def waiting(self) -> int:
        return self.Q0 - self.L0


@njit(cache=True)
def _fifo_starts(free, arrivals, services):
    n = arrivals.size
    starts = np.empty(n)
    departs = np.empty(n)
    for k in range(n):
        j = 0
        for i in range(1, free.size):
            if free[i] < free[j]:
                j = i
        starts[k] = max(arrivals[k], free[j])
        free[j] = starts[k] + services[k]
        departs[k] = free[j]
    return starts, departs


def fifo_detailed(servers: int, start_time: float, residuals, arrival_times, services) -> DetailedState:
    """Event-level FIFO run from ``start_time`` to the arrival at time 0.

    ``residuals`` are the remaining services of the customers in service at
    ``start_time`` (nobody waiting).  Departures at exactly time 0 leave
    before the arrival at 0.
    """
    residuals = np.asarray(residuals, dtype=float)
    free = np.full(servers, float(start_time))
    free[: len(residuals)] = start_time + residuals
    st, dep = _fifo_starts(free, np.asarray(arrival_times, dtype=float), np.asarray(services, dtype=float))
    starts = np.concatenate([np.full(len(residuals), float(start_time)), st])
    departs = np.concatenate([start_time + residuals, dep])
    present = departs > 0
    busy = present & (starts <= 0)
    return DetailedState(int(present.sum()), int(busy.sum()), np.sort(departs[busy]),
                         np.sort(np.maximum(free, 0.0)))


def fifo_state_at_zero(scenario: BackwardScenario, depth: int, services) -> DetailedState:
    """FIFO from empty at customer ``-depth`` to time 0, with the given services."""
    if depth == 0:
        return DetailedState(0, 0, np.zeros(0), np.zeros(scenario.servers))
    tb = scenario.backward_times()[:depth][::-1]
    return fifo_detailed(scenario.servers, tb[0], [], tb, services)


@dataclass
class SampleRecord:
    seed: int | None
    algorithm: str
    N: int
    W0: list
    Q0: int
    L0: int
    residuals: list
    runtime_ms: float
    backward_arrivals: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(out.pop("extra"))
        return out


@dataclass(frozen=True)
class TruncationRule:
    """Interarrival cap used by the dominating walk only."""

    cap: float | None
    walk_arrival: object

    @property
    def identity(self) -> bool:
        return self.cap is None


def truncation_wrap(model: ModelSpec, b: float | str = "auto", *, margin: float = 0.05,
                    grid_step: float | None = None) -> tuple[ModelSpec, TruncationRule]:
    """Model with interarrivals min(T, b) for the walk, plus the replay rule.

    ``b="auto"`` picks the smallest grid point with c E min(T, b) above
    (1 + margin) E S and P(min(T, b) > S) > 0.
    """
    T, S, c = model.arrival, model.service, model.servers
    if not supports_allow_emptying(T, S):
        raise NoValidTruncation("P(T > S) = 0: no cap keeps the truncated system emptiable")
    if b == "auto":
        goal = (1.0 + margin) * S.mean / c
        if not T.mean > goal:
            raise NoValidTruncation("no cap gives the requested stability margin")
        hi = max(T.mean, 1e-12)
        while T.partial_mean(hi) <= goal:
            hi *= 2.0
        root = optimize.brentq(lambda x: T.partial_mean(x) - goal, 0.0, hi, xtol=1e-12)
        step = grid_step or T.mean / 16.0
        b = step * math.ceil(root / step)
        while not (b > S.lower and T.partial_mean(b) > goal):
            b += step
    b = float(b)
    if T.upper <= b:
        return model, TruncationRule(None, T)
    capped = Truncated(T, b)
    walk_model = build_model(capped, S, c)
    if not supports_allow_emptying(capped, S):
        raise NoValidTruncation(f"cap {b} leaves P(T > S) = 0")
    return walk_model, TruncationRule(b, capped)


def make_walk(model: ModelSpec, streams: Streams, *, mode: str = "envelope", a: float | None = None,
              truncate=None, budget: StepBudget | None = None, **tilt_kw) -> BackwardWalk:
    """Backward walk for ``model``, optionally driven by capped interarrival times."""
    walk_model, walk_arrival = model, None
    if truncate is not None:
        walk_model, rule = truncation_wrap(model, truncate)
        walk_arrival = None if rule.identity else rule.walk_arrival
    ctx = solve_tilt(walk_model, a, require_records=(mode == "records"), **tilt_kw)
    return BackwardWalk(model, ctx, streams, budget=budget, walk_arrival=walk_arrival, mode=mode)


def sample_stationary_kw(model: ModelSpec, rng=None, *, mode: str = "envelope", a: float | None = None,
                         truncate=None, budget: int | None = None, seed: int | None = None):
    """Exact stationary Kiefer-Wolfowitz vector seen by the arrival at time 0.

    Walks back to an arrival that finds the RA system empty, then runs FIFO
    forward from empty with RA-initiation-ordered services.
    Returns ``(W0, SampleRecord, DetailedState)``.
    """
    if not model.emptiable:
        raise NotApplicable("P(T > S) = 0; use the sandwich or Harris sampler")
    t0 = time.perf_counter()
    streams = as_streams(rng if rng is not None else seed)
    walk = make_walk(model, streams, mode=mode, a=a, truncate=truncate,
                     budget=StepBudget(budget) if budget else None)
    N = walk.record_coalescence() if mode == "records" else walk.first_empty()
    services, _ = fifo_services(walk, N, streams.forward)
    W = kw_run(np.zeros(model.servers), services, walk.scenario.T_back[:N][::-1])
    state = fifo_state_at_zero(walk.scenario, N, services)
    rec = SampleRecord(seed, "empty-ra", int(N), W.tolist(), state.Q0, state.L0, state.residuals.tolist(),
                       1000 * (time.perf_counter() - t0), walk.horizon)
    return W, rec, state
