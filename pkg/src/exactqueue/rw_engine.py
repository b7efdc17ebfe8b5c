"""Exact simulation of negative-drift random walks together with their future maxima.

The walks are built from segments.  A segment walks under the nominal law
until every coordinate has dropped ``down`` below the last milestone, then
asks (by an exponentially tilted proposal plus acceptance/rejection) whether
the walk ever climbs ``up`` above that point.  A rejected proposal certifies
that it never does, which ends the segment.  Later segments are fresh
segments conditioned on never rising above ``up``, so after each segment end
the whole future of the walk is capped.

``BackwardWalk`` couples one routing/interarrival walk with one service walk
per node; their sum is the time-reversed increment walk of the random
assignment queue, whose future maxima give the backward workloads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .distributions import ModelSpec, TiltContext, sample_tilted_step
from .errors import BudgetExceeded
from .rng import Streams
from .scenario import BackwardScenario

DEFAULT_STEP_BUDGET = 10**8


class StepBudget:
    """Counts elementary walk steps and raises once the limit is passed."""

    def __init__(self, limit: int = DEFAULT_STEP_BUDGET):
        self.limit = int(limit)
        self.used = 0

    def spend(self, k: int) -> None:
        self.used += int(k)
        if self.used > self.limit:
            raise BudgetExceeded(f"step budget of {self.limit} exhausted")


# ---------------------------------------------------------------------------
# increment laws


class IncrementLaw:
    """Nominal and tilted increment samplers for a walk of dimension ``dim``.

    Tilting toward coordinate ``i`` multiplies the nominal law by
    ``exp(thetas[i] * increment[i])``, which has unit mean.
    """

    dim: int
    up: float
    down: float
    thetas: np.ndarray
    mark_names: tuple

    def __init__(self, proposal_rng: np.random.Generator):
        self.proposal_rng = proposal_rng
        self.proposals = 0
        self.max_accept_ratio = 0.0

    def nominal(self, n: int):
        raise NotImplementedError

    def tilted(self, n: int, direction: int):
        raise NotImplementedError

    def increments_from_marks(self, marks: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def ratio_bound(self) -> float:
        return self.dim * math.exp(-float(np.min(self.thetas)) * self.up)

    def accept_probability(self, y: np.ndarray) -> float:
        """Inverse likelihood ratio of the uniform mixture of tilts at ``y``."""
        p = 1.0 / float(np.mean(np.exp(self.thetas * y)))
        self.proposals += 1
        self.max_accept_ratio = max(self.max_accept_ratio, p)
        bound = self.ratio_bound
        if not (p <= bound * (1 + 1e-12) and bound < 1.0):
            raise AssertionError(f"acceptance ratio {p} exceeds bound {bound}")
        return p


class RoutingLaw(IncrementLaw):
    """Increments a*1{U = i} - T for the routing/interarrival walk."""

    mark_names = ("U", "T")

    def __init__(self, model: ModelSpec, ctx: TiltContext, streams: Streams, arrival=None):
        super().__init__(streams.proposal)
        self.dim = model.servers
        self.up = self.down = ctx.m
        self.thetas = np.full(self.dim, ctx.theta)
        self.ctx = ctx
        # ``ctx`` must be solved for the same interarrival law the walk uses
        self.arrival = model.arrival if arrival is None else arrival
        self.routing_rng = streams.routing
        self.arrival_rng = streams.arrival
        self._eye = np.eye(self.dim)

    def _pack(self, u, t):
        inc = self.ctx.a * self._eye[u] - t[:, None]
        return inc, np.column_stack([u.astype(float), t])

    def nominal(self, n):
        u = self.routing_rng.integers(0, self.dim, n)
        t = np.asarray(self.arrival.sample(self.arrival_rng, n), dtype=float)
        return self._pack(u, t)

    def tilted(self, n, direction):
        return self._pack(*sample_tilted_step(self.ctx, direction, self.proposal_rng, n))

    def increments_from_marks(self, marks):
        return self._pack(marks[:, 0].astype(np.int64), marks[:, 1])[0]


class ServiceLaw(IncrementLaw):
    """Scalar increments S - a for one node's service walk."""

    mark_names = ("S",)

    def __init__(self, model: ModelSpec, ctx: TiltContext, streams: Streams):
        super().__init__(streams.proposal)
        self.dim = 1
        self.up = ctx.m_scalar
        self.down = ctx.down_mult * ctx.m_scalar
        self.thetas = np.array([ctx.eta])
        self.a = ctx.a
        self.service = model.service
        self.tilted_service = ctx.tilted_service
        self.service_rng = streams.service

    def nominal(self, n):
        s = np.asarray(self.service.sample(self.service_rng, n), dtype=float)
        return (s - self.a)[:, None], s[:, None]

    def tilted(self, n, direction):
        s = np.asarray(self.tilted_service.sample(self.proposal_rng, n), dtype=float)
        return (s - self.a)[:, None], s[:, None]

    def increments_from_marks(self, marks):
        return marks[:, :1] - self.a


# ---------------------------------------------------------------------------
# segments


def _run_until(sample: Callable, start: np.ndarray, hit: Callable, budget: StepBudget,
               block: int = 32, max_block: int = 4096):
    """Walk from ``start`` until ``hit`` first holds; return positions and marks.

    Draws are made in blocks; draws past the hitting step are discarded,
    which leaves the law of the used prefix unchanged.
    """
    pos_parts, mark_parts = [], []
    pos = start
    while True:
        inc, marks = sample(block)
        path = pos + np.cumsum(inc, axis=0)
        ok = hit(path)
        if ok.any():
            k = int(np.argmax(ok)) + 1
            budget.spend(k)
            pos_parts.append(path[:k])
            mark_parts.append(marks[:k])
            break
        budget.spend(block)
        pos_parts.append(path)
        mark_parts.append(marks)
        pos = path[-1]
        block = min(2 * block, max_block)
    return np.concatenate(pos_parts), np.concatenate(mark_parts)


@dataclass
class Segment:
    positions: np.ndarray  # (n + 1, dim), positions[0] = 0
    marks: np.ndarray      # (n, q)
    D: list
    G: list
    peak: np.ndarray

    @property
    def length(self) -> int:
        return len(self.marks)


def global_max(law: IncrementLaw, budget: StepBudget | None = None) -> Segment:
    """One segment from the origin; ``peak`` is the all-time maximum of its walk.

    The walk continues past the segment end but is certified never to exceed
    ``positions[-1] + law.up`` in any coordinate.
    """
    budget = budget or StepBudget()
    d = law.dim
    cur = np.zeros(d)
    level = np.zeros(d)
    pos_parts = [np.zeros((1, d))]
    mark_parts = []
    n = 0
    D, G = [0], [math.inf]
    while True:
        target = level - law.down
        path, marks = _run_until(law.nominal, cur, lambda p: (p < target).all(axis=1), budget)
        pos_parts.append(path)
        mark_parts.append(marks)
        n += len(marks)
        cur = path[-1]
        D.append(n)
        level = cur.copy()

        direction = int(law.proposal_rng.integers(0, d))
        ypath, ymarks = _run_until(lambda k: law.tilted(k, direction), np.zeros(d),
                                   lambda p: (p > law.up).any(axis=1), budget)
        p_accept = law.accept_probability(ypath[-1])
        if law.proposal_rng.random() < p_accept:
            pos_parts.append(cur + ypath)
            mark_parts.append(ymarks)
            n += len(ymarks)
            cur = pos_parts[-1][-1]
            G.append(n)
        else:
            G.append(math.inf)
            break
    positions = np.concatenate(pos_parts)
    return Segment(positions, np.concatenate(mark_parts), D, G, positions.max(axis=0))


# ---------------------------------------------------------------------------
# ledgers


def suffix_max(a: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(a[::-1], axis=0)[::-1]


class MilestoneLedger:
    """A walk built from whole segments, with milestones and record sets."""

    def __init__(self, law: IncrementLaw, budget: StepBudget | None = None):
        self.law = law
        self.budget = budget or StepBudget()
        d = law.dim
        self._pos_parts = [np.zeros((1, d))]
        self._mark_parts = [np.zeros((0, len(law.mark_names)))]
        self._cache = None
        self.D = [0]
        self.G = [math.inf]
        self.segment_ends = [0]
        self.patch_attempts = 0
        self.patch_accepts = 0

    @property
    def started(self) -> bool:
        return len(self.segment_ends) > 1

    def _arrays(self):
        if self._cache is None:
            self._cache = (np.concatenate(self._pos_parts), np.concatenate(self._mark_parts))
            self._pos_parts = [self._cache[0]]
            self._mark_parts = [self._cache[1]]
        return self._cache

    @property
    def positions(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def marks(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def horizon(self) -> int:
        return len(self.positions) - 1

    @property
    def end(self) -> np.ndarray:
        return self._pos_parts[-1][-1]

    @property
    def cap(self) -> np.ndarray:
        """Certified bound on every position at or beyond the horizon."""
        if not self.started:
            return np.full(self.law.dim, np.inf)
        return self.end + self.law.up

    def extend_patch(self) -> Segment:
        """Append one segment (conditioned on staying below the cap if not the first)."""
        if not self.started:
            seg = global_max(self.law, self.budget)
        else:
            while True:
                seg = global_max(self.law, self.budget)
                self.patch_attempts += 1
                if np.all(seg.peak <= self.law.up):
                    self.patch_accepts += 1
                    break
        offset = self.horizon
        base = self.end
        self._pos_parts.append(base + seg.positions[1:])
        self._mark_parts.append(seg.marks)
        self._cache = None
        self.D.extend(offset + k for k in seg.D[1:])
        self.G.extend(offset + g for g in seg.G[1:])
        self.segment_ends.append(self.horizon)
        return seg

    def confirmed_window(self) -> int:
        """Last index whose record status can no longer change."""
        return self.D[-2] if len(self.D) >= 2 else -1

    def records(self) -> np.ndarray:
        """Confirmed indices n with position n >= every later position."""
        w = self.confirmed_window()
        if w < 0:
            return np.zeros(0, dtype=np.int64)
        pos = self.positions
        sm = suffix_max(pos)
        return np.flatnonzero((pos[: w + 1] >= sm[: w + 1]).all(axis=1))

    def check_consistency(self, atol: float = 1e-9) -> None:
        """Replay the stored marks and verify positions and milestone rules."""
        pos, marks = self.positions, self.marks
        inc = self.law.increments_from_marks(marks)
        if not np.allclose(np.diff(pos, axis=0), inc, atol=atol, rtol=0):
            raise AssertionError("positions inconsistent with marks")
        for k in range(1, len(self.D)):
            if not np.all(pos[self.D[k]] < pos[self.D[k - 1]] - self.law.down + atol):
                raise AssertionError(f"milestone {k} does not descend")

    def trace_rows(self):
        pos, marks = self.positions, self.marks
        d_set, g_set = set(self.D), {int(g) for g in self.G if math.isfinite(g)}
        ends = set(self.segment_ends)
        for k in range(1, self.horizon + 1):
            event = "+".join(tag for tag, hit in (("D", k in d_set), ("G", k in g_set), ("end", k in ends)) if hit)
            yield [k, *marks[k - 1].tolist(), *pos[k].tolist(), event]

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", *self.law.mark_names, *[f"y{i}" for i in range(self.law.dim)], "event"])
            w.writerows(self.trace_rows())


class ScalarLedger(MilestoneLedger):
    """Service walk of one node, indexed by that node's own arrivals."""

    @property
    def services(self) -> np.ndarray:
        return self.marks[:, 0]


def extend_multidim(ledger: MilestoneLedger, predicate: Callable, threshold: float = 1) -> MilestoneLedger:
    """Add whole segments until ``predicate(ledger) >= threshold``."""
    if not ledger.started:
        ledger.extend_patch()
    while predicate(ledger) < threshold:
        ledger.extend_patch()
    return ledger


extend_scalar = extend_multidim


def index_map(U: np.ndarray, node: int) -> np.ndarray:
    """Global backward indices of the arrivals routed to ``node`` (1-based, in order)."""
    return np.flatnonzero(np.asarray(U) == node) + 1


# ---------------------------------------------------------------------------
# coupled backward walk


@dataclass
class CoalescenceResult:
    N: int
    scenario: BackwardScenario
    walk: "BackwardWalk" = field(repr=False)
    mode: str = "envelope"


class BackwardWalk:
    """Time-reversed increment walk of the random assignment queue.

    ``R[n]`` is the sum of the first ``n`` backward increments
    ``S_{-j} e_{U_{-j}} - T_{-j}`` and the workload found by customer ``-n`` is
    ``max_{k >= n} R[k] - R[n]``.  Two certification rules are available:

    * ``"envelope"`` bounds the whole future of every coordinate from the caps
      of the two component walks and marks ``n`` exact once the observed
      maximum over ``[n, horizon]`` reaches that bound;
    * ``"records"`` waits for an index that is simultaneously a confirmed
      record of the routing walk and of every node's service walk.
    """

    def __init__(self, model: ModelSpec, ctx: TiltContext, streams: Streams, *,
                 budget: StepBudget | None = None, walk_arrival=None, mode: str = "envelope"):
        if mode not in ("envelope", "records"):
            raise ValueError(f"unknown certification mode {mode!r}")
        self.model = model
        self.ctx = ctx
        self.streams = streams
        self.mode = mode
        self.budget = budget or StepBudget()
        self.c = model.servers
        self.walk_arrival = walk_arrival
        self.y = MilestoneLedger(RoutingLaw(model, ctx, streams, walk_arrival), self.budget)
        service_law = ServiceLaw(model, ctx, streams)
        self.x = [ScalarLedger(service_law, self.budget) for _ in range(self.c)]
        self.scenario = BackwardScenario(self.c)
        self._R = None
        self._counts = None

    # -- growth ---------------------------------------------------------
    @property
    def horizon(self) -> int:
        return self.scenario.horizon

    def grow(self) -> None:
        """Extend the routing walk by one segment and keep everything in sync."""
        self.y.extend_patch()
        self._sync()

    def _sync(self) -> None:
        old = self.scenario.horizon
        marks = self.y.marks
        U = marks[:, 0].astype(np.int64)
        counts = np.bincount(U, minlength=self.c)
        for i in range(self.c):
            while self.x[i].horizon < counts[i]:
                self.x[i].extend_patch()
        new_U = U[old:]
        T_walk = marks[old:, 1]
        T = T_walk
        if self.walk_arrival is not None and hasattr(self.walk_arrival, "cap"):
            T = T_walk.copy()
            at_cap = np.flatnonzero(T_walk >= self.walk_arrival.cap)
            for k in at_cap:
                T[k] = self.model.arrival.sample_tail(self.walk_arrival.cap, self.streams.tail)
        prev = np.bincount(U[:old], minlength=self.c)
        S = np.empty(len(new_U))
        for i in range(self.c):
            at = np.flatnonzero(new_U == i)
            S[at] = self.x[i].services[prev[i]:prev[i] + at.size]
        self.scenario.append_backward(T, S, new_U, T_walk=T_walk)
        self._R = None

    # -- derived paths --------------------------------------------------
    def counts(self) -> np.ndarray:
        """counts[n, i] = number of the first n backward arrivals routed to node i."""
        U = self.scenario.U_back
        out = np.zeros((len(U) + 1, self.c), dtype=np.int64)
        out[1:] = np.cumsum(U[:, None] == np.arange(self.c), axis=0)
        return out

    def R(self) -> np.ndarray:
        if self._R is None:
            cnt = self.counts()
            X = np.column_stack([self.x[i].positions[cnt[:, i], 0] for i in range(self.c)])
            self._R = self.y.positions[: len(cnt)] + X
            self._counts = cnt
        return self._R

    def future_bound(self) -> np.ndarray:
        """Upper bound on R[k] for every k beyond the horizon, per coordinate."""
        cnt = self.counts()[-1]
        bx = np.empty(self.c)
        for i in range(self.c):
            xp = self.x[i].positions[:, 0]
            bx[i] = max(xp[cnt[i]:].max(), self.x[i].cap[0])
        return bx + self.y.cap

    # -- certification --------------------------------------------------
    def frontier(self) -> tuple[int, np.ndarray]:
        """Largest F with V^0_{-n} exact for all n <= F, and those workloads."""
        if not self.y.started:
            return -1, np.zeros((0, self.c))
        R = self.R()
        sm = suffix_max(R)
        if self.mode == "envelope":
            ok = sm >= self.future_bound()
            F = int(ok.sum(axis=0).min()) - 1
        else:
            F = self._records_frontier()
        return F, sm[: F + 1] - R[: F + 1]

    def joint_records(self) -> np.ndarray:
        """Confirmed indices that are records of the routing walk and of every service walk."""
        tau_y = self.y.records()
        cnt = self.counts()
        ok = np.ones(len(tau_y), dtype=bool)
        for i in range(self.c):
            ok &= np.isin(cnt[tau_y, i], self.x[i].records())
        return tau_y[ok]

    def _records_frontier(self) -> int:
        # beyond a joint record the walk never exceeds its value there, so the
        # observed suffix maxima are exact up to the last confirmed one
        rec = self.joint_records()
        return int(rec[-1]) if rec.size else -1

    def workloads(self, upto: int) -> np.ndarray:
        """V^0_{-n} for n = 0..upto, growing the walk as needed."""
        while True:
            F, V = self.frontier()
            if F >= upto:
                return V[: upto + 1]
            self.grow()

    def first_empty(self, start: int = 0) -> int:
        """Smallest n >= start with V^0_{-n} = 0."""
        while True:
            F, V = self.frontier()
            if F >= start:
                hits = np.flatnonzero((V[start:] == 0).all(axis=1))
                if hits.size:
                    return start + int(hits[0])
            self.grow()

    def anchors(self, depth: int) -> np.ndarray:
        """Per node, the smallest n >= depth at which that node is found empty."""
        while True:
            F, V = self.frontier()
            if F >= depth:
                zero = V[depth:] == 0
                if zero.any(axis=0).all():
                    return depth + np.argmax(zero, axis=0)
            self.grow()

    # -- record-based detection ----------------------------------------
    def record_coalescence(self) -> int:
        """Smallest index that is a joint record of all component walks."""
        if not self.y.started:
            self.grow()
        n_seen = np.zeros(self.c, dtype=np.int64)
        while True:
            tau_x = []
            for i in range(self.c):
                extend_scalar(self.x[i], lambda led: len(led.records()) - n_seen[i])
                rec = self.x[i].records()
                n_seen[i] = len(rec)
                tau_x.append(rec)
            need = np.array([r[-1] + 1 for r in tau_x])
            while np.any(self.counts()[-1] < need):
                self.grow()
            rec = self.joint_records()
            if rec.size:
                return int(rec[0])
            self.grow()


def coalescence(model: ModelSpec, ctx: TiltContext, streams: Streams, *, mode: str = "records",
                budget: StepBudget | None = None, walk_arrival=None) -> CoalescenceResult:
    """Backward walk run until an index at which the random assignment queue is empty."""
    walk = BackwardWalk(model, ctx, streams, budget=budget, walk_arrival=walk_arrival, mode=mode)
    N = walk.record_coalescence() if mode == "records" else walk.first_empty()
    return CoalescenceResult(N, walk.scenario, walk, mode)


def backward_workloads(walk: BackwardWalk, kappa: int) -> np.ndarray:
    return walk.workloads(kappa)
