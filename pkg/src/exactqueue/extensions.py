"""Samplers built on the exact FIFO draw: continuous time, single-server
workload, other service disciplines, fork-join sojourn, and a regeneration
sampler for two servers that never empty."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dcfp import DetailedState, SampleRecord, fifo_detailed, fifo_services, kw_run, kw_step, make_walk, sample_stationary_kw
from .distributions import (
    DistributionSpec,
    ModelSpec,
    distribution_from_config,
    positive_root,
    sample_equilibrium,
)
from .errors import InvalidParameters, NotApplicable, Unstable
from .rng import as_streams
from .rw_engine import IncrementLaw, StepBudget, global_max

# ---------------------------------------------------------------------------
# continuous time and GI/GI/1 workload


def continuous_time_kw(W0, model: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Time-stationary workload vector from an arrival-stationary one."""
    S = float(model.service.sample(rng))
    Te = float(sample_equilibrium(model.arrival, rng))
    return kw_step(W0, S, Te)


def stationary_workload_g1(model: ModelSpec, rng=None, method: str = "mixture", *, seed=None) -> float:
    """Exact time-stationary workload of a stable single-server queue."""
    if model.servers != 1:
        raise NotApplicable("single-server models only")
    if not model.rho < 1:
        raise Unstable("rho must be below 1")
    streams = as_streams(rng if rng is not None else seed)
    extra = streams.tail
    if method == "mixture":
        if extra.random() >= model.rho:
            return 0.0
        D = sample_stationary_kw(model, streams)[0][0]
        return float(D + sample_equilibrium(model.service, extra))
    if method == "lindley":
        D = sample_stationary_kw(model, streams)[0][0]
        S = float(model.service.sample(extra))
        Te = float(sample_equilibrium(model.arrival, extra))
        return max(D + S - Te, 0.0)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# other disciplines


def delay_under_discipline(state: DetailedState, discipline: str, model: ModelSpec,
                           rng: np.random.Generator) -> float:
    """Waiting time of the customer arriving at time 0 under FIFO, LIFO or random selection.

    ``state`` is the stationary state that customer finds; later services and
    arrivals are drawn fresh.
    """
    discipline = discipline.upper()
    if discipline not in ("FIFO", "LIFO", "RS"):
        raise ValueError(f"unknown discipline {discipline!r}")
    c = model.servers
    if state.Q0 < c:
        return 0.0
    free = list(np.asarray(state.residuals, dtype=float))
    tag = -1
    queue = list(range(state.Q0 - state.L0)) + [tag]
    next_id = len(queue)
    t_arr = float(model.arrival.sample(rng))
    while True:
        j = int(np.argmin(free))
        t_dep = free[j]
        if t_arr < t_dep:
            queue.append(next_id)
            next_id += 1
            t_arr += float(model.arrival.sample(rng))
            continue
        if discipline == "FIFO":
            who = queue.pop(0)
        elif discipline == "LIFO":
            who = queue.pop()
        else:
            who = queue.pop(int(rng.integers(0, len(queue))))
        if who == tag:
            return t_dep
        free[j] = t_dep + float(model.service.sample(rng))


# ---------------------------------------------------------------------------
# fork-join


@dataclass(frozen=True)
class ServiceVector:
    """Joint law of the per-node service requirements of one job.

    ``kind="independent"`` uses ``parts`` as the node marginals;
    ``kind="common-factor"`` sets S(i) = common + parts[i].
    """

    kind: str
    parts: tuple
    common: DistributionSpec | None = None

    @property
    def dim(self) -> int:
        return len(self.parts)

    def mean(self, i: int) -> float:
        return self.parts[i].mean + (self.common.mean if self.common is not None else 0.0)

    def mgf(self, i: int, eta: float) -> float:
        val = self.parts[i].mgf(eta)
        if self.common is not None:
            val *= self.common.mgf(eta)
        return val

    def mgf_bound(self, i: int) -> float:
        b = self.parts[i].mgf_bound
        return min(b, self.common.mgf_bound) if self.common is not None else b

    def sample(self, rng, n: int, tilt_node: int | None = None, eta: float = 0.0) -> np.ndarray:
        cols = []
        for i, part in enumerate(self.parts):
            law = part.tilt(eta) if i == tilt_node else part
            cols.append(np.asarray(law.sample(rng, n), dtype=float))
        out = np.column_stack(cols)
        if self.common is not None:
            law = self.common.tilt(eta) if tilt_node is not None else self.common
            out += np.asarray(law.sample(rng, n), dtype=float)[:, None]
        return out


def service_vector_from_config(cfg) -> ServiceVector:
    kind = cfg.get("kind", "independent")
    parts = tuple(distribution_from_config(p) for p in cfg["parts"])
    if kind == "independent":
        return ServiceVector(kind, parts)
    if kind == "common-factor":
        return ServiceVector(kind, parts, distribution_from_config(cfg["common"]))
    raise InvalidParameters(f"unknown service-vector kind {kind!r}")


@dataclass(frozen=True)
class ForkJoinModel:
    arrival: DistributionSpec
    services: ServiceVector

    def __post_init__(self):
        lam = 1.0 / self.arrival.mean
        for i in range(self.servers):
            if not lam * self.services.mean(i) < 1:
                raise Unstable(f"node {i} has load {lam * self.services.mean(i):.4g} >= 1")

    @property
    def servers(self) -> int:
        return self.services.dim

    def tilt_roots(self) -> np.ndarray:
        """Per node, the positive root of log E exp(theta (S(i) - T)) = 0."""
        roots = []
        for i in range(self.servers):
            f = lambda th, i=i: (math.log(self.services.mgf(i, th)) + math.log(self.arrival.laplace(th))
                                 if math.isfinite(self.services.mgf(i, th)) else math.inf)
            roots.append(positive_root(f, upper=self.services.mgf_bound(i), start=self.arrival.mean,
                                       what=f"fork-join tilt root of node {i}"))
        return np.array(roots)


class ForkJoinLaw(IncrementLaw):
    """Increments S(i) - T: every node receives work from every job."""

    def __init__(self, fj: ForkJoinModel, streams, slack: float = 1.0):
        super().__init__(streams.proposal)
        self.fj = fj
        self.dim = fj.servers
        self.thetas = fj.tilt_roots()
        self.up = self.down = math.log(self.dim) / float(self.thetas.min()) + slack
        self.mark_names = ("T", *[f"S{i}" for i in range(self.dim)])
        self.arrival_rng = streams.arrival
        self.service_rng = streams.service

    def _pack(self, t, s):
        return s - t[:, None], np.column_stack([t, s])

    def nominal(self, n):
        t = np.asarray(self.fj.arrival.sample(self.arrival_rng, n), dtype=float)
        return self._pack(t, self.fj.services.sample(self.service_rng, n))

    def tilted(self, n, direction):
        th = float(self.thetas[direction])
        t = np.asarray(self.fj.arrival.tilt(-th).sample(self.proposal_rng, n), dtype=float)
        return self._pack(t, self.fj.services.sample(self.proposal_rng, n, direction, th))

    def increments_from_marks(self, marks):
        return marks[:, 1:] - marks[:, :1]


def forkjoin_waits(fj: ForkJoinModel, rng=None, *, seed=None, budget: int | None = None) -> np.ndarray:
    """Exact stationary per-node waiting times found by the job arriving at 0."""
    streams = as_streams(rng if rng is not None else seed)
    law = ForkJoinLaw(fj, streams)
    seg = global_max(law, StepBudget(budget) if budget else None)
    return seg.peak


def forkjoin_sojourn(fj: ForkJoinModel, rng=None, *, seed=None, budget: int | None = None) -> float:
    """Exact stationary sojourn time of a fork-join job (max over nodes)."""
    streams = as_streams(rng if rng is not None else seed)
    V = forkjoin_waits(fj, streams, budget=budget)
    S = fj.services.sample(streams.forward, 1)[0]
    return float(np.max(V + S))


# ---------------------------------------------------------------------------
# two-server regeneration sampler


@dataclass(frozen=True)
class HarrisConfig:
    eps: float | None = None
    servers: int = 2

    def resolve(self, model: ModelSpec) -> float:
        eps = self.eps if self.eps is not None else model.arrival.quantile(0.5)
        if not eps > 0:
            raise InvalidParameters("eps must be positive")
        if not float(model.arrival.sf(eps)) > 0:
            raise InvalidParameters(f"P(T > {eps}) = 0; choose a smaller eps")
        return float(eps)


def node_occupancy(walk, node: int, j: int) -> int:
    """Customers present at ``node`` just before customer ``-j`` arrives (RA system)."""
    F, V = walk.frontier()
    while True:
        zero = np.flatnonzero(V[j:, node] == 0) if F >= j else np.zeros(0)
        if zero.size:
            anchor = j + int(zero[0])
            break
        walk.grow()
        F, V = walk.frontier()
    if anchor == j:
        return 0
    tb = walk.scenario.backward_times()
    U, S = walk.scenario.U_back, walk.scenario.S_back
    free = -math.inf
    departs = []
    for k in range(anchor, j, -1):
        if U[k - 1] == node:
            free = max(tb[k - 1], free) + S[k - 1]
            departs.append(free)
    return int(sum(d > tb[j - 1] for d in departs))


def harris_event(walk, V, j: int, eps: float) -> bool:
    """Regeneration event at customer -j (node 0 empty, node 1 nearly done)."""
    T = walk.scenario.T_back[j - 1]
    U = walk.scenario.U_back[j - 1]
    if not (V[j, 0] == 0 and 0 < V[j, 1] <= eps and T > eps and U == 0):
        return False
    if eps < walk.model.service.lower:
        return True
    return node_occupancy(walk, 1, j) == 1


def harris_sample_c2(model: ModelSpec, cfg: HarrisConfig | None = None, rng=None, *, seed=None,
                     budget: int | None = None, a: float | None = None):
    """Exact stationary FIFO draw for two servers when arrivals never find them both idle.

    Returns ``(W0, SampleRecord, DetailedState)``.
    """
    cfg = cfg or HarrisConfig()
    if model.servers != 2 or cfg.servers != 2:
        raise NotApplicable("regeneration sampler is for two servers")
    if model.emptiable:
        raise NotApplicable("P(T > S) > 0; use the empty-RA or sandwich sampler")
    eps = cfg.resolve(model)
    t0 = time.perf_counter()
    streams = as_streams(rng if rng is not None else seed)
    walk = make_walk(model, streams, a=a, budget=StepBudget(budget) if budget else None)
    j, found = 1, None
    while found is None:
        F, V = walk.frontier()
        while j <= F:
            if harris_event(walk, V, j, eps):
                found = j
                break
            j += 1
        if found is None:
            walk.grow()
    N = found - 1
    sc = walk.scenario
    # replay the five conditions on the accepted event
    F, V = walk.frontier()
    assert V[found, 0] == 0 and 0 < V[found, 1] <= eps
    assert sc.T_back[found - 1] > eps and sc.U_back[found - 1] == 0
    assert node_occupancy(walk, 1, found) == 1
    r = sc.S_back[found - 1] - sc.T_back[found - 1]
    W = np.sort(np.array([0.0, max(r, 0.0)]))
    services, _ = fifo_services(walk, N, streams.forward)
    W = kw_run(W, services, sc.T_back[:N][::-1])
    tb = sc.backward_times()
    times = tb[:N][::-1]
    start = times[0] if N else 0.0
    state = fifo_detailed(2, start, [r] if r > 0 else [], times, services)
    rec = SampleRecord(seed, "harris", N, W.tolist(), state.Q0, state.L0, state.residuals.tolist(),
                       1000 * (time.perf_counter() - t0), walk.horizon, {"eps": eps, "restart_state": [0.0, r]})
    return W, rec, state
