"""Sandwich sampler: FIFO bounds started at an inspection arrival, with back-off.

From customer ``-kappa`` an upper FIFO process starts at a bound on the
FIFO workload vector built from the RA state there, and a lower one starts
empty.  Both see the same arrivals and the RA-initiation-ordered services.
Once they meet, the FIFO state is known exactly; otherwise ``kappa`` doubles
and all recorded randomness is reused.

The sorted RA workload vector itself does not bound the FIFO vector under
this coupling: a FIFO customer may carry a service the RA system only starts
later.  What does hold is that the FIFO total work stays below the RA work
counted with services handed out in initiation order, and FIFO never has more
customers than RA.  A sorted vector with at most ``m`` positive entries and
total ``B`` has its k-th largest entry at most ``B / k``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dcfp import InitiationLog, SampleRecord, fifo_detailed, fifo_services, kw_step, make_walk
from .distributions import ModelSpec
from .errors import BudgetExceeded
from .rng import as_streams
from .rw_engine import StepBudget


@dataclass
class BoundPair:
    upper: np.ndarray
    lower: np.ndarray
    t: float
    kappa: int

    def __post_init__(self):
        self.upper = np.sort(np.asarray(self.upper, dtype=float))
        self.lower = np.sort(np.asarray(self.lower, dtype=float))
        if np.any(self.lower > self.upper) or np.any(self.lower < 0):
            raise ValueError("bounds must satisfy 0 <= lower <= upper")

    @property
    def met(self) -> bool:
        return bool(np.array_equal(self.upper, self.lower))


def bound_step(pair: BoundPair, S: float, T: float) -> BoundPair:
    """Advance both bounds over one arrival (service S) and the following gap T."""
    return BoundPair(kw_step(pair.upper, S, T), kw_step(pair.lower, S, T), pair.t + T, pair.kappa)


def drain(pair: BoundPair, dt: float) -> BoundPair:
    return BoundPair(np.maximum(pair.upper - dt, 0.0), np.maximum(pair.lower - dt, 0.0), pair.t + dt, pair.kappa)


@dataclass
class BoundRun:
    coalesced: bool
    tau: float | None
    start_index: int | None   # first customer (as j of -j) arriving after tau
    state: np.ndarray | None  # sorted workload vector at tau
    upper: np.ndarray         # found-by-arrival states, customers -kappa..0
    lower: np.ndarray


def upper_start(V, log: InitiationLog) -> np.ndarray:
    """Sorted vector bounding the FIFO workload vector at the reference arrival.

    ``V`` is the RA workload vector found there and ``log`` the initiation
    log from the same reference time.
    """
    c = len(V)
    # RA work with the next q initiated services in place of the waiting customers' own
    total = float(np.sum(V)) + float(log.services[:log.q].sum()) - log.waiting_work
    busy = min(c, log.present)
    U = np.zeros(c)
    if busy and total > 0:
        U[c - busy:] = total / np.arange(busy, 0, -1)
    return U


def run_bounds(V_kappa, arrival_times, gaps, services, clamps=None) -> BoundRun:
    """Evolve the bound pair from customer ``-kappa`` to the arrival at time 0.

    ``arrival_times``, ``gaps`` and ``services`` are listed for customers
    -kappa..-1 in that order; ``gaps[k]`` separates customer k from the next.
    ``clamps`` maps a position k to a valid upper bound on the state found
    by customer k; the upper process is cut down to it there.
    """
    kappa = len(arrival_times)
    c = len(V_kappa)
    clamps = clamps or {}
    up = np.sort(np.asarray(V_kappa, dtype=float))
    lo = np.zeros(c)
    ups = np.empty((kappa + 1, c))
    los = np.empty((kappa + 1, c))
    ups[0], los[0] = up, lo
    tau = start = state = None
    if np.array_equal(up, lo):
        tau, start, state = arrival_times[0] if kappa else 0.0, kappa, lo.copy()
    for k in range(kappa):
        pu = up.copy()
        pu[0] += services[k]
        pl = lo.copy()
        pl[0] += services[k]
        pu.sort()
        pl.sort()
        up = np.maximum(pu - gaps[k], 0.0)
        lo = np.maximum(pl - gaps[k], 0.0)
        met = np.array_equal(up, lo)
        if k + 1 in clamps:
            up = np.minimum(up, clamps[k + 1])
        ups[k + 1], los[k + 1] = up, lo
        if tau is None and met:
            diff = pu != pl
            s_star = float(pu[diff].max()) if diff.any() else 0.0
            tau = arrival_times[k] + s_star
            start = kappa - k - 1
            state = np.maximum(pu - s_star, 0.0)
        elif tau is None and np.array_equal(up, lo):
            # met through the clamp; only known at this arrival
            tau = arrival_times[k + 1] if k + 1 < kappa else 0.0
            start = kappa - k - 1
            state = up.copy()
    return BoundRun(tau is not None, tau, start, state, ups, los)


@dataclass
class SandwichResult:
    W0: np.ndarray
    Q0: int
    L0: int
    residuals: np.ndarray
    age: float
    kappa_final: int
    tau: float
    record: SampleRecord
    history: list = field(default_factory=list, repr=False)


def sample_stationary_sandwich(model: ModelSpec, rng=None, *, kappa0: int = 16, mode: str = "envelope",
                               a: float | None = None, truncate=None, budget: int | None = None,
                               seed: int | None = None, max_kappa: int = 2**26,
                               keep_history: bool = False) -> SandwichResult:
    """Exact stationary FIFO state seen by the arrival at time 0."""
    t0 = time.perf_counter()
    streams = as_streams(rng if rng is not None else seed)
    walk = make_walk(model, streams, mode=mode, a=a, truncate=truncate,
                     budget=StepBudget(budget) if budget else None)
    kappa = int(kappa0)
    history = []
    starts = {}  # upper start per inspection depth tried so far
    while True:
        V = walk.workloads(kappa)
        services, log = fifo_services(walk, kappa, streams.forward)
        starts[kappa] = upper_start(V[kappa], log)
        tb = walk.scenario.backward_times()
        times = tb[:kappa][::-1]
        gaps = walk.scenario.T_back[:kappa][::-1]
        clamps = {kappa - k: U for k, U in starts.items() if k < kappa}
        run = run_bounds(starts[kappa], times, gaps, services, clamps)
        if keep_history:
            history.append((kappa, run.upper, run.lower))
        if run.coalesced:
            break
        kappa *= 2
        if kappa > max_kappa:
            raise BudgetExceeded(f"no coalescence up to depth {max_kappa}")
    k0 = kappa - run.start_index
    resid = run.state[run.state > 0]
    state = fifo_detailed(model.servers, run.tau, resid, times[k0:], services[k0:])
    W0 = run.upper[-1]
    age = float(walk.scenario.T_back[0])
    rec = SampleRecord(seed, "sandwich", kappa, W0.tolist(), state.Q0, state.L0, state.residuals.tolist(),
                       1000 * (time.perf_counter() - t0), walk.horizon,
                       {"kappa_final": kappa, "tau": run.tau, "coalesced": True})
    return SandwichResult(W0, state.Q0, state.L0, state.residuals, age, kappa, run.tau, rec, history)
