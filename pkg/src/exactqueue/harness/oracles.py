"""Reference values for checking the exact samplers: closed forms, brute-force
forward simulations and goodness-of-fit tests."""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy import stats

from ..distributions import DistributionSpec
from ..errors import InsufficientData, Unstable

# ---------------------------------------------------------------------------
# closed forms


def erlang_pmf(lam: float, mu: float, c: int, K: int = 200) -> tuple[np.ndarray, float]:
    """M/M/c number-in-system pmf on {0..K} and the mass beyond K.

    The returned pmf is the exact stationary law restricted to {0..K}, so
    ``pmf.sum() == 1 - tail``.
    """
    if not lam < c * mu:
        raise Unstable(f"lambda={lam} >= c*mu={c * mu}")
    a = lam / mu
    rho = a / c
    logw = np.empty(K + 1)
    for n in range(K + 1):
        logw[n] = n * math.log(a) - math.lgamma(n + 1) if n <= c else \
            c * math.log(a) - math.lgamma(c + 1) + (n - c) * math.log(rho)
    # geometric tail beyond the last term (K >= c)
    log_tail = logw[K] + math.log(rho) - math.log1p(-rho) if K >= c else None
    top = logw.max()
    w = np.exp(logw - top)
    tail = math.exp(log_tail - top) if log_tail is not None else _tail_below_c(a, c, K, top)
    total = w.sum() + tail
    return w / total, tail / total


def _tail_below_c(a, c, K, top):
    s = 0.0
    for n in range(K + 1, c + 1):
        s += math.exp(n * math.log(a) - math.lgamma(n + 1) - top)
    return s + math.exp(c * math.log(a) - math.lgamma(c + 1) - top) * (a / c) / (1 - a / c)


def mm1_delay_cdf(lam: float, mu: float):
    """P(D <= x) for the M/M/1 FIFO delay (atom 1 - rho at 0)."""
    rho = lam / mu
    return lambda x: np.where(np.asarray(x) < 0, 0.0, 1.0 - rho * np.exp(-mu * (1 - rho) * np.asarray(x)))


def mm1_workload_cdf(lam: float, mu: float):
    """P(V <= x) for the time-stationary M/M/1 workload."""
    rho = lam / mu
    return lambda x: np.where(np.asarray(x) < 0, 0.0, 1.0 - rho * np.exp(-(mu - lam) * np.asarray(x)))


# ---------------------------------------------------------------------------
# goodness of fit


def merge_bins(observed: np.ndarray, expected: np.ndarray, min_expected: float = 5.0):
    """Merge adjacent bins from the right until every expected count is >= min_expected."""
    obs, exp = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed[::-1], expected[::-1]):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs.append(o_acc)
            exp.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if not obs:
            return np.array([o_acc]), np.array([e_acc])
        obs[-1] += o_acc
        exp[-1] += e_acc
    return np.array(obs[::-1]), np.array(exp[::-1])


def chi_square_pmf(samples, pmf, tail: float = 0.0, min_expected: float = 5.0) -> tuple[float, float]:
    """Chi-square test of integer samples against ``pmf`` on {0..K} plus a tail cell."""
    x = np.asarray(samples, dtype=np.int64)
    n = x.size
    if n < 100:
        raise InsufficientData(f"chi-square needs n >= 100, got {n}")
    K = len(pmf) - 1
    counts = np.bincount(np.minimum(x, K + 1), minlength=K + 2)
    probs = np.append(np.asarray(pmf, dtype=float), tail)
    probs = probs / probs.sum()
    obs, exp = merge_bins(counts.astype(float), n * probs, min_expected)
    if obs.size < 2:
        raise InsufficientData("fewer than two bins after merging")
    stat = float(((obs - exp) ** 2 / exp).sum())
    return stat, float(stats.chi2.sf(stat, obs.size - 1))


def ks_mixed(samples, cdf, rng: np.random.Generator, atom_at: float | None = 0.0) -> tuple[float, float]:
    """KS test against a continuous law with an optional atom.

    Samples are mapped through a randomized probability integral transform,
    u = V F(a) at the atom and u = F(x) elsewhere, and compared with U(0,1).
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InsufficientData("KS needs at least two samples")
    u = np.asarray(cdf(x), dtype=float)
    if atom_at is not None:
        at = x == atom_at
        u[at] = rng.random(at.sum()) * float(cdf(np.array(atom_at)))
    res = stats.kstest(u, "uniform")
    return float(res.statistic), float(res.pvalue)


def chi_square_two_sample(a, b, min_expected: float = 5.0) -> tuple[float, float]:
    """Contingency-table test that two integer samples share one law."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if min(a.size, b.size) < 100:
        raise InsufficientData("two-sample chi-square needs n >= 100 per side")
    top = int(max(a.max(), b.max()))
    ca = np.bincount(a, minlength=top + 1).astype(float)
    cb = np.bincount(b, minlength=top + 1).astype(float)
    pooled = (ca + cb) / (a.size + b.size)
    # merge on the smaller side's expected counts
    n_small = min(a.size, b.size)
    cols, acc_a, acc_b, acc_p = [], 0.0, 0.0, 0.0
    for k in range(top, -1, -1):
        acc_a += ca[k]
        acc_b += cb[k]
        acc_p += pooled[k]
        if acc_p * n_small >= min_expected:
            cols.append((acc_a, acc_b))
            acc_a = acc_b = acc_p = 0.0
    if acc_a or acc_b:
        if cols:
            cols[-1] = (cols[-1][0] + acc_a, cols[-1][1] + acc_b)
        else:
            cols.append((acc_a, acc_b))
    if len(cols) < 2:
        return 0.0, 1.0
    table = np.array(cols).T
    stat, p, _, _ = stats.chi2_contingency(table, correction=False)
    return float(stat), float(p)


def gof_test(samples, reference=None, kind: str = "chi-square", *, tail: float = 0.0,
             rng: np.random.Generator | None = None, atom_at: float | None = None) -> tuple[float, float]:
    """Dispatch to the chi-square, KS or two-sample test.

    ``reference`` is a pmf for ``"chi-square"``, a cdf for ``"KS"`` and the
    second sample for the two-sample kinds.
    """
    if kind == "chi-square":
        return chi_square_pmf(samples, reference, tail)
    if kind == "KS":
        if atom_at is None:
            x = np.asarray(samples, dtype=float)
            if x.size < 2:
                raise InsufficientData("KS needs at least two samples")
            res = stats.kstest(x, reference)
            return float(res.statistic), float(res.pvalue)
        return ks_mixed(samples, reference, rng or np.random.default_rng(0), atom_at)
    if kind == "two-sample":
        res = stats.ks_2samp(np.asarray(samples, dtype=float), np.asarray(reference, dtype=float))
        return float(res.statistic), float(res.pvalue)
    if kind == "two-sample-chi-square":
        return chi_square_two_sample(samples, reference)
    raise ValueError(f"unknown test kind {kind!r}")


# ---------------------------------------------------------------------------
# confidence intervals


def mean_ci(x, level: float = 0.95) -> tuple[float, float]:
    """Mean and normal-approximation half-width."""
    x = np.asarray(x, dtype=float)
    if x.size < 30:
        raise InsufficientData("normal-approximation CI needs n >= 30")
    z = stats.norm.ppf(0.5 + level / 2)
    return float(x.mean()), float(z * x.std(ddof=1) / math.sqrt(x.size))


def batch_means_ci(x, batches: int = 50, level: float = 0.95) -> tuple[float, float]:
    """Mean and half-width from non-overlapping batch means of a correlated series."""
    x = np.asarray(x, dtype=float)
    b = x.size // batches
    if b < 1:
        raise InsufficientData("series shorter than the number of batches")
    means = x[: b * batches].reshape(batches, b).mean(axis=1)
    t = stats.t.ppf(0.5 + level / 2, batches - 1)
    return float(means.mean()), float(t * means.std(ddof=1) / math.sqrt(batches))


def intervals_overlap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return abs(a[0] - b[0]) <= a[1] + b[1]


# ---------------------------------------------------------------------------
# brute-force forward simulation


@njit(cache=True)
def _fifo_chunk(T, S, c, free, deps, ndep, t, q_out):
    """FIFO c-server queue over one chunk of arrivals; state carried in free/deps."""
    for n in range(T.size):
        # departures at or before t leave first
        k = 0
        for m in range(ndep):
            if deps[m] > t:
                deps[k] = deps[m]
                k += 1
        ndep = k
        q_out[n] = ndep
        j = 0
        for i in range(1, c):
            if free[i] < free[j]:
                j = i
        start = max(t, free[j])
        free[j] = start + S[n]
        if ndep == deps.size:
            raise RuntimeError("departure buffer full")
        deps[ndep] = free[j]
        ndep += 1
        t += T[n]
    return ndep, t


def forward_fifo_q(arrival: DistributionSpec, service: DistributionSpec, c: int, n: int,
                   rng: np.random.Generator, warmup: int = 10**5, chunk: int = 10**6) -> np.ndarray:
    """Number in system found by each of ``n`` arrivals after a warm-up, FIFO, c servers."""
    free = np.zeros(c)
    deps = np.empty(1 << 16)
    ndep, t = 0, 0.0
    out = np.empty(n, dtype=np.int64)
    total = warmup + n
    done = 0
    while done < total:
        k = min(chunk, total - done)
        T = np.asarray(arrival.sample(rng, k), dtype=float)
        S = np.asarray(service.sample(rng, k), dtype=float)
        q = np.empty(k, dtype=np.int64)
        ndep, t = _fifo_chunk(T, S, c, free, deps, ndep, t, q)
        lo = max(warmup - done, 0)
        if lo < k:
            out[done + lo - warmup: done + k - warmup] = q[lo:]
        done += k
    return out


@njit(cache=True)
def _discipline_chunk(T, S, R, c, rule, free, wait, nwait, t, s_ptr, delays, nd):
    """Non-preemptive c-server queue; rule 0 FIFO, 1 LIFO, 2 random selection.

    ``wait`` holds arrival times of waiting customers in arrival order.
    Services are consumed in initiation order from ``S``.
    """
    r_ptr = 0
    for n in range(T.size):
        # start waiting customers on servers that free up before this arrival
        while nwait > 0:
            j = 0
            for i in range(1, c):
                if free[i] < free[j]:
                    j = i
            if free[j] > t:
                break
            if rule == 0:
                idx = 0
            elif rule == 1:
                idx = nwait - 1
            else:
                idx = int(R[r_ptr] * nwait)
                r_ptr += 1
            a = wait[idx]
            for m in range(idx, nwait - 1):
                wait[m] = wait[m + 1]
            nwait -= 1
            delays[nd] = free[j] - a
            nd += 1
            free[j] = free[j] + S[s_ptr]
            s_ptr += 1
        j = 0
        for i in range(1, c):
            if free[i] < free[j]:
                j = i
        if nwait == 0 and free[j] <= t:
            delays[nd] = 0.0
            nd += 1
            free[j] = t + S[s_ptr]
            s_ptr += 1
        else:
            if nwait == wait.size:
                raise RuntimeError("waiting buffer full")
            wait[nwait] = t
            nwait += 1
        t += T[n]
    return nwait, t, s_ptr, nd


def forward_discipline_delays(arrival: DistributionSpec, service: DistributionSpec, c: int, rule: str,
                              n: int, rng: np.random.Generator, warmup: int = 10**5,
                              chunk: int = 10**6) -> np.ndarray:
    """Delays of customers in initiation order under FIFO, LIFO or random selection."""
    code = {"FIFO": 0, "LIFO": 1, "RS": 2}[rule.upper()]
    free = np.zeros(c)
    wait = np.empty(1 << 16)
    nwait, t = 0, 0.0
    out = []
    total = warmup + n
    done = 0
    while done < total:
        k = min(chunk, total - done)
        T = np.asarray(arrival.sample(rng, k), dtype=float)
        # at most one initiation per arrival plus the backlog carried in
        S = np.asarray(service.sample(rng, k + nwait + 1), dtype=float)
        R = rng.random(k + nwait + 1)
        delays = np.empty(k + nwait + 1)
        nwait, t, used, nd = _discipline_chunk(T, S, R, c, code, free, wait, nwait, t, 0, delays, 0)
        out.append(delays[:nd])
        done += k
    d = np.concatenate(out)
    return d[warmup: warmup + n] if d.size > warmup else d[:0]


@njit(cache=True)
def _forkjoin_chunk(T, S, W, soj):
    c = W.size
    for n in range(T.size):
        best = 0.0
        for i in range(c):
            v = W[i] + S[n, i]
            if v > best:
                best = v
            W[i] = max(v - T[n], 0.0)
        soj[n] = best


def forward_forkjoin_sojourn(fj, n: int, rng: np.random.Generator, warmup: int = 10**5,
                             chunk: int = 10**6) -> np.ndarray:
    """Sojourn times of ``n`` consecutive fork-join jobs after a warm-up."""
    W = np.zeros(fj.servers)
    out = np.empty(n)
    total = warmup + n
    done = 0
    while done < total:
        k = min(chunk, total - done)
        T = np.asarray(fj.arrival.sample(rng, k), dtype=float)
        S = fj.services.sample(rng, k)
        soj = np.empty(k)
        _forkjoin_chunk(T, S, W, soj)
        lo = max(warmup - done, 0)
        if lo < k:
            out[done + lo - warmup: done + k - warmup] = soj[lo:]
        done += k
    return out


# ---------------------------------------------------------------------------
# coupled FIFO / random-assignment forward runs


def coupled_forward(T, S, U, c: int):
    """FIFO and RA queues from empty on the same arrivals.

    RA customer ``k`` joins node ``U[k]`` with service ``S[k]``; the FIFO queue
    receives the services in the order RA starts them.  Returns number in
    system and total work seen by each arrival for both systems, with total
    work counted as arrived service minus work already done.
    """
    T = np.asarray(T, dtype=float)
    S = np.asarray(S, dtype=float)
    U = np.asarray(U, dtype=np.int64)
    n = T.size
    t = np.concatenate([[0.0], np.cumsum(T[:-1])])
    start = np.empty(n)
    dep_ra = np.empty(n)
    free = np.zeros(c)
    for k in range(n):
        u = U[k]
        start[k] = max(t[k], free[u])
        free[u] = start[k] + S[k]
        dep_ra[k] = free[u]
    order = np.lexsort((np.arange(n), U, start))
    S_fifo = S[order]
    dep_f = np.empty(n)
    free = np.zeros(c)
    for k in range(n):
        j = int(np.argmin(free))
        st = max(t[k], free[j])
        free[j] = st + S_fifo[k]
        dep_f[k] = free[j]
    q_f, v_f = _seen_by_arrivals(t, dep_f, S_fifo)
    q_ra, v_ra = _seen_by_arrivals(t, dep_ra, S)
    # total work jumps by S[k] when customer k arrives, whoever later uses it
    handed = np.concatenate([[0.0], np.cumsum(S)[:-1]])
    used = np.concatenate([[0.0], np.cumsum(S_fifo)[:-1]])
    v_f = v_f + handed - used
    return q_f, q_ra, v_f, v_ra


@njit(cache=True)
def _seen_by_arrivals(t, dep, S):
    """Customers present and remaining work found by each arrival (earlier customers only)."""
    n = t.size
    q = np.zeros(n, dtype=np.int64)
    v = np.zeros(n)
    for k in range(n):
        for j in range(k):
            left = dep[j] - t[k]
            if left > 0:
                q[k] += 1
                v[k] += min(left, S[j])
    return q, v


@njit(cache=True)
def _ra_cycles(T, S, U, V, lengths, nlen, run):
    for k in range(T.size):
        empty = True
        for i in range(V.size):
            if V[i] > 0:
                empty = False
                break
        if empty:
            if run > 0:
                lengths[nlen] = run
                nlen += 1
            run = 0
        run += 1
        V[U[k]] += S[k]
        for i in range(V.size):
            V[i] = max(V[i] - T[k], 0.0)
    return nlen, run


def forward_ra_cycles(model, n: int, rng: np.random.Generator, chunk: int = 10**6) -> np.ndarray:
    """Lengths (in arrivals) of the completed cycles between arrivals finding the RA system empty."""
    V = np.zeros(model.servers)
    parts = []
    run = 0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        T = np.asarray(model.arrival.sample(rng, k), dtype=float)
        S = np.asarray(model.service.sample(rng, k), dtype=float)
        U = rng.integers(0, model.servers, k)
        lengths = np.empty(k + 1, dtype=np.int64)
        nlen, run = _ra_cycles(T, S, U, V, lengths, 0, run)
        parts.append(lengths[:nlen])
        done += k
    return np.concatenate(parts)[1:]  # the first cycle starts at the empty initial state


def emptiness_depth_mean(lengths, level: float = 0.95) -> tuple[float, float]:
    """Mean number of arrivals back to the last arrival that found the system empty.

    A stationary arrival sits at depth d of its cycle with probability
    P(L > d) / E L, so the mean depth is E[L (L - 1) / 2] / E L.  The
    half-width uses the delta method on the ratio of cycle means.
    """
    L = np.asarray(lengths, dtype=float)
    num = L * (L - 1) / 2
    r = num.mean() / L.mean()
    resid = num - r * L
    se = resid.std(ddof=1) / (math.sqrt(L.size) * L.mean())
    return float(r), float(stats.norm.ppf(0.5 + level / 2) * se)
