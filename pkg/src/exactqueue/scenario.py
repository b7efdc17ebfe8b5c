"""Write-once storage of the randomness driving one sample."""

from __future__ import annotations

import numpy as np


class _Column:
    """Append-only array; reads return read-only views."""

    def __init__(self, dtype):
        self._buf = np.empty(64, dtype=dtype)
        self._n = 0

    def __len__(self):
        return self._n

    def append(self, values) -> None:
        values = np.asarray(values, dtype=self._buf.dtype).ravel()
        need = self._n + values.size
        if need > self._buf.size:
            grown = np.empty(max(need, 2 * self._buf.size), dtype=self._buf.dtype)
            grown[: self._n] = self._buf[: self._n]
            self._buf = grown
        self._buf[self._n:need] = values
        self._n = need

    @property
    def values(self) -> np.ndarray:
        view = self._buf[: self._n].view()
        view.flags.writeable = False
        return view


class BackwardScenario:
    """Interarrival times, service times and routing marks around time 0.

    Backward entry ``j - 1`` belongs to customer ``-j`` (j = 1, 2, ...): it
    arrives ``T_back[j-1]`` time units before customer ``-j + 1``.  Forward
    entry ``k`` belongs to customer ``k`` (customer 0 arrives at time 0, and
    ``T_fwd[k]`` is the gap to customer ``k + 1``).  Routing marks are 0-based
    node indices.  ``T_walk`` holds the interarrival times seen by the
    dominating walk; it differs from ``T_back`` only under truncation.
    """

    def __init__(self, servers: int):
        self.servers = int(servers)
        self._T = _Column(float)
        self._Tw = _Column(float)
        self._S = _Column(float)
        self._U = _Column(np.int64)
        self._fT = _Column(float)
        self._fS = _Column(float)
        self._fU = _Column(np.int64)

    @property
    def horizon(self) -> int:
        return len(self._T)

    @property
    def forward_length(self) -> int:
        return len(self._fT)

    def append_backward(self, T, S, U, T_walk=None) -> None:
        T = np.asarray(T, dtype=float)
        S = np.asarray(S, dtype=float)
        U = np.asarray(U, dtype=np.int64)
        if not (T.shape == S.shape == U.shape):
            raise ValueError("backward columns must have equal length")
        if np.any(T < 0) or np.any(S < 0) or np.any((U < 0) | (U >= self.servers)):
            raise ValueError("invalid scenario entries")
        self._T.append(T)
        self._Tw.append(T if T_walk is None else T_walk)
        self._S.append(S)
        self._U.append(U)

    def append_forward(self, T, S, U) -> None:
        self._fT.append(T)
        self._fS.append(S)
        self._fU.append(U)

    T_back = property(lambda self: self._T.values)
    T_walk = property(lambda self: self._Tw.values)
    S_back = property(lambda self: self._S.values)
    U_back = property(lambda self: self._U.values)
    T_fwd = property(lambda self: self._fT.values)
    S_fwd = property(lambda self: self._fS.values)
    U_fwd = property(lambda self: self._fU.values)

    def backward_times(self) -> np.ndarray:
        """Arrival times t_{-j}, j = 1..horizon (decreasing)."""
        return -np.cumsum(self.T_back)

    def forward_times(self) -> np.ndarray:
        """Arrival times t_k, k = 0..forward_length."""
        return np.concatenate([[0.0], np.cumsum(self.T_fwd)])

    def ensure_forward(self, count: int, model, rng: np.random.Generator) -> None:
        """Draw fresh forward customers until at least ``count`` exist."""
        short = count - self.forward_length
        if short > 0:
            k = max(short, 16)
            T = np.asarray(model.arrival.sample(rng, k), dtype=float)
            S = np.asarray(model.service.sample(rng, k), dtype=float)
            U = rng.integers(0, self.servers, k)
            self.append_forward(T, S, U)
