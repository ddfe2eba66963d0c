"""Markov-modulated Poisson packet arrivals.

The modulating chain is given by a rate generator in 1/minute, while the
per-phase packet rates are expressed per frame and per connection.  Phases
are indexed from 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.sparse.csgraph import connected_components

PMF_TOL = 1e-12


class NotIrreducibleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Pmf:
    """Discrete distribution on {0, ..., support_max}."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("pmf needs a non-empty 1-d probability vector")
        if np.any(p < 0):
            raise ValueError("pmf has negative entries")
        if abs(p.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"pmf sums to {p.sum():.15g}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def support_max(self) -> int:
        return self.probs.size - 1

    def __len__(self):
        return self.probs.size

    def __getitem__(self, n):
        return self.probs[n]

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    @classmethod
    def point_mass(cls, n: int) -> "Pmf":
        p = np.zeros(n + 1)
        p[n] = 1.0
        return cls(p)


@dataclass(frozen=True, eq=False)
class MmppParams:
    generator: np.ndarray
    arrival_rates: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.generator, dtype=float))
        lam = np.atleast_1d(np.asarray(self.arrival_rates, dtype=float))
        S = q.shape[0]
        if q.shape != (S, S):
            raise ValueError("generator must be square")
        if lam.shape != (S,):
            raise ValueError(f"expected {S} arrival rates, got {lam.size}")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise ValueError("off-diagonal generator rates must be >= 0")
        if np.any(np.abs(q.sum(axis=1)) > 1e-9 * max(1.0, np.abs(q).max())):
            raise ValueError("generator rows must sum to 0")
        if np.any(lam < 0):
            raise ValueError("arrival rates must be >= 0")
        if S > 1:
            n_comp, _ = connected_components(off > 0, directed=True, connection="strong")
            if n_comp != 1:
                raise NotIrreducibleError("phase generator is not irreducible")
        # diagonal is re-derived so rows sum to zero exactly
        q = off - np.diag(off.sum(axis=1))
        q.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "generator", q)
        object.__setattr__(self, "arrival_rates", lam)

    @property
    def phase_count(self) -> int:
        return self.arrival_rates.size

    @classmethod
    def from_offdiagonal(cls, rates, arrival_rates) -> "MmppParams":
        off = np.array(rates, dtype=float)
        np.fill_diagonal(off, 0.0)
        return cls(off - np.diag(off.sum(axis=1)), arrival_rates)


def stationary_phase_distribution(params: MmppParams) -> np.ndarray:
    """Solve pi Q = 0, sum(pi) = 1 for the modulating chain."""
    q = params.generator
    S = q.shape[0]
    if S == 1:
        return np.ones(1)
    # replace one balance equation with the normalisation
    a = q.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"stationary phase solve failed: {exc}") from exc
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def mean_arrival_rate(pi, rates) -> float:
    pi = np.asarray(pi, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if pi.shape != rates.shape:
        raise ValueError(f"length mismatch: {pi.shape} vs {rates.shape}")
    return float(pi @ rates)


def phase_step_matrix(params: MmppParams, frame_duration: float) -> np.ndarray:
    """exp(Q * frame_duration) by uniformisation; frame_duration in minutes.

    Long horizons are split into 2**k sub-steps with q*t <= 1 and squared
    back, so the Poisson weights never underflow.
    """
    if frame_duration <= 0:
        raise ValueError("frame_duration must be > 0")
    q = params.generator
    S = q.shape[0]
    qmax = float(np.max(-np.diag(q)))
    if qmax == 0.0:
        return np.eye(S)
    halvings = max(0, int(np.ceil(np.log2(qmax * frame_duration))))
    t = frame_duration / 2.0**halvings
    qt = qmax * t
    unif = np.eye(S) + q / qmax

    weights = [np.exp(-qt)]
    tail = 1.0 - weights[0]
    while tail >= 1e-14:
        k = len(weights)
        weights.append(weights[-1] * qt / k)
        tail -= weights[-1]
    weights[-1] += max(tail, 0.0)

    term = np.eye(S)
    out = weights[0] * term
    for w in weights[1:]:
        term = term @ unif
        out += w * term
    for _ in range(halvings):
        out = out @ out
    out = np.clip(out, 0.0, None)
    return out / out.sum(axis=1, keepdims=True)


def poisson_event_pmf(rate: float, interval: float, truncation: int) -> Pmf:
    """Counts of a Poisson stream over ``interval``, tail folded into the last bin."""
    if rate < 0 or interval <= 0 or truncation < 0:
        raise ValueError("need rate >= 0, interval > 0, truncation >= 0")
    mean = rate * interval
    if mean == 0.0:
        p = np.zeros(truncation + 1)
        p[0] = 1.0
        return Pmf(p)
    n = np.arange(truncation + 1)
    p = stats.poisson.pmf(n, mean)
    p[truncation] = stats.poisson.sf(truncation - 1, mean)
    return Pmf(p / p.sum())


def poisson_truncation(mean: float, tail: float = 1e-12) -> int:
    """Smallest n with P(N > n) < tail."""
    if mean == 0.0:
        return 0
    n = int(stats.poisson.isf(tail, mean))
    while stats.poisson.sf(n, mean) >= tail:
        n += 1
    return max(n, 1)


def batch_arrival_pmf(connections: int, phase: int, params: MmppParams, max_batch: int) -> Pmf:
    """Aggregate packet arrivals in one frame from ``connections`` sources in ``phase``.

    The cap ``max_batch`` applies to the aggregate, with the Poisson tail
    folded into the top bin.
    """
    if connections < 0:
        raise ValueError("connections must be >= 0")
    if not 0 <= phase < params.phase_count:
        raise ValueError(f"phase {phase} out of range")
    return poisson_event_pmf(connections * params.arrival_rates[phase], 1.0, max_batch)
