"""State space and per-frame transition operator of the (phase, queue, connections) chain.

Within a frame the start-of-frame state (s, x, c) drives three conditionally
independent moves:

* the MMPP phase steps with exp(Q T_f);
* the queue is served first (R packets from the backlog x) and then the
  aggregate batch of the c connections in phase s is appended, overflow
  beyond X being dropped;
* connections arrive as Poisson(rho T_f), each accepted with the policy's
  probability at (x, admitted-so-far), and each of the c connections leaves
  independently with probability 1 - exp(-T_f / mean_duration).

States are indexed as ``(c * (X + 1) + x) * S + s`` with 0-based ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .channel import ChannelParams, service_pmf
from .mmpp import MmppParams, Pmf, batch_arrival_pmf, phase_step_matrix, poisson_truncation
from .policy import CacPolicy, QueueAware

# connection-level probabilities below this are folded into "no change" when
# the operator is built; they are far below any solver tolerance
PRUNE_EPS = 1e-17


class MemoryBudgetError(MemoryError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    method: str = "auto"
    tolerance: float = 1e-10
    max_sweeps: int = 500
    memory_budget_mb: float = 512.0


@dataclass(frozen=True)
class SystemConfig:
    mmpp: MmppParams
    channel: ChannelParams
    policy: CacPolicy
    queue_capacity: int
    max_batch: int
    conn_arrival_rate: float  # 1/min
    conn_mean_duration: float  # min
    frame_duration_ms: float
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        if self.max_batch < 1:
            raise ValueError("max batch must be >= 1")
        if self.conn_arrival_rate < 0:
            raise ValueError("connection arrival rate must be >= 0")
        if self.conn_mean_duration <= 0:
            raise ValueError("connection mean duration must be > 0")
        if self.frame_duration_ms <= 0:
            raise ValueError("frame duration must be > 0")
        if isinstance(self.policy, QueueAware) and self.policy.b_th > self.queue_capacity + 1:
            raise ValueError("b_th may not exceed queue capacity + 1")

    @property
    def frame_minutes(self) -> float:
        return self.frame_duration_ms / 60000.0

    @property
    def departure_probability(self) -> float:
        return float(-np.expm1(-self.frame_minutes / self.conn_mean_duration))


@dataclass(frozen=True)
class StateSpace:
    phases: int
    queue_capacity: int
    conn_bound: int

    @property
    def total_states(self) -> int:
        return self.phases * (self.queue_capacity + 1) * (self.conn_bound + 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Axis order of a reshaped state vector: (c, x, s)."""
        return (self.conn_bound + 1, self.queue_capacity + 1, self.phases)

    def index(self, s: int, x: int, c: int) -> int:
        if not (0 <= s < self.phases and 0 <= x <= self.queue_capacity and 0 <= c <= self.conn_bound):
            raise IndexError(f"state {(s, x, c)} out of range")
        return (c * (self.queue_capacity + 1) + x) * self.phases + s

    def state(self, i: int) -> tuple[int, int, int]:
        if not 0 <= i < self.total_states:
            raise IndexError(i)
        rest, s = divmod(i, self.phases)
        c, x = divmod(rest, self.queue_capacity + 1)
        return s, x, c

    def reshape(self, vec) -> np.ndarray:
        return np.asarray(vec).reshape(self.shape)


def state_space(config: SystemConfig) -> StateSpace:
    return StateSpace(config.mmpp.phase_count, config.queue_capacity, config.policy.bound)


# ---------------------------------------------------------------------------
# connection level

def _accepted_count_pmf(arrivals: np.ndarray, accept: np.ndarray) -> np.ndarray:
    """Distribution of accepted connections when arrivals are screened one by one.

    ``accept[k]`` is the acceptance probability once k have been accepted this
    frame; it must end with a 0 at the policy bound.
    """
    room = accept.size
    dist = np.zeros(room)
    dist[0] = 1.0
    out = arrivals[0] * dist
    for n in range(1, arrivals.size):
        moved = dist * accept
        dist = dist - moved
        dist[1:] += moved[:-1]
        out = out + arrivals[n] * dist
    return out


def connection_transition_pmf(c: int, x: int, policy: CacPolicy, rho: float,
                              mu_rate: float, frame_minutes: float) -> Pmf:
    """Next-frame connection count given c connections and x queued packets.

    ``rho`` and ``mu_rate`` are per minute, ``frame_minutes`` the frame length.
    """
    bound = policy.bound
    if not 0 <= c <= bound:
        raise ValueError(f"connection count {c} outside [0, {bound}]")
    lam = rho * frame_minutes
    arrivals = np.array([1.0]) if lam == 0.0 else _arrival_pmf(lam)
    accept = np.array([policy.acceptance_probability(x, k) for k in range(c, bound + 1)])
    accepted = _accepted_count_pmf(arrivals, accept)  # over 0..bound-c

    p_d = float(-np.expm1(-mu_rate * frame_minutes))
    departed = stats.binom.pmf(np.arange(c + 1), c, p_d)  # over 0..c

    out = np.zeros(bound + 1)
    # c' = c + k - j
    conv = np.convolve(accepted, departed[::-1])  # index i -> k - j + c
    out[: conv.size] = conv
    out = np.clip(out, 0.0, None)
    return Pmf(out / out.sum())


def _arrival_pmf(mean: float) -> np.ndarray:
    n_max = poisson_truncation(mean, 1e-12)
    p = stats.poisson.pmf(np.arange(n_max + 1), mean)
    p[n_max] = stats.poisson.sf(n_max - 1, mean)
    return p / p.sum()


# ---------------------------------------------------------------------------
# queue level

def backlog_after_service(service: Pmf, queue_capacity: int) -> np.ndarray:
    """W[x, j] = P(x - min(R, x) = j)."""
    X1 = queue_capacity + 1
    r = service.probs
    tail = np.concatenate([np.cumsum(r[::-1])[::-1], [0.0]])  # tail[k] = P(R >= k)
    w = np.zeros((X1, X1))
    for x in range(X1):
        k = min(x, r.size)
        # served r' < x with prob r[r'], everything from x up clears the queue
        w[x, x - np.arange(k)] = r[:k]
        w[x, 0] += tail[min(x, r.size)]
    return w


@dataclass(frozen=True, eq=False)
class QueueKernel:
    """Queue move for one (c, s) pair.

    ``uncapped[x, y]`` is the probability that the backlog becomes y before
    overflow is dropped (y ranges over 0..X+A), so the net increase is y - x.
    """

    matrix: np.ndarray
    uncapped: np.ndarray
    expected_drops: np.ndarray
    queue_capacity: int

    def net_increase(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        y = np.arange(self.uncapped.shape[1])
        return y - x, self.uncapped[x]


def _kernel_from_parts(after_service: np.ndarray, batch: Pmf, queue_capacity: int) -> QueueKernel:
    X1 = queue_capacity + 1
    A = batch.support_max
    shift = np.zeros((X1, X1 + A))
    b = batch.probs
    for j in range(X1):
        shift[j, j: j + A + 1] = b
    uncapped = after_service @ shift
    matrix = np.empty((X1, X1))
    matrix[:, :-1] = uncapped[:, : X1 - 1]
    matrix[:, -1] = uncapped[:, X1 - 1:].sum(axis=1)
    overflow = np.clip(np.arange(X1 + A) - queue_capacity, 0, None)
    drops = uncapped @ overflow
    return QueueKernel(matrix, uncapped, drops, queue_capacity)


def queue_transition_kernel(c: int, s: int, config: SystemConfig, service: Pmf | None = None) -> QueueKernel:
    if service is None:
        service = service_pmf(config.channel)
    batch = batch_arrival_pmf(c, s, config.mmpp, config.max_batch)
    return _kernel_from_parts(backlog_after_service(service, config.queue_capacity),
                              batch, config.queue_capacity)


# ---------------------------------------------------------------------------
# full operator

@dataclass(eq=False)
class TransitionOperator:
    """P[(s,x,c) -> (s',x',c')] = phase[s,s'] * kernels[c,s][x,x'] * conn[c,x,c'].

    Held in factored form; ``to_sparse`` materialises it when it fits the
    memory budget, ``rmatvec`` applies it matrix-free.
    """

    space: StateSpace
    phase: np.ndarray  # (S, S)
    kernels: np.ndarray  # (C+1, S, X+1, X+1)
    conn: np.ndarray  # (C+1, X+1, C+1)
    expected_drops: np.ndarray  # (C+1, S, X+1)
    expected_batch: np.ndarray  # (C+1, S)
    expected_served: np.ndarray  # (X+1,)
    service: Pmf
    _support: list = field(init=False, repr=False)

    def __post_init__(self):
        self._support = [np.flatnonzero(self.conn[c].any(axis=0)) for c in range(self.conn.shape[0])]

    @property
    def n(self) -> int:
        return self.space.total_states

    def support(self, c: int) -> np.ndarray:
        """Connection levels reachable in one frame from level c."""
        return self._support[c]

    def level_matrix(self, c: int) -> np.ndarray:
        """Queue/phase move at level c as a dense (X+1)S square matrix."""
        X1, S = self.space.queue_capacity + 1, self.space.phases
        m = np.einsum("sxy,st->xsyt", self.kernels[c], self.phase)
        return m.reshape(X1 * S, X1 * S)

    def block(self, c: int, c2: int) -> np.ndarray:
        d = np.repeat(self.conn[c][:, c2], self.space.phases)
        return d[:, None] * self.level_matrix(c)

    def apply_level(self, c: int, vec: np.ndarray, c2: int) -> np.ndarray:
        """Row vector ``vec`` over level c pushed into level c2 (flat, length (X+1)S)."""
        X1, S = self.space.queue_capacity + 1, self.space.phases
        u = vec.reshape(X1, S) * self.conn[c][:, c2][:, None]
        y = np.empty((X1, S))
        for s in range(S):
            y[:, s] = u[:, s] @ self.kernels[c, s]
        return (y @ self.phase).ravel()

    def rmatvec(self, pi) -> np.ndarray:
        """pi @ P without materialising P."""
        shape = self.space.shape
        p = np.asarray(pi, dtype=float).reshape(shape)
        out = np.zeros(shape)
        S = self.space.phases
        for c in range(shape[0]):
            blk = p[c]
            if not blk.any():
                continue
            targets = self._support[c]
            w = blk[None, :, :] * self.conn[c][:, targets].T[:, :, None]  # (k, X1, S)
            y = np.empty_like(w)
            for s in range(S):
                y[:, :, s] = w[:, :, s] @ self.kernels[c, s]
            out[targets] += y @ self.phase
        return out.ravel()

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row i."""
        s, x, c = self.space.state(i)
        vals = (self.conn[c][x][:, None, None]
                * self.kernels[c, s][x][None, :, None]
                * self.phase[s][None, None, :])
        flat = vals.ravel()
        cols = np.flatnonzero(flat)
        return cols, flat[cols]

    def nnz_estimate(self) -> int:
        S = self.space.phases
        total = 0
        for c in range(self.conn.shape[0]):
            per_row = np.count_nonzero(self.kernels[c], axis=2).max() * np.count_nonzero(self.phase, axis=1).max()
            total += per_row * (self.space.queue_capacity + 1) * S * self._support[c].size
        return int(total)

    def to_sparse(self, memory_budget_mb: float = 512.0) -> sp.csr_matrix:
        need_mb = self.nnz_estimate() * 12 / 2**20
        if need_mb > memory_budget_mb:
            raise MemoryBudgetError(
                f"explicit matrix needs ~{need_mb:.0f} MB (budget {memory_budget_mb:.0f} MB); "
                "use the matrix-free operator instead")
        C1 = self.conn.shape[0]
        rows = []
        for c in range(C1):
            m = sp.csr_matrix(self.level_matrix(c))
            blocks = [None] * C1
            for c2 in self._support[c]:
                d = np.repeat(self.conn[c][:, c2], self.space.phases)
                blocks[c2] = sp.diags(d) @ m
            if all(b is None for b in blocks):
                blocks[c] = sp.csr_matrix(m.shape)
            rows.append(blocks)
        # bmat needs each block column to have a shape; pad with explicit zeros
        size = (self.space.queue_capacity + 1) * self.space.phases
        for c2 in range(C1):
            if all(rows[c][c2] is None for c in range(C1)):
                rows[c2][c2] = sp.csr_matrix((size, size))
        return sp.bmat(rows, format="csr")


def _prune_levels(probs: np.ndarray, c: int) -> np.ndarray:
    small = probs < PRUNE_EPS
    small[c] = False
    if small.any():
        probs = probs.copy()
        probs[c] += probs[small].sum()
        probs[small] = 0.0
    return probs


def connection_matrix(config: SystemConfig) -> np.ndarray:
    """conn[c, x, c'] for every level and queue length."""
    policy = config.policy
    bound = policy.bound
    X1 = config.queue_capacity + 1
    mu_rate = 1.0 / config.conn_mean_duration
    out = np.zeros((bound + 1, X1, bound + 1))
    for c in range(bound + 1):
        cache = {}
        for x in range(X1):
            key = tuple(policy.acceptance_probability(x, k) for k in range(c, bound + 1))
            if key not in cache:
                pmf = connection_transition_pmf(c, x, policy, config.conn_arrival_rate,
                                                mu_rate, config.frame_minutes)
                cache[key] = _prune_levels(pmf.probs, c)
            out[c, x] = cache[key]
    return out


def assemble(config: SystemConfig) -> tuple[StateSpace, TransitionOperator]:
    space = state_space(config)
    S, X = space.phases, space.queue_capacity
    service = service_pmf(config.channel)
    after = backlog_after_service(service, X)
    kernels = np.empty((space.conn_bound + 1, S, X + 1, X + 1))
    drops = np.empty((space.conn_bound + 1, S, X + 1))
    batch_means = np.empty((space.conn_bound + 1, S))
    for c in range(space.conn_bound + 1):
        for s in range(S):
            batch = batch_arrival_pmf(c, s, config.mmpp, config.max_batch)
            k = _kernel_from_parts(after, batch, X)
            kernels[c, s] = k.matrix
            drops[c, s] = k.expected_drops
            batch_means[c, s] = batch.mean()
    served = np.arange(X + 1) - after @ np.arange(X + 1)
    op = TransitionOperator(
        space=space,
        phase=phase_step_matrix(config.mmpp, config.frame_minutes),
        kernels=kernels,
        conn=connection_matrix(config),
        expected_drops=drops,
        expected_batch=batch_means,
        expected_served=served,
        service=service,
    )
    return space, op
