"""Frame-stepped Monte Carlo of the same system, used to cross-check the chain.

Each frame, from the start-of-frame state (s, x, c):

1. draw the aggregate batch for (c, s) and the channel service R;
2. serve min(R, x) head-of-line packets, append the batch, drop overflow;
3. screen Poisson connection arrivals one at a time against the policy at
   the start-of-frame queue length, and remove Binomial(c, p_d) departures;
4. step the MMPP phase.

Packets are tracked FIFO so that per-packet delays (frames from arrival to
the frame in which they are served) can be compared with Little's law.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .chain import SystemConfig, _arrival_pmf
from .channel import service_pmf
from .mmpp import batch_arrival_pmf, mean_arrival_rate, phase_step_matrix, stationary_phase_distribution

WARMUP_FRACTION = 0.1
BATCHES = 20
CHUNK = 65536

# per-batch accumulators
_FIELDS = ("frames", "conn_sum", "queue_sum", "arrived", "served", "dropped",
           "conn_arrivals", "conn_rejected", "delay_sum")


@dataclass
class SimResult:
    estimates: dict
    std_errors: dict
    frames_run: int
    seed: int
    totals: dict = field(default_factory=dict)

    def z_score(self, name: str, value: float) -> float:
        se = self.std_errors[name]
        diff = value - self.estimates[name]
        if se == 0.0:
            return 0.0 if abs(diff) < 1e-12 else math.inf
        return diff / se


def _cdf_list(probs) -> list:
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return cdf.tolist()


def _draw(cdf: list, u: float) -> int:
    return min(bisect_right(cdf, u), len(cdf) - 1)


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    b = values.size
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(b))


def _ratio_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    total = den.sum()
    if total == 0:
        return 0.0, 0.0
    est = num.sum() / total
    z = num - est * den
    se = z.std(ddof=1) / math.sqrt(z.size) / den.mean()
    return float(est), float(se)


def run(config: SystemConfig, frames: int, seed: int, *, warmup_fraction: float = WARMUP_FRACTION,
        batches: int = BATCHES, trace=None) -> SimResult:
    """Simulate ``frames`` frames; ``trace`` may be a path or text stream for a per-frame CSV."""
    if frames < 10_000:
        raise ValueError("frames must be >= 10^4")
    if batches < 20:
        raise ValueError("batch means needs >= 20 batches")

    policy = config.policy
    S = config.mmpp.phase_count
    X = config.queue_capacity
    bound = policy.bound

    phase_cdf = [_cdf_list(row) for row in phase_step_matrix(config.mmpp, config.frame_minutes)]
    batch_cdf = [[_cdf_list(batch_arrival_pmf(c, s, config.mmpp, config.max_batch).probs)
                  for s in range(S)] for c in range(bound + 1)]
    service = service_pmf(config.channel)
    lam = config.conn_arrival_rate * config.frame_minutes
    conn_pmf = np.array([1.0]) if lam == 0 else _arrival_pmf(lam)
    p_d = config.departure_probability
    dep_cdf = [_cdf_list(stats.binom.pmf(np.arange(c + 1), c, p_d)) for c in range(bound + 1)]

    seq = np.random.SeedSequence(seed)
    state_rng, service_rng, conn_rng, accept_rng = (np.random.Generator(np.random.PCG64(s))
                                                     for s in seq.spawn(4))

    pi_phase = stationary_phase_distribution(config.mmpp)
    s = _draw(_cdf_list(pi_phase), float(state_rng.random()))
    x = 0
    c = 0
    fifo = deque()  # [arrival_frame, count]

    warmup = int(frames * warmup_fraction)
    measured = frames - warmup
    batch_len = measured // batches
    acc = np.zeros((batches, len(_FIELDS)))
    totals = dict(arrived=0, served=0, dropped=0, initial_backlog=0)

    writer = None
    handle = None
    if trace is not None:
        handle = open(trace, "w", newline="") if isinstance(trace, (str, bytes)) or hasattr(trace, "__fspath__") else trace
        writer = csv.writer(handle)
        writer.writerow(["frame", "s", "x", "c", "arrivals", "served", "dropped"])

    try:
        t = 0
        while t < frames:
            n = min(CHUNK, frames - t)
            u = state_rng.random((n, 3)).tolist()
            r_draw = np.searchsorted(np.cumsum(service.probs)[:-1], service_rng.random(n), side="right").tolist()
            k_draw = np.searchsorted(np.cumsum(conn_pmf)[:-1], conn_rng.random(n), side="right").tolist()
            for i in range(n):
                u_batch, u_dep, u_phase = u[i]
                a = _draw(batch_cdf[c][s], u_batch)
                r = r_draw[i]

                served = r if r < x else x
                remaining = served
                delay_sum = 0
                while remaining:
                    head = fifo[0]
                    take = head[1] if head[1] <= remaining else remaining
                    delay_sum += take * (t - head[0])
                    remaining -= take
                    if take == head[1]:
                        fifo.popleft()
                    else:
                        head[1] -= take
                y = x - served + a
                dropped = y - X if y > X else 0
                kept = a - dropped
                if kept:
                    fifo.append([t, kept])

                arrivals = k_draw[i]
                admitted = c
                rejected = 0
                for _ in range(arrivals):
                    alpha = policy.acceptance_probability(x, admitted)
                    if alpha >= 1.0 or (alpha > 0.0 and accept_rng.random() < alpha):
                        admitted += 1
                    else:
                        rejected += 1
                departed = _draw(dep_cdf[c], u_dep) if c else 0

                if writer is not None:
                    writer.writerow([t, s, x, c, a, served, dropped])

                x = y - dropped
                c = admitted - departed
                s = _draw(phase_cdf[s], u_phase)

                totals["arrived"] += a
                totals["served"] += served
                totals["dropped"] += dropped
                if t >= warmup:
                    b = min((t - warmup) // batch_len, batches - 1)
                    row = acc[b]
                    row[0] += 1
                    row[1] += c
                    row[2] += x
                    row[3] += a
                    row[4] += served
                    row[5] += dropped
                    row[6] += arrivals
                    row[7] += rejected
                    row[8] += delay_sum
                t += 1
    finally:
        if handle is not None and handle is not trace:
            handle.close()

    totals["final_backlog"] = x
    cols = {name: acc[:, j] for j, name in enumerate(_FIELDS)}
    fr = cols["frames"]
    est, se = {}, {}
    est["n_connections"], se["n_connections"] = _ratio_se(cols["conn_sum"], fr)
    est["n_queue"], se["n_queue"] = _ratio_se(cols["queue_sum"], fr)
    est["n_drop"], se["n_drop"] = _ratio_se(cols["dropped"], fr)
    est["throughput"], se["throughput"] = _ratio_se(cols["served"], fr)
    est["arrival_rate"], se["arrival_rate"] = _ratio_se(cols["arrived"], fr)
    est["p_drop"], se["p_drop"] = _ratio_se(cols["dropped"], cols["arrived"])
    est["p_block"], se["p_block"] = _ratio_se(cols["conn_rejected"], cols["conn_arrivals"])
    est["delay"], se["delay"] = _ratio_se(cols["delay_sum"], cols["served"])
    est["little_delay"], se["little_delay"] = _ratio_se(cols["queue_sum"], cols["served"])
    lam_mmpp = mean_arrival_rate(pi_phase, config.mmpp.arrival_rates)
    est["lambda_bar"] = lam_mmpp * est["n_connections"]
    se["lambda_bar"] = lam_mmpp * se["n_connections"]
    return SimResult(est, se, frames, seed, totals)
