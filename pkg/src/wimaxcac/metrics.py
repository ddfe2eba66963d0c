"""Connection- and packet-level performance figures from a stationary vector."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .chain import StateSpace, SystemConfig, TransitionOperator, assemble
from .mmpp import mean_arrival_rate, stationary_phase_distribution
from .policy import CacPolicy
from .solve import SteadyState, marginal, solve


@dataclass(frozen=True)
class PerformanceReport:
    p_block: float
    n_connections: float
    n_queue: float
    n_drop: float
    p_drop: float
    lambda_bar: float
    throughput: float
    delay: float
    exact_arrival_rate: float
    exact_service_rate: float
    residual: float

    def as_dict(self) -> dict:
        return asdict(self)


METRIC_FIELDS = ("p_block", "n_connections", "n_queue", "n_drop", "p_drop",
                 "lambda_bar", "throughput", "delay")


def blocking_probability(pi, space: StateSpace, policy: CacPolicy) -> float:
    """Probability that an arriving connection is turned away.

    Written once for all policies as sum (1 - accept(x, c)) * pi(s, x, c); for
    the threshold and unrestricted rules this is the mass at the bound.
    """
    p = space.reshape(pi).sum(axis=2)  # (c, x)
    reject = np.array([[1.0 - policy.acceptance_probability(x, c)
                        for x in range(space.queue_capacity + 1)]
                       for c in range(space.conn_bound + 1)])
    return float(np.clip((reject * p).sum(), 0.0, 1.0))


def average_connections(pi, space: StateSpace) -> float:
    return float(marginal(pi, space, "c") @ np.arange(space.conn_bound + 1))


def average_queue_length(pi, space: StateSpace) -> float:
    return float(marginal(pi, space, "x") @ np.arange(space.queue_capacity + 1))


def dropped_per_frame(pi, op: TransitionOperator) -> float:
    """Mean packets lost to overflow per frame, from uncapped net increases."""
    p = op.space.reshape(pi)  # (c, x, s)
    return float(np.einsum("cxs,csx->", p, op.expected_drops))


def dropping(pi, space: StateSpace, op: TransitionOperator, config: SystemConfig):
    """(n_drop, p_drop, lambda_bar, exact_arrival_rate).

    lambda_bar is the mean MMPP rate times the mean connection count; the
    exact arrival rate also accounts for phase/connection correlation and the
    batch cap.
    """
    n_drop = dropped_per_frame(pi, op)
    lam_mmpp = mean_arrival_rate(stationary_phase_distribution(config.mmpp), config.mmpp.arrival_rates)
    lambda_bar = lam_mmpp * average_connections(pi, space)
    p_drop = n_drop / lambda_bar if lambda_bar > 0 else 0.0
    exact = float(np.einsum("cxs,cs->", space.reshape(pi), op.expected_batch))
    return n_drop, p_drop, lambda_bar, exact


def throughput_and_delay(n_queue: float, p_drop: float, lambda_bar: float) -> tuple[float, float]:
    phi = lambda_bar * (1.0 - p_drop)
    delay = n_queue / phi if phi > 0 else 0.0
    return phi, delay


def service_rate(pi, op: TransitionOperator) -> float:
    return float(marginal(pi, op.space, "x") @ op.expected_served)


def report(config: SystemConfig, space: StateSpace, op: TransitionOperator,
           steady: SteadyState) -> PerformanceReport:
    pi = steady.pi
    n_c = average_connections(pi, space)
    n_x = average_queue_length(pi, space)
    n_drop, p_drop, lambda_bar, exact_in = dropping(pi, space, op, config)
    phi, delay = throughput_and_delay(n_x, p_drop, lambda_bar)
    return PerformanceReport(
        p_block=blocking_probability(pi, space, config.policy),
        n_connections=n_c,
        n_queue=n_x,
        n_drop=n_drop,
        p_drop=p_drop,
        lambda_bar=lambda_bar,
        throughput=phi,
        delay=delay,
        exact_arrival_rate=exact_in,
        exact_service_rate=service_rate(pi, op),
        residual=steady.residual,
    )


def evaluate(config: SystemConfig):
    """Assemble, solve and report; returns (report, steady_state, operator)."""
    space, op = assemble(config)
    steady = solve(op, config.solver)
    return report(config, space, op, steady), steady, op
