import math
import sys
from pathlib import Path

import numpy as np
import pytest

from wimaxcac.chain import SolverOptions, SystemConfig
from wimaxcac.channel import ChannelParams
from wimaxcac.mmpp import MmppParams

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

SMALL_TABLE = ((-math.inf, 0), (3.0, 1), (10.0, 2))


def make_config(policy, *, generator=((-30.0, 30.0), (60.0, -60.0)), rates=(0.2, 0.6),
                X=20, A=20, rho=1.2, duration=1.5, frame_ms=500.0, snr=5.0, subchannels=2,
                table=SMALL_TABLE, m=1.0, solver=None):
    return SystemConfig(
        mmpp=MmppParams(np.array(generator, float), rates),
        channel=ChannelParams(subchannels, snr, table, m),
        policy=policy,
        queue_capacity=X,
        max_batch=A,
        conn_arrival_rate=rho,
        conn_mean_duration=duration,
        frame_duration_ms=frame_ms,
        solver=solver or SolverOptions(),
    )


def random_config(rng, policy_cls=None):
    """Randomised small configuration: S <= 4, X <= 30, connection bound <= 5."""
    from wimaxcac.policy import QueueAware, Threshold, Unrestricted

    S = int(rng.integers(1, 5))
    off = rng.uniform(0.5, 80.0, (S, S))
    np.fill_diagonal(off, 0.0)
    gen = off - np.diag(off.sum(axis=1))
    rates = rng.uniform(0.0, 2.0, S)
    X = int(rng.integers(1, 31))
    bound = int(rng.integers(0, 6))
    kind = policy_cls or rng.choice(["threshold", "queue_aware", "unrestricted"])
    if kind == "threshold":
        policy = Threshold(bound)
    elif kind == "queue_aware":
        policy = QueueAware(int(rng.integers(0, X + 2)), bound)
    else:
        policy = Unrestricted(bound)
    n_rates = int(rng.integers(1, 4))
    thresholds = np.sort(rng.uniform(-5, 20, n_rates - 1))
    # a channel that never serves anything freezes the queue; keep some capacity
    table = ((-math.inf, int(rng.integers(0 if n_rates > 1 else 1, 2))),)
    for t in thresholds:
        table += ((float(t), table[-1][1] + int(rng.integers(1, 3))),)
    return make_config(policy, generator=gen, rates=rates, X=X, A=int(rng.integers(1, 25)),
                       rho=float(rng.uniform(0.0, 3.0)), duration=float(rng.uniform(0.2, 3.0)),
                       frame_ms=float(rng.uniform(50, 800)), snr=float(rng.uniform(-5, 20)),
                       subchannels=int(rng.integers(1, 4)), table=table)


@pytest.fixture
def toy_threshold():
    from wimaxcac.policy import Threshold
    return make_config(Threshold(3))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
