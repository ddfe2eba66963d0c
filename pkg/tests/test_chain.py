import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CONFIGS, make_config, random_config
from oracles import PoissonBatchModel
from wimaxcac import config as cfgmod
from wimaxcac.chain import (
    MemoryBudgetError,
    StateSpace,
    _kernel_from_parts,
    assemble,
    backlog_after_service,
    connection_transition_pmf,
    queue_transition_kernel,
)
from wimaxcac.channel import service_pmf
from wimaxcac.mmpp import Pmf, phase_step_matrix
from wimaxcac.policy import QueueAware, Threshold, Unrestricted


class TestConnectionPmf:
    def test_frozen(self):
        p = connection_transition_pmf(2, 0, Threshold(4), rho=0.0, mu_rate=0.0, frame_minutes=1.0)
        assert p.probs.tolist() == [0, 0, 1, 0, 0]

    def test_single_departure(self):
        p = connection_transition_pmf(1, 0, Threshold(1), rho=0.0, mu_rate=math.log(2), frame_minutes=1.0)
        np.testing.assert_allclose(p.probs, [0.5, 0.5], atol=1e-15)

    @pytest.mark.parametrize("rho", [0.1, 5.0, 80.0])
    def test_bound_enforced(self, rho):
        p = connection_transition_pmf(1, 0, Threshold(1), rho=rho, mu_rate=0.3, frame_minutes=0.5)
        assert p.support_max == 1
        assert abs(p.probs.sum() - 1) < 1e-12

    def test_fractional_acceptance_against_enumeration(self):
        # arrivals screened one by one, each with alpha(x) while below the bound
        policy = QueueAware(b_th=0, c_trunc=4, alpha=(0.7, 0.3))
        rho, mu, T = 3.0, 0.8, 0.4
        c, x = 1, 1
        got = connection_transition_pmf(c, x, policy, rho, mu, T).probs

        lam, p_d, a = rho * T, 1 - math.exp(-mu * T), 0.3
        n_max = 1
        from scipy import stats
        while stats.poisson.sf(n_max, lam) >= 1e-12:
            n_max += 1
        pn = [math.exp(-lam) * lam**n / math.factorial(n) for n in range(n_max)]
        pn.append(1 - sum(pn))
        want = np.zeros(5)
        for n, pr in enumerate(pn):
            for outcome in itertools.product([True, False], repeat=n):
                k, prob = 0, pr
                for acc in outcome:
                    if c + k < 4:
                        prob *= a if acc else 1 - a
                        k += acc
                    elif acc:
                        prob = 0.0  # only the "rejected" branch is possible at the bound
                for j in range(c + 1):
                    want[c + k - j] += prob * math.comb(c, j) * p_d**j * (1 - p_d) ** (c - j)
        np.testing.assert_allclose(got, want, atol=1e-13)


class TestQueueKernel:
    def test_overflow_arithmetic(self):
        service = Pmf.point_mass(2)
        k = _kernel_from_parts(backlog_after_service(service, 4), Pmf.point_mass(4), 4)
        assert k.matrix[3, 4] == 1.0
        assert k.expected_drops[3] == 1.0
        m, p = k.net_increase(3)
        assert p[m == 2] == 1.0  # 3 - 2 + 4 = 5 before capping

    def test_no_connections_drain(self):
        cfg = make_config(Threshold(2), X=10)
        service = service_pmf(cfg.channel)
        k = queue_transition_kernel(0, 1, cfg)
        for x in range(11):
            want = np.zeros(11)
            for r, pr in enumerate(service.probs):
                want[max(0, x - r)] += pr
            np.testing.assert_allclose(k.matrix[x], want, atol=1e-15)
            assert k.expected_drops[x] == 0.0

    def test_against_enumeration(self):
        cfg = make_config(Threshold(1), generator=((0.0,),), rates=(1.0,), X=3, A=3,
                          table=((-math.inf, 1),), subchannels=1)
        k = queue_transition_kernel(1, 0, cfg)
        batch = [math.exp(-1), math.exp(-1), math.exp(-1) / 2]
        batch.append(1 - sum(batch))
        want = np.zeros((4, 4))
        drops = np.zeros(4)
        for x in range(4):
            for a, pa in enumerate(batch):
                y = x - min(1, x) + a
                want[x, min(y, 3)] += pa
                drops[x] += pa * max(0, y - 3)
        np.testing.assert_allclose(k.matrix, want, atol=1e-15)
        np.testing.assert_allclose(k.expected_drops, drops, atol=1e-15)


class TestStateSpace:
    def test_baseline_size(self):
        cfg = cfgmod.load(CONFIGS / "baseline.json")
        space, _ = StateSpace(4, 250, 40), None
        from wimaxcac.chain import state_space
        assert state_space(cfg) == space
        assert space.total_states == 4 * 251 * 41 == 41164

    @given(st.integers(1, 4), st.integers(1, 12), st.integers(0, 6))
    def test_index_bijection(self, S, X, C):
        space = StateSpace(S, X, C)
        seen = set()
        for s, x, c in itertools.product(range(S), range(X + 1), range(C + 1)):
            i = space.index(s, x, c)
            assert space.state(i) == (s, x, c)
            seen.add(i)
        assert seen == set(range(space.total_states))


def brute_force_matrix(cfg):
    """P built entry by entry from explicit outcome enumeration."""
    space, _ = assemble(cfg)
    S, X, C = space.phases, space.queue_capacity, space.conn_bound
    phase = phase_step_matrix(cfg.mmpp, cfg.frame_minutes)
    rows = {}
    for c, s in itertools.product(range(C + 1), range(S)):
        model = PoissonBatchModel(cfg.mmpp.arrival_rates[s], X, cfg.max_batch,
                                  service_pmf(cfg.channel).probs, cfg.conn_arrival_rate,
                                  cfg.conn_mean_duration, cfg.frame_duration_ms, C,
                                  lambda x, k: cfg.policy.acceptance_probability(x, k))
        for x in range(X + 1):
            rows[(s, x, c)] = model.P[model.states.index((x, c))]
    P = np.zeros((space.total_states, space.total_states))
    for (s, x, c), qrow in rows.items():
        i = space.index(s, x, c)
        # qrow is over the single-phase (x', c') ordering: c' major, x' minor
        for j_local, p in enumerate(qrow):
            if p == 0:
                continue
            cn, xn = divmod(j_local, X + 1)
            for sn in range(S):
                P[i, space.index(sn, xn, cn)] += phase[s, sn] * p
    return P


class TestAssemble:
    def test_tiny_config_matches_hand_enumeration(self):
        cfg = make_config(Threshold(1), generator=((0.0,),), rates=(0.4,), X=1, A=3,
                          rho=3.0, duration=0.7)
        _, op = assemble(cfg)
        P = op.to_sparse().toarray()
        np.testing.assert_allclose(P, brute_force_matrix(cfg), atol=1e-15)
        assert P.shape == (4, 4)

    @pytest.mark.parametrize("policy", [Threshold(2), QueueAware(3, 2), Unrestricted(3)])
    def test_two_phase_matches_enumeration(self, policy):
        cfg = make_config(policy, X=5, A=6, rho=2.0, duration=0.8)
        _, op = assemble(cfg)
        np.testing.assert_allclose(op.to_sparse().toarray(), brute_force_matrix(cfg), atol=1e-14)

    def test_operator_views_agree(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            cfg = random_config(rng)
            _, op = assemble(cfg)
            P = op.to_sparse()
            v = rng.random(op.n)
            np.testing.assert_allclose(op.rmatvec(v), P.T @ v, atol=1e-13)
            for i in rng.integers(0, op.n, 5):
                cols, vals = op.row(int(i))
                dense = P[int(i)].toarray().ravel()
                np.testing.assert_allclose(dense[cols], vals, atol=1e-16)
                assert np.count_nonzero(dense) == cols.size

    def test_memory_budget(self):
        cfg = cfgmod.load(CONFIGS / "baseline.json")
        _, op = assemble(cfg)
        with pytest.raises(MemoryBudgetError, match="matrix-free"):
            op.to_sparse(memory_budget_mb=64)
        # the matrix-free operator still conserves mass
        v = np.full(op.n, 1.0 / op.n)
        assert abs(op.rmatvec(v).sum() - 1.0) < 1e-12

    def test_policy_equivalence_entrywise(self):
        for X, C in [(4, 2), (9, 3), (15, 5)]:
            a = assemble(make_config(QueueAware(X + 1, C), X=X))[1].to_sparse().toarray()
            b = assemble(make_config(Threshold(C), X=X))[1].to_sparse().toarray()
            assert np.abs(a - b).max() <= 1e-14

    @given(st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_rows_stochastic(self, seed):
        cfg = random_config(np.random.default_rng(seed))
        _, op = assemble(cfg)
        P = op.to_sparse()
        assert P.min() >= 0
        assert np.abs(np.asarray(P.sum(axis=1)).ravel() - 1).max() <= 1e-12
