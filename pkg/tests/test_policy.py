import pytest
from hypothesis import given
from hypothesis import strategies as st

from wimaxcac.policy import QueueAware, Threshold, Unrestricted, acceptance_probability


def test_threshold_rejects_at_bound():
    p = Threshold(5)
    assert acceptance_probability(p, 0, 5) == 0.0
    assert acceptance_probability(p, 100, 4) == 1.0


def test_queue_aware_step():
    p = QueueAware(b_th=90, c_trunc=40)
    assert acceptance_probability(p, 0, 3) == 1.0
    assert acceptance_probability(p, 89, 39) == 1.0
    assert acceptance_probability(p, 90, 0) == 0.0
    assert acceptance_probability(p, 250, 0) == 0.0


def test_queue_aware_truncation_forces_rejection():
    assert QueueAware(b_th=90, c_trunc=40).acceptance_probability(0, 40) == 0.0


def test_unrestricted():
    p = Unrestricted(40)
    assert p.acceptance_probability(250, 39) == 1.0
    assert p.acceptance_probability(0, 40) == 0.0


def test_custom_alpha_vector():
    p = QueueAware(b_th=0, c_trunc=3, alpha=(1.0, 0.5, 0.25))
    assert [p.acceptance_probability(x, 0) for x in range(5)] == [1.0, 0.5, 0.25, 0.25, 0.25]


@pytest.mark.parametrize("policy, x, c", [
    (Threshold(3), 0, 4), (Threshold(3), -1, 0), (QueueAware(2, 3), 0, -1), (Unrestricted(2), 0, 3),
])
def test_out_of_range(policy, x, c):
    with pytest.raises(ValueError):
        policy.acceptance_probability(x, c)


@given(st.integers(0, 30), st.integers(0, 10), st.integers(0, 31))
def test_monotone(X, C, b_th):
    for policy in (Threshold(C), QueueAware(b_th, C), Unrestricted(C)):
        for x in range(X + 1):
            v = policy.acceptance_vector(x)
            assert all(a >= b for a, b in zip(v, v[1:]))
        if isinstance(policy, QueueAware):
            for c in range(C + 1):
                col = [policy.acceptance_probability(x, c) for x in range(X + 1)]
                assert all(a >= b for a, b in zip(col, col[1:]))


@given(st.integers(1, 30), st.integers(0, 10))
def test_queue_aware_without_queue_blocking_is_threshold(X, C):
    qa, th = QueueAware(X + 1, C), Threshold(C)
    for x in range(X + 1):
        for c in range(C + 1):
            assert qa.acceptance_probability(x, c) == th.acceptance_probability(x, c)
