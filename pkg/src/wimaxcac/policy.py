"""Connection admission rules.

Every policy answers one question: given ``x`` packets queued and ``c``
admitted connections, with what probability is the next arriving connection
accepted?
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CacPolicy:
    name: str

    @property
    def bound(self) -> int:
        """Largest reachable connection count."""
        raise NotImplementedError

    def _accept(self, x: int, c: int) -> float:
        raise NotImplementedError

    def acceptance_probability(self, x: int, c: int) -> float:
        if x < 0:
            raise ValueError(f"queue length {x} out of range")
        if not 0 <= c <= self.bound:
            raise ValueError(f"connection count {c} outside [0, {self.bound}]")
        return self._accept(x, c)

    def acceptance_vector(self, x: int) -> np.ndarray:
        """Acceptance probabilities for c = 0..bound at queue length x."""
        return np.array([self.acceptance_probability(x, c) for c in range(self.bound + 1)])


@dataclass(frozen=True)
class Threshold(CacPolicy):
    c_max: int
    name: str = field(default="threshold", init=False)

    def __post_init__(self):
        if self.c_max < 0:
            raise ValueError("c_max must be >= 0")

    @property
    def bound(self):
        return self.c_max

    def _accept(self, x, c):
        return 1.0 if c < self.c_max else 0.0


@dataclass(frozen=True)
class QueueAware(CacPolicy):
    """Accept with probability alpha[x] below the truncation point.

    ``alpha`` defaults to the step function 1 for x < b_th, 0 otherwise.  An
    explicit vector may be supplied instead; queue lengths beyond its end
    reuse its last entry.
    """

    b_th: int
    c_trunc: int
    alpha: tuple[float, ...] | None = None
    name: str = field(default="queue_aware", init=False)

    def __post_init__(self):
        if self.c_trunc < 0:
            raise ValueError("c_trunc must be >= 0")
        if self.b_th < 0:
            raise ValueError("b_th must be >= 0")
        if self.alpha is not None:
            a = tuple(float(v) for v in self.alpha)
            if not a or any(not 0.0 <= v <= 1.0 for v in a):
                raise ValueError("alpha entries must lie in [0, 1]")
            object.__setattr__(self, "alpha", a)

    @property
    def bound(self):
        return self.c_trunc

    def alpha_at(self, x: int) -> float:
        if self.alpha is None:
            return 1.0 if x < self.b_th else 0.0
        return self.alpha[min(x, len(self.alpha) - 1)]

    def _accept(self, x, c):
        if c >= self.c_trunc:
            return 0.0
        return self.alpha_at(x)


@dataclass(frozen=True)
class Unrestricted(CacPolicy):
    c_trunc: int
    name: str = field(default="unrestricted", init=False)

    def __post_init__(self):
        if self.c_trunc < 0:
            raise ValueError("c_trunc must be >= 0")

    @property
    def bound(self):
        return self.c_trunc

    def _accept(self, x, c):
        return 1.0 if c < self.c_trunc else 0.0


def acceptance_probability(policy: CacPolicy, queue_len: int, connections: int) -> float:
    return policy.acceptance_probability(queue_len, connections)


POLICY_NAMES = ("threshold", "queue_aware", "unrestricted")
