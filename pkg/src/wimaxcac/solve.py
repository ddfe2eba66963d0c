"""Stationary distribution of the frame-level chain.

Four methods share one contract, an L1 residual ``|pi P - pi|_1`` at or below
the requested tolerance:

``direct``
    sparse LU on the balance equations with one row replaced by the
    normalisation; used for anything that fits the memory budget.
``gauss_seidel``
    forward point Gauss-Seidel sweeps on an explicit sparse matrix.
``power``
    plain power iteration, matrix-free.
``iad``
    iterative aggregation/disaggregation over connection levels: an exact
    solve of the aggregated level chain followed by a block Gauss-Seidel sweep
    with dense LU solves per level.  Connection events are rare compared with
    queue moves, which is exactly the nearly-decomposable case this handles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import MemoryBudgetError, SolverOptions, StateSpace, TransitionOperator

log = logging.getLogger(__name__)

DIRECT_STATE_LIMIT = 12000


class NonConvergenceError(RuntimeError):
    def __init__(self, residual: float, sweeps: int, method: str, pi=None):
        super().__init__(f"{method} solver did not converge after {sweeps} sweeps "
                         f"(residual {residual:.3e})")
        self.residual = residual
        self.sweeps = sweeps
        self.method = method
        self.pi = pi  # last iterate


@dataclass(frozen=True, eq=False)
class SteadyState:
    pi: np.ndarray
    residual: float
    sweeps_used: int
    method: str


def residual(op, pi: np.ndarray) -> float:
    return float(np.abs(_rmatvec(op, pi) - pi).sum())


def _rmatvec(op, pi):
    if sp.issparse(op):
        return op.T @ pi
    if isinstance(op, np.ndarray):
        return pi @ op
    return op.rmatvec(pi)


def _normalise(pi):
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _as_sparse(op, budget_mb):
    if sp.issparse(op):
        return op.tocsr()
    if isinstance(op, np.ndarray):
        return sp.csr_matrix(op)
    return op.to_sparse(budget_mb)


def _direct(P: sp.csr_matrix) -> np.ndarray:
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    a = (sp.identity(n, format="csr") - P).T.tocsr()
    a = sp.vstack([a[:-1], sp.csr_matrix(np.ones((1, n)))], format="csc")
    b = np.zeros(n)
    b[-1] = 1.0
    pi = spla.spsolve(a, b)
    if not np.all(np.isfinite(pi)):
        raise np.linalg.LinAlgError("direct stationary solve is singular (chain not irreducible?)")
    return _normalise(pi)


def _refine(op, pi, tol, sweeps, max_sweeps, method):
    """Power steps until the residual contract is met or the sweep budget is spent."""
    res = residual(op, pi)
    while res > tol and sweeps < max_sweeps:
        pi = _normalise(_rmatvec(op, pi))
        sweeps += 1
        res = residual(op, pi)
    if res > tol:
        raise NonConvergenceError(res, sweeps, method, pi)
    return SteadyState(pi, res, sweeps, method)


def solve_direct(op, options: SolverOptions) -> SteadyState:
    P = _as_sparse(op, options.memory_budget_mb)
    pi = _direct(P)
    return _refine(P, pi, options.tolerance, 1, options.max_sweeps, "direct")


def solve_power(op, options: SolverOptions, pi0=None) -> SteadyState:
    n = op.shape[0] if hasattr(op, "shape") else op.n
    pi = np.full(n, 1.0 / n) if pi0 is None else _normalise(np.asarray(pi0, float))
    res = residual(op, pi)
    sweeps = 0
    while res > options.tolerance:
        if sweeps >= options.max_sweeps:
            raise NonConvergenceError(res, sweeps, "power", pi)
        pi = _normalise(_rmatvec(op, pi))
        sweeps += 1
        res = residual(op, pi)
    return SteadyState(pi, res, sweeps, "power")


def solve_gauss_seidel(op, options: SolverOptions, pi0=None) -> SteadyState:
    P = _as_sparse(op, options.memory_budget_mb)
    n = P.shape[0]
    a = (sp.identity(n, format="csr") - P).T.tocsr()
    lower = sp.tril(a, format="csr")
    upper = sp.triu(a, k=1, format="csr")
    if np.any(lower.diagonal() == 0.0):
        raise np.linalg.LinAlgError("Gauss-Seidel needs every state to leave itself with positive probability")
    pi = np.full(n, 1.0 / n) if pi0 is None else _normalise(np.asarray(pi0, float))
    res = residual(P, pi)
    sweeps = 0
    while res > options.tolerance:
        if sweeps >= options.max_sweeps:
            raise NonConvergenceError(res, sweeps, "gauss_seidel", pi)
        pi = spla.spsolve_triangular(lower, -(upper @ pi), lower=True)
        pi = _normalise(pi)
        sweeps += 1
        res = residual(P, pi)
    return SteadyState(pi, res, sweeps, "gauss_seidel")


def solve_iad(op: TransitionOperator, options: SolverOptions, pi0=None) -> SteadyState:
    space = op.space
    C1 = space.conn_bound + 1
    m = (space.queue_capacity + 1) * space.phases

    lus = []
    for c in range(C1):
        with np.errstate(all="ignore"):
            lu = la.lu_factor(np.eye(m) - op.block(c, c), check_finite=False)
        if np.any(np.abs(np.diag(lu[0])) < 1e-300):
            raise np.linalg.LinAlgError(f"connection level {c} is closed; use the direct solver")
        lus.append(lu)

    sources = [[c for c in range(C1) if c2 in set(op.support(c)) and c != c2] for c2 in range(C1)]

    if pi0 is None:
        v = np.full((C1, m), 1.0 / (C1 * m))
    else:
        v = _normalise(np.asarray(pi0, float)).reshape(C1, m).copy()
    res = residual(op, v.ravel())
    sweeps = 0
    while res > options.tolerance:
        if sweeps >= options.max_sweeps:
            raise NonConvergenceError(res, sweeps, "iad", v.ravel())
        v = _aggregate(op, v)
        for c in range(C1):
            rhs = np.zeros(m)
            for c0 in sources[c]:
                rhs += op.apply_level(c0, v[c0], c)
            v[c] = la.lu_solve(lus[c], rhs, trans=1, check_finite=False)
        v = _normalise(v.ravel()).reshape(C1, m)
        sweeps += 1
        res = residual(op, v.ravel())
        log.debug("iad sweep %d residual %.3e", sweeps, res)
    return SteadyState(v.ravel(), res, sweeps, "iad")


def _aggregate(op: TransitionOperator, v: np.ndarray) -> np.ndarray:
    C1, m = v.shape
    S = op.space.phases
    mass = v.sum(axis=1)
    w = np.where(mass[:, None] > 0, v / np.where(mass > 0, mass, 1.0)[:, None], 1.0 / m)
    # level-to-level probabilities under the current within-level shape;
    # queue/phase moves are stochastic so only the connection factor matters
    wx = w.reshape(C1, -1, S).sum(axis=2)
    agg = np.einsum("cx,cxd->cd", wx, op.conn)
    xi = _direct(sp.csr_matrix(agg))
    return xi[:, None] * w


def solve(op, options: SolverOptions | None = None) -> SteadyState:
    """Stationary vector of a row-stochastic operator.

    ``op`` may be a dense array, a scipy sparse matrix or a TransitionOperator.
    """
    options = options or SolverOptions()
    method = options.method
    if method == "auto":
        n = op.shape[0] if hasattr(op, "shape") else op.n
        method = "direct"
        if isinstance(op, TransitionOperator):
            fits = op.nnz_estimate() * 12 / 2**20 <= options.memory_budget_mb
            if n > DIRECT_STATE_LIMIT or not fits:
                method = "iad"
    if method == "direct":
        return solve_direct(op, options)
    if method == "gauss_seidel":
        return solve_gauss_seidel(op, options)
    if method == "power":
        return solve_power(op, options)
    if method == "iad":
        if not isinstance(op, TransitionOperator):
            raise TypeError("iad needs the factored TransitionOperator")
        return solve_iad(op, options)
    raise ValueError(f"unknown solver method {options.method!r}")


_AXES = {"s": 2, "phase": 2, "x": 1, "queue": 1, "c": 0, "connections": 0}


def marginal(pi, space: StateSpace, axis: str) -> np.ndarray:
    try:
        keep = _AXES[axis]
    except KeyError:
        raise ValueError(f"axis must be one of {sorted(_AXES)}") from None
    p = space.reshape(pi)
    drop = tuple(a for a in range(3) if a != keep)
    return p.sum(axis=drop)


__all__ = ["SteadyState", "NonConvergenceError", "MemoryBudgetError", "solve", "marginal", "residual"]
