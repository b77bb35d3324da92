"""Linear programming back ends.

``solve_lp_arrays`` wraps HiGHS (through :func:`scipy.optimize.linprog`) and
returns row duals with the usual minimization signs: ``<=`` rows have duals
``<= 0``, equality rows are free. ``tableau_simplex`` is a small dense two-phase
simplex with Bland's rule, kept independent of HiGHS for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog


class LPInfeasible(RuntimeError):
    def __init__(self, message: str, rows: Optional[list[int]] = None):
        super().__init__(message)
        self.rows = rows or []


@dataclass
class LPArrays:
    x: np.ndarray
    objective: float
    y_eq: np.ndarray
    y_ub: np.ndarray
    iterations: int = 0


def solve_lp_arrays(c: np.ndarray, A_eq, b_eq: np.ndarray, A_ub, b_ub: np.ndarray,
                    diagnose: bool = True) -> LPArrays:
    """Minimize ``c @ x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``x >= 0``."""
    kwargs = {}
    if A_ub is not None and A_ub.shape[0]:
        kwargs.update(A_ub=A_ub, b_ub=b_ub)
    if A_eq is not None and A_eq.shape[0]:
        kwargs.update(A_eq=A_eq, b_eq=b_eq)
    for method in ("highs", "highs-ds", "highs-ipm"):
        res = linprog(c, bounds=(0, None), method=method, **kwargs)
        if res.status in (0, 2):
            break
    if res.status == 2:
        rows = infeasible_rows(c, A_eq, b_eq, A_ub, b_ub) if diagnose else []
        raise LPInfeasible("LP is infeasible", rows)
    if res.status != 0:
        raise RuntimeError(f"LP solve failed: {res.message}")
    n_eq = 0 if A_eq is None else A_eq.shape[0]
    n_ub = 0 if A_ub is None else A_ub.shape[0]
    y_eq = res.eqlin.marginals if n_eq else np.zeros(0)
    y_ub = res.ineqlin.marginals if n_ub else np.zeros(0)
    return LPArrays(res.x, float(res.fun), np.asarray(y_eq), np.asarray(y_ub), int(res.nit))


def infeasible_rows(c, A_eq, b_eq, A_ub, b_ub) -> list[int]:
    """Rows carrying slack in an elastic phase-one solve (equality rows first)."""
    n = len(c)
    n_eq = 0 if A_eq is None else A_eq.shape[0]
    n_ub = 0 if A_ub is None else A_ub.shape[0]
    blocks_eq, blocks_ub = [], []
    if n_eq:
        blocks_eq = [sp.csr_matrix(A_eq), sp.identity(n_eq), -sp.identity(n_eq), sp.csr_matrix((n_eq, n_ub))]
    if n_ub:
        blocks_ub = [sp.csr_matrix(A_ub), sp.csr_matrix((n_ub, 2 * n_eq)), -sp.identity(n_ub)]
    cost = np.concatenate([np.zeros(n), np.ones(2 * n_eq + n_ub)])
    kw = {}
    if n_eq:
        kw.update(A_eq=sp.hstack(blocks_eq), b_eq=b_eq)
    if n_ub:
        kw.update(A_ub=sp.hstack(blocks_ub), b_ub=b_ub)
    res = linprog(cost, bounds=(0, None), method="highs", **kw)
    if res.status != 0:
        return []
    s = res.x[n:]
    eq_slack = s[:n_eq] + s[n_eq:2 * n_eq]
    ub_slack = s[2 * n_eq:]
    return [i for i in range(n_eq) if eq_slack[i] > 1e-9] + [n_eq + i for i in range(n_ub) if ub_slack[i] > 1e-9]


def tableau_simplex(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, tol: float = 1e-9,
                    max_iter: int = 10_000) -> tuple[float, np.ndarray]:
    """Dense two-phase simplex (Bland's rule). Returns ``(objective, x)``.

    Intended for small problems only.
    """
    c = np.asarray(c, dtype=float)
    n = len(c)
    rows, rhs, slack_sign = [], [], []
    if A_eq is not None:
        for a, b in zip(np.atleast_2d(_dense(A_eq)), np.atleast_1d(b_eq)):
            rows.append(a); rhs.append(b); slack_sign.append(0)
    if A_ub is not None:
        for a, b in zip(np.atleast_2d(_dense(A_ub)), np.atleast_1d(b_ub)):
            rows.append(a); rhs.append(b); slack_sign.append(1)
    m = len(rows)
    n_slack = sum(slack_sign)
    # columns: x | slacks | artificials
    T = np.zeros((m, n + n_slack + m + 1))
    k = 0
    for i, (a, b, s) in enumerate(zip(rows, rhs, slack_sign)):
        T[i, :n] = a
        if s:
            T[i, n + k] = 1.0
            k += 1
        T[i, -1] = b
        if b < 0:
            T[i, :] *= -1
        T[i, n + n_slack + i] = 1.0
    basis = list(range(n + n_slack, n + n_slack + m))
    art = set(basis)

    def run(cost: np.ndarray, allowed: np.ndarray) -> None:
        for _ in range(max_iter):
            cb = cost[basis]
            red = cost[:-1] - cb @ T[:, :-1]
            enter = next((j for j in range(len(red)) if allowed[j] and red[j] < -tol), None)
            if enter is None:
                return
            col = T[:, enter]
            ratios = [(T[i, -1] / col[i], basis[i], i) for i in range(m) if col[i] > tol]
            if not ratios:
                raise RuntimeError("LP is unbounded")
            best = min(r for r, _, _ in ratios)
            leave = min((b, i) for r, b, i in ratios if r <= best + tol)[1]
            T[leave, :] /= T[leave, enter]
            for i in range(m):
                if i != leave and T[i, enter] != 0:
                    T[i, :] -= T[i, enter] * T[leave, :]
            basis[leave] = enter
        raise RuntimeError("simplex iteration limit reached")

    total = n + n_slack + m
    phase1 = np.zeros(total + 1)
    phase1[n + n_slack:total] = 1.0
    run(phase1, np.ones(total, dtype=bool))
    if sum(T[i, -1] for i in range(m) if basis[i] in art) > 1e-7:
        raise LPInfeasible("LP is infeasible")
    # pivot degenerate artificials out where possible
    for i in range(m):
        if basis[i] in art:
            j = next((j for j in range(n + n_slack) if abs(T[i, j]) > tol), None)
            if j is not None:
                T[i, :] /= T[i, j]
                for r in range(m):
                    if r != i and T[r, j] != 0:
                        T[r, :] -= T[r, j] * T[i, :]
                basis[i] = j
    phase2 = np.zeros(total + 1)
    phase2[:n] = c
    allowed = np.ones(total, dtype=bool)
    allowed[n + n_slack:] = False
    run(phase2, allowed)
    x = np.zeros(total)
    for i, b in enumerate(basis):
        x[b] = T[i, -1]
    return float(c @ x[:n]), x[:n]


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
