"""Restricted master problem over pooled patient schedules.

Rows, in order: one convexity row per patient (``= 1``), one capacity row per
``(machine, day, window)`` cell touched by some pooled column
(``<= L_w - S``), and one dominance row per consecutive same-protocol pair
(``start(p) - start(q) <= 0``). Each patient also owns an artificial column
with a very large cost so the LP is feasible from the first iteration.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp

from .domain import Instance, PatientSchedule, Solution, validate_solution
from .lp import LPInfeasible, solve_lp_arrays
from .objective import ObjectiveWeights, composite_cost
from .pricing import DualPrices, PricedColumn, isolation_feasible

log = logging.getLogger(__name__)

BIG_M_FACTOR = 1e6


class RMPStructureError(ValueError):
    pass


class ColumnPool:
    """Per-patient ordered, de-duplicated column lists."""

    def __init__(self) -> None:
        self._cols: dict[int, list[PricedColumn]] = {}
        self._keys: dict[int, set] = {}

    def add(self, col: PricedColumn) -> bool:
        pid = col.schedule.patient_id
        keys = self._keys.setdefault(pid, set())
        if col.schedule.key in keys:
            return False
        keys.add(col.schedule.key)
        self._cols.setdefault(pid, []).append(col)
        return True

    def add_schedule(self, sched: PatientSchedule, inst: Instance, weights: ObjectiveWeights) -> bool:
        if not isolation_feasible(inst, sched):
            raise ValueError(f"schedule for patient {sched.patient_id} is not feasible in isolation")
        return self.add(PricedColumn(sched, composite_cost(sched, inst, weights), float("nan")))

    def add_solution(self, sol: Solution | Mapping[int, PatientSchedule], inst: Instance,
                     weights: ObjectiveWeights) -> int:
        schedules = sol.schedules if isinstance(sol, Solution) else sol
        return sum(self.add_schedule(s, inst, weights) for s in schedules.values())

    def columns(self, pid: int) -> list[PricedColumn]:
        return list(self._cols.get(pid, []))

    def contains(self, sched: PatientSchedule) -> bool:
        return sched.key in self._keys.get(sched.patient_id, ())

    def patients(self) -> list[int]:
        return sorted(self._cols)

    def __len__(self) -> int:
        return sum(len(v) for v in self._cols.values())

    def copy(self) -> "ColumnPool":
        out = ColumnPool()
        for pid in self.patients():
            for c in self._cols[pid]:
                out.add(c)
        return out


@dataclass
class RMP:
    inst: Instance
    weights: ObjectiveWeights
    patients: list[int]
    schedules: list[PatientSchedule]        # real columns
    cost: np.ndarray                        # real + artificial
    col_patient: np.ndarray                 # patient row index per column
    col_start: np.ndarray
    n_real: int
    cells: list[tuple[int, int, int]]       # capacity rows, 1-based (m, d, w)
    pairs: list[tuple[int, int]]            # dominance rows
    A_eq: sp.csc_matrix
    b_eq: np.ndarray
    A_ub: sp.csc_matrix
    b_ub: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.A_eq.shape[0] + self.A_ub.shape[0]

    @property
    def n_columns(self) -> int:
        return len(self.cost)

    def reduced_costs(self, lam_rows: np.ndarray, y_ub: np.ndarray) -> np.ndarray:
        return self.cost - self.A_eq.T @ lam_rows - self.A_ub.T @ y_ub


def build_rmp(pool: ColumnPool, inst: Instance, weights: ObjectiveWeights,
              artificial: bool = True) -> RMP:
    patients = [p.id for p in inst.patients]
    row_of = {pid: i for i, pid in enumerate(patients)}
    uncovered = [pid for pid in patients if not pool.columns(pid)]
    if uncovered:
        raise RMPStructureError(f"patients without any column: {uncovered}")
    stray = set(pool.patients()) - set(patients)
    if stray:
        raise RMPStructureError(f"pool has columns for unknown patients {sorted(stray)}")

    M, D, W = inst.occupancy.shape
    scheds, costs, prow, starts = [], [], [], []
    cell_ids, cell_cols, cell_mins = [], [], []
    for pid in patients:
        pr = inst.protocol_of(pid)
        for col in pool.columns(pid):
            j = len(scheds)
            s = col.schedule
            scheds.append(s)
            costs.append(col.cost)
            prow.append(row_of[pid])
            starts.append(s.start_day)
            for (m, d, w), minutes in s.billed(pr):
                cell_ids.append(((m - 1) * D + (d - 1)) * W + (w - 1))
                cell_cols.append(j)
                cell_mins.append(minutes)
    n_real = len(scheds)
    P = len(patients)
    pairs = inst.dominance_pairs()

    cost = np.asarray(costs, dtype=float)
    n_art = P if artificial else 0
    if artificial:
        big = BIG_M_FACTOR * max(1.0, float(np.abs(cost).max(initial=0.0)))
        cost = np.concatenate([cost, np.full(P, big)])
    n_cols = n_real + n_art
    col_patient = np.concatenate([np.asarray(prow, dtype=int), np.arange(n_art)])
    col_start = np.concatenate([np.asarray(starts, dtype=float), np.zeros(n_art)])

    A_eq = sp.csc_matrix((np.ones(n_cols), (col_patient, np.arange(n_cols))), shape=(P, n_cols))
    b_eq = np.ones(P)

    uniq, inverse = np.unique(np.asarray(cell_ids, dtype=np.int64), return_inverse=True)
    cells = [(int(u // (D * W)) + 1, int(u // W % D) + 1, int(u % W) + 1) for u in uniq]
    lengths = np.asarray(inst.time.window_lengths)
    occ = inst.occupancy.minutes
    cap_rhs = np.array([lengths[w - 1] - occ[m - 1, d - 1, w - 1] for m, d, w in cells], dtype=float)

    rows = list(inverse)
    cols = list(cell_cols)
    vals = [float(v) for v in cell_mins]
    C = len(cells)
    start_of = np.asarray(starts, dtype=float)
    cols_of = {}
    for j in range(n_real):
        cols_of.setdefault(int(prow[j]), []).append(j)
    for k, (p, q) in enumerate(pairs):
        r = C + k
        for j in cols_of.get(row_of[p], []):
            rows.append(r); cols.append(j); vals.append(start_of[j])
        for j in cols_of.get(row_of[q], []):
            rows.append(r); cols.append(j); vals.append(-start_of[j])
        if artificial:
            # an artificial column never makes a dominance row tighter
            rows.append(r); cols.append(n_real + row_of[q]); vals.append(-float(inst.time.days))
    A_ub = sp.csc_matrix((vals, (rows, cols)), shape=(C + len(pairs), n_cols))
    b_ub = np.concatenate([cap_rhs, np.zeros(len(pairs))])
    return RMP(inst, weights, patients, scheds, cost, col_patient, col_start, n_real,
               cells, pairs, A_eq, b_eq, A_ub, b_ub)


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    duals: DualPrices
    y_eq: np.ndarray
    y_ub: np.ndarray

    def artificial_mass(self, rmp: RMP) -> float:
        return float(self.x[rmp.n_real:].sum())


def solve_lp(rmp: RMP, active: Optional[np.ndarray] = None, diagnose: bool = True) -> LpResult:
    """LP relaxation of the RMP, optionally restricted to ``active`` columns.

    Raises :class:`~rtsched.lp.LPInfeasible` with the offending rows if infeasible.
    """
    if active is None:
        idx = np.arange(rmp.n_columns)
    else:
        idx = np.flatnonzero(active)
    sol = solve_lp_arrays(rmp.cost[idx], rmp.A_eq[:, idx], rmp.b_eq, rmp.A_ub[:, idx], rmp.b_ub,
                          diagnose=diagnose)
    x = np.zeros(rmp.n_columns)
    x[idx] = sol.x
    duals = _duals(rmp, sol.y_eq, sol.y_ub)
    return LpResult(x, 1.0 + sol.objective, duals, sol.y_eq, sol.y_ub)


def _duals(rmp: RMP, y_eq: np.ndarray, y_ub: np.ndarray) -> DualPrices:
    lam = {pid: float(y_eq[i]) for i, pid in enumerate(rmp.patients)}
    gamma = np.zeros(rmp.inst.occupancy.shape)
    C = len(rmp.cells)
    for k, (m, d, w) in enumerate(rmp.cells):
        gamma[m - 1, d - 1, w - 1] = y_ub[k]
    eta = {p: float(y_ub[C + k]) for k, (p, _) in enumerate(rmp.pairs)}
    return DualPrices(lam, gamma, eta)


@dataclass
class IpResult:
    selection: dict[int, PatientSchedule]
    objective: float
    lower_bound: float
    relative_gap: float
    status: str                 # optimal | timeout | node_limit | no_incumbent | infeasible
    nodes: int = 0
    warm_start_accepted: bool = False
    warm_start_objective: Optional[float] = None
    incumbent_history: list = field(default_factory=list)
    log: list = field(default_factory=list)

    @property
    def has_incumbent(self) -> bool:
        return math.isfinite(self.objective)


def relative_gap(upper: float, lower: float) -> float:
    return (upper - lower) / lower if lower else math.inf


def solve_ip(rmp: RMP, time_limit: float = 3600.0,
             warm_start: Solution | Mapping[int, PatientSchedule] | None = None,
             node_limit: int = 100_000, lower_bound: Optional[float] = None,
             dive: bool = True) -> IpResult:
    """Branch and bound over the pooled columns (no re-pricing inside the tree).

    Branching picks the patient whose selection is most fractional and splits
    its columns at the floor of the LP-weighted mean start day; if the fractional
    support shares one start day it falls back to fixing the heaviest column.
    Nodes are explored depth first until an incumbent exists, then best bound
    first. With ``dive`` a fix-and-resolve dive from the root LP supplies an
    early incumbent; its LP solves are not counted as tree nodes.
    """
    t0 = time.monotonic()
    deadline = t0 + time_limit
    n = rmp.n_real
    real = np.zeros(rmp.n_columns, dtype=bool)
    real[:n] = True
    integral_costs = bool(np.allclose(rmp.cost[:n], np.round(rmp.cost[:n]), atol=1e-9))
    P = len(rmp.patients)

    best = {"val": math.inf, "sel": None}
    history = []
    accepted, warm_val = False, None

    def offer(sel: np.ndarray, source: str, at: int) -> None:
        val = 1.0 + float(rmp.cost[sel].sum())
        if val < best["val"] - 1e-9:
            best["val"], best["sel"] = val, sel
            history.append((at, val, source))

    if warm_start is not None:
        idx = _warm_indices(rmp, warm_start)
        if idx is not None:
            sched = {rmp.schedules[j].patient_id: rmp.schedules[j] for j in idx}
            if validate_solution(rmp.inst, sched).ok:
                offer(np.asarray(idx), "warm_start", 0)
                accepted, warm_val = True, best["val"]

    def prunable(bound: float) -> bool:
        if best["sel"] is None or not math.isfinite(bound):
            return False
        if integral_costs:
            return math.ceil(bound - 1e-6) >= best["val"] - 1e-9
        return bound >= best["val"] - 1e-9 * max(1.0, abs(best["val"]))

    def feasible_mask(mask: np.ndarray) -> bool:
        return np.bincount(rmp.col_patient[mask], minlength=P).min() > 0

    root = None
    nodes = 0
    status = "optimal"
    if feasible_mask(real):
        try:
            root = solve_lp(rmp, real, diagnose=False)
            nodes = 1
        except LPInfeasible:
            root = None
    dive_lps = 0
    if root is not None and dive:
        dive_lps = _dive(rmp, root, real, offer, deadline)

    stack: list = []
    heap: list = []
    seq = 0

    def push(bound: float, mask: np.ndarray) -> None:
        nonlocal seq
        seq += 1
        if best["sel"] is None:
            stack.append((bound, seq, mask))
        else:
            heapq.heappush(heap, (bound, seq, mask))

    def expand(lp: LpResult, mask: np.ndarray) -> None:
        x = lp.x[:n]
        branch = _pick_branch(rmp, x)
        if branch is None:
            offer(np.flatnonzero(x > 0.5), "tree", nodes)
            return
        # the child holding more LP mass is pushed last so depth-first visits it first
        for child in sorted(_children(rmp, x, mask, branch), key=lambda c: float(x[c[:n]].sum())):
            push(lp.objective, child)

    if root is not None and not prunable(root.objective):
        expand(root, real)
    while stack or heap:
        if time.monotonic() > deadline:
            status = "timeout"
            break
        if nodes >= node_limit:
            status = "node_limit"
            break
        if best["sel"] is not None and stack:
            for item in stack:
                heapq.heappush(heap, item)
            stack.clear()
        parent_bound, _, mask = stack.pop() if stack else heapq.heappop(heap)
        if prunable(parent_bound) or not feasible_mask(mask):
            continue
        nodes += 1
        try:
            lp = solve_lp(rmp, mask, diagnose=False)
        except LPInfeasible:
            continue
        if prunable(lp.objective):
            continue
        expand(lp, mask)

    root_bound = root.objective if root is not None else math.nan
    lb = lower_bound if lower_bound is not None else root_bound
    log_entry = {"dive_lps": dive_lps, "root_bound": root_bound}
    if best["sel"] is None:
        final = "no_incumbent" if status != "optimal" else "infeasible"
        return IpResult({}, math.inf, lb, math.inf, final, nodes, accepted, warm_val, history, [log_entry])
    sel = best["sel"]
    selection = {rmp.schedules[j].patient_id: rmp.schedules[j] for j in sel}
    report = validate_solution(rmp.inst, selection)
    if not report.ok:
        raise RuntimeError(f"branch and bound returned an invalid selection:\n{report}")
    return IpResult(selection, best["val"], lb, relative_gap(best["val"], lb), status, nodes,
                    accepted, warm_val, history, [log_entry])


def _dive(rmp: RMP, root: LpResult, real: np.ndarray, offer, deadline: float) -> int:
    """Fix the heaviest fractional column, re-solve, repeat; ban it once if that fails."""
    n = rmp.n_real
    P = len(rmp.patients)
    pat = rmp.col_patient[:n]
    mask = real.copy()
    lp = root
    solves = 0
    while time.monotonic() < deadline:
        x = lp.x[:n]
        top = np.zeros(P)
        np.maximum.at(top, pat, x)
        frac = x * (top[pat] < 1 - 1e-6)
        if not (frac > 1e-6).any():
            offer(np.flatnonzero(x > 0.5), "dive", 0)
            return solves
        j = int(np.argmax(frac))
        others = np.zeros(rmp.n_columns, dtype=bool)
        others[:n] = (pat == pat[j]) & (np.arange(n) != j)
        fixed = mask & ~others
        solves += 1
        try:
            lp = solve_lp(rmp, fixed, diagnose=False)
            mask = fixed
            continue
        except LPInfeasible:
            pass
        banned = mask.copy()
        banned[j] = False
        if np.bincount(rmp.col_patient[banned], minlength=P).min() == 0:
            return solves
        solves += 1
        try:
            lp = solve_lp(rmp, banned, diagnose=False)
            mask = banned
        except LPInfeasible:
            return solves
    return solves


def _warm_indices(rmp: RMP, warm: Solution | Mapping[int, PatientSchedule]) -> Optional[list[int]]:
    schedules = warm.schedules if isinstance(warm, Solution) else warm
    index = {(s.patient_id, s.key): j for j, s in enumerate(rmp.schedules)}
    out = []
    for pid in rmp.patients:
        s = schedules.get(pid)
        if s is None or (pid, s.key) not in index:
            return None
        out.append(index[(pid, s.key)])
    return out


def _pick_branch(rmp: RMP, x: np.ndarray, eps: float = 1e-6):
    n = rmp.n_real
    P = len(rmp.patients)
    pat = rmp.col_patient[:n]
    top = np.zeros(P)
    np.maximum.at(top, pat, x)
    frac = np.flatnonzero(top < 1 - eps)
    if not len(frac):
        return None
    support = x > eps
    best = None
    for i in frac:
        cols = np.flatnonzero(support & (pat == i))
        starts = rmp.col_start[cols]
        spread = starts.max() > starts.min()
        key = (not spread, top[i], i)
        if best is None or key < best[0]:
            best = (key, i, cols, spread)
    return best[1:]


def _children(rmp: RMP, x: np.ndarray, mask: np.ndarray, branch) -> list[np.ndarray]:
    i, cols, spread = branch
    of_patient = np.zeros(rmp.n_columns, dtype=bool)
    of_patient[:rmp.n_real] = rmp.col_patient[:rmp.n_real] == i
    if spread:
        w = x[cols]
        t = math.floor(float((w * rmp.col_start[cols]).sum() / w.sum()) + 1e-9)
        early = mask & ~(of_patient & (rmp.col_start > t))
        late = mask & ~(of_patient & (rmp.col_start <= t))
        return [early, late]
    j = int(cols[np.argmax(x[cols])])
    drop = mask.copy()
    drop[j] = False
    fix = mask & ~of_patient
    fix[j] = True
    return [drop, fix]
