"""Per-patient pricing: the exact column generator and its enumeration oracle.

A patient's course is a path over consecutive days whose state is the
``(machine, window)`` pair used that day. Window switches and partial
beam-match switches are transition costs, preference and machine-preference
penalties and capacity duals are node costs. The start day contributes the
waiting terms, the convexity dual and the dominance duals.

Dual sign convention (minimization, ``<=`` rows): capacity duals ``gamma <= 0``;
dominance rows are ``start(p) - start(next(p)) <= 0`` with dual
``eta[p] <= 0`` stored under the first patient of the pair.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import Instance, Patient, PatientSchedule, SwitchKind, check_schedule
from .objective import ObjectiveWeights, composite_cost

NEGATIVE_RC = -1e-6


@dataclass
class DualPrices:
    lam: dict[int, float] = field(default_factory=dict)
    gamma: Optional[np.ndarray] = None
    eta: dict[int, float] = field(default_factory=dict)

    @classmethod
    def zeros(cls, inst: Instance) -> "DualPrices":
        return cls({}, np.zeros(inst.occupancy.shape), {})

    def gamma_array(self, inst: Instance) -> np.ndarray:
        if self.gamma is None:
            return np.zeros(inst.occupancy.shape)
        return self.gamma

    def start_day_price(self, inst: Instance, pid: int) -> float:
        """Coefficient ``eta[p] - eta[prev(p)]`` multiplying the start day."""
        prev = _predecessors(inst).get(pid)
        return self.eta.get(pid, 0.0) - (self.eta.get(prev, 0.0) if prev is not None else 0.0)


def _predecessors(inst: Instance) -> dict[int, int]:
    cache = getattr(inst, "_pred_cache", None)
    if cache is None:
        cache = {q: p for p, q in inst.dominance_pairs()}
        object.__setattr__(inst, "_pred_cache", cache)
    return cache


@dataclass(frozen=True)
class PricedColumn:
    schedule: PatientSchedule
    cost: float
    reduced_cost: float


class InfeasibleColumn(ValueError):
    pass


def isolation_feasible(inst: Instance, sched: PatientSchedule, residual: np.ndarray | None = None) -> bool:
    if not check_schedule(inst, sched).ok:
        return False
    residual = inst.residual() if residual is None else residual
    pr = inst.protocol_of(sched.patient_id)
    return all(residual[m - 1, d - 1, w - 1] >= minutes for (m, d, w), minutes in sched.billed(pr))


def reduced_cost(col: PatientSchedule, duals: DualPrices, weights: ObjectiveWeights, inst: Instance) -> float:
    """``c - lambda_p - sum gamma * billed - (eta_p - eta_prev) * start_day``.

    Raises :class:`InfeasibleColumn` if the schedule violates a single-patient rule
    or does not fit the residual capacity on its own.
    """
    report = check_schedule(inst, col)
    if not report.ok:
        raise InfeasibleColumn(str(report))
    if not isolation_feasible(inst, col):
        raise InfeasibleColumn(f"patient {col.patient_id}: schedule exceeds residual capacity")
    pr = inst.protocol_of(col.patient_id)
    gamma = duals.gamma_array(inst)
    value = composite_cost(col, inst, weights) - duals.lam.get(col.patient_id, 0.0)
    for (m, d, w), minutes in col.billed(pr):
        value -= gamma[m - 1, d - 1, w - 1] * minutes
    value -= duals.start_day_price(inst, col.patient_id) * col.start_day
    return value


@functools.lru_cache(maxsize=1024)
def _partial_switch_matrix(park, machines: tuple[int, ...]) -> np.ndarray:
    return np.array([[park.switch_kind(i, j) is SwitchKind.PARTIAL for j in machines] for i in machines],
                    dtype=float)


class _Group:
    """DP tables for one beam-match trajectory group of one patient."""

    def __init__(self, inst: Instance, patient: Patient, machines: tuple[int, ...],
                 weights: ObjectiveWeights):
        pr = inst.protocol_of(patient)
        W = inst.time.windows
        a = weights.alphas
        self.machines = machines
        self.states = [(m, w) for m in machines for w in range(1, W + 1)]
        ms = np.array([m for m, _ in self.states])
        ms_local = np.repeat(np.arange(len(machines)), W)
        ws = np.array([w for _, w in self.states])
        base = np.zeros(len(self.states))
        if patient.window_pref is not None and a[3]:
            base += a[3] * np.abs(ws - patient.window_pref)
        if a[4]:
            base += a[4] * np.array([m not in pr.preferred_machines for m in ms], dtype=float)
        self.base = base
        trans = np.zeros((len(ms), len(ms)))
        if a[2]:
            trans += a[2] * (ws[:, None] != ws[None, :])
        if a[5]:
            trans += a[5] * _partial_switch_matrix(inst.park, machines)[np.ix_(ms_local, ms_local)]
        self.trans = trans
        self.ms = ms
        self.ws = ws

    def node_costs(self, residual: np.ndarray, gamma: np.ndarray, minutes: int) -> np.ndarray:
        """``(D, S)`` node cost for a fraction of the given length; infeasible cells are ``inf``."""
        idx_m = self.ms - 1
        idx_w = self.ws - 1
        res = residual[idx_m, :, idx_w].T          # (D, S)
        gam = gamma[idx_m, :, idx_w].T
        cost = self.base[None, :] - gam * minutes
        return np.where(res >= minutes, cost, np.inf)


def best_course(patient: Patient, inst: Instance, weights: ObjectiveWeights,
                duals: DualPrices | None = None, residual: np.ndarray | None = None,
                start_days: list[int] | None = None, earliest: bool = False) -> Optional[PricedColumn]:
    """Minimum reduced-cost course for ``patient``, or ``None`` if no course fits.

    ``residual`` overrides the instance's free capacity (heuristics pass a working
    copy); ``start_days`` restricts the candidate start days. With ``earliest``
    the earliest feasible start day wins and cost only ranks courses on that day.
    """
    pr = inst.protocol_of(patient)
    duals = duals or DualPrices.zeros(inst)
    residual = inst.residual() if residual is None else residual
    gamma = duals.gamma_array(inst)
    starts = inst.start_days(patient) if start_days is None else list(start_days)
    if not starts:
        return None
    F = pr.fractions
    a = weights.alphas
    sd = np.array(starts)
    start_term = (a[0] * patient.weight * (sd - patient.d_min)
                  + a[1] * patient.weight * np.maximum(0, sd - patient.d_L)
                  - duals.lam.get(patient.id, 0.0)
                  - duals.start_day_price(inst, patient.id) * sd)

    tables = []
    for machines in inst.park.trajectory_groups(pr.allowed_machines):
        g = _Group(inst, patient, machines, weights)
        first = g.node_costs(residual, gamma, pr.dur_first)
        other = g.node_costs(residual, gamma, pr.dur_other) if F > 1 else None
        V = first[sd - 1]                               # (n, S)
        back = []
        for k in range(1, F):
            cand = V[:, :, None] + g.trans[None, :, :]  # (n, S_prev, S)
            arg = np.argmin(cand, axis=1)
            V = np.take_along_axis(cand, arg[:, None, :], axis=1)[:, 0, :] + other[sd - 1 + k]
            back.append(arg)
        last = np.argmin(V, axis=1)
        totals = V[np.arange(len(sd)), last] + start_term
        tables.append((g, back, last, totals))

    if earliest:
        feasible = [np.flatnonzero(np.isfinite(t)) for *_, t in tables]
        first = min((int(f[0]) for f in feasible if len(f)), default=None)
        if first is None:
            return None
        for *_, t in tables:
            t[np.arange(len(t)) != first] = np.inf
    lowest = min((float(t.min()) for *_, t in tables), default=np.inf)
    if not np.isfinite(lowest):
        return None
    tol = 1e-9 * max(1.0, abs(lowest))
    best = None
    for g, back, last, totals in tables:
        for i in np.flatnonzero(totals <= lowest + tol):
            state = int(last[i])
            path = [state]
            for arg in reversed(back):
                state = int(arg[i, state])
                path.append(state)
            path.reverse()
            seq = [g.states[s] for s in path]
            key = (int(sd[i]), tuple(m for m, _ in seq), tuple(w for _, w in seq))
            if best is None or key < best:
                best = key
    start, ms, ws = best
    sched = PatientSchedule.consecutive(patient.id, start, ms, ws)
    cost = composite_cost(sched, inst, weights)
    rc = _reduced_cost_unchecked(sched, duals, weights, inst, cost)
    return PricedColumn(sched, cost, rc)


def _reduced_cost_unchecked(sched, duals, weights, inst, cost) -> float:
    pr = inst.protocol_of(sched.patient_id)
    gamma = duals.gamma_array(inst)
    value = cost - duals.lam.get(sched.patient_id, 0.0)
    for (m, d, w), minutes in sched.billed(pr):
        value -= gamma[m - 1, d - 1, w - 1] * minutes
    return value - duals.start_day_price(inst, sched.patient_id) * sched.start_day


def solve_pricing(patient: Patient, inst: Instance, duals: DualPrices,
                  weights: ObjectiveWeights) -> Optional[PricedColumn]:
    """Exact pricing against the instance's residual capacity.

    Returns ``None`` when no feasible course exists for the patient at all.
    Ties are broken by earliest start day, then lowest machine, then lowest window.
    """
    return best_course(patient, inst, weights, duals)


class EnumerationCapExceeded(RuntimeError):
    pass


def enumerate_all_schedules(patient: Patient, inst: Instance, cap: int = 10 ** 6) -> list[PatientSchedule]:
    """Every isolation-feasible course for ``patient``, by brute force."""
    pr = inst.protocol_of(patient)
    starts = inst.start_days(patient)
    groups = inst.park.trajectory_groups(pr.allowed_machines)
    W = inst.time.windows
    size = sum(len(starts) * (len(g) * W) ** pr.fractions for g in groups)
    if size > cap:
        raise EnumerationCapExceeded(f"patient {patient.id}: {size} candidate schedules exceed cap {cap}")
    residual = inst.residual()
    out: dict[tuple, PatientSchedule] = {}
    for g in groups:
        states = [(m, w) for m in g for w in range(1, W + 1)]
        for sd in starts:
            for seq in itertools.product(states, repeat=pr.fractions):
                ok = True
                for k, (m, w) in enumerate(seq):
                    need = pr.dur_first if k == 0 else pr.dur_other
                    if residual[m - 1, sd + k - 1, w - 1] < need:
                        ok = False
                        break
                if ok:
                    s = PatientSchedule.consecutive(patient.id, sd, [m for m, _ in seq], [w for _, w in seq])
                    out.setdefault(s.key, s)
    return sorted(out.values(), key=lambda s: s.key)
