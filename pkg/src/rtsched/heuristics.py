"""Constructive heuristics: a deterministic greedy and a Luby-restart randomized search.

Both place patients one at a time against a working copy of the residual
capacity, so every returned solution is feasible by construction (and is
re-validated anyway).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .domain import Instance, Patient, PatientSchedule, Solution, SwitchKind, validate_solution
from .objective import ObjectiveWeights, evaluate
from .pricing import best_course

PRIORITY_ORDER = {"A": 0, "B": 1, "C": 2}
RESTART_SCALE = 75
# start days priced per DP call; the earliest feasible day is usually in the first chunk
GREEDY_CHUNK = 5


class HeuristicFailure(RuntimeError):
    """No feasible placement was found for some patient."""

    def __init__(self, message: str, patient_id: Optional[int] = None):
        super().__init__(message)
        self.patient_id = patient_id


def placement_order(inst: Instance) -> list[Patient]:
    """Patients by priority, then arrival day, then id.

    Within each protocol the slots are re-filled in dominance-chain order, so a
    patient is always placed after every same-protocol patient with an earlier
    target. A lower bound on the start day then suffices for dominance.
    """
    order = sorted(inst.patients, key=lambda p: (PRIORITY_ORDER[p.priority], p.d_min, p.d_L, p.id))
    chains = {h: iter(c) for h, c in inst.dominance_chains().items()}
    return [inst.patient(next(chains[p.protocol])) for p in order]


def book(residual: np.ndarray, inst: Instance, sched: PatientSchedule) -> None:
    for (m, d, w), minutes in sched.billed(inst.protocol_of(sched.patient_id)):
        residual[m - 1, d - 1, w - 1] -= minutes


def greedy_solve(inst: Instance, weights: ObjectiveWeights) -> Solution:
    """Earliest feasible start for each patient, cheapest course on that day."""
    residual = inst.residual().copy()
    floor: dict[str, int] = {}
    chosen: dict[int, PatientSchedule] = {}
    for p in placement_order(inst):
        starts = inst.start_days(p, earliest=floor.get(p.protocol))
        col = None
        for k in range(0, len(starts), GREEDY_CHUNK):
            col = best_course(p, inst, weights, residual=residual, start_days=starts[k:k + GREEDY_CHUNK],
                              earliest=True)
            if col is not None:
                break
        if col is None:
            raise HeuristicFailure(f"greedy: no feasible course for patient {p.id}", p.id)
        book(residual, inst, col.schedule)
        chosen[p.id] = col.schedule
        floor[p.protocol] = col.schedule.start_day
    return _finish(inst, chosen, weights, "greedy")


def luby(i: int) -> int:
    """The ``i``-th term (1-based) of the Luby sequence 1,1,2,1,1,2,4,..."""
    if not isinstance(i, (int, np.integer)) or i < 1:
        raise ValueError(f"luby index must be a positive integer, got {i!r}")
    while True:
        k = int(i).bit_length()
        if i == (1 << k) - 1:
            return 1 << (k - 1)
        i -= (1 << (k - 1)) - 1


def restart_search(inst: Instance, weights: ObjectiveWeights, rng: np.random.Generator,
                   budget: int = 10) -> Solution:
    """Best of ``budget`` randomized constructive passes.

    Pass ``i`` gives up after ``75 * luby(i)`` dead ends, a dead end being a
    (start day, trajectory group) attempt that cannot be completed.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    order = placement_order(inst)
    best: Optional[Solution] = None
    for i in range(1, budget + 1):
        chosen = _restart_pass(inst, weights, rng, order, RESTART_SCALE * luby(i))
        if chosen is None:
            continue
        sol = _finish(inst, chosen, weights, "restart")
        if best is None or sol.objective_value < best.objective_value:
            best = sol
            best.meta["pass"] = i
    if best is None:
        raise HeuristicFailure(f"restart search: no feasible pass in {budget} attempts")
    best.meta["passes"] = budget
    return best


def _restart_pass(inst, weights, rng, order, limit) -> Optional[dict[int, PatientSchedule]]:
    residual = inst.residual().copy()
    floor: dict[str, int] = {}
    chosen: dict[int, PatientSchedule] = {}
    dead_ends = 0
    for p in order:
        pr = inst.protocol_of(p)
        groups = inst.park.trajectory_groups(pr.allowed_machines)
        sched = None
        for sd in inst.start_days(p, earliest=floor.get(p.protocol)):
            for gi in rng.permutation(len(groups)):
                sched = _construct(inst, weights, rng, p, sd, groups[gi], residual)
                if sched is not None:
                    break
                dead_ends += 1
                if dead_ends > limit:
                    return None
            if sched is not None:
                break
        if sched is None:
            return None
        book(residual, inst, sched)
        chosen[p.id] = sched
        floor[p.protocol] = sd
    return chosen


def _construct(inst, weights, rng, p: Patient, sd: int, group, residual) -> Optional[PatientSchedule]:
    pr = inst.protocol_of(p)
    a = weights.alphas
    W = inst.time.windows
    machines, windows = [], []
    for k in range(pr.fractions):
        d = sd + k
        need = pr.dur_first if k == 0 else pr.dur_other
        options = {m: [w for w in range(1, W + 1) if residual[m - 1, d - 1, w - 1] >= need] for m in group}
        options = {m: ws for m, ws in options.items() if ws}
        if not options:
            return None
        prev_m = machines[-1] if machines else None

        def machine_cost(m):
            c = a[4] * (m not in pr.preferred_machines)
            if prev_m is not None and inst.park.switch_kind(prev_m, m) is SwitchKind.PARTIAL:
                c += a[5]
            return c

        cands = sorted(options)
        costs = [machine_cost(m) for m in cands]
        low = min(costs)
        pool = [m for m, c in zip(cands, costs) if c == low]
        m = pool[int(rng.integers(len(pool)))]
        ws = options[m]
        if p.window_pref is not None:
            dev = min(abs(w - p.window_pref) for w in ws)
            ws = [w for w in ws if abs(w - p.window_pref) == dev]
        if windows and windows[-1] in ws:
            w = windows[-1]
        else:
            w = ws[int(rng.integers(len(ws)))]
        machines.append(m)
        windows.append(w)
    return PatientSchedule.consecutive(p.id, sd, machines, windows)


def _finish(inst, chosen, weights, method) -> Solution:
    report = validate_solution(inst, chosen)
    if not report.ok:
        raise RuntimeError(f"{method} produced an invalid solution:\n{report}")
    return evaluate(inst, chosen, weights, status="feasible", method=method)
