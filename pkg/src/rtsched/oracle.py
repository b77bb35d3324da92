"""Exhaustive optimal solver for tiny instances, used as ground truth in tests."""

from __future__ import annotations

import math
from typing import Optional

from .domain import Instance, PatientSchedule, Solution, validate_solution
from .objective import ObjectiveWeights, composite_cost, evaluate
from .pricing import EnumerationCapExceeded, enumerate_all_schedules


class OracleCapExceeded(RuntimeError):
    """The search needed more nodes than allowed; no answer is returned."""


def brute_force_optimal(inst: Instance, weights: ObjectiveWeights, cap: int = 10 ** 7) -> Solution:
    """Provably optimal selection by depth-first search.

    Patients are visited by decreasing priority weight with each protocol's
    dominance chain kept in order, so dominance reduces to a lower bound on the
    start day. Candidates are tried cheapest first and a branch is cut when its
    cost plus the cheapest completion cannot beat the incumbent strictly. Among
    equal-cost optima the first found (lexicographic over the visiting order) wins.
    """
    chains = inst.dominance_chains()
    pos = {pid: (h, k) for h, c in chains.items() for k, pid in enumerate(c)}
    order = sorted(inst.patients, key=lambda p: (-p.weight, p.protocol, pos[p.id][1]))
    pred = {q: p for p, q in inst.dominance_pairs()}

    cands: list[list[tuple[float, PatientSchedule, list]]] = []
    for p in order:
        pr = inst.protocol_of(p)
        opts = []
        try:
            schedules = enumerate_all_schedules(p, inst, cap=cap)
        except EnumerationCapExceeded as exc:
            raise OracleCapExceeded(str(exc)) from None
        for s in schedules:
            cells = [((m - 1, d - 1, w - 1), mins) for (m, d, w), mins in s.billed(pr)]
            opts.append((composite_cost(s, inst, weights), s, cells))
        if not opts:
            return Solution({}, math.inf, status="infeasible", method="oracle")
        opts.sort(key=lambda o: (o[0], o[1].key))
        cands.append(opts)

    n = len(order)
    tail = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        tail[i] = tail[i + 1] + cands[i][0][0]

    residual = inst.residual().copy()
    chosen: list[Optional[PatientSchedule]] = [None] * n
    start_of: dict[int, int] = {}
    best_val = math.inf
    best: Optional[list[PatientSchedule]] = None
    nodes = 0

    def dfs(i: int, partial: float) -> None:
        nonlocal best_val, best, nodes
        if i == n:
            if partial < best_val:
                best_val, best = partial, list(chosen)
            return
        p = order[i]
        lo = start_of.get(pred.get(p.id), -1)
        for cost, s, cells in cands[i]:
            if partial + cost + tail[i + 1] >= best_val:
                break
            if s.start_day < lo:
                continue
            if any(residual[c] < mins for c, mins in cells):
                continue
            nodes += 1
            if nodes > cap:
                raise OracleCapExceeded(f"oracle exceeded {cap} search nodes")
            for c, mins in cells:
                residual[c] -= mins
            chosen[i] = s
            start_of[p.id] = s.start_day
            dfs(i + 1, partial + cost)
            del start_of[p.id]
            for c, mins in cells:
                residual[c] += mins

    dfs(0, 0.0)
    if best is None:
        return Solution({}, math.inf, status="infeasible", method="oracle", meta={"nodes": nodes})
    selection = {s.patient_id: s for s in best}
    report = validate_solution(inst, selection)
    if not report.ok:
        raise RuntimeError(f"oracle produced an invalid solution:\n{report}")
    return evaluate(inst, selection, weights, status="optimal", method="oracle",
                    bound=1.0 + best_val, relative_gap=0.0, meta={"nodes": nodes})

