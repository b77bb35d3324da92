"""Column generation driver: horizon sizing, initial pool, pricing loop, integer finish."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .domain import Instance, Patient, PatientSchedule, Solution
from .heuristics import (PRIORITY_ORDER, HeuristicFailure, book, greedy_solve, placement_order,
                         restart_search)
from .master import ColumnPool, IpResult, LpResult, build_rmp, solve_ip, solve_lp
from .objective import ObjectiveWeights, composite_cost, evaluate, resolve_weights
from .pricing import (NEGATIVE_RC, DualPrices, PricedColumn, best_course, enumerate_all_schedules,
                      solve_pricing)

log = logging.getLogger(__name__)

HORIZON_SLACK = 30


class PlacementError(RuntimeError):
    def __init__(self, message: str, patient_id: int):
        super().__init__(message)
        self.patient_id = patient_id


def _fit(inst: Instance, residual: np.ndarray, p: Patient, m: int, sd: int,
         windows: list[int]) -> Optional[list[int]]:
    """Per-day window (first in ``windows`` order with room) for a course on machine ``m``."""
    pr = inst.protocol_of(p)
    if sd + pr.fractions - 1 > residual.shape[1]:
        return None
    out = []
    for k in range(pr.fractions):
        need = pr.dur_first if k == 0 else pr.dur_other
        w = next((w for w in windows if residual[m - 1, sd + k - 1, w - 1] >= need), None)
        if w is None:
            return None
        out.append(w)
    return out


def _first_two(inst, residual, p, m, windows, starts):
    found = []
    for sd in starts:
        ws = _fit(inst, residual, p, m, sd, windows)
        if ws is not None:
            found.append((sd, ws))
            if len(found) == 2:
                break
    return found


def compute_horizon(inst: Instance, rng: np.random.Generator) -> int:
    """Weekday horizon large enough for one randomized greedy schedule, plus 30.

    ``inst`` may carry any provisional horizon; its occupancy is zero-padded to a
    length that is guaranteed to hold every course placed one after another.
    """
    if not inst.patients:
        return HORIZON_SLACK
    span = max(p.d_min for p in inst.patients) + sum(inst.protocol_of(p).fractions + 5 for p in inst.patients)
    work = inst.with_horizon(max(span, inst.time.days))
    residual = work.residual().copy()
    W = inst.time.windows
    fw = inst.time.first_weekday
    last = 0
    for p in sorted(work.patients, key=lambda p: (PRIORITY_ORDER[p.priority], p.d_min, p.id)):
        pr = work.protocol_of(p)
        machines = sorted(pr.allowed_machines)
        placed = None
        for k in rng.permutation(len(machines)):
            starts = (d for d in range(p.d_min, work.latest_start(p) + 1)
                      if (fw + d - 1) % 5 in pr.allowed_start_weekdays)
            found = _first_two(work, residual, p, machines[k], list(range(1, W + 1)), starts)
            if found:
                sd, ws = found[int(rng.integers(len(found)))]
                placed = PatientSchedule.consecutive(p.id, sd, [machines[k]] * len(ws), ws)
                break
        if placed is None:
            raise PlacementError(f"patient {p.id} has no feasible placement on any allowed machine", p.id)
        book(residual, work, placed)
        last = max(last, placed.last_day)
    return last + HORIZON_SLACK


def initial_columns(inst: Instance, weights: ObjectiveWeights, rng: np.random.Generator,
                    count: int = 75) -> ColumnPool:
    """``count`` independent randomized passes; each pass starts from the original occupancy.

    Within a pass, protocols come in random order and patients of a protocol by
    increasing target day, each one no earlier than the previous one of its
    protocol, so a pass yields a dominance-consistent set of columns.
    """
    pool = ColumnPool()
    W = inst.time.windows
    chains = inst.dominance_chains()
    names = sorted(chains)
    base = inst.residual()
    for _ in range(count):
        residual = base.copy()
        for hi in rng.permutation(len(names)):
            floor = None
            for pid in chains[names[hi]]:
                p = inst.patient(pid)
                pr = inst.protocol_of(p)
                machines = sorted(pr.allowed_machines)
                m = machines[int(rng.integers(len(machines)))]
                w0 = int(rng.integers(1, W + 1))
                order = [w0] + [w for w in range(1, W + 1) if w != w0]
                found = _first_two(inst, residual, p, m, order, inst.start_days(p, earliest=floor))
                if not found:
                    continue
                sd, ws = found[int(rng.integers(len(found)))]
                sched = PatientSchedule.consecutive(pid, sd, [m] * len(ws), ws)
                book(residual, inst, sched)
                pool.add(PricedColumn(sched, composite_cost(sched, inst, weights), math.nan))
                floor = sd
    return pool


@dataclass
class CGConfig:
    objective: object = "4"
    seed: int = 0
    initial_count: int = 75
    max_iterations: int = 500
    time_limit: float = 3600.0
    warm_start: Optional[str] = None        # None | "restart" | "greedy" | "best"
    restart_budget: int = 10
    node_limit: int = 100_000
    workers: int = 1
    audit: bool = True
    repair: bool = True
    dive: bool = True
    dive_fraction: float = 0.5      # share of the remaining time the dive may use

    @property
    def weights(self) -> ObjectiveWeights:
        return resolve_weights(self.objective)


@dataclass
class IterationRecord:
    iteration: int
    lp_value: float
    columns_added: int
    min_reduced_cost: float
    pool_size: int
    seconds: float


@dataclass
class CGResult:
    ip: IpResult
    solution: Solution
    pool: ColumnPool
    lp_value: float
    iterations: list[IterationRecord] = field(default_factory=list)
    capped: Optional[str] = None            # None | "iterations" | "time"
    audit_min_reduced_cost: Optional[float] = None
    artificial_mass: float = 0.0
    final_duals: Optional[DualPrices] = None

    @property
    def objective(self) -> float:
        return self.ip.objective

    @property
    def relative_gap(self) -> float:
        return self.ip.relative_gap


def pricing_sweep(inst: Instance, duals: DualPrices, weights: ObjectiveWeights,
                  workers: int = 1) -> list[Optional[PricedColumn]]:
    """Best column per patient, in instance patient order."""
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda p: solve_pricing(p, inst, duals, weights), inst.patients))
    return [solve_pricing(p, inst, duals, weights) for p in inst.patients]


def audit_min_reduced_cost(inst: Instance, duals: DualPrices, weights: ObjectiveWeights,
                           exhaustive: bool = False) -> float:
    """Smallest reduced cost of any isolation-feasible column under ``duals``.

    With ``exhaustive`` every column is enumerated instead of priced by DP.
    """
    from .pricing import _reduced_cost_unchecked
    best = math.inf
    for p in inst.patients:
        if exhaustive:
            for s in enumerate_all_schedules(p, inst):
                rc = _reduced_cost_unchecked(s, duals, weights, inst, composite_cost(s, inst, weights))
                best = min(best, rc)
        else:
            col = solve_pricing(p, inst, duals, weights)
            if col is not None:
                best = min(best, col.reduced_cost)
    return best


def run_column_generation(inst: Instance, weights: ObjectiveWeights | None = None,
                          config: CGConfig | None = None,
                          on_iteration: Callable[[IterationRecord], None] | None = None) -> CGResult:
    config = config or CGConfig()
    weights = weights or config.weights
    t0 = time.monotonic()
    rng = np.random.default_rng(config.seed)
    pool = initial_columns(inst, weights, rng, config.initial_count)
    zero = DualPrices.zeros(inst)
    for p in inst.patients:
        if not pool.columns(p.id):
            col = solve_pricing(p, inst, zero, weights)
            if col is None:
                raise PlacementError(f"patient {p.id} has no feasible schedule in the horizon", p.id)
            pool.add(col)

    warm = None
    if config.warm_start:
        try:
            if config.warm_start == "restart":
                warm = restart_search(inst, weights, rng, config.restart_budget)
            elif config.warm_start == "greedy":
                warm = greedy_solve(inst, weights)
            elif config.warm_start == "best":
                warm = min([greedy_solve(inst, weights), restart_search(inst, weights, rng, config.restart_budget)],
                           key=lambda s: s.objective_value)
            else:
                raise ValueError(f"unknown warm start {config.warm_start!r}")
            pool.add_solution(warm, inst, weights)
        except HeuristicFailure as exc:
            log.info("warm start heuristic failed: %s", exc)
            warm = None

    records: list[IterationRecord] = []
    capped = None
    it = 0
    while True:
        it += 1
        rmp = build_rmp(pool, inst, weights)
        lp = solve_lp(rmp)
        if it > config.max_iterations:
            capped = "iterations"
            _record(records, it, lp, 0, math.nan, pool, t0, on_iteration)
            break
        if time.monotonic() - t0 > config.time_limit:
            capped = "time"
            _record(records, it, lp, 0, math.nan, pool, t0, on_iteration)
            break
        priced = pricing_sweep(inst, lp.duals, weights, config.workers)
        added = 0
        min_rc = min((c.reduced_cost for c in priced if c is not None), default=math.inf)
        for col in priced:
            if col is not None and col.reduced_cost < NEGATIVE_RC and pool.add(col):
                added += 1
        _record(records, it, lp, added, min_rc, pool, t0, on_iteration)
        if added == 0:
            break

    art = lp.artificial_mass(rmp)
    audit = audit_min_reduced_cost(inst, lp.duals, weights) if config.audit else None
    candidates = []
    if config.repair:
        candidates.append(lp_guided_repair(inst, weights, rmp, lp, pool))
    if config.dive:
        budget = config.dive_fraction * max(0.0, config.time_limit - (time.monotonic() - t0))
        candidates.append(price_and_dive(inst, weights, pool, time.monotonic() + budget))
    for cand in candidates:
        if cand is not None and (warm is None or cand.objective_value < warm.objective_value):
            warm = cand
    if candidates:
        rmp = build_rmp(pool, inst, weights)
    remaining = max(0.0, config.time_limit - (time.monotonic() - t0))
    ip = solve_ip(rmp, time_limit=remaining, warm_start=warm, node_limit=config.node_limit,
                  lower_bound=lp.objective)
    if capped and ip.status == "optimal":
        ip.status = "feasible"
    sol = _to_solution(inst, weights, ip, lp, capped)
    return CGResult(ip, sol, pool, lp.objective, records, capped, audit, art, lp.duals)


def lp_guided_repair(inst: Instance, weights: ObjectiveWeights, rmp, lp: LpResult,
                     pool: ColumnPool) -> Optional[Solution]:
    """Round the final LP into a feasible selection, adding any new columns to ``pool``.

    Patients are visited from the most to the least decided (largest LP weight
    on a single column). Each takes its pooled column with the largest LP weight
    that fits the remaining capacity and the start days of already placed
    same-protocol neighbours; if none fits, the cheapest such course is priced.
    """
    weight_of = {}
    top: dict[int, float] = {}
    for j, s in enumerate(rmp.schedules):
        weight_of[(s.patient_id, s.key)] = float(lp.x[j])
        top[s.patient_id] = max(top.get(s.patient_id, 0.0), float(lp.x[j]))
    chains = inst.dominance_chains()
    pos = {pid: (h, k) for h, c in chains.items() for k, pid in enumerate(c)}
    residual = inst.residual().copy()
    start: dict[int, int] = {}
    chosen: dict[int, PatientSchedule] = {}
    order = sorted(inst.patients, key=lambda p: (-top.get(p.id, 0.0), PRIORITY_ORDER[p.priority], p.id))
    for p in order:
        pr = inst.protocol_of(p)
        h, k = pos[p.id]
        chain = chains[h]
        lo = max((start[q] for q in chain[:k] if q in start), default=0)
        hi = min((start[q] for q in chain[k + 1:] if q in start), default=inst.time.days)
        cols = sorted(pool.columns(p.id),
                      key=lambda c: (-weight_of.get((p.id, c.schedule.key), 0.0), c.cost, c.schedule.key))
        pick = None
        for c in cols:
            s = c.schedule
            if lo <= s.start_day <= hi and all(residual[m - 1, d - 1, w - 1] >= mins
                                              for (m, d, w), mins in s.billed(pr)):
                pick = s
                break
        if pick is None:
            days = [d for d in inst.start_days(p, earliest=lo or None) if d <= hi]
            col = best_course(p, inst, weights, residual=residual, start_days=days) if days else None
            if col is None:
                return None
            pool.add(col)
            pick = col.schedule
        book(residual, inst, pick)
        chosen[p.id] = pick
        start[p.id] = pick.start_day
    return evaluate(inst, chosen, weights, status="feasible", method="repair")


def price_and_dive(inst: Instance, weights: ObjectiveWeights, pool: ColumnPool, deadline: float,
                   rounds: int = 25, backtracks: int = 10) -> Optional[Solution]:
    """Primal heuristic: fix the most decided patients and keep pricing the rest.

    Each step fixes every patient whose LP selection is integral, plus the
    fractional patient with the heaviest column, then re-runs column generation
    for the free patients under those fixings. If the fixings turn out
    infeasible, the last heaviest-column fix is undone and that column banned
    (at most ``backtracks`` times). New columns stay in ``pool``.
    """
    fixed: dict[int, PatientSchedule] = {}
    trail: list[tuple[dict, int, PatientSchedule]] = []
    banned: set = set()
    while time.monotonic() < deadline:
        for _ in range(rounds):
            rmp = build_rmp(pool, inst, weights)
            lp = solve_lp(rmp, _fixing_mask(rmp, fixed, banned))
            added = 0
            for p in inst.patients:
                if p.id in fixed:
                    continue
                col = solve_pricing(p, inst, lp.duals, weights)
                if col is not None and col.reduced_cost < NEGATIVE_RC and pool.add(col):
                    added += 1
            if added == 0 or time.monotonic() > deadline:
                break
        if lp.artificial_mass(rmp) > 1e-6:
            if not trail or backtracks == 0:
                return None
            backtracks -= 1
            fixed, pid, sched = trail.pop()
            banned.add((pid, sched.key))
            continue
        x = lp.x[:rmp.n_real]
        before = dict(fixed)
        heaviest = None
        for i, pid in enumerate(rmp.patients):
            if pid in fixed:
                continue
            cols = np.flatnonzero(rmp.col_patient[:rmp.n_real] == i)
            j = int(cols[np.argmax(x[cols])])
            if x[j] > 1 - 1e-6:
                fixed[pid] = rmp.schedules[j]
            elif heaviest is None or x[j] > heaviest[0]:
                heaviest = (x[j], pid, rmp.schedules[j])
        if heaviest is None:
            return evaluate(inst, fixed, weights, status="feasible", method="dive")
        trail.append((before, heaviest[1], heaviest[2]))
        fixed[heaviest[1]] = heaviest[2]
    return None


def _fixing_mask(rmp, fixed: dict[int, PatientSchedule], banned: set = frozenset()) -> np.ndarray:
    active = np.ones(rmp.n_columns, dtype=bool)
    for j, s in enumerate(rmp.schedules):
        f = fixed.get(s.patient_id)
        if (f is not None and f.key != s.key) or (s.patient_id, s.key) in banned:
            active[j] = False
    return active


def _record(records, it, lp: LpResult, added, min_rc, pool, t0, hook):
    rec = IterationRecord(it, lp.objective, added, min_rc, len(pool), time.monotonic() - t0)
    records.append(rec)
    log.debug("iteration %d: lp=%.6f added=%d min_rc=%.6g", it, lp.objective, added, min_rc)
    if hook is not None:
        hook(rec)


def _to_solution(inst, weights, ip: IpResult, lp: LpResult, capped) -> Solution:
    meta = {"nodes": ip.nodes, "warm_start_accepted": ip.warm_start_accepted}
    if capped:
        meta["capped"] = capped
    if not ip.has_incumbent:
        return Solution({}, math.inf, bound=lp.objective, relative_gap=math.inf,
                        status=ip.status, method="cg", meta=meta)
    return evaluate(inst, ip.selection, weights, bound=lp.objective, relative_gap=ip.relative_gap,
                    status=ip.status, method="cg", meta=meta)


def solve_cg(inst: Instance, weights: ObjectiveWeights, seed: int = 0, **kwargs) -> CGResult:
    """Size the horizon, then run column generation."""
    rng = np.random.default_rng(seed)
    inst = inst.with_horizon(compute_horizon(inst, rng))
    return run_column_generation(inst, weights, CGConfig(objective=weights, seed=seed, **kwargs))
