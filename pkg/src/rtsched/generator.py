"""Benchmark instances from a day-by-day clinic simulation, plus tiny random instances.

Days in the simulation are absolute weekday ordinals. The instance built at the
end of day ``t`` plans from day ``t + 1``, which becomes its relative day 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .domain import (Instance, InstanceError, MachinePark, OccupancyGrid, Patient, PatientSchedule, Protocol,
                     Solution, TimeGrid)

TARGET_DAYS = {"A": 2, "B": 14, "C": 28}
PLACEHOLDER_ID_BASE = 1_000_000


def default_park() -> MachinePark:
    """Ten linacs: two completely matched pairs inside two partially matched families."""
    return MachinePark(10, complete_groups=({3, 9}, {5, 6}), partial_groups=({1, 4, 8}, {2, 3, 5, 6, 7, 9}))


@dataclass(frozen=True)
class ProtocolSpec:
    protocol: Protocol
    share: float        # probability within its priority group


def load_protocol_table() -> tuple[ProtocolSpec, ...]:
    """Bundled representative protocol mix (not clinical data)."""
    text = resources.files("rtsched.data").joinpath("protocols.csv").read_text()
    out = []
    for row in csv.DictReader(text.splitlines()):
        preferred = {int(x) for x in row["preferred"].split()}
        allowed = preferred | {int(x) for x in row["extra_allowed"].split()}
        out.append(ProtocolSpec(Protocol(
            row["id"], row["priority"], int(row["dur_first"]), int(row["dur_other"]), int(row["fractions"]),
            allowed, preferred, {int(x) for x in row["start_weekdays"].split()}), float(row["share"])))
    return tuple(out)


def default_window_lengths(windows: int) -> tuple[int, ...]:
    if windows == 2:
        return (240, 240)
    if windows == 4:
        return (120, 120, 120, 120)
    return tuple([480 // windows] * windows)


@dataclass(frozen=True)
class ClinicConfig:
    arrival_rate: float = 16.0
    priority_shares: tuple = (("A", 0.42), ("B", 0.18), ("C", 0.40))
    protocols: tuple[ProtocolSpec, ...] = field(default_factory=load_protocol_table)
    windows: int = 2
    window_lengths: Optional[tuple[int, ...]] = None
    notice_days: int = 3
    lookahead: int = 20
    park: MachinePark = field(default_factory=default_park)
    first_weekday: int = 0

    def __post_init__(self) -> None:
        if not self.arrival_rate >= 0:
            raise ValueError("arrival rate must be non-negative")
        shares = dict(self.priority_shares)
        if abs(sum(shares.values()) - 1) > 1e-9 or min(shares.values()) < 0:
            raise ValueError("priority shares must be non-negative and sum to 1")
        if self.windows < 1:
            raise ValueError("need at least one window")
        lengths = self.lengths
        if len(lengths) != self.windows or min(lengths) <= 0:
            raise ValueError("window lengths must be positive, one per window")
        for prio in shares:
            ps = [s.share for s in self.protocols if s.protocol.priority == prio]
            if shares[prio] > 0 and (not ps or abs(sum(ps) - 1) > 1e-6):
                raise ValueError(f"protocol shares for priority {prio} must sum to 1")
        if self.notice_days < 1 or self.lookahead < 0:
            raise ValueError("notice_days must be >= 1 and lookahead >= 0")

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(self.window_lengths) if self.window_lengths else default_window_lengths(self.windows)

    @property
    def protocol_map(self) -> dict[str, Protocol]:
        return {s.protocol.id: s.protocol for s in self.protocols}

    def preference_model(self) -> list[tuple[Optional[int], float]]:
        """``(window or None, probability)`` for a new patient's preferred window."""
        if self.windows == 2:
            return [(None, 0.20), (1, 0.80 * 0.65), (2, 0.80 * 0.35)]
        if self.windows == 4:
            return [(None, 0.50), (1, 0.25), (4, 0.25)]
        return [(None, 1.0)]

    def earliest_offset(self, priority: str) -> int:
        """Weekdays between arrival and the earliest possible start."""
        return 1 if priority == "A" else self.notice_days


def _draw_patient(pid: int, day: int, cfg: ClinicConfig, rng: np.random.Generator) -> Patient:
    prios = [p for p, _ in cfg.priority_shares]
    prio = prios[rng.choice(len(prios), p=[s for _, s in cfg.priority_shares])]
    specs = [s for s in cfg.protocols if s.protocol.priority == prio]
    spec = specs[rng.choice(len(specs), p=np.array([s.share for s in specs]) / sum(s.share for s in specs))]
    model = cfg.preference_model()
    pref = model[rng.choice(len(model), p=[q for _, q in model])][0]
    d_min = day + cfg.earliest_offset(prio)
    return Patient(pid, spec.protocol.id, prio, d_min, d_min + TARGET_DAYS[prio] - 1, pref)


def sample_arrivals(day: int, cfg: ClinicConfig, rng: np.random.Generator, start_id: int = 1) -> list[Patient]:
    """Poisson number of new patients arriving on ``day`` (absolute days)."""
    n = int(rng.poisson(cfg.arrival_rate)) if cfg.arrival_rate > 0 else 0
    return [_draw_patient(start_id + k, day, cfg, rng) for k in range(n)]


def expected_daily_arrivals(cfg: ClinicConfig) -> dict[str, float]:
    """Mean arrivals per protocol and day."""
    shares = dict(cfg.priority_shares)
    return {s.protocol.id: cfg.arrival_rate * shares[s.protocol.priority] * s.share for s in cfg.protocols}


def largest_remainder(values: Sequence[float]) -> list[int]:
    """Integers summing to ``round(sum(values))``; leftovers go to the largest fractional parts."""
    vals = np.asarray(values, dtype=float)
    base = np.floor(vals).astype(int)
    left = int(round(vals.sum())) - int(base.sum())
    order = sorted(range(len(vals)), key=lambda i: (-(vals[i] - base[i]), i))
    for i in order[:max(left, 0)]:
        base[i] += 1
    return [int(x) for x in base]


def make_placeholders(day: int, cfg: ClinicConfig, start_id: int = PLACEHOLDER_ID_BASE) -> list[Patient]:
    """Expected priority A and B arrivals over the next ``cfg.lookahead`` weekdays."""
    if cfg.lookahead <= 0:
        return []
    rates = expected_daily_arrivals(cfg)
    out = []
    pm = cfg.protocol_map
    for prio in ("A", "B"):
        cells = [(k, h) for k in range(1, cfg.lookahead + 1) for h in sorted(rates) if pm[h].priority == prio]
        counts = largest_remainder([rates[h] for _, h in cells])
        for (k, h), n in zip(cells, counts):
            arrival = day + k
            d_min = arrival + cfg.earliest_offset(prio)
            for _ in range(n):
                out.append(Patient(start_id + len(out), h, prio, d_min, d_min + TARGET_DAYS[prio] - 1,
                                   None, is_placeholder=True))
    return out


@dataclass
class SimState:
    day: int
    fixed: np.ndarray                   # minutes, indexed [m-1, absolute day - 1, w-1]
    pending: list[Patient] = field(default_factory=list)
    next_id: int = 1
    fixed_patients: dict[int, tuple[Patient, PatientSchedule]] = field(default_factory=dict)

    def ensure_days(self, days: int) -> None:
        if self.fixed.shape[1] < days:
            extra = np.zeros((self.fixed.shape[0], days - self.fixed.shape[1], self.fixed.shape[2]), dtype=np.int64)
            self.fixed = np.concatenate([self.fixed, extra], axis=1)


def build_day_instance(state: SimState, patients: list[Patient], cfg: ClinicConfig, days: int) -> Instance:
    """Instance planning days ``state.day + 1 ..``; patient days are converted to relative."""
    t = state.day
    rel = []
    for p in patients:
        floor = cfg.earliest_offset(p.priority)
        d_min = max(p.d_min - t, floor)
        rel.append(Patient(p.id, p.protocol, p.priority, d_min, max(p.d_L - t, d_min), p.window_pref,
                           p.is_placeholder))
    state.ensure_days(t + days)
    occ = state.fixed[:, t:t + days, :]
    return Instance(cfg.park, TimeGrid(days, cfg.lengths, (cfg.first_weekday + t) % 5),
                    cfg.protocol_map, rel, OccupancyGrid(occ), name=f"day{t}")


Solver = Callable[[Instance], Solution]


def simulate(cfg: ClinicConfig, days: int, solver: Solver, rng: np.random.Generator,
             state: Optional[SimState] = None) -> Iterator[tuple[Instance, Solution]]:
    """Run the clinic for ``days`` days, yielding each day's instance and schedule.

    After each solve, priority A patients and anyone starting within the notice
    period are booked for good; everyone else is planned again the next day.
    Placeholders are rebuilt from scratch every day and never booked.
    """
    from .colgen import compute_horizon

    if state is None:
        state = SimState(0, np.zeros((cfg.park.machine_count, 0, cfg.windows), dtype=np.int64))
    for _ in range(days):
        state.day += 1
        t = state.day
        arrivals = sample_arrivals(t, cfg, rng, state.next_id)
        state.next_id += len(arrivals)
        patients = state.pending + arrivals + make_placeholders(t, cfg)
        provisional = build_day_instance(state, patients, cfg, max(1, state.fixed.shape[1] - t))
        horizon = compute_horizon(provisional, rng)
        inst = build_day_instance(state, patients, cfg, horizon)
        sol = solver(inst)
        by_id = {p.id: p for p in patients}
        pending = []
        for p in inst.patients:
            if p.is_placeholder:
                continue
            sched = sol.schedules[p.id]
            if p.priority == "A" or sched.start_day <= cfg.notice_days:
                pr = inst.protocol_of(p)
                for (m, d, w), minutes in sched.billed(pr):
                    state.fixed[m - 1, t + d - 1, w - 1] += minutes
                state.fixed_patients[p.id] = (by_id[p.id], _shift(sched, t))
            else:
                pending.append(by_id[p.id])
        state.pending = pending
        yield inst, sol


def _shift(sched: PatientSchedule, t: int) -> PatientSchedule:
    return PatientSchedule(sched.patient_id, sched.start_day + t,
                           tuple((a.day + t, a.machine, a.window) for a in sched.assignments))


def random_tiny_instance(rng: np.random.Generator, patients: int = 4, machines: int = 2,
                         days: int = 10, windows: int = 2, name: str = "") -> Instance:
    """Small random instance for exhaustive cross-checks.

    Window lengths, durations and pre-booked minutes are drawn so that the
    instance is usually tight enough for patients to compete for capacity.
    """
    groups = ({1, 2},) if machines >= 2 and rng.random() < 0.7 else ()
    if groups and rng.random() < 0.5:
        park = MachinePark(machines, complete_groups=groups)
    else:
        park = MachinePark(machines, partial_groups=groups)
    length = int(rng.choice([40, 60, 80]))
    time = TimeGrid(days, (length,) * windows, int(rng.integers(5)))
    protocols = {}
    for k in range(int(rng.integers(1, 4))):
        prio = "ABC"[int(rng.integers(3))]
        dur_other = int(rng.choice([10, 15, 20]))
        dur_first = dur_other + int(rng.choice([0, 10, 20]))
        allowed = {m for m in range(1, machines + 1) if rng.random() < 0.8} or {1}
        preferred = {m for m in allowed if rng.random() < 0.6} or {min(allowed)}
        weekdays = set(range(5)) if rng.random() < 0.5 else {0, 1, 2, 3}
        protocols[f"P{k + 1}"] = Protocol(f"P{k + 1}", prio, dur_first, dur_other, int(rng.integers(1, 5)),
                                          allowed, preferred, weekdays)
    names = sorted(protocols)
    pats = []
    for pid in range(1, patients + 1):
        h = names[int(rng.integers(len(names)))]
        pr = protocols[h]
        d_min = int(rng.integers(1, 4))
        pref = int(rng.integers(1, windows + 1)) if rng.random() < 0.6 else None
        pats.append(Patient(pid, h, pr.priority, d_min, d_min + TARGET_DAYS[pr.priority] - 1, pref))
    occ = np.zeros((machines, days, windows), dtype=np.int64)
    busy = rng.random(occ.shape) < 0.3
    occ[busy] = rng.integers(0, length + 1, size=int(busy.sum()))
    return Instance(park, time, protocols, pats, OccupancyGrid(occ), name=name)


def is_schedulable(inst: Instance) -> bool:
    """True if a greedy pass places everybody (a cheap sufficient check)."""
    from .heuristics import HeuristicFailure, greedy_solve
    from .objective import PRESETS
    try:
        greedy_solve(inst, PRESETS["1"])
        return True
    except HeuristicFailure:
        return False


def tiny_instances(seed: int, count: int, **kwargs) -> list[Instance]:
    """``count`` seeded tiny instances that admit a feasible solution."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        try:
            inst = random_tiny_instance(rng, name=f"tiny-{seed}-{len(out)}", **kwargs)
        except InstanceError:
            continue
        if is_schedulable(inst):
            out.append(inst)
    return out


DESK_ARRIVAL_RATE = 5.0
DESK_WARMUP_DAYS = 40


def desk_instance(seed: int, arrival_rate: float = DESK_ARRIVAL_RATE, days: int = DESK_WARMUP_DAYS,
                  **config) -> Instance:
    """Snapshot of a small clinic (about 60 patients on the default 10-machine park).

    The clinic is run for ``days`` days with the greedy scheduler so the
    instance carries realistic fixed bookings, pending patients and
    placeholders; the last day's instance is returned.
    """
    from .heuristics import greedy_solve
    from .objective import PRESETS
    cfg = ClinicConfig(arrival_rate=arrival_rate, **config)
    inst = None
    for inst, _ in simulate(cfg, days, lambda i: greedy_solve(i, PRESETS["4"]), np.random.default_rng(seed)):
        pass
    return Instance(inst.park, inst.time, inst.protocols, inst.patients, inst.occupancy,
                    name=f"desk-{seed}")


def snapshot_days(rng: np.random.Generator, lo: int = 50, hi: int = 300, count: int = 20) -> list[int]:
    return sorted(int(x) for x in rng.choice(np.arange(lo, hi + 1), size=count, replace=False))


__all__ = ["ClinicConfig", "ProtocolSpec", "SimState", "default_park", "load_protocol_table",
           "sample_arrivals", "make_placeholders", "simulate", "random_tiny_instance", "tiny_instances",
           "largest_remainder", "expected_daily_arrivals", "snapshot_days", "desk_instance", "TARGET_DAYS"]
