"""Core data types and feasibility checks for radiotherapy patient scheduling.

Indices are 1-based throughout: machines ``1..M``, weekdays ``1..D_w`` and
windows ``1..W``. Days are weekday ordinals; weekends never appear.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

import numpy as np

PRIORITY_WEIGHT = {"A": 10, "B": 3, "C": 1}


class SwitchKind(str, enum.Enum):
    SAME = "same"
    COMPLETE = "complete"
    PARTIAL = "partial"
    FORBIDDEN = "forbidden"


class InstanceError(ValueError):
    """Raised when an instance is structurally inconsistent."""


@dataclass(frozen=True)
class MachinePark:
    machine_count: int
    complete_groups: tuple[frozenset[int], ...] = ()
    partial_groups: tuple[frozenset[int], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "complete_groups", tuple(frozenset(g) for g in self.complete_groups))
        object.__setattr__(self, "partial_groups", tuple(frozenset(g) for g in self.partial_groups))
        if self.machine_count < 1:
            raise InstanceError("machine_count must be >= 1")
        for kind, groups in (("complete", self.complete_groups), ("partial", self.partial_groups)):
            seen: set[int] = set()
            for g in groups:
                bad = [m for m in g if not 1 <= m <= self.machine_count]
                if bad:
                    raise InstanceError(f"{kind} group {sorted(g)} has unknown machines {bad}")
                if seen & g:
                    raise InstanceError(f"machines {sorted(seen & g)} are in two {kind} groups")
                seen |= g

    @property
    def machines(self) -> range:
        return range(1, self.machine_count + 1)

    @property
    def beam_groups(self) -> tuple[frozenset[int], ...]:
        return self.complete_groups + self.partial_groups

    def switch_kind(self, m1: int, m2: int) -> SwitchKind:
        for m in (m1, m2):
            if not 1 <= m <= self.machine_count:
                raise IndexError(f"machine {m} out of range 1..{self.machine_count}")
        if m1 == m2:
            return SwitchKind.SAME
        if any(m1 in g and m2 in g for g in self.complete_groups):
            return SwitchKind.COMPLETE
        if any(m1 in g and m2 in g for g in self.partial_groups):
            return SwitchKind.PARTIAL
        return SwitchKind.FORBIDDEN

    def trajectory_groups(self, allowed: Iterable[int]) -> list[tuple[int, ...]]:
        """Machine sets a single treatment course may move within.

        Every beam group and every singleton, intersected with ``allowed``;
        groups contained in a larger candidate are dropped.
        """
        allowed = frozenset(allowed)
        cands = {frozenset(g & allowed) for g in self.beam_groups}
        cands |= {frozenset([m]) for m in allowed}
        cands.discard(frozenset())
        maximal = [g for g in cands if not any(g < h for h in cands)]
        return sorted((tuple(sorted(g)) for g in maximal), key=lambda g: (g[0], len(g), g))

    def same_trajectory_group(self, machines: Iterable[int]) -> bool:
        ms = frozenset(machines)
        return len(ms) <= 1 or any(ms <= g for g in self.beam_groups)


@dataclass(frozen=True)
class Protocol:
    id: str
    priority: str
    dur_first: int
    dur_other: int
    fractions: int
    allowed_machines: frozenset[int]
    preferred_machines: frozenset[int]
    # weekday numbers, 0 = Monday .. 4 = Friday
    allowed_start_weekdays: frozenset[int] = frozenset(range(5))

    def __post_init__(self) -> None:
        for name in ("allowed_machines", "preferred_machines", "allowed_start_weekdays"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if self.priority not in PRIORITY_WEIGHT:
            raise InstanceError(f"protocol {self.id}: unknown priority {self.priority!r}")
        if not self.dur_first >= self.dur_other > 0:
            raise InstanceError(f"protocol {self.id}: need dur_first >= dur_other > 0")
        if self.fractions < 1:
            raise InstanceError(f"protocol {self.id}: fractions must be >= 1")
        if not self.allowed_machines:
            raise InstanceError(f"protocol {self.id}: no allowed machines")
        if not self.preferred_machines <= self.allowed_machines:
            raise InstanceError(f"protocol {self.id}: preferred machines not a subset of allowed")
        if not self.allowed_start_weekdays or not self.allowed_start_weekdays <= set(range(5)):
            raise InstanceError(f"protocol {self.id}: start weekdays must be a non-empty subset of 0..4")


@dataclass(frozen=True)
class Patient:
    id: int
    protocol: str
    priority: str
    d_min: int
    d_L: int
    window_pref: Optional[int] = None
    is_placeholder: bool = False

    def __post_init__(self) -> None:
        if self.priority not in PRIORITY_WEIGHT:
            raise InstanceError(f"patient {self.id}: unknown priority {self.priority!r}")
        if not 1 <= self.d_min <= self.d_L:
            raise InstanceError(f"patient {self.id}: need 1 <= d_min <= d_L")

    @property
    def weight(self) -> int:
        return PRIORITY_WEIGHT[self.priority]


@dataclass(frozen=True)
class TimeGrid:
    days: int
    window_lengths: tuple[int, ...]
    # weekday of day 1 (0 = Monday)
    first_weekday: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "window_lengths", tuple(int(x) for x in self.window_lengths))
        if self.days < 1:
            raise InstanceError("horizon must contain at least one weekday")
        if not self.window_lengths or min(self.window_lengths) <= 0:
            raise InstanceError("window lengths must be positive")
        if not 0 <= self.first_weekday < 5:
            raise InstanceError("first_weekday must be in 0..4")

    @property
    def windows(self) -> int:
        return len(self.window_lengths)

    def weekday(self, day: int) -> int:
        return (self.first_weekday + day - 1) % 5


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Minutes already booked, indexed ``[m-1, d-1, w-1]``."""

    minutes: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.minutes, dtype=np.int64, copy=True)
        if arr.ndim != 3:
            raise InstanceError("occupancy grid must be 3-dimensional (machine, day, window)")
        if (arr < 0).any():
            raise InstanceError("occupancy grid has negative entries")
        arr.setflags(write=False)
        object.__setattr__(self, "minutes", arr)

    @classmethod
    def empty(cls, machines: int, days: int, windows: int) -> "OccupancyGrid":
        return cls(np.zeros((machines, days, windows), dtype=np.int64))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.minutes.shape

    def __eq__(self, other: object) -> bool:
        return isinstance(other, OccupancyGrid) and np.array_equal(self.minutes, other.minutes)

    def __hash__(self) -> int:
        return hash(self.minutes.tobytes())

    def resized(self, days: int) -> "OccupancyGrid":
        """Truncate or zero-pad the day axis."""
        m, d, w = self.shape
        out = np.zeros((m, days, w), dtype=np.int64)
        k = min(d, days)
        out[:, :k] = self.minutes[:, :k]
        return OccupancyGrid(out)


def residual_capacity(grid: OccupancyGrid, time: TimeGrid, m: int, d: int, w: int) -> int:
    M, D, W = grid.shape
    if not (1 <= m <= M and 1 <= d <= D and 1 <= w <= W):
        raise IndexError(f"cell (m={m}, d={d}, w={w}) outside grid {grid.shape}")
    if W != time.windows:
        raise IndexError("grid window count does not match the time grid")
    return time.window_lengths[w - 1] - int(grid.minutes[m - 1, d - 1, w - 1])


@dataclass(frozen=True)
class Assignment:
    day: int
    machine: int
    window: int


@dataclass(frozen=True)
class PatientSchedule:
    """One patient's course: fraction ``f`` is ``assignments[f-1]``."""

    patient_id: int
    start_day: int
    assignments: tuple[Assignment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "assignments",
            tuple(a if isinstance(a, Assignment) else Assignment(*a) for a in self.assignments),
        )

    @classmethod
    def consecutive(cls, patient_id: int, start_day: int,
                    machines: Iterable[int], windows: Iterable[int]) -> "PatientSchedule":
        machines, windows = tuple(machines), tuple(windows)
        if len(machines) != len(windows):
            raise ValueError("machine and window sequences differ in length")
        return cls(patient_id, start_day, tuple(
            Assignment(start_day + k, m, w) for k, (m, w) in enumerate(zip(machines, windows))))

    @property
    def machines(self) -> tuple[int, ...]:
        return tuple(a.machine for a in self.assignments)

    @property
    def windows(self) -> tuple[int, ...]:
        return tuple(a.window for a in self.assignments)

    @property
    def days(self) -> tuple[int, ...]:
        return tuple(a.day for a in self.assignments)

    @property
    def last_day(self) -> int:
        return max(self.days) if self.assignments else self.start_day

    @property
    def key(self) -> tuple:
        return (self.start_day, self.machines, self.windows, self.days)

    def billed(self, protocol: Protocol) -> list[tuple[tuple[int, int, int], int]]:
        """``((machine, day, window), minutes)`` per fraction; the start day pays ``dur_first``."""
        return [((a.machine, a.day, a.window),
                 protocol.dur_first if a.day == self.start_day else protocol.dur_other)
                for a in self.assignments]


@dataclass(frozen=True, eq=False)
class Instance:
    park: MachinePark
    time: TimeGrid
    protocols: Mapping[str, Protocol]
    patients: tuple[Patient, ...]
    occupancy: OccupancyGrid
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "protocols", dict(self.protocols))
        object.__setattr__(self, "patients", tuple(self.patients))
        M, D, W = self.occupancy.shape
        if M != self.park.machine_count or D != self.time.days or W != self.time.windows:
            raise InstanceError(
                f"occupancy shape {self.occupancy.shape} does not match "
                f"(M={self.park.machine_count}, D_w={self.time.days}, W={self.time.windows})")
        lengths = np.asarray(self.time.window_lengths)
        if (self.occupancy.minutes > lengths[None, None, :]).any():
            raise InstanceError("occupancy exceeds window length in some cell")
        ids = [p.id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate patient ids")
        for pr in self.protocols.values():
            bad = [m for m in pr.allowed_machines if not 1 <= m <= M]
            if bad:
                raise InstanceError(f"protocol {pr.id} references unknown machines {bad}")
        free_machines = {m + 1 for m in range(M) if (self.occupancy.minutes[m] < lengths[None, :]).any()}
        for p in self.patients:
            pr = self.protocols.get(p.protocol)
            if pr is None:
                raise InstanceError(f"patient {p.id} references unknown protocol {p.protocol!r}")
            if pr.priority != p.priority:
                raise InstanceError(f"patient {p.id}: priority {p.priority} differs from protocol {pr.id}")
            if p.window_pref is not None and not 1 <= p.window_pref <= W:
                raise InstanceError(f"patient {p.id}: window preference {p.window_pref} out of range")
            if not pr.allowed_machines & free_machines:
                raise InstanceError(f"patient {p.id}: no allowed machine has residual capacity")
        object.__setattr__(self, "_by_id", {p.id: p for p in self.patients})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.park == other.park and self.time == other.time
                and self.protocols == other.protocols and self.patients == other.patients
                and self.occupancy == other.occupancy and self.name == other.name)

    __hash__ = None  # type: ignore[assignment]

    def patient(self, pid: int) -> Patient:
        return self._by_id[pid]  # type: ignore[attr-defined]

    def protocol_of(self, patient: Patient | int) -> Protocol:
        if not isinstance(patient, Patient):
            patient = self.patient(patient)
        return self.protocols[patient.protocol]

    def residual(self) -> np.ndarray:
        """Free minutes per cell, shape ``(M, D_w, W)``."""
        return np.asarray(self.time.window_lengths, dtype=np.int64)[None, None, :] - self.occupancy.minutes

    def latest_start(self, patient: Patient) -> int:
        return self.time.days - self.protocol_of(patient).fractions + 1

    def start_days(self, patient: Patient, earliest: int | None = None) -> list[int]:
        """Allowed start days in ``[max(d_min, earliest), D_w - F_p + 1]``."""
        pr = self.protocol_of(patient)
        lo = patient.d_min if earliest is None else max(patient.d_min, earliest)
        ok = pr.allowed_start_weekdays
        fw = self.time.first_weekday
        return [d for d in range(lo, self.latest_start(patient) + 1) if (fw + d - 1) % 5 in ok]

    def dominance_chains(self) -> dict[str, list[int]]:
        """Per protocol, patient ids ordered by ``(d_L, id)``; starts must be non-decreasing."""
        chains: dict[str, list[Patient]] = {}
        for p in self.patients:
            chains.setdefault(p.protocol, []).append(p)
        return {h: [p.id for p in sorted(ps, key=lambda p: (p.d_L, p.id))]
                for h, ps in sorted(chains.items())}

    def dominance_pairs(self) -> list[tuple[int, int]]:
        return [(c[i], c[i + 1]) for c in self.dominance_chains().values() for i in range(len(c) - 1)]

    def with_horizon(self, days: int) -> "Instance":
        return replace(self, time=replace(self.time, days=days), occupancy=self.occupancy.resized(days))

    def with_patients(self, patients: Iterable[Patient]) -> "Instance":
        return replace(self, patients=tuple(patients))


@dataclass
class Solution:
    schedules: dict[int, PatientSchedule]
    objective_value: float = float("nan")
    breakdown: tuple = (0, 0, 0, 0, 0, 0)
    bound: Optional[float] = None
    relative_gap: Optional[float] = None
    status: str = "feasible"
    method: str = ""
    meta: dict = field(default_factory=dict)


# -- validation ------------------------------------------------------------

class ViolationCode(str, enum.Enum):
    UNSCHEDULED = "unscheduled"
    UNKNOWN_PATIENT = "unknown_patient"
    FRACTION_COUNT = "fraction_count"
    CONSECUTIVE = "consecutive"
    START_MISMATCH = "start_mismatch"
    MACHINE_NOT_ALLOWED = "machine_not_allowed"
    BEAM_GROUP = "beam_group"
    WINDOW_RANGE = "window_range"
    DAY_RANGE = "day_range"
    START_BEFORE_MIN = "start_before_min"
    START_AFTER_MAX = "start_after_max"
    START_WEEKDAY = "start_weekday"
    CAPACITY = "capacity"
    DOMINANCE = "dominance"


@dataclass(frozen=True)
class Violation:
    code: ViolationCode
    patient_id: Optional[int]
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> set[ViolationCode]:
        return {v.code for v in self.violations}

    def add(self, code: ViolationCode, pid: Optional[int], detail: str) -> None:
        self.violations.append(Violation(code, pid, detail))

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(f"[{v.code.value}] patient {v.patient_id}: {v.detail}" for v in self.violations)


def check_schedule(inst: Instance, sched: PatientSchedule, report: ValidationReport | None = None) -> ValidationReport:
    """Rules that concern a single patient in isolation (no capacity, no dominance)."""
    report = ValidationReport() if report is None else report
    pid = sched.patient_id
    try:
        patient = inst.patient(pid)
    except KeyError:
        report.add(ViolationCode.UNKNOWN_PATIENT, pid, "schedule for a patient not in the instance")
        return report
    pr = inst.protocol_of(patient)
    asg = sched.assignments
    if len(asg) != pr.fractions or len({a.day for a in asg}) != len(asg):
        report.add(ViolationCode.FRACTION_COUNT, pid,
                   f"{len(asg)} assignments on {len({a.day for a in asg})} distinct days, expected {pr.fractions}")
    if asg and asg[0].day != sched.start_day:
        report.add(ViolationCode.START_MISMATCH, pid,
                   f"first fraction on day {asg[0].day} but start_day is {sched.start_day}")
    bad_days = [k + 1 for k, a in enumerate(asg) if a.day != sched.start_day + k]
    if bad_days:
        report.add(ViolationCode.CONSECUTIVE, pid, f"fractions {bad_days} not on consecutive weekdays")
    bad = sorted({a.machine for a in asg if a.machine not in pr.allowed_machines})
    if bad:
        report.add(ViolationCode.MACHINE_NOT_ALLOWED, pid, f"machines {bad} not allowed by protocol {pr.id}")
    ms = {a.machine for a in asg if 1 <= a.machine <= inst.park.machine_count}
    if not inst.park.same_trajectory_group(ms):
        report.add(ViolationCode.BEAM_GROUP, pid, f"machines {sorted(ms)} do not share a beam-match group")
    bad = sorted({a.window for a in asg if not 1 <= a.window <= inst.time.windows})
    if bad:
        report.add(ViolationCode.WINDOW_RANGE, pid, f"windows {bad} outside 1..{inst.time.windows}")
    bad = sorted({a.day for a in asg if not 1 <= a.day <= inst.time.days})
    if bad:
        report.add(ViolationCode.DAY_RANGE, pid, f"days {bad} outside 1..{inst.time.days}")
    sd = sched.start_day
    if sd < patient.d_min:
        report.add(ViolationCode.START_BEFORE_MIN, pid, f"start day {sd} < d_min {patient.d_min}")
    if sd > inst.latest_start(patient):
        report.add(ViolationCode.START_AFTER_MAX, pid, f"start day {sd} > latest start {inst.latest_start(patient)}")
    if inst.time.weekday(sd) not in pr.allowed_start_weekdays:
        report.add(ViolationCode.START_WEEKDAY, pid,
                   f"start day {sd} is weekday {inst.time.weekday(sd)}, allowed {sorted(pr.allowed_start_weekdays)}")
    return report


def validate_solution(inst: Instance, sol: Solution | Mapping[int, PatientSchedule]) -> ValidationReport:
    schedules = sol.schedules if isinstance(sol, Solution) else dict(sol)
    report = ValidationReport()
    for p in inst.patients:
        if p.id not in schedules:
            report.add(ViolationCode.UNSCHEDULED, p.id, "patient has no schedule")
    M, D, W = inst.occupancy.shape
    load = np.array(inst.occupancy.minutes, dtype=np.int64)
    for pid in sorted(schedules):
        sched = schedules[pid]
        check_schedule(inst, sched, report)
        if pid not in inst._by_id:  # type: ignore[attr-defined]
            continue
        pr = inst.protocol_of(pid)
        for (m, d, w), minutes in sched.billed(pr):
            if 1 <= m <= M and 1 <= d <= D and 1 <= w <= W:
                load[m - 1, d - 1, w - 1] += minutes
    lengths = np.asarray(inst.time.window_lengths)
    for m, d, w in zip(*np.nonzero(load > lengths[None, None, :])):
        report.add(ViolationCode.CAPACITY, None,
                   f"machine {m + 1} day {d + 1} window {w + 1}: {load[m, d, w]} > {lengths[w]} minutes")
    for p, q in inst.dominance_pairs():
        if p in schedules and q in schedules and schedules[p].start_day > schedules[q].start_day:
            report.add(ViolationCode.DOMINANCE, q,
                       f"patient {p} (d_L={inst.patient(p).d_L}) starts day {schedules[p].start_day} after "
                       f"patient {q} (d_L={inst.patient(q).d_L}) on day {schedules[q].start_day}")
    return report
