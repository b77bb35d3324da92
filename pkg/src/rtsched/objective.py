"""The six per-patient objective components and their weighted composites."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .domain import (Instance, MachinePark, Patient, PatientSchedule, Protocol, Solution,
                     SwitchKind)


@dataclass(frozen=True)
class ObjectiveWeights:
    a1: float = 0
    a2: float = 0
    a3: float = 0
    a4: float = 0
    a5: float = 0
    a6: float = 0

    def __post_init__(self) -> None:
        if any(a < 0 for a in self.alphas):
            raise ValueError("objective weights must be non-negative")
        if not any(a > 0 for a in self.alphas):
            raise ValueError("at least one objective weight must be positive")

    @property
    def alphas(self) -> tuple:
        return (self.a1, self.a2, self.a3, self.a4, self.a5, self.a6)

    @classmethod
    def of(cls, alphas: Sequence[float]) -> "ObjectiveWeights":
        if len(alphas) != 6:
            raise ValueError(f"expected 6 weights, got {len(alphas)}")
        return cls(*alphas)


# Objective function combinations #1..#4.
PRESETS: dict[str, ObjectiveWeights] = {
    "1": ObjectiveWeights(50, 100, 1, 0, 10, 10),
    "2": ObjectiveWeights(50, 100, 1, 1, 0, 0),
    "3": ObjectiveWeights(100, 0, 1, 0, 10, 0),
    "4": ObjectiveWeights(100, 0, 1, 5, 10, 10),
}

# Sensitivity cases for combination #2 (a5 = a6 = 0).
SENSITIVITY: dict[str, ObjectiveWeights] = {
    "base": ObjectiveWeights(50, 100, 1, 1, 0, 0),
    "S1": ObjectiveWeights(10, 100, 1, 5, 0, 0),
    "S2": ObjectiveWeights(10, 100, 5, 1, 0, 0),
    "S3": ObjectiveWeights(50, 50, 1, 1, 0, 0),
    "S4": ObjectiveWeights(100, 10, 1, 1, 0, 0),
    "S5": ObjectiveWeights(5, 10, 1, 2, 0, 0),
    "S6": ObjectiveWeights(1, 50, 5, 5, 0, 0),
}


def resolve_weights(spec: str | Sequence[float] | ObjectiveWeights) -> ObjectiveWeights:
    """Accept a preset name (``"2"``, ``"#2"``, ``"S4"``), a 6-vector, or weights."""
    if isinstance(spec, ObjectiveWeights):
        return spec
    if isinstance(spec, str):
        key = spec.lstrip("#")
        if key in PRESETS:
            return PRESETS[key]
        if key in SENSITIVITY:
            return SENSITIVITY[key]
        try:
            return ObjectiveWeights.of([_num(x) for x in key.split(",")])
        except ValueError:
            raise ValueError(f"unknown objective {spec!r}; use #1..#4, S1..S6 or six comma-separated weights") from None
    return ObjectiveWeights.of(list(spec))


def _num(text: str) -> float:
    f = float(text)
    return int(f) if f.is_integer() else f


def f1_waiting(sched: PatientSchedule, patient: Patient) -> int:
    return patient.weight * (sched.start_day - patient.d_min)


def f2_target_violation(sched: PatientSchedule, patient: Patient) -> int:
    return patient.weight * max(0, sched.start_day - patient.d_L)


def f3_window_switches(sched: PatientSchedule) -> int:
    w = sched.windows
    return sum(1 for a, b in zip(w, w[1:]) if a != b)


def f4_pref_violation(sched: PatientSchedule, patient: Patient) -> int:
    if patient.window_pref is None:
        return 0
    return sum(abs(w - patient.window_pref) for w in sched.windows)


def f5_nonpreferred_machine(sched: PatientSchedule, protocol: Protocol) -> int:
    return sum(1 for m in sched.machines if m not in protocol.preferred_machines)


def f6_partial_switches(sched: PatientSchedule, park: MachinePark) -> int:
    m = sched.machines
    return sum(1 for a, b in zip(m, m[1:]) if park.switch_kind(a, b) is SwitchKind.PARTIAL)


@dataclass(frozen=True)
class CostBreakdown:
    f: tuple[int, int, int, int, int, int]

    def composite(self, weights: ObjectiveWeights) -> float:
        return sum(a * f for a, f in zip(weights.alphas, self.f))


def breakdown(sched: PatientSchedule, inst: Instance) -> CostBreakdown:
    patient = inst.patient(sched.patient_id)
    pr = inst.protocol_of(patient)
    return CostBreakdown((
        f1_waiting(sched, patient),
        f2_target_violation(sched, patient),
        f3_window_switches(sched),
        f4_pref_violation(sched, patient),
        f5_nonpreferred_machine(sched, pr),
        f6_partial_switches(sched, inst.park),
    ))


def composite_cost(sched: PatientSchedule, inst: Instance, weights: ObjectiveWeights) -> float:
    return breakdown(sched, inst).composite(weights)


def total_breakdown(schedules: Mapping[int, PatientSchedule], inst: Instance) -> tuple[int, ...]:
    tot = [0] * 6
    for s in schedules.values():
        for k, v in enumerate(breakdown(s, inst).f):
            tot[k] += v
    return tuple(tot)


def total_objective(schedules: Mapping[int, PatientSchedule] | Solution, inst: Instance,
                    weights: ObjectiveWeights) -> float:
    """``1 + sum_p c_p``; the offset keeps relative gaps defined at zero cost."""
    if isinstance(schedules, Solution):
        schedules = schedules.schedules
    return 1 + sum(composite_cost(s, inst, weights) for s in schedules.values())


def evaluate(inst: Instance, schedules: Mapping[int, PatientSchedule], weights: ObjectiveWeights,
             **kwargs) -> Solution:
    """Wrap schedules into a :class:`Solution` with objective and breakdown filled in."""
    schedules = dict(sorted(schedules.items()))
    return Solution(schedules=schedules,
                    objective_value=total_objective(schedules, inst, weights),
                    breakdown=total_breakdown(schedules, inst), **kwargs)
