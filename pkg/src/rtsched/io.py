"""Versioned JSON documents for instances and solutions.

Occupancy is stored sparsely as ``[machine, day, window, minutes]`` rows. Keys
are written in a fixed order so identical objects give identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .domain import (Instance, InstanceError, MachinePark, OccupancyGrid, Patient, PatientSchedule,
                     Protocol, Solution, TimeGrid)

FORMAT_VERSION = 1
INSTANCE_KIND = "rtsched-instance"
SOLUTION_KIND = "rtsched-solution"


class FormatError(ValueError):
    """A document could not be parsed; the message names the location."""


def instance_to_dict(inst: Instance) -> dict:
    occ = inst.occupancy.minutes
    cells = [[int(m) + 1, int(d) + 1, int(w) + 1, int(occ[m, d, w])] for m, d, w in zip(*np.nonzero(occ))]
    return {
        "kind": INSTANCE_KIND,
        "version": FORMAT_VERSION,
        "name": inst.name,
        "time": {"days": inst.time.days, "window_lengths": list(inst.time.window_lengths),
                 "first_weekday": inst.time.first_weekday},
        "machines": {"count": inst.park.machine_count,
                     "complete_groups": _groups(inst.park.complete_groups),
                     "partial_groups": _groups(inst.park.partial_groups)},
        "protocols": [
            {"id": pr.id, "priority": pr.priority, "dur_first": pr.dur_first, "dur_other": pr.dur_other,
             "fractions": pr.fractions, "allowed_machines": sorted(pr.allowed_machines),
             "preferred_machines": sorted(pr.preferred_machines),
             "allowed_start_weekdays": sorted(pr.allowed_start_weekdays)}
            for _, pr in sorted(inst.protocols.items())],
        "patients": [
            {"id": p.id, "protocol": p.protocol, "priority": p.priority, "d_min": p.d_min, "d_L": p.d_L,
             "window_pref": p.window_pref, "is_placeholder": p.is_placeholder}
            for p in inst.patients],
        "occupancy": cells,
    }


def _groups(groups) -> list[list[int]]:
    return sorted(sorted(g) for g in groups)


class _Reader:
    """Field access with the JSON path kept for error messages."""

    def __init__(self, data: Any, path: str):
        self.data = data
        self.path = path

    def get(self, key: str, kind=None, default=...):
        if not isinstance(self.data, dict):
            raise FormatError(f"{self.path or '<root>'}: expected an object")
        if key not in self.data:
            if default is not ...:
                return default
            raise FormatError(f"{self._at(key)}: missing field")
        value = self.data[key]
        if value is None and default is None:
            return None
        if kind is not None and not _is(value, kind):
            raise FormatError(f"{self._at(key)}: expected {_name(kind)}, got {type(value).__name__}")
        return value

    def sub(self, key: str) -> "_Reader":
        return _Reader(self.get(key, dict), self._at(key))

    def items(self, key: str) -> list["_Reader"]:
        return [_Reader(v, f"{self._at(key)}[{i}]") for i, v in enumerate(self.get(key, list))]

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key


def _is(value, kind) -> bool:
    if kind is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, kind)


def _name(kind) -> str:
    return {int: "integer", float: "number", str: "string", list: "array", dict: "object", bool: "boolean"}[kind]


def _int_list(r: _Reader, key: str) -> list[int]:
    values = r.get(key, list)
    for i, v in enumerate(values):
        if not _is(v, int):
            raise FormatError(f"{r._at(key)}[{i}]: expected integer")
    return values


def _check_header(r: _Reader, kind: str) -> None:
    got = r.get("kind", str)
    if got != kind:
        raise FormatError(f"kind: expected {kind!r}, got {got!r}")
    version = r.get("version", int)
    if version != FORMAT_VERSION:
        raise FormatError(f"version: unsupported version {version} (this reader handles {FORMAT_VERSION})")


def instance_from_dict(data: dict) -> Instance:
    r = _Reader(data, "")
    _check_header(r, INSTANCE_KIND)
    t = r.sub("time")
    m = r.sub("machines")
    try:
        time = TimeGrid(t.get("days", int), tuple(_int_list(t, "window_lengths")), t.get("first_weekday", int, 0))
        park = MachinePark(m.get("count", int), tuple(map(frozenset, m.get("complete_groups", list, []))),
                           tuple(map(frozenset, m.get("partial_groups", list, []))))
        protocols = {}
        for pr in r.items("protocols"):
            p = Protocol(pr.get("id", str), pr.get("priority", str), pr.get("dur_first", int),
                         pr.get("dur_other", int), pr.get("fractions", int),
                         frozenset(_int_list(pr, "allowed_machines")),
                         frozenset(_int_list(pr, "preferred_machines")),
                         frozenset(pr.get("allowed_start_weekdays", list, list(range(5)))))
            if p.id in protocols:
                raise FormatError(f"{pr.path}.id: duplicate protocol {p.id!r}")
            protocols[p.id] = p
        patients = []
        for pp in r.items("patients"):
            pref = pp.get("window_pref", default=None)
            if pref is not None and not _is(pref, int):
                raise FormatError(f"{pp.path}.window_pref: expected integer or null")
            patients.append(Patient(pp.get("id", int), pp.get("protocol", str), pp.get("priority", str),
                                    pp.get("d_min", int), pp.get("d_L", int), pref,
                                    pp.get("is_placeholder", bool, False)))
        occ = np.zeros((park.machine_count, time.days, time.windows), dtype=np.int64)
        for i, cell in enumerate(r.get("occupancy", list, [])):
            if not (isinstance(cell, list) and len(cell) == 4 and all(_is(x, int) for x in cell)):
                raise FormatError(f"occupancy[{i}]: expected [machine, day, window, minutes]")
            mm, d, w, minutes = cell
            if not (1 <= mm <= park.machine_count and 1 <= d <= time.days and 1 <= w <= time.windows):
                raise FormatError(f"occupancy[{i}]: cell ({mm}, {d}, {w}) outside the grid")
            occ[mm - 1, d - 1, w - 1] = minutes
        return Instance(park, time, protocols, patients, OccupancyGrid(occ), name=r.get("name", str, ""))
    except InstanceError as exc:
        raise FormatError(f"invalid instance: {exc}") from exc


def solution_to_dict(sol: Solution) -> dict:
    return {
        "kind": SOLUTION_KIND,
        "version": FORMAT_VERSION,
        "method": sol.method,
        "status": sol.status,
        "objective_value": _num(sol.objective_value),
        "breakdown": list(sol.breakdown),
        "bound": _num(sol.bound),
        "relative_gap": _num(sol.relative_gap),
        "meta": sol.meta,
        "schedules": [
            {"patient_id": s.patient_id, "start_day": s.start_day,
             "assignments": [[a.day, a.machine, a.window] for a in s.assignments]}
            for _, s in sorted(sol.schedules.items())],
    }


def _num(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return x


def solution_from_dict(data: dict) -> Solution:
    r = _Reader(data, "")
    _check_header(r, SOLUTION_KIND)
    schedules = {}
    for s in r.items("schedules"):
        asg = []
        for i, a in enumerate(s.get("assignments", list)):
            if not (isinstance(a, list) and len(a) == 3 and all(_is(x, int) for x in a)):
                raise FormatError(f"{s.path}.assignments[{i}]: expected [day, machine, window]")
            asg.append(tuple(a))
        sched = PatientSchedule(s.get("patient_id", int), s.get("start_day", int), tuple(asg))
        if sched.patient_id in schedules:
            raise FormatError(f"{s.path}.patient_id: duplicate schedule for patient {sched.patient_id}")
        schedules[sched.patient_id] = sched
    obj = r.get("objective_value", float, None)
    gap = r.get("relative_gap", float, None)
    return Solution(schedules,
                    objective_value=math.inf if obj is None else obj,
                    breakdown=tuple(r.get("breakdown", list, [0] * 6)),
                    bound=r.get("bound", float, None),
                    relative_gap=gap,
                    status=r.get("status", str, "feasible"),
                    method=r.get("method", str, ""),
                    meta=r.get("meta", dict, {}))


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1) + "\n"


def loads(text: str, source: str = "<string>") -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def save_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps(instance_to_dict(inst)))


def load_instance(path: str | Path) -> Instance:
    try:
        return instance_from_dict(loads(Path(path).read_text(), str(path)))
    except FormatError as exc:
        raise _located(exc, path) from None


def save_solution(sol: Solution, path: str | Path) -> None:
    Path(path).write_text(dumps(solution_to_dict(sol)))


def load_solution(path: str | Path) -> Solution:
    try:
        return solution_from_dict(loads(Path(path).read_text(), str(path)))
    except FormatError as exc:
        raise _located(exc, path) from None


def _located(exc: FormatError, path) -> FormatError:
    msg = str(exc)
    return exc if msg.startswith(str(path)) else FormatError(f"{path}: {msg}")
