"""Per-patient metrics, per-priority summaries and weighted-sum Pareto sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .domain import Instance, Solution
from .objective import ObjectiveWeights, breakdown

METRIC_FIELDS = ["instance", "patient_id", "priority", "placeholder", "wait", "target_violation",
                 "window_switches", "pref_violation", "nonpreferred_fractions", "partial_switches"]
SUMMARY_FIELDS = ["priority", "patients", "mean_wait", "median_wait", "p90_wait", "max_wait",
                  "target_violations", "window_switches", "pref_violation", "nonpreferred_fractions",
                  "partial_switches"]


def patient_metrics(inst: Instance, sol: Solution, include_placeholders: bool = False) -> list[dict]:
    """One row per scheduled patient; waits are in weekdays (not priority-weighted)."""
    rows = []
    for p in inst.patients:
        if p.is_placeholder and not include_placeholders:
            continue
        s = sol.schedules.get(p.id)
        if s is None:
            continue
        f = breakdown(s, inst).f
        rows.append({
            "instance": inst.name, "patient_id": p.id, "priority": p.priority,
            "placeholder": int(p.is_placeholder),
            "wait": s.start_day - p.d_min,
            "target_violation": max(0, s.start_day - p.d_L),
            "window_switches": f[2], "pref_violation": f[3],
            "nonpreferred_fractions": f[4], "partial_switches": f[5],
        })
    return rows


def summarize(rows: Iterable[dict]) -> list[dict]:
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r["priority"], []).append(r)
    out = []
    for prio in sorted(groups):
        g = groups[prio]
        waits = np.array([r["wait"] for r in g], dtype=float)
        out.append({
            "priority": prio, "patients": len(g),
            "mean_wait": float(waits.mean()), "median_wait": float(np.median(waits)),
            "p90_wait": float(np.percentile(waits, 90)), "max_wait": int(waits.max()),
            "target_violations": sum(r["target_violation"] > 0 for r in g),
            "window_switches": sum(r["window_switches"] for r in g),
            "pref_violation": sum(r["pref_violation"] for r in g),
            "nonpreferred_fractions": sum(r["nonpreferred_fractions"] for r in g),
            "partial_switches": sum(r["partial_switches"] for r in g),
        })
    return out


def to_csv(rows: Sequence[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


@dataclass(frozen=True)
class ParetoPoint:
    alpha1: float
    alpha4: float
    waiting: int            # f1
    preference: int         # f4
    objective: float
    dominated: bool = False


def pareto_sweep(inst: Instance, grid: Iterable[tuple[float, float]],
                 solve: Callable[[Instance, ObjectiveWeights], Solution],
                 base: Sequence[float] = (0, 0, 0, 0, 0, 0)) -> list[ParetoPoint]:
    """Solve once per distinct ``(alpha1, alpha4)`` pair, other weights from ``base``.

    Points are returned in grid order with duplicates removed and each flagged
    as dominated or not in the (f1, f4) plane.
    """
    seen = set()
    points = []
    for a1, a4 in grid:
        key = (float(a1), float(a4))
        if key in seen:
            continue
        seen.add(key)
        alphas = list(base)
        alphas[0], alphas[3] = a1, a4
        w = ObjectiveWeights.of(alphas)
        sol = solve(inst, w)
        points.append(ParetoPoint(a1, a4, int(sol.breakdown[0]), int(sol.breakdown[3]), sol.objective_value))
    out = []
    for p in points:
        dom = any((q.waiting <= p.waiting and q.preference <= p.preference)
                  and (q.waiting, q.preference) != (p.waiting, p.preference) for q in points)
        out.append(ParetoPoint(p.alpha1, p.alpha4, p.waiting, p.preference, p.objective, dom))
    return out


def frontier(points: Iterable[ParetoPoint]) -> list[tuple[int, int]]:
    """Distinct non-dominated ``(f1, f4)`` pairs sorted by waiting cost."""
    return sorted({(p.waiting, p.preference) for p in points if not p.dominated})
