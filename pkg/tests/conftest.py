import numpy as np
import pytest

from rtsched.domain import Instance, MachinePark, OccupancyGrid, Patient, Protocol, TimeGrid
from rtsched.generator import default_park


def make_instance(patients, protocols, machines=1, days=10, windows=(60,), occupancy=None,
                  park=None, first_weekday=0, name="t"):
    park = park or MachinePark(machines)
    occ = np.zeros((park.machine_count, days, len(windows)), dtype=np.int64)
    if occupancy:
        for (m, d, w), minutes in occupancy.items():
            occ[m - 1, d - 1, w - 1] = minutes
    protos = {p.id: p for p in protocols}
    return Instance(park, TimeGrid(days, windows, first_weekday), protos, patients, OccupancyGrid(occ), name=name)


def proto(pid="P", priority="C", dur_first=20, dur_other=10, fractions=1, allowed=(1,), preferred=None,
          weekdays=range(5)):
    return Protocol(pid, priority, dur_first, dur_other, fractions, frozenset(allowed),
                    frozenset(preferred if preferred is not None else allowed), frozenset(weekdays))


def patient(pid, protocol="P", priority="C", d_min=1, d_L=None, pref=None, placeholder=False):
    return Patient(pid, protocol, priority, d_min, d_L if d_L is not None else d_min + 5, pref, placeholder)


@pytest.fixture
def park():
    return default_park()


def _ps(pid, start, machines, windows, days=None):
    from rtsched.domain import PatientSchedule
    if days is None:
        return PatientSchedule.consecutive(pid, start, machines, windows)
    return PatientSchedule(pid, start, tuple(zip(days, machines, windows)))


def validator_cases():
    """``(name, code, bad, clean)`` with ``bad``/``clean`` as ``(instance, schedules)``.

    One case per rule family; each clean twin differs from the bad one by the
    minimal edit that repairs it.
    """
    from rtsched.domain import ViolationCode as V
    park = default_park()
    cur = proto("cur", "C", 20, 10, 3, allowed=(1, 4, 8, 10), preferred=(1,), weekdays=range(4))
    pal = proto("pal", "A", 48, 30, 1, allowed=(1, 2))

    def inst(pats, occupancy=None, windows=(60, 60)):
        return make_instance(pats, [cur, pal], days=10, windows=windows, park=park, occupancy=occupancy)

    one = inst([patient(1, "cur", "C", 1, 5)])
    two_pal = inst([patient(1, "pal", "A", 1, 2), patient(2, "pal", "A", 1, 2)])
    dom = inst([patient(1, "cur", "C", 1, 3), patient(2, "cur", "C", 1, 5)])
    tight = inst([patient(1, "pal", "A", 1, 2)], occupancy={(1, 2, 1): 20})
    late = inst([patient(1, "cur", "C", 3, 5)])
    cases = [
        ("gap_day", V.CONSECUTIVE,
         (one, {1: _ps(1, 1, (1, 1, 1), (1, 1, 1), days=(1, 3, 4))}),
         (one, {1: _ps(1, 1, (1, 1, 1), (1, 1, 1))})),
        ("missing_fraction", V.FRACTION_COUNT,
         (one, {1: _ps(1, 1, (1, 1), (1, 1))}),
         (one, {1: _ps(1, 1, (1, 1, 1), (1, 1, 1))})),
        ("two_fractions_one_day", V.FRACTION_COUNT,
         (one, {1: _ps(1, 1, (1, 1, 1), (1, 2, 1), days=(1, 1, 2))}),
         (one, {1: _ps(1, 1, (1, 1, 1), (1, 2, 1))})),
        ("unscheduled_patient", V.UNSCHEDULED,
         (two_pal, {1: _ps(1, 1, (1,), (1,))}),
         (two_pal, {1: _ps(1, 1, (1,), (1,)), 2: _ps(2, 1, (1,), (2,))})),
        ("beam_group", V.BEAM_GROUP,
         (one, {1: _ps(1, 1, (1, 10, 10), (1, 1, 1))}),
         (one, {1: _ps(1, 1, (1, 4, 4), (1, 1, 1))})),
        ("machine_not_allowed", V.MACHINE_NOT_ALLOWED,
         (one, {1: _ps(1, 1, (8, 8, 3), (1, 1, 1))}),
         (one, {1: _ps(1, 1, (8, 8, 8), (1, 1, 1))})),
        ("start_before_min", V.START_BEFORE_MIN,
         (late, {1: _ps(1, 2, (1, 1, 1), (1, 1, 1))}),
         (late, {1: _ps(1, 3, (1, 1, 1), (1, 1, 1))})),
        ("start_after_max", V.START_AFTER_MAX,
         (one, {1: _ps(1, 9, (1, 1, 1), (1, 1, 1))}),
         (one, {1: _ps(1, 8, (1, 1, 1), (1, 1, 1))})),
        ("start_weekday", V.START_WEEKDAY,
         (one, {1: _ps(1, 5, (1, 1, 1), (1, 1, 1))}),
         (one, {1: _ps(1, 4, (1, 1, 1), (1, 1, 1))})),
        ("first_fraction_billing", V.CAPACITY,
         (tight, {1: _ps(1, 2, (1,), (1,))}),
         (tight, {1: _ps(1, 2, (1,), (2,))})),
        ("shared_cell_overflow", V.CAPACITY,
         (two_pal, {1: _ps(1, 1, (1,), (1,)), 2: _ps(2, 1, (1,), (1,))}),
         (two_pal, {1: _ps(1, 1, (1,), (1,)), 2: _ps(2, 1, (2,), (1,))})),
        ("dominance", V.DOMINANCE,
         (dom, {1: _ps(1, 7, (1, 1, 1), (1, 1, 1)), 2: _ps(2, 4, (1, 1, 1), (1, 1, 1))}),
         (dom, {1: _ps(1, 4, (1, 1, 1), (1, 1, 1)), 2: _ps(2, 7, (1, 1, 1), (1, 1, 1))})),
    ]
    return cases


def random_duals(inst, rng, scale=20.0):
    """Dual vector with the master's signs: lambda free, gamma and eta non-positive."""
    from rtsched.pricing import DualPrices
    lam = {p.id: float(rng.normal(0, scale)) for p in inst.patients}
    gamma = -rng.exponential(scale / 60, size=inst.occupancy.shape) * (rng.random(inst.occupancy.shape) < 0.5)
    eta = {p: -float(rng.exponential(scale / 5)) for p, _ in inst.dominance_pairs()}
    return DualPrices(lam, gamma, eta)


def pricing_cases(seed, count):
    """``count`` (instance, patient, duals, weights) tuples over varied tiny instances."""
    from rtsched.generator import random_tiny_instance
    from rtsched.objective import PRESETS, SENSITIVITY
    rng = np.random.default_rng(seed)
    weights = list(PRESETS.values()) + list(SENSITIVITY.values())
    out = []
    while len(out) < count:
        try:
            inst = random_tiny_instance(rng, patients=int(rng.integers(1, 5)), machines=int(rng.integers(1, 3)),
                                        days=int(rng.integers(4, 11)), windows=int(rng.integers(1, 4)))
        except Exception:
            continue
        p = inst.patients[int(rng.integers(len(inst.patients)))]
        out.append((inst, p, random_duals(inst, rng), weights[int(rng.integers(len(weights)))]))
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
