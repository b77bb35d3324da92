import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_instance, patient, pricing_cases, proto, random_duals
from rtsched.domain import PatientSchedule, validate_solution
from rtsched.generator import default_park
from rtsched.objective import PRESETS, ObjectiveWeights, composite_cost
from rtsched.pricing import (DualPrices, EnumerationCapExceeded, InfeasibleColumn, enumerate_all_schedules,
                             reduced_cost, solve_pricing)

W1 = ObjectiveWeights(1, 0, 0, 0, 0, 0)


def test_enumeration_counts():
    inst = make_instance([patient(1, d_min=1)], [proto(fractions=1)], days=3, windows=(60, 60))
    assert len(enumerate_all_schedules(inst.patient(1), inst)) == 6
    park = default_park()
    inst = make_instance([patient(1, d_min=1)], [proto(fractions=2, allowed=(3, 9))], days=2, park=park)
    assert len(enumerate_all_schedules(inst.patient(1), inst)) == 4


def test_enumeration_cap():
    inst = make_instance([patient(1)], [proto(fractions=5)], days=10, windows=(60,) * 4)
    with pytest.raises(EnumerationCapExceeded):
        enumerate_all_schedules(inst.patient(1), inst, cap=100)


def test_enumerated_schedules_are_valid():
    for inst, p, _, _ in pricing_cases(3, 20):
        for s in enumerate_all_schedules(p, inst):
            # other patients are absent, so only this schedule's own rules apply
            assert validate_solution(inst.with_patients([p]), {p.id: s}).ok


def test_zero_duals_give_composite_cost():
    inst = make_instance([patient(1, d_min=2, pref=1)], [proto(fractions=2)], windows=(60, 60))
    s = PatientSchedule.consecutive(1, 3, (1, 1), (2, 1))
    assert reduced_cost(s, DualPrices.zeros(inst), PRESETS["4"], inst) == composite_cost(s, inst, PRESETS["4"])
    lam = DualPrices({1: composite_cost(s, inst, PRESETS["4"])}, None, {})
    assert reduced_cost(s, lam, PRESETS["4"], inst) == 0


def test_reduced_cost_term_by_term():
    inst = make_instance([patient(1, d_min=1, d_L=1), patient(2, d_min=1, d_L=4)],
                         [proto(dur_first=30, dur_other=20, fractions=2)], days=5, windows=(60, 60))
    gamma = np.zeros(inst.occupancy.shape)
    gamma[0, 2, 0] = -0.5
    gamma[0, 3, 1] = -0.25
    duals = DualPrices({2: 7.0}, gamma, {1: -3.0})
    s = PatientSchedule.consecutive(2, 3, (1, 1), (1, 2))
    w = ObjectiveWeights(2, 1, 1, 0, 0, 0)
    cost = 2 * 1 * 2 + 1 * 1  # f1 = 2 days waited, f3 = 1 switch
    # patient 2 follows patient 1 in the chain, so its start day earns -(0 - eta_1) = -3 per day
    expected = cost - 7.0 - (-0.5 * 30) - (-0.25 * 20) - (0.0 - (-3.0)) * 3
    assert reduced_cost(s, duals, w, inst) == pytest.approx(expected, abs=1e-12)


def test_reduced_cost_rejects_infeasible_column():
    inst = make_instance([patient(1)], [proto(dur_first=50)], occupancy={(1, 1, 1): 20})
    with pytest.raises(InfeasibleColumn):
        reduced_cost(PatientSchedule.consecutive(1, 1, [1], [1]), DualPrices.zeros(inst), W1, inst)


def test_unique_path_structure():
    inst = make_instance([patient(1, d_min=2)], [proto(fractions=2, dur_first=30, dur_other=20)], days=6)
    gamma = np.zeros(inst.occupancy.shape)
    gamma[0, 1, 0] = -0.01  # 0.3 on the first fraction, still cheaper than one day of waiting
    col = solve_pricing(inst.patient(1), inst, DualPrices({1: 4.0}, gamma, {}), W1)
    assert col.schedule.start_day == 2
    assert col.reduced_cost == pytest.approx(0 - 4.0 + 0.01 * 30)


def test_no_column_when_capacity_exhausted():
    inst = make_instance([patient(1, d_min=3)], [proto(dur_first=30)], days=3,
                         occupancy={(1, 3, 1): 40, (1, 1, 1): 60 - 59})
    assert solve_pricing(inst.patient(1), inst, DualPrices.zeros(inst), W1) is None


def test_tie_break_is_earliest_lowest():
    inst = make_instance([patient(1)], [proto(fractions=1, allowed=(1, 2))], machines=2, days=3,
                         windows=(60, 60))
    col = solve_pricing(inst.patient(1), inst, DualPrices.zeros(inst), ObjectiveWeights(0, 0, 1, 0, 0, 0))
    assert (col.schedule.start_day, col.schedule.machines, col.schedule.windows) == (1, (1,), (1,))


def test_partial_pair_matches_enumeration():
    park = default_park()
    pr = proto("h", "B", 20, 10, 3, allowed=(1, 4), preferred=(4,))
    inst = make_instance([patient(1, "h", "B", d_min=1, d_L=2, pref=2)], [pr], park=park, days=6,
                         windows=(30, 30), occupancy={(4, 2, 2): 25, (1, 3, 1): 15})
    rng = np.random.default_rng(0)
    for _ in range(20):
        duals = random_duals(inst, rng)
        col = solve_pricing(inst.patient(1), inst, duals, PRESETS["4"])
        best = min(reduced_cost(s, duals, PRESETS["4"], inst) for s in enumerate_all_schedules(inst.patient(1), inst))
        assert col.reduced_cost == pytest.approx(best, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_pricing_matches_enumeration(seed):
    inst, p, duals, w = pricing_cases(seed, 1)[0]
    col = solve_pricing(p, inst, duals, w)
    scheds = enumerate_all_schedules(p, inst)
    if not scheds:
        assert col is None
        return
    values = [reduced_cost(s, duals, w, inst) for s in scheds]
    assert col.reduced_cost == pytest.approx(min(values), abs=1e-9)
    assert col.reduced_cost == pytest.approx(reduced_cost(col.schedule, duals, w, inst), abs=1e-9)
    costs = [composite_cost(s, inst, w) for s in scheds]
    zero = solve_pricing(p, inst, DualPrices.zeros(inst), w)
    assert zero.cost == min(costs)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 5))
def test_more_negative_gamma_never_helps_users_of_the_cell(seed, delta):
    inst, p, duals, w = pricing_cases(seed, 1)[0]
    for s in enumerate_all_schedules(p, inst)[:20]:
        (m, d, wd), _ = s.billed(inst.protocol_of(p))[0]
        g = duals.gamma_array(inst).copy()
        g[m - 1, d - 1, wd - 1] -= delta
        worse = DualPrices(duals.lam, g, duals.eta)
        assert reduced_cost(s, worse, w, inst) >= reduced_cost(s, duals, w, inst)
