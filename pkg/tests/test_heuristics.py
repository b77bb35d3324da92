import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_instance, patient, proto
from rtsched.colgen import CGConfig, run_column_generation
from rtsched.domain import validate_solution
from rtsched.generator import ClinicConfig, simulate, tiny_instances
from rtsched.heuristics import (RESTART_SCALE, HeuristicFailure, greedy_solve, luby, placement_order,
                                restart_search)
from rtsched.master import build_rmp, solve_ip
from rtsched.colgen import initial_columns
from rtsched.objective import PRESETS

W4 = PRESETS["4"]


def test_luby_values():
    assert [luby(i) for i in range(1, 8)] == [1, 1, 2, 1, 1, 2, 4]
    assert luby(15) == 8
    assert RESTART_SCALE * luby(7) == 300


@pytest.mark.parametrize("bad", [0, -3, 1.5])
def test_luby_rejects_bad_index(bad):
    with pytest.raises(ValueError):
        luby(bad)


@given(st.integers(1, 2000))
def test_luby_is_power_of_two(i):
    v = luby(i)
    assert v & (v - 1) == 0 and v <= i


def test_greedy_single_patient_starts_at_d_min():
    inst = make_instance([patient(1, d_min=3)], [proto(fractions=2)], days=10)
    assert greedy_solve(inst, W4).schedules[1].start_day == 3


def test_placement_order_priority_first():
    a, c = proto("a", "A"), proto("c", "C")
    inst = make_instance([patient(1, "c", "C", d_min=1), patient(2, "a", "A", d_min=4)], [a, c])
    assert [p.id for p in placement_order(inst)] == [2, 1]


def test_greedy_failure_names_patient():
    inst = make_instance([patient(1), patient(2, "Q")], [proto(dur_first=40), proto("Q", dur_first=40)],
                         days=1, windows=(60,))
    with pytest.raises(HeuristicFailure) as err:
        greedy_solve(inst, W4)
    assert err.value.patient_id in (1, 2)


def test_heuristics_valid_on_generated_instances():
    cfg = ClinicConfig(arrival_rate=8)
    rng = np.random.default_rng(1)
    count = 0
    for inst, sol in simulate(cfg, 50, lambda i: greedy_solve(i, W4), rng):
        assert validate_solution(inst, sol).ok
        count += 1
    assert count == 50
    r = restart_search(inst, W4, np.random.default_rng(0), budget=3)
    assert validate_solution(inst, r).ok


def test_loose_instance_restart_equals_greedy_start_days():
    pr = proto(fractions=2, allowed=(1, 2))
    inst = make_instance([patient(i, d_min=i) for i in (1, 2, 3)], [pr], machines=2, days=12,
                         windows=(200, 200))
    g = greedy_solve(inst, W4)
    r = restart_search(inst, W4, np.random.default_rng(5))
    assert {p: s.start_day for p, s in g.schedules.items()} == {p: s.start_day for p, s in r.schedules.items()}


def test_restart_valid_and_anytime():
    for inst in tiny_instances(21, 10):
        small = restart_search(inst, W4, np.random.default_rng(3), budget=2)
        big = restart_search(inst, W4, np.random.default_rng(3), budget=8)
        assert validate_solution(inst, small).ok and validate_solution(inst, big).ok
        # the larger budget replays the smaller one's passes first
        assert big.objective_value <= small.objective_value


def test_restart_seed_determinism():
    inst = tiny_instances(22, 1)[0]
    a = restart_search(inst, W4, np.random.default_rng(9))
    b = restart_search(inst, W4, np.random.default_rng(9))
    assert a.schedules == b.schedules


def test_greedy_not_better_than_cg():
    for inst in tiny_instances(23, 8):
        res = run_column_generation(inst, W4, CGConfig(seed=0, warm_start="greedy"))
        assert greedy_solve(inst, W4).objective_value >= res.objective - 1e-9


def test_restart_warm_start_is_node_zero_incumbent():
    for inst in tiny_instances(24, 5):
        rs = restart_search(inst, W4, np.random.default_rng(0))
        pool = initial_columns(inst, W4, np.random.default_rng(0), count=5)
        pool.add_solution(rs, inst, W4)
        ip = solve_ip(build_rmp(pool, inst, W4), warm_start=rs, time_limit=30)
        assert ip.warm_start_accepted
        node, value, source = ip.incumbent_history[0]
        assert (node, source) == (0, "warm_start")
        assert value == pytest.approx(rs.objective_value)
