import numpy as np
import pytest

from conftest import make_instance, patient, proto
from rtsched.colgen import (CGConfig, PlacementError, audit_min_reduced_cost, compute_horizon, initial_columns,
                            pricing_sweep, run_column_generation)
from rtsched.domain import validate_solution
from rtsched.generator import ClinicConfig, simulate, tiny_instances
from rtsched.heuristics import greedy_solve
from rtsched.objective import PRESETS
from rtsched.pricing import isolation_feasible

W4 = PRESETS["4"]


def _single(fractions):
    return make_instance([patient(1, d_min=1)], [proto(fractions=fractions)], days=5)


def test_horizon_single_fraction():
    # the course lands on one of the two first feasible days, so the last day is 1 or 2
    values = {compute_horizon(_single(1), np.random.default_rng(s)) for s in range(20)}
    assert values == {31, 32}


def test_horizon_five_fractions():
    values = {compute_horizon(_single(5), np.random.default_rng(s)) for s in range(20)}
    assert values == {35, 36}


def test_horizon_leaves_room_for_greedy():
    for inst in tiny_instances(4, 10):
        D = compute_horizon(inst, np.random.default_rng(0))
        sized = inst.with_horizon(D)
        assert validate_solution(sized, greedy_solve(sized, W4)).ok


def test_horizon_names_unplaceable_patient():
    big = make_instance([patient(7, d_min=1)], [proto(dur_first=70, dur_other=10)], days=2, windows=(60,))
    with pytest.raises(PlacementError, match="patient 7") as err:
        compute_horizon(big, np.random.default_rng(0))
    assert err.value.patient_id == 7


def test_initial_columns_single_pass_single_patient():
    pool = initial_columns(_single(2), W4, np.random.default_rng(0), count=1)
    assert len(pool) == 1


def test_initial_columns_feasible_in_isolation():
    for inst in tiny_instances(5, 10):
        pool = initial_columns(inst, W4, np.random.default_rng(1))
        for pid in pool.patients():
            for c in pool.columns(pid):
                assert isolation_feasible(inst, c.schedule)


def test_initial_columns_cover_generated_instance():
    cfg = ClinicConfig(arrival_rate=16)
    rng = np.random.default_rng(3)
    for inst, _ in simulate(cfg, 3, lambda i: greedy_solve(i, W4), rng):
        pass
    pool = initial_columns(inst, W4, np.random.default_rng(0), count=75)
    assert all(pool.columns(p.id) for p in inst.patients)


def test_optimum_in_initial_pool_terminates_after_one_round():
    inst = make_instance([patient(1, d_min=1)], [proto(fractions=2)], days=6)
    res = run_column_generation(inst, W4, CGConfig(seed=0, warm_start=None))
    assert len(res.iterations) == 1
    assert res.iterations[0].columns_added == 0
    assert res.objective == 1.0


def test_lp_sequence_non_increasing_and_audit_clean():
    for inst in tiny_instances(8, 6):
        res = run_column_generation(inst, W4, CGConfig(seed=1, warm_start="restart", initial_count=5))
        values = [r.lp_value for r in res.iterations]
        assert all(b <= a + 1e-7 for a, b in zip(values, values[1:]))
        assert res.capped is None
        assert res.audit_min_reduced_cost >= -1e-6
        assert audit_min_reduced_cost(inst, res.final_duals, W4, exhaustive=True) >= -1e-6
        assert res.artificial_mass <= 1e-9
        assert res.lp_value <= res.objective + 1e-6
        assert res.solution.relative_gap == pytest.approx((res.objective - res.lp_value) / res.lp_value)
        assert validate_solution(inst, res.solution).ok


def test_seed_determinism():
    inst = tiny_instances(9, 1)[0]
    a = run_column_generation(inst, W4, CGConfig(seed=4, warm_start="best"))
    b = run_column_generation(inst, W4, CGConfig(seed=4, warm_start="best"))
    assert a.objective == b.objective
    assert [c.schedule for p in a.pool.patients() for c in a.pool.columns(p)] == \
           [c.schedule for p in b.pool.patients() for c in b.pool.columns(p)]
    assert a.solution.schedules == b.solution.schedules


def test_parallel_pricing_sweep_matches_serial():
    inst = tiny_instances(10, 1)[0]
    res = run_column_generation(inst, W4, CGConfig(seed=0))
    serial = pricing_sweep(inst, res.final_duals, W4)
    parallel = pricing_sweep(inst, res.final_duals, W4, workers=3)
    assert [c and c.schedule for c in serial] == [c and c.schedule for c in parallel]


def test_iteration_cap_marks_result():
    inst = tiny_instances(12, 1)[0]
    res = run_column_generation(inst, W4, CGConfig(seed=0, max_iterations=0, initial_count=1))
    assert res.capped == "iterations"
    assert res.solution.status != "optimal"
