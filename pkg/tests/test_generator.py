import numpy as np
import pytest

from rtsched.domain import validate_solution
from rtsched.generator import (PLACEHOLDER_ID_BASE, TARGET_DAYS, ClinicConfig, default_park,
                               expected_daily_arrivals, largest_remainder, load_protocol_table, make_placeholders,
                               sample_arrivals, simulate, snapshot_days, tiny_instances)
from rtsched.heuristics import greedy_solve
from rtsched.objective import PRESETS

W4 = PRESETS["4"]


def test_protocol_table_is_consistent():
    table = load_protocol_table()
    park = default_park()
    for prio in "ABC":
        assert sum(s.share for s in table if s.protocol.priority == prio) == pytest.approx(1)
    for s in table:
        assert s.protocol.allowed_machines <= set(park.machines)


def test_config_validation():
    with pytest.raises(ValueError):
        ClinicConfig(arrival_rate=-1)
    with pytest.raises(ValueError):
        ClinicConfig(priority_shares=(("A", 0.5), ("B", 0.6), ("C", 0.0)))
    with pytest.raises(ValueError):
        ClinicConfig(windows=2, window_lengths=(100,))


def test_arrival_rate_over_many_days():
    cfg = ClinicConfig(arrival_rate=16)
    rng = np.random.default_rng(0)
    counts = [len(sample_arrivals(d, cfg, rng)) for d in range(1, 10_001)]
    assert abs(np.mean(counts) - 16) <= 0.5


def test_zero_rate_is_empty():
    cfg = ClinicConfig(arrival_rate=0)
    rng = np.random.default_rng(0)
    assert all(sample_arrivals(d, cfg, rng) == [] for d in range(1, 50))


def test_preference_shares_two_windows():
    cfg = ClinicConfig(arrival_rate=16)
    rng = np.random.default_rng(1)
    prefs = []
    day = 0
    while len(prefs) < 10_000:
        day += 1
        prefs += [p.window_pref for p in sample_arrivals(day, cfg, rng)]
    prefs = prefs[:10_000]
    share = {k: sum(p == k for p in prefs) / len(prefs) for k in (None, 1, 2)}
    assert share[None] == pytest.approx(0.20, abs=0.02)
    assert share[1] == pytest.approx(0.52, abs=0.02)
    assert share[2] == pytest.approx(0.28, abs=0.02)


def test_four_window_preferences_use_outer_windows():
    cfg = ClinicConfig(windows=4)
    assert {w for w, _ in cfg.preference_model()} == {None, 1, 4}
    assert sum(q for _, q in cfg.preference_model()) == pytest.approx(1)


def test_arrival_days_and_targets():
    cfg = ClinicConfig(arrival_rate=30)
    for p in sample_arrivals(10, cfg, np.random.default_rng(2)):
        offset = 1 if p.priority == "A" else cfg.notice_days
        assert p.d_min == 10 + offset
        # "target of T days" means the start may be on any of the first T eligible days
        assert p.d_L == p.d_min + TARGET_DAYS[p.priority] - 1


def test_largest_remainder():
    assert largest_remainder([0.4, 0.4, 0.2]) == [1, 0, 0]
    assert sum(largest_remainder([6.72] * 20)) == round(6.72 * 20)
    assert largest_remainder([]) == []


def test_placeholders():
    cfg = ClinicConfig(arrival_rate=16)
    rates = expected_daily_arrivals(cfg)
    pm = cfg.protocol_map
    assert sum(r for h, r in rates.items() if pm[h].priority == "A") == pytest.approx(6.72)
    ph = make_placeholders(5, cfg)
    assert ph and all(p.is_placeholder and p.window_pref is None for p in ph)
    assert all(p.id >= PLACEHOLDER_ID_BASE for p in ph)
    assert {p.priority for p in ph} == {"A", "B"}
    assert sum(p.priority == "A" for p in ph) == round(6.72 * 20)
    assert sum(p.priority == "B" for p in ph) == round(16 * 0.18 * 20)
    assert all(p.d_min > 5 for p in ph)
    assert make_placeholders(5, ClinicConfig(lookahead=0)) == []


def test_day_one_contains_only_arrivals_and_placeholders():
    cfg = ClinicConfig(arrival_rate=10)
    rng = np.random.default_rng(3)
    inst, sol = next(simulate(cfg, 1, lambda i: greedy_solve(i, W4), rng))
    arrivals = sample_arrivals(1, cfg, np.random.default_rng(3))
    real = [p for p in inst.patients if not p.is_placeholder]
    assert [p.id for p in real] == [p.id for p in arrivals]
    assert len(inst.patients) - len(real) == len(make_placeholders(1, cfg))
    assert not inst.occupancy.minutes.any()


def test_simulation_is_seed_deterministic():
    cfg = ClinicConfig(arrival_rate=10)
    run = lambda: [(i, s.schedules) for i, s in simulate(cfg, 8, lambda x: greedy_solve(x, W4),
                                                           np.random.default_rng(7))]
    a, b = run(), run()
    assert all(x[0] == y[0] and x[1] == y[1] for x, y in zip(a, b))


@pytest.fixture(scope="module")
def long_run():
    """300 simulated days at the reference arrival rate."""
    cfg = ClinicConfig(arrival_rate=16)
    rng = np.random.default_rng(2024)
    from rtsched.generator import SimState
    state = SimState(0, np.zeros((cfg.park.machine_count, 0, cfg.windows), dtype=np.int64))
    days = []
    for inst, sol in simulate(cfg, 300, lambda i: greedy_solve(i, W4), rng, state=state):
        days.append((len(inst.patients), sum(p.is_placeholder for p in inst.patients),
                     min((p.d_min for p in inst.patients if p.is_placeholder), default=99),
                     validate_solution(inst, sol).ok))
    return cfg, state, days


def test_fixed_grid_within_capacity(long_run):
    cfg, state, _ = long_run
    assert (state.fixed <= np.asarray(cfg.lengths)[None, None, :]).all()


def test_fixed_minutes_conserved(long_run):
    cfg, state, _ = long_run
    booked = sum(m for p, s in state.fixed_patients.values() for _, m in s.billed(cfg.protocol_map[p.protocol]))
    assert booked == state.fixed.sum()


def test_daily_schedules_valid_and_placeholders_in_future(long_run):
    _, _, days = long_run
    assert all(ok for *_, ok in days)
    # relative day 1 is the day after the snapshot; placeholders arrive from then on
    assert all(first >= 2 for _, _, first, _ in days)


def test_snapshot_sizes_low_hundreds(long_run):
    _, _, days = long_run
    sizes = [n for n, *_ in days[49:]]
    assert 100 <= min(sizes) and max(sizes) < 400


def test_snapshot_days():
    days = snapshot_days(np.random.default_rng(0))
    assert len(days) == 20 == len(set(days))
    assert days == sorted(days) and 50 <= days[0] and days[-1] <= 300


def test_tiny_instances_are_small_and_schedulable():
    for inst in tiny_instances(0, 20):
        assert len(inst.patients) <= 4 and inst.park.machine_count <= 2
        assert inst.time.days <= 10 and inst.time.windows == 2
        assert validate_solution(inst, greedy_solve(inst, W4)).ok
