"""Mitigation policies against counting and Monte Carlo oracles."""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rhsim.dram import DramConfig, RowMapping
from rhsim.mitigation import (FIXED_POINT_MECHANISMS, IdealRefresh, IncreasedRefresh,
                              InfeasibleTuning, MrLoc, Para, ProHit, Twice,
                              UnsupportedConfiguration, build_policy, increased_refresh_window,
                              para_failure_probability, para_tune, twice_thresholds)

CFG = DramConfig()
ROWS, BANKS = CFG.rows_per_bank, CFG.num_banks


# -- PARA ------------------------------------------------------------------

def test_para_tune_meets_target():
    for hc in (200_000, 32_000, 4_800, 2_000, 128):
        p = para_tune(hc)
        attempts = 3600 / (hc * 50e-9)
        assert para_failure_probability(p, hc) * attempts == pytest.approx(1e-15, rel=1e-6)


def test_para_tune_monotone_and_infeasible():
    hcs = [200_000, 100_000, 50_000, 16_000, 4_800, 1_024, 128]
    ps = [para_tune(h) for h in hcs]
    assert ps == sorted(ps)
    with pytest.raises(InfeasibleTuning):
        para_tune(64)
    # fewer attempts than the tolerated failures: no refresh needed
    assert para_tune(1000, ber_target=0.9, period_s=500 * 50e-9) == 0.0


def test_para_directive_rate_binomial():
    # 1e6 ACTs at p = 0.01 -> 1e4 expected directives (two neighbours at p/2 each)
    para = Para(ROWS, 0.01, seed=5)
    n = sum(len(para.on_activate(0, 1000, t)) for t in range(1_000_000))
    assert abs(n - 10_000) < 4 * math.sqrt(10_000)


def test_para_unsplit_refreshes_both_neighbours():
    para = Para(ROWS, 1.0, split=False)
    for t in range(100):
        assert sorted(d.row for d in para.on_activate(0, 500, t)) == [499, 501]


def test_para_survival_matches_formula():
    # a trial fails once the victim accrues hc un-refreshed adjacent activations
    hc, p = 64, 0.2
    para = Para(ROWS, p, seed=1)
    trials, fails = 20_000, 0
    for _ in range(trials):
        exposure = 0
        for i in range(hc):
            exposure += 1
            if exposure >= hc:
                fails += 1
                break
            if any(d.row == 501 for d in para.on_activate(0, 500 if i % 2 else 502, i)):
                exposure = 0
    expect = para_failure_probability(p, hc)
    assert expect == pytest.approx((1 - p / 2) ** (hc - 1))
    assert abs(fails / trials - expect) < 4 * math.sqrt(expect / trials)


# -- TWiCe -----------------------------------------------------------------

def test_twice_thresholds():
    t_rh, prune = twice_thresholds(200_000)
    assert t_rh == 50_000 and isinstance(t_rh, int)
    assert prune == pytest.approx(50_000 / 8192)
    assert twice_thresholds(32_000)[0] == 8000
    with pytest.raises(UnsupportedConfiguration):
        twice_thresholds(4_800)
    assert twice_thresholds(128, ideal=True)[0] == 32


def test_twice_counting_oracle():
    tw = Twice(ROWS, BANKS, 32_000)
    out = [t for t in range(40_000) if tw.on_activate(0, 700, t)]
    # each neighbour's entry fires on the (t_RH+1)-th activation, then resets
    assert out[0] == tw.t_rh and out[1] == 2 * (tw.t_rh + 1) - 1


def test_twice_pruning_and_ref_drop():
    tw = Twice(ROWS, BANKS, 200_000)
    tw.on_activate(0, 10, 0)
    assert tw.occupancy() == 2
    tw.on_refresh(0, range(0, 2))
    assert tw.occupancy() == 0  # one activation is below the ~6.1 per-REF rate
    for t in range(20):
        tw.on_activate(1, 10, t)
    tw.on_refresh(0, range(11, 12))
    assert set(tw.tables[1]) == {9}
    # at a tiny pruning rate a single activation survives
    ti = Twice(ROWS, BANKS, 128, ideal=True)
    ti.on_activate(0, 10, 0)
    ti.on_refresh(0, range(0, 2))
    assert ti.occupancy() == 2


# -- Ideal ------------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(2, 5000), st.integers(0, 30_000))
def test_ideal_minimal(hc, H):
    ideal = IdealRefresh(ROWS, BANKS, hc)
    got = {}
    for t in range(H):
        for d in ideal.on_activate(3, 100, t):
            got[d.row] = got.get(d.row, 0) + 1
    expect = H // (hc - 1) if hc > 2 else H
    assert got.get(99, 0) == expect and got.get(101, 0) == expect


def test_ideal_ref_resets():
    ideal = IdealRefresh(ROWS, BANKS, 10)
    for t in range(8):
        ideal.on_activate(0, 100, t)
    ideal.on_refresh(0, range(100, 102))
    # only row 101 was refreshed; row 99 reaches hc - 1 on the next hammer
    assert [d.row for d in ideal.on_activate(0, 100, 9)] == [99]
    assert ideal.counters[101] == 1


# -- ProHIT / MRLoc ------------------------------------------------------------

def _attack_trials(make, hc=2000, trials=300):
    fails = 0
    refi = CFG.t_refi_cycles // CFG.t_rc_cycles
    rng = random.Random(0)
    for s in range(trials):
        pol = make(s)
        phase = rng.randrange(refi)
        refreshed = False
        for i in range(hc):
            ds = pol.on_activate(0, 500 if i % 2 else 502, i * CFG.t_rc_cycles)
            if (i + phase) % refi == 0:
                ds = ds + pol.on_refresh(i, range(0))
            if any(d.row == 501 for d in ds):
                refreshed = True
                break
        fails += not refreshed
    return fails


def test_prohit_protects_hammered_victim():
    # 300 trials against a 1e-3 target: more than 3 failures is p < 0.001
    assert _attack_trials(lambda s: ProHit(ROWS, BANKS, seed=s)) <= 3


def test_mrloc_protects_hammered_victim():
    horizon = 8 * CFG.t_rc_cycles
    assert _attack_trials(lambda s: MrLoc(ROWS, BANKS, horizon=horizon, seed=s)) <= 3


def test_mrloc_probability_linear():
    m = MrLoc(ROWS, BANKS, p_max=0.05, p_min=0.01, horizon=100)
    assert m.probability(0) == pytest.approx(0.05) and m.probability(100) == pytest.approx(0.01)
    assert m.probability(50) == pytest.approx(0.03) and m.probability(10_000) == pytest.approx(0.01)


def test_prohit_table_bounds():
    ph = ProHit(ROWS, BANKS, seed=2, p_i=1.0)
    for t in range(500):
        ph.on_activate(0, random.Random(t).randrange(1, ROWS - 1), t)
        assert len(ph.hot[0]) <= 4 and len(ph.cold[0]) <= 4


# -- Increased refresh and the factory ------------------------------------------

def test_increased_refresh():
    w = increased_refresh_window(32_000, 50)
    assert w.t_refw_ms == pytest.approx(1.6) and w.supported
    assert not increased_refresh_window(16_000).supported
    pol = IncreasedRefresh(ROWS, 64_000, CFG)
    assert pol.t_refw_ms == pytest.approx(3.2)
    assert pol.refresh_interval_cycles(CFG) == int(3.2e6 / 8192 * 1.2)
    with pytest.raises(UnsupportedConfiguration):
        IncreasedRefresh(ROWS, 16_000, CFG)


def test_build_policy_fixed_points():
    for mech, hc in FIXED_POINT_MECHANISMS.items():
        assert build_policy(mech, hc, CFG).name == mech
        with pytest.raises(UnsupportedConfiguration):
            build_policy(mech, 4800, CFG)
    with pytest.raises(ValueError):
        build_policy("nope", 100, CFG)


def test_paired_mapping_victims():
    para = Para(1024, 1.0, split=False, mapping=RowMapping.paired(1024))
    assert sorted(d.row for d in para.on_activate(0, 11, 0)) == [8, 12]


def test_policies_deterministic():
    a, b = Para(ROWS, 0.3, seed=9), Para(ROWS, 0.3, seed=9)
    assert [a.on_activate(0, 5, t) for t in range(200)] == [b.on_activate(0, 5, t) for t in range(200)]
