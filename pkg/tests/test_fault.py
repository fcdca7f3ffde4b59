"""Vulnerability profiles and the deterministic disturbance model."""

import numpy as np
import pytest

from rhsim.fault import (GenerationError, HammerRefused, PATTERN_NAMES, ChipState, ExposureTracker,
                         ProfileSpec, bundled_profiles, calibration_hc, fit_power_law,
                         generate_profile, hammer, load_bundled, load_profile)


def test_generation_is_deterministic(small_profile):
    again = generate_profile(small_profile.spec)
    assert again.cells == small_profile.cells


def test_profile_invariants(small_profile):
    thr = small_profile.thresholds()
    assert (thr == small_profile.hc_first_min).sum() == 1
    assert thr.min() == small_profile.hc_first_min
    for dp in PATTERN_NAMES:
        assert not all(dp in c.sensitizing_patterns for c in small_profile.cells)
    assert all(c.offset % 2 == 0 for c in small_profile.cells)


def test_calibration_anchor(small_profile):
    assert calibration_hc(small_profile) == pytest.approx(6 * 4800, rel=1e-6)


def test_power_law_fit():
    hc = np.array([1e4, 2e4, 4e4, 8e4])
    c, k = fit_power_law(hc, 3e-9 * hc ** 2.5)
    assert k == pytest.approx(2.5) and c == pytest.approx(3e-9, rel=1e-6)


def test_bad_specs():
    with pytest.raises(GenerationError):
        generate_profile(ProfileSpec(label="x", hc_first_min=1000, offset_weights={1: 1.0}))
    with pytest.raises(GenerationError):
        generate_profile(ProfileSpec(label="x", hc_first_min=1000, offset_weights={0: 0.5}))
    with pytest.raises(GenerationError):
        # mass growing with distance
        generate_profile(ProfileSpec(label="x", hc_first_min=1000,
                                     offset_weights={0: 0.2, 2: 0.4, -2: 0.4}))


def test_ecc_flag_follows_type(small_profile, ecc_profile):
    assert not small_profile.on_die_ecc and ecc_profile.on_die_ecc


def test_save_load_roundtrip(tmp_path, small_profile):
    for cells in (False, True):
        p = tmp_path / f"p{cells}.json"
        small_profile.save(p, include_cells=cells)
        assert load_profile(p).cells == small_profile.cells


def test_bundled_profiles():
    names = bundled_profiles()
    assert len(names) == 16
    p = load_bundled("LPDDR4-1y/MfrA")
    assert p.hc_first_min == 4800 and p.on_die_ecc and p.worst_pattern == "RS1"
    assert load_bundled("LPDDR4-1x/MfrB").mapping_kind.value == "PairedWordline"


def test_flips_monotone_in_hc(small_profile):
    chip = ChipState(small_profile)
    prev = set()
    for hc in (4000, 4800, 6000, 12000, 30000):
        chip.write_pattern("RS1")
        flips = set()
        for v in range(1, 255):
            chip.refresh_rows([v])
            flips |= {(f.row, f.bit_index) for f in hammer(small_profile, chip, v, hc, "RS1")}
            chip.restore(v)
        assert prev <= flips
        prev = flips
    assert prev


def test_aggressors_never_flip(small_profile):
    chip = ChipState(small_profile)
    chip.write_pattern("RS1")
    for v in range(1, 255):
        for f in hammer(small_profile, chip, v, 30000, "RS1"):
            assert f.row not in (v - 1, v + 1)
        chip.restore(v)


def test_first_flip_at_planted_threshold(small_profile):
    cell = min(small_profile.cells, key=lambda c: c.threshold)
    victim = cell.row - cell.offset
    chip = ChipState(small_profile)
    for dp in cell.sensitizing_patterns:
        chip.write_pattern(dp)
        chip.refresh_rows([victim])
        assert not [f for f in hammer(small_profile, chip, victim, 4799, dp)
                    if (f.row, f.bit_index) == (cell.row, cell.bit_index)]
        chip.restore(victim)
        assert [f for f in hammer(small_profile, chip, victim, 4800, dp)
                if (f.row, f.bit_index) == (cell.row, cell.bit_index)]
        chip.restore(victim)


def test_core_loop_bound(small_profile):
    chip = ChipState(small_profile)
    chip.write_pattern("RS1")
    with pytest.raises(HammerRefused):
        chip.hammer_loop([9, 11], chip.max_hc() + 1)


def test_exposure_tracker():
    t = ExposureTracker(16)
    for _ in range(5):
        t.activate(0, 4)
        t.activate(0, 6)
    assert t.exposure(0, 5) == 10 and t.exposure(0, 3) == 5
    t.refresh(0, 5)
    assert t.exposure(0, 5) == 0 and t.max_exposure == 10
    t.activate(0, 3)  # activating a row restores its own charge
    assert t.exposure(0, 3) == 0
