"""Characterization analyses recover planted profile parameters."""

import pytest

from rhsim import characterize as ch
from rhsim.dram import MappingKind, RowMapping
from rhsim.fault import (ChipState, HammerRefused, VulnerabilityProfile, VulnerableCell,
                         generate_profile, load_bundled)

from conftest import dense_spec


def planted(cells, dram_type="DDR4", rows=64, mapping="Identity"):
    cells = [VulnerableCell(r, b, t, frozenset(p), o) for r, b, t, p, o in cells]
    return VulnerabilityProfile("planted", dram_type, min(c.threshold for c in cells), 1e-20, 4.0,
                                {0: 1.0}, cells, dram_type == "LPDDR4", mapping, rows=rows)


def test_planted_threshold_sweep():
    chip = ChipState(planted([(7, 3, 5000, {"RS0"}, 0)]))
    db = ch.run_characterization(chip, ["RS0"], [4900, 5100], rows=range(1, 63))
    assert {(r.hc, r.row, r.bit_index) for r in db.records()} == {(5100, 7, 3)}
    assert len(ch.run_characterization(chip, ["RS1"], [5100], rows=range(1, 63))) == 0


def test_characterization_repeatable(small_profile):
    chip = ChipState(small_profile)
    a = ch.run_characterization(chip, ["RS1"], [20_000], rows=range(1, 40))
    b = ch.run_characterization(chip, ["RS1"], [20_000], rows=range(1, 40))
    assert a.records() == b.records() and len(a) > 0


def test_core_loop_bound_refused(small_profile):
    chip = ChipState(small_profile)
    with pytest.raises(HammerRefused):
        ch.run_characterization(chip, ["RS1"], [chip.max_hc() + 1], rows=[5])


def test_hygiene_on_command_log(small_profile):
    chip = ChipState(small_profile)
    ch.run_characterization(chip, ["RS1", "CH0"], [10_000, 30_000], rows=range(1, 20))
    ch.check_hygiene(chip.log)
    assert not any(e[0] == "REF" for e in chip.log)
    with pytest.raises(AssertionError):
        ch.check_hygiene([("HAMMER", (1, 3), 10, 1.0), ("READ", 2), ("RESTORE", 2)])
    with pytest.raises(AssertionError):
        ch.check_hygiene([("REFRESH", 2), ("HAMMER", (1, 3), 10, 4e7), ("READ", 2), ("RESTORE", 2)])


def test_coverage_planted_split():
    cells = [(10 + i, i, 5000, {"RS0"}, 0) for i in range(6)] + \
            [(30 + i, i, 5000, {"CH0"}, 0) for i in range(4)]
    chip = ChipState(planted(cells))
    db = ch.run_characterization(chip, ["RS0", "CH0"], [6000], rows=range(1, 63))
    assert ch.coverage(db, "RS0") == pytest.approx(0.6)
    assert ch.coverage(db, "CH0") == pytest.approx(0.4)
    with pytest.raises(ValueError):
        ch.coverage(ch.FlipDatabase(), "RS0")


def test_no_single_pattern_full_coverage(small_profile):
    chip = ChipState(small_profile)
    db = ch.run_characterization(chip, hc_sweep=[25_000], rows=range(1, 120))
    covs = {dp: ch.coverage(db, dp) for dp in ch.PATTERN_NAMES}
    assert max(covs.values()) < 1.0
    assert max(covs, key=covs.get) == "RS1"


def test_find_hc_first():
    chip = ChipState(planted([(20, 0, 4800, {"RS0"}, 0), (40, 9, 9000, {"RS0"}, 2)]))
    r = ch.find_hc_first(chip, rows=range(1, 63), step=100)
    assert r.outcome is ch.Outcome.FOUND and 4800 <= r.hc < 4900
    assert ch.find_hc_first(chip, rows=range(1, 63), step=1).hc == 4800
    assert ch.find_hc_first(chip, rows=20, step=1).hc == 4800
    strong = ChipState(planted([(20, 0, 200_000, {"RS0"}, 0)]))
    assert ch.find_hc_first(strong, step=1000).outcome is ch.Outcome.NOT_ROWHAMMERABLE
    with pytest.raises(ValueError):
        ch.find_hc_first(chip, step=0)


def test_find_hc_first_bundled():
    prof = load_bundled("DDR4-new/MfrA")
    r = ch.find_hc_first(ChipState(prof), step=100)
    assert prof.hc_first_min <= r.hc < prof.hc_first_min + 100


def test_hc_nth_word():
    cells = [(20, 3, 10_000, {"RS0"}, 0), (20, 40, 25_000, {"RS0"}, 0), (30, 70, 12_000, {"RS0"}, 0)]
    chip = ChipState(planted(cells))
    r1 = ch.hc_nth_word(chip, 1, step=100)
    r2 = ch.hc_nth_word(chip, 2, step=100)
    assert r1.hc == 10_000 and r2.hc == 25_000 and r2.multiplier == pytest.approx(2.5)
    r3 = ch.hc_nth_word(chip, 3, step=1000, previous=r2.hc)
    assert r3.hc is None and r3.outcome is ch.Outcome.UNREACHABLE


def test_spatial_histogram_planted():
    cells = [(20, 0, 5000, {"RS0"}, 2), (30, 0, 5000, {"RS0"}, 2), (40, 0, 5000, {"RS0"}, -2)]
    chip = ChipState(planted(cells))
    # test only the planted victims: a cell coupled to one aggressor also flips
    # when its own row is the victim, which would land at offset 0
    db = ch.run_characterization(chip, ["RS0"], [6000], rows=[18, 28, 42])
    assert ch.spatial_histogram(db) == {-2: pytest.approx(1 / 3), 2: pytest.approx(2 / 3)}


def test_spatial_histogram_lpddr4_1y():
    prof = load_bundled("LPDDR4-1y/MfrA")
    chip = ChipState(prof)
    db = ch.run_characterization(chip, [prof.worst_pattern], [150_000], rows=range(8, 1000))
    assert len(db) > 1000
    h = ch.spatial_histogram(db, chip.mapping)
    assert sum(h.values()) == pytest.approx(1.0)
    assert all(o % 2 == 0 for o in h) and h.get(-1, 0) == h.get(1, 0) == 0
    assert h.get(-6, 0) > 0
    by_dist = {}
    for o, f in h.items():
        by_dist[abs(o)] = max(by_dist.get(abs(o), 0), f)
    dists = sorted(by_dist)
    assert all(by_dist[a] >= by_dist[b] for a, b in zip(dists, dists[1:]))


def test_monotonic_fraction(small_profile, ecc_profile):
    sweep = range(25_000, 150_001, 5_000)
    assert ch.monotonic_fraction(ChipState(small_profile), sweep, rows=range(1, 100)) == 100.0
    single = ChipState(planted([(20, 0, 30_000, {"RS0"}, 0)]))
    assert ch.monotonic_fraction(single, sweep, dp="RS0") == 100.0
    assert ch.monotonic_fraction(ChipState(ecc_profile), sweep, rows=range(1, 100)) < 100.0


@pytest.mark.parametrize("kind", ["Identity", "PairedWordline", "Permuted"])
def test_reverse_engineer_mapping(kind):
    prof = generate_profile(dense_spec(kind))
    chip = ChipState(prof)
    hyp = ch.reverse_engineer_mapping(chip)
    assert hyp.kind is MappingKind(kind)
    assert hyp.agreement(prof.mapping()) >= 0.99
    if kind == "Permuted":
        m = prof.mapping()
        truth = sorted(range(prof.rows), key=m.physical)
        assert hyp.order in (truth, truth[::-1])


def test_true_neighbors():
    assert ch.true_neighbors(RowMapping.identity(10), 0) == (1,)
    assert ch.true_neighbors(RowMapping.paired(10), 4) == (2, 3, 6, 7)


def test_flip_database_csv(tmp_path, small_profile):
    chip = ChipState(small_profile)
    db = ch.run_characterization(chip, ["RS1"], [30_000], rows=range(1, 30))
    db2 = ch.run_characterization(chip, ["CH0"], [30_000], rows=range(1, 30))
    assert db.merge(db2).entries == db2.merge(db).entries
    db.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].startswith("pattern,hc,row,bit,iteration") and len(lines) == len(db) + 1


def test_profiling_time_estimate():
    t = ch.profiling_time_estimate(8 << 30, 8 << 10, 0.064)
    assert t / 3600 == pytest.approx(18.64, abs=0.01)
    assert ch.profiling_time_estimate(1, 1, 5.0) == 5.0
    assert ch.profiling_time_estimate(2 << 30, 8 << 10, 0.064) == 2 * ch.profiling_time_estimate(1 << 30, 8 << 10, 0.064)
    with pytest.raises(ValueError):
        ch.profiling_time_estimate(0, 1, 1)
