"""Timing arithmetic, row mappings, refresh batches and the bank protocol."""

import pytest
from hypothesis import given, settings, strategies as st

from rhsim.dram import (BankState, Command, CommandKind, DramConfig, MappingKind,
                        ProtocolViolation, RowMapping, adjacent_rows, apply, ref_batch_rows,
                        refresh_due, timing_allows)


def test_cycle_conversion(ddr4):
    assert ddr4.t_rc_cycles == 60
    assert ddr4.t_refi_cycles == 9375
    assert ddr4.refs_per_window == 8192
    assert ddr4.rows_per_ref == 2
    assert ddr4.capacity_bytes == 16 * 16384 * 8192


def test_invalid_config():
    with pytest.raises(ValueError):
        DramConfig(rows_per_bank=1)
    with pytest.raises(ValueError):
        DramConfig(t_rc=-1)


def test_refresh_batches_cover_every_row_once(ddr4):
    seen = []
    for k in range(ddr4.refs_per_window):
        seen.extend(ref_batch_rows(ddr4, k))
    assert sorted(seen) == list(range(ddr4.rows_per_bank))
    # the schedule repeats every window
    assert ref_batch_rows(ddr4, 5) == ref_batch_rows(ddr4, 5 + ddr4.refs_per_window)


def test_refresh_due(ddr4):
    assert not refresh_due(ddr4, 9374, 0)
    assert refresh_due(ddr4, 9375, 0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["Identity", "PairedWordline", "Permuted"]), st.integers(0, 100))
def test_mapping_is_bijective(kind, seed):
    m = RowMapping(MappingKind(kind), 64, seed)
    pairs = {(m.physical(r), m.half(r)) for r in range(64)}
    assert len(pairs) == 64
    for r in range(64):
        assert m.logical(m.physical(r), m.half(r)) == r


def test_paired_neighbours():
    m = RowMapping.paired(16)
    assert m.physical(6) == m.physical(7) == 3
    # one activation opens the whole wordline; the even row stands for it
    adj = adjacent_rows(m, 6, 1)
    assert sorted(r for _, r in adj) == [4, 8]


def test_bank_protocol(ddr4):
    st_ = BankState(ddr4)
    act = Command(CommandKind.ACT, 0, 10, 0)
    apply(st_, act, 0)
    assert st_.open_row == 10
    with pytest.raises(ProtocolViolation):
        apply(st_, Command(CommandKind.ACT, 0, 11, 1), 1)  # row still open
    assert not timing_allows(st_, Command(CommandKind.RD, 0, 10, 0), ddr4.t_rcd_cycles - 1)
    apply(st_, Command(CommandKind.RD, 0, 10, 0), ddr4.t_rcd_cycles)
    apply(st_, Command(CommandKind.PRE, 0, 10, 0), ddr4.t_ras_cycles)
    # next ACT waits for both t_rc and t_rp
    t = max(ddr4.t_rc_cycles, ddr4.t_ras_cycles + ddr4.t_rp_cycles)
    assert not timing_allows(st_, Command(CommandKind.ACT, 0, 11, 0), t - 1)
    apply(st_, Command(CommandKind.ACT, 0, 11, 0), t)
    assert st_.last_refresh_cycle[11] == t
