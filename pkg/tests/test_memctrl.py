"""Memory controller timing, refresh cadence and overhead accounting."""

import pytest
from hypothesis import given, settings, strategies as st

from rhsim.dram import CommandKind, DramConfig
from rhsim.fault import ExposureTracker
from rhsim.memctrl import AddressMap, MemoryController, Request, RequestKind
from rhsim.mitigation import IdealRefresh, IncreasedRefresh, Para

CFG = DramConfig()


def test_one_activation_per_trc():
    mc = MemoryController(CFG, refresh=False, log_commands=True)
    mc.run_activation_stream(0, [10, 12] * 50)
    acts = [c.issue_cycle for c in mc.log if c.kind is CommandKind.ACT]
    assert len(acts) == 100
    assert min(b - a for a, b in zip(acts, acts[1:])) >= CFG.t_rc_cycles


def test_para_p1_overhead_two_thirds():
    # every ACT (one t_rc) triggers two mitigation refreshes (two t_rc)
    mc = MemoryController(CFG, Para(CFG.rows_per_bank, 1.0, split=False), refresh=False)
    mc.run_activation_stream(0, [100, 300] * 200)
    mc.drain()
    m = mc.metrics()
    assert m["mitigation_ref"] == 800
    assert m["bandwidth_overhead"] == pytest.approx(2 / 3)


def test_no_policy_no_overhead():
    mc = MemoryController(CFG, refresh=True)
    mc.run_activation_stream(0, [100, 300] * 2000)
    m = mc.metrics()
    assert m["bandwidth_overhead"] == 0.0 and m["mitigation_ref"] == 0


def test_ref_cadence():
    mc = MemoryController(CFG, log_commands=True)
    mc.run_until(20 * CFG.t_refi_cycles + 1)
    refs = [c.issue_cycle for c in mc.log if c.kind is CommandKind.REF]
    assert len(refs) == 20
    assert refs == [CFG.t_refi_cycles * (i + 1) for i in range(20)]


def test_increased_refresh_shortens_interval():
    pol = IncreasedRefresh(CFG.rows_per_bank, 64_000, CFG)
    mc = MemoryController(CFG, pol)
    mc.run_until(CFG.t_refi_cycles * 10)
    assert mc.counts[CommandKind.REF] == 200  # 64 ms -> 3.2 ms is 20x the rate
    assert mc.metrics()["bandwidth_overhead"] == pytest.approx(1 - 1 / 20, rel=1e-3)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(AddressMap.SCHEMES), st.integers(0, CFG.capacity_bytes - 1))
def test_address_map_roundtrip(scheme, addr):
    am = AddressMap(CFG, scheme)
    bank, row, col = am.decode(addr)
    assert 0 <= bank < CFG.num_banks and 0 <= row < CFG.rows_per_bank
    assert am.encode(bank, row, col) == addr


def test_address_map_rejects_out_of_range():
    with pytest.raises(IndexError):
        AddressMap(CFG).decode(CFG.capacity_bytes)
    with pytest.raises(ValueError):
        AddressMap(CFG, "bogus")


def test_reads_never_served_before_arrival():
    done = []
    mc = MemoryController(CFG, on_complete=lambda r, t: done.append((r, t)) and False)
    am = mc.address_map
    for i in range(40):
        r = mc.make_request(RequestKind.READ, am.encode(i % 4, i * 7, 0), arrival=i * 500)
        assert mc.enqueue(r)
    mc.drain()
    assert len(done) == 40
    for r, t in done:
        assert t >= r.arrival + CFG.t_cl_cycles


def test_row_hits_preferred():
    mc = MemoryController(CFG, log_commands=True, refresh=False)
    am = mc.address_map
    for row in (5, 9, 5, 5):
        mc.enqueue(mc.make_request(RequestKind.READ, am.encode(0, row, 64), arrival=0))
    mc.drain()
    acts = [c.row for c in mc.log if c.kind is CommandKind.ACT]
    assert acts == [5, 9]  # the three row-5 reads share one activation


def test_write_queue_backpressure_and_drain():
    mc = MemoryController(CFG, queue_size=8, write_high=6, write_low=2)
    am = mc.address_map
    ok = [mc.enqueue(mc.make_request(RequestKind.WRITE, am.encode(0, i, 0), 0)) for i in range(10)]
    assert ok == [True] * 8 + [False] * 2
    assert mc.draining
    mc.drain()
    assert mc.n_writes == 0 and not mc.draining and mc.served == 8


def test_single_channel_only():
    with pytest.raises(ValueError):
        MemoryController(DramConfig(channels=2))


def test_ideal_keeps_exposure_below_threshold():
    hc = 300
    tr = ExposureTracker(CFG.rows_per_bank)
    mc = MemoryController(CFG, IdealRefresh(CFG.rows_per_bank, CFG.num_banks, hc), tracker=tr)
    mc.run_activation_stream(2, [1000, 1002] * 20_000)
    assert tr.max_exposure == hc - 1


def test_no_mitigation_exposure_grows():
    tr = ExposureTracker(CFG.rows_per_bank)
    mc = MemoryController(CFG, tracker=tr, refresh=False)
    mc.run_activation_stream(2, [1000, 1002] * 500)
    assert tr.exposure(2, 1001) == 1000


def test_mitigation_ref_closes_row_first():
    mc = MemoryController(CFG, Para(CFG.rows_per_bank, 1.0, split=False), refresh=False,
                          log_commands=True)
    mc.run_activation_stream(0, [50])
    mc.drain()
    kinds = [c.kind for c in mc.log]
    assert kinds[:2] == [CommandKind.ACT, CommandKind.PRE]
    assert kinds.count(CommandKind.MITIGATION_REF) == 2
