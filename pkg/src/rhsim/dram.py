"""
DRAM geometry, command timing, refresh batching and row remapping.

All times inside the simulator are DRAM clock cycles at
``DramConfig.clock_freq_mhz``; nanosecond parameters are rounded *up* to whole
cycles so that any security check done in cycles is conservative.
"""

from __future__ import annotations

import enum
import math
from functools import cached_property
from dataclasses import dataclass, field, asdict
from typing import List, NamedTuple, Optional, Tuple

import numpy as np


class DramType(str, enum.Enum):
    DDR3 = "DDR3"
    DDR4 = "DDR4"
    LPDDR4 = "LPDDR4"


#: Default row cycle time per DRAM type (ns).
DEFAULT_T_RC_NS = {
    DramType.DDR3: 52.5,
    DramType.DDR4: 50.0,
    DramType.LPDDR4: 60.0,
}


class ProtocolViolation(RuntimeError):
    """A command was applied although the bank timing state forbids it."""


@dataclass(frozen=True)
class DramConfig:
    """Geometry and timing of one simulated DRAM system.

    Defaults describe a 1-channel, 1-rank DDR4 system with 4 bank groups of
    4 banks and 16k rows per bank, clocked at 1200 MHz (DDR4-2400).
    """

    dram_type: DramType = DramType.DDR4
    t_rc: Optional[float] = None  # ns; None -> per-type default
    t_refw: float = 64.0  # ms
    t_refi: float = 7.8125  # us
    channels: int = 1
    ranks: int = 1
    bank_groups: int = 4
    banks_per_group: int = 4
    rows_per_bank: int = 16384
    row_size_bytes: int = 8192
    clock_freq_mhz: int = 1200
    # column timings (ns); only what the controller needs
    t_rcd: float = 13.32
    t_rp: float = 13.32
    t_cl: float = 13.32
    t_burst: float = 3.33
    #: REF occupancy, in units of t_rc per row it refreshes in each bank
    ref_cost_trc: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dram_type", DramType(self.dram_type))
        if self.t_rc is None:
            object.__setattr__(self, "t_rc", DEFAULT_T_RC_NS[self.dram_type])
        for name in ("channels", "ranks", "bank_groups", "banks_per_group",
                     "rows_per_bank", "row_size_bytes", "clock_freq_mhz"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.rows_per_bank < 2:
            raise ValueError("rows_per_bank must be >= 2")
        if self.t_rc <= 0 or self.t_refw <= 0 or self.t_refi <= 0:
            raise ValueError("timing parameters must be positive")

    # -- unit conversion -------------------------------------------------
    def ns_to_cycles(self, ns: float) -> int:
        # round(…, 9) absorbs float noise such as 50ns*1.2GHz = 60.000000000001
        return int(math.ceil(round(ns * self.clock_freq_mhz / 1000.0, 9)))

    def cycles_to_ns(self, cycles: float) -> float:
        return cycles * 1000.0 / self.clock_freq_mhz

    @cached_property
    def t_rc_cycles(self) -> int:
        return self.ns_to_cycles(self.t_rc)

    @cached_property
    def t_refi_cycles(self) -> int:
        return self.ns_to_cycles(self.t_refi * 1e3)

    @cached_property
    def t_refw_cycles(self) -> int:
        return self.ns_to_cycles(self.t_refw * 1e6)

    @cached_property
    def t_rcd_cycles(self) -> int:
        return self.ns_to_cycles(self.t_rcd)

    @cached_property
    def t_rp_cycles(self) -> int:
        return self.ns_to_cycles(self.t_rp)

    @cached_property
    def t_ras_cycles(self) -> int:
        return max(1, self.t_rc_cycles - self.t_rp_cycles)

    @cached_property
    def t_cl_cycles(self) -> int:
        return self.ns_to_cycles(self.t_cl)

    @cached_property
    def t_burst_cycles(self) -> int:
        return self.ns_to_cycles(self.t_burst)

    @cached_property
    def ref_cycles(self) -> int:
        return int(math.ceil(self.ref_cost_trc * self.rows_per_ref * self.t_rc_cycles))

    @cached_property
    def refs_per_window(self) -> int:
        """Number of REF commands per refresh window (8192 by default)."""
        return int(round(self.t_refw * 1e3 / self.t_refi))

    @cached_property
    def rows_per_ref(self) -> int:
        return -(-self.rows_per_bank // self.refs_per_window)

    @cached_property
    def banks_per_rank(self) -> int:
        return self.bank_groups * self.banks_per_group

    @cached_property
    def num_banks(self) -> int:
        return self.channels * self.ranks * self.banks_per_rank

    @cached_property
    def capacity_bytes(self) -> int:
        return self.num_banks * self.rows_per_bank * self.row_size_bytes

    def bank_index(self, addr: "RowAddress") -> int:
        return (((addr.channel * self.ranks + addr.rank) * self.bank_groups
                 + addr.bank_group) * self.banks_per_group + addr.bank)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dram_type"] = self.dram_type.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DramConfig":
        return cls(**d)


class RowAddress(NamedTuple):
    channel: int
    rank: int
    bank_group: int
    bank: int
    row: int

    def validate(self, config: DramConfig) -> "RowAddress":
        limits = (config.channels, config.ranks, config.bank_groups,
                  config.banks_per_group, config.rows_per_bank)
        for name, value, limit in zip(self._fields, self, limits):
            if not 0 <= value < limit:
                raise IndexError(f"{name}={value} outside [0, {limit})")
        return self


# ---------------------------------------------------------------------------
# Logical -> physical row mapping
# ---------------------------------------------------------------------------

class MappingKind(str, enum.Enum):
    IDENTITY = "Identity"
    PAIRED_WORDLINE = "PairedWordline"
    PERMUTED = "Permuted"


@dataclass(frozen=True)
class RowMapping:
    """Logical (controller-visible) to physical row mapping of one bank.

    ``PairedWordline`` places logical rows 2k and 2k+1 on the same internal
    wordline k.  ``physical`` then returns the wordline and ``half`` tells the
    two rows apart, so ``logical(physical(r), half(r)) == r`` holds for every
    kind.
    """

    kind: MappingKind
    rows: int
    seed: Optional[int] = None
    _fwd: np.ndarray = field(default=None, repr=False, compare=False)
    _inv: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", MappingKind(self.kind))
        if self.rows < 2:
            raise ValueError("rows must be >= 2")
        if self.kind is MappingKind.PAIRED_WORDLINE and self.rows % 2:
            raise ValueError("PairedWordline needs an even row count")
        if self.kind is MappingKind.PERMUTED:
            rng = np.random.default_rng(self.seed)
            fwd = rng.permutation(self.rows)
            inv = np.empty_like(fwd)
            inv[fwd] = np.arange(self.rows)
            fwd.setflags(write=False)
            inv.setflags(write=False)
            object.__setattr__(self, "_fwd", fwd)
            object.__setattr__(self, "_inv", inv)

    @classmethod
    def identity(cls, rows: int) -> "RowMapping":
        return cls(MappingKind.IDENTITY, rows)

    @classmethod
    def paired(cls, rows: int) -> "RowMapping":
        return cls(MappingKind.PAIRED_WORDLINE, rows)

    @classmethod
    def permuted(cls, rows: int, seed: int) -> "RowMapping":
        return cls(MappingKind.PERMUTED, rows, seed)

    @property
    def physical_rows(self) -> int:
        if self.kind is MappingKind.PAIRED_WORDLINE:
            return self.rows // 2
        return self.rows

    def _check(self, row: int) -> None:
        if not 0 <= row < self.rows:
            raise IndexError(f"row {row} outside [0, {self.rows})")

    def physical(self, row: int) -> int:
        self._check(row)
        if self.kind is MappingKind.IDENTITY:
            return row
        if self.kind is MappingKind.PAIRED_WORDLINE:
            return row >> 1
        return int(self._fwd[row])

    def half(self, row: int) -> int:
        return row & 1 if self.kind is MappingKind.PAIRED_WORDLINE else 0

    def logical(self, phys: int, half: int = 0) -> int:
        if not 0 <= phys < self.physical_rows:
            raise IndexError(f"physical row {phys} outside [0, {self.physical_rows})")
        if self.kind is MappingKind.IDENTITY:
            return phys
        if self.kind is MappingKind.PAIRED_WORDLINE:
            return 2 * phys + (half & 1)
        return int(self._inv[phys])

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "rows": self.rows, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "RowMapping":
        return cls(MappingKind(d["kind"]), int(d["rows"]), d.get("seed"))


def adjacent_rows(mapping: RowMapping, row: int, max_distance: int = 1) -> List[Tuple[int, int]]:
    """Logical rows physically within ``max_distance`` of ``row``.

    Returns ``(signed physical offset, logical row)`` pairs sorted by offset.
    Under a paired-wordline mapping the even logical row of each neighbouring
    pair is returned as its representative.
    """
    if max_distance < 1:
        raise ValueError("max_distance must be >= 1")
    phys = mapping.physical(row)
    out = []
    for off in range(-max_distance, max_distance + 1):
        if off == 0:
            continue
        p = phys + off
        if 0 <= p < mapping.physical_rows:
            out.append((off, mapping.logical(p)))
    return out


# ---------------------------------------------------------------------------
# Commands and bank state
# ---------------------------------------------------------------------------

class CommandKind(str, enum.Enum):
    ACT = "ACT"
    PRE = "PRE"
    RD = "RD"
    WR = "WR"
    REF = "REF"
    MITIGATION_REF = "MitigationREF"


class Command(NamedTuple):
    kind: CommandKind
    bank: int = 0  # flat bank index, see DramConfig.bank_index
    row: int = -1  # target row; the batch index for REF
    issue_cycle: int = 0


def ref_batch_rows(config: DramConfig, batch: int) -> range:
    """Rows of every bank refreshed by the REF carrying ``batch``."""
    per = config.rows_per_ref
    k = batch % config.refs_per_window
    return range(min(k * per, config.rows_per_bank), min((k + 1) * per, config.rows_per_bank))


class BankState:
    """Timing and row-buffer state of a single bank."""

    __slots__ = ("config", "open_row", "last_act_cycle", "last_pre_cycle",
                 "last_col_cycle", "busy_until", "last_refresh_cycle", "act_count",
                 "_rc", "_rp", "_rcd", "_ras", "_burst")

    NEVER = -(1 << 60)

    def __init__(self, config: DramConfig):
        self.config = config
        self.open_row: Optional[int] = None
        self.last_act_cycle = self.NEVER
        self.last_pre_cycle = self.NEVER
        self.last_col_cycle = self.NEVER
        self.busy_until = 0
        self.last_refresh_cycle = np.zeros(config.rows_per_bank, dtype=np.int64)
        self.act_count = np.zeros(config.rows_per_bank, dtype=np.int64)
        self._rc, self._rp, self._rcd = config.t_rc_cycles, config.t_rp_cycles, config.t_rcd_cycles
        self._ras, self._burst = config.t_ras_cycles, config.t_burst_cycles

    # earliest cycles at which the next command of each class may issue
    def act_ready(self) -> int:
        return max(self.last_act_cycle + self._rc, self.last_pre_cycle + self._rp, self.busy_until)

    def col_ready(self) -> int:
        return max(self.last_act_cycle + self._rcd, self.busy_until)

    def pre_ready(self) -> int:
        return max(self.last_act_cycle + self._ras, self.last_col_cycle + self._burst,
                   self.busy_until)


def timing_allows(state: BankState, cmd: Command, now: int) -> bool:
    """Pure predicate: may ``cmd`` issue to this bank at cycle ``now``?"""
    k = cmd.kind
    if k is CommandKind.ACT or k is CommandKind.MITIGATION_REF or k is CommandKind.REF:
        return state.open_row is None and now >= state.act_ready()
    if k is CommandKind.RD or k is CommandKind.WR:
        return state.open_row == cmd.row and now >= state.col_ready()
    if k is CommandKind.PRE:
        return state.open_row is not None and now >= state.pre_ready()
    return False


def apply(state: BankState, cmd: Command, now: int) -> BankState:
    """Apply ``cmd`` to ``state`` in place and return it."""
    if not timing_allows(state, cmd, now):
        raise ProtocolViolation(f"{cmd.kind.value} to bank {cmd.bank} row {cmd.row} "
                                f"illegal at cycle {now}")
    k = cmd.kind
    cfg = state.config
    if k is CommandKind.ACT:
        state.open_row = cmd.row
        state.last_act_cycle = now
        state.act_count[cmd.row] += 1
        # an activation restores the charge of the opened row
        state.last_refresh_cycle[cmd.row] = now
    elif k is CommandKind.PRE:
        state.open_row = None
        state.last_pre_cycle = now
    elif k is CommandKind.RD or k is CommandKind.WR:
        state.last_col_cycle = now
    elif k is CommandKind.MITIGATION_REF:
        state.last_refresh_cycle[cmd.row] = now
        # internally an ACT+PRE of the victim: occupies the bank for one t_rc
        state.last_act_cycle = now
        state.busy_until = now + cfg.t_rc_cycles
    elif k is CommandKind.REF:
        rows = ref_batch_rows(cfg, cmd.row)
        state.last_refresh_cycle[rows.start:rows.stop] = now
        state.busy_until = now + cfg.ref_cycles
    return state


def refresh_due(config: DramConfig, now: int, last_ref_cycle: int) -> bool:
    return now - last_ref_cycle >= config.t_refi_cycles
