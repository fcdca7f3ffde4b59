"""
Traces, synthetic workload and attack generators, a shared LLC, and the
trace-driven multi-core front end that drives the memory controller.

Core model: instructions issue in order, ``issue_width`` per CPU cycle, into a
``window``-entry instruction window.  Non-memory instructions and LLC hits
complete immediately; an LLC read miss completes when the controller returns
its data, and an instruction cannot issue while a miss ``window``
instructions older is still outstanding.  Writes never block the core.
Cores stop issuing once they have retired their instruction target.
"""

from __future__ import annotations

import enum
import gzip
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .dram import DramConfig, RowMapping, adjacent_rows
from .memctrl import INF, AddressMap, MemoryController, RequestKind
from .mitigation import MitigationPolicy

LINE = 64
CPU_FREQ_MHZ = 4000


class TraceError(ValueError):
    """A trace cannot be generated or parsed."""


class TraceRecord(NamedTuple):
    non_mem_instructions: int
    is_write: bool
    address: int


@dataclass
class Trace:
    """Column-oriented trace; record ``i`` is ``(gaps[i], writes[i], addrs[i])``."""

    gaps: np.ndarray
    writes: np.ndarray
    addrs: np.ndarray
    name: str = "trace"
    mpki_target: Optional[float] = None
    #: every access skips the LLC, as an attacker flushing its lines would
    bypass_llc: bool = False

    def __post_init__(self):
        self.gaps = np.asarray(self.gaps, dtype=np.int64)
        self.writes = np.asarray(self.writes, dtype=bool)
        self.addrs = np.asarray(self.addrs, dtype=np.int64)
        if not len(self.gaps) == len(self.writes) == len(self.addrs):
            raise TraceError("trace columns differ in length")
        if len(self.gaps) and self.gaps.min() < 0:
            raise TraceError("non_mem_instructions must be >= 0")

    def __len__(self):
        return len(self.gaps)

    def __iter__(self):
        for g, w, a in zip(self.gaps.tolist(), self.writes.tolist(), self.addrs.tolist()):
            yield TraceRecord(g, w, a)

    @property
    def instructions(self) -> int:
        return int(self.gaps.sum()) + len(self)

    @classmethod
    def from_records(cls, records: Sequence[TraceRecord], **kw) -> "Trace":
        if not records:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), **kw)
        g, w, a = zip(*records)
        return cls(np.array(g), np.array(w), np.array(a), **kw)


def write_trace(trace: Trace, path) -> None:
    """``<non_mem_insts> R|W <hex address>`` per line; gzip when the name ends in .gz.

    A ``# bypass_llc`` header marks traces whose accesses skip the LLC.
    """
    path = Path(path)
    lines = [f"{g} {'W' if w else 'R'} {a:#x}\n" for g, w, a in trace]
    if trace.bypass_llc:
        lines.insert(0, "# bypass_llc\n")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt") as f:
        f.writelines(lines)


def read_trace(path, name: Optional[str] = None) -> Trace:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    gaps, writes, addrs = [], [], []
    bypass = False
    with opener(path, "rt") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if line == "# bypass_llc":
                bypass = True
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[1] not in ("R", "W"):
                raise TraceError(f"{path}:{lineno}: expected '<n> R|W <addr>'")
            gaps.append(int(parts[0]))
            writes.append(parts[1] == "W")
            addrs.append(int(parts[2], 16))
    return Trace(np.array(gaps, dtype=np.int64), np.array(writes, dtype=bool),
                 np.array(addrs, dtype=np.int64), name=name or path.stem, bypass_llc=bypass)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

class AttackKind(str, enum.Enum):
    DOUBLE_SIDED = "double_sided"
    SINGLE_SIDED = "single_sided"
    ROTATING = "rotating"


def attack_rows(kind: AttackKind, victim: int, hammers: int, rows_per_bank: int,
                mapping: Optional[RowMapping] = None, upper: bool = False,
                rotate: int = 1) -> List[int]:
    """Logical row sequence of an attack on ``victim``.

    ``rotating`` hammers ``rotate`` victims spaced three rows apart, one
    double-sided hammer each in turn, ``hammers`` rounds in total.
    """
    kind = AttackKind(kind)
    mapping = mapping or RowMapping.identity(rows_per_bank)
    if kind is AttackKind.ROTATING:
        seq = []
        victims = [victim + 3 * i for i in range(rotate)]
        pairs = [attack_rows(AttackKind.DOUBLE_SIDED, v, 1, rows_per_bank, mapping) for v in victims]
        for _ in range(hammers):
            for p in pairs:
                seq.extend(p)
        return seq
    adj = dict(adjacent_rows(mapping, victim, 1))
    if kind is AttackKind.DOUBLE_SIDED:
        if -1 not in adj or 1 not in adj:
            raise TraceError(f"victim {victim} sits at the bank edge; use single_sided")
        return [adj[-1], adj[1]] * hammers
    side = 1 if upper else -1
    if side not in adj:
        side = -side
    return [adj[side]] * hammers


def gen_attack_trace(kind: AttackKind, victim: int, hammers: int, config: DramConfig,
                     bank: int = 0, mapping: Optional[RowMapping] = None, upper: bool = False,
                     rotate: int = 1, address_map: Optional[AddressMap] = None) -> Trace:
    """Memory trace whose every access opens an aggressor row of ``bank``."""
    amap = address_map or AddressMap(config)
    rows = attack_rows(kind, victim, hammers, config.rows_per_bank, mapping, upper, rotate)
    addrs = [amap.encode(bank, r, 0) for r in rows]
    n = len(addrs)
    return Trace(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=bool), np.array(addrs),
                 name=f"attack-{AttackKind(kind).value}-{victim}", bypass_llc=True)


class Pattern(str, enum.Enum):
    RANDOM = "random"  # uniform lines over the footprint
    STREAM = "stream"  # sequential lines through the footprint
    CONFLICT = "conflict"  # a few lines sharing one LLC set and one bank, cycled


HOT_LINES = 64  # small reused working set that stays resident in the LLC
CONFLICT_STRIDE = 2 << 20  # same LLC set (16 MB, 8-way) and same bank, 16 rows apart
CONFLICT_LINES = 12


def gen_random_trace(mpki_target: float, footprint: int, length: int, seed: int = 0,
                     pattern: Pattern = Pattern.RANDOM, llc_bytes: int = 16 << 20,
                     base: int = 0) -> Trace:
    """Synthetic trace of ``length`` instructions with an LLC miss rate near ``mpki_target``.

    Memory instructions go either to a tiny hot set (LLC hits once warm) or
    to the cold ``pattern`` region; the cold share sets the miss rate.
    """
    pattern = Pattern(pattern)
    if not 0 <= mpki_target <= 1000:
        raise TraceError("mpki_target must lie in [0, 1000]")
    if length < 1 or footprint < LINE:
        raise TraceError("length and footprint must be positive")
    misses = mpki_target * length / 1000.0
    if pattern is not Pattern.CONFLICT and footprint <= llc_bytes and misses > footprint // LINE:
        raise TraceError(f"a {footprint}-byte footprint fits the LLC; it cannot sustain "
                         f"{mpki_target} MPKI over {length} instructions")
    rng = np.random.default_rng(seed)
    gap = 3 if mpki_target <= 250 else (1 if mpki_target <= 500 else 0)
    density = 1000.0 / (gap + 1)
    cold_share = mpki_target / density
    n = max(1, length // (gap + 1))
    gaps = np.full(n, gap, dtype=np.int64)
    cold = rng.random(n) < cold_share
    n_cold = int(cold.sum())
    lines = footprint // LINE
    if pattern is Pattern.RANDOM:
        cold_lines = rng.integers(0, lines, size=n_cold)
    elif pattern is Pattern.STREAM:
        cold_lines = (np.arange(n_cold) + int(rng.integers(lines))) % lines
    else:
        cold_lines = (np.arange(n_cold) % CONFLICT_LINES) * (CONFLICT_STRIDE // LINE)
    # hot set sits in the first lines after ``base``; cold region starts after it
    hot_lines = rng.integers(0, HOT_LINES, size=n - n_cold)
    addrs = np.empty(n, dtype=np.int64)
    addrs[cold] = base + (HOT_LINES + cold_lines) * LINE
    addrs[~cold] = base + hot_lines * LINE
    writes = rng.random(n) < 0.25
    return Trace(gaps, writes, addrs, name=f"{pattern.value}-{mpki_target:g}",
                 mpki_target=mpki_target)


# ---------------------------------------------------------------------------
# Shared last-level cache
# ---------------------------------------------------------------------------

class Cache:
    """Set-associative, LRU, write-back, write-allocate without fetch."""

    def __init__(self, size_bytes: int = 16 << 20, ways: int = 8, line: int = LINE):
        self.ways = ways
        self.line = line
        self.n_sets = size_bytes // (ways * line)
        if self.n_sets < 1 or self.n_sets & (self.n_sets - 1):
            raise ValueError("set count must be a power of two")
        self.sets: Dict[int, List[int]] = {}
        self.dirty = set()
        self.hits = self.misses = 0

    def access(self, addr: int, write: bool):
        """Returns ``(hit, writeback_line_address or None)``."""
        ln = addr // self.line
        s = self.sets.get(ln % self.n_sets)
        if s is None:
            s = self.sets[ln % self.n_sets] = []
        wb = None
        if ln in s:
            if s[-1] != ln:
                s.remove(ln)
                s.append(ln)
            self.hits += 1
            hit = True
        else:
            self.misses += 1
            hit = False
            if len(s) >= self.ways:
                victim = s.pop(0)
                if victim in self.dirty:
                    self.dirty.discard(victim)
                    wb = victim * self.line
            s.append(ln)
        if write:
            self.dirty.add(ln)
        return hit, wb


# ---------------------------------------------------------------------------
# Cores and the simulation loop
# ---------------------------------------------------------------------------

class Core:
    __slots__ = ("cid", "gaps", "writes", "addrs", "target", "pos", "icount", "time",
                 "loads", "blocked", "stalled", "finish", "misses", "offset", "timed_from",
                 "timed_misses", "gap_left", "bypass")

    def __init__(self, cid: int, trace: Trace, target: int, offset: int):
        self.cid = cid
        self.gaps = trace.gaps.tolist()
        self.writes = trace.writes.tolist()
        self.addrs = trace.addrs.tolist()
        self.target = target
        self.offset = offset
        self.pos = 0
        self.icount = 0
        self.time = 0.0  # DRAM cycles at which instruction ``icount`` issues
        self.loads: deque = deque()  # (instruction index, request) of outstanding misses
        self.blocked = None  # request the core waits on
        self.stalled = None  # read request refused by a full queue
        self.finish = None
        self.misses = 0
        self.timed_from = 0
        self.timed_misses = 0
        self.gap_left = -1  # remainder of a gap interrupted by a full window; -1 = none
        self.bypass = trace.bypass_llc

    @property
    def done(self) -> bool:
        return self.finish is not None


@dataclass
class CoreResult:
    instructions: int
    cycles: float  # CPU cycles
    ipc: float
    mpki: float


@dataclass
class SimResult:
    cores: List[CoreResult]
    controller: dict
    metadata: dict = field(default_factory=dict)
    #: issued commands, when the controller was asked to log them
    log: Optional[list] = None

    @property
    def ipc(self) -> List[float]:
        return [c.ipc for c in self.cores]


def simulate(traces: Sequence[Trace], config: DramConfig, policy: Optional[MitigationPolicy] = None,
             instructions: Optional[int] = None, warmup: int = 0, issue_width: int = 4,
             window: int = 128, llc_bytes: int = 16 << 20, llc_ways: int = 8,
             cpu_freq_mhz: int = CPU_FREQ_MHZ, core_region: Optional[int] = None,
             controller_kw: Optional[dict] = None, tracker=None) -> SimResult:
    """Run 1-8 traces on a shared LLC and one memory controller.

    Each core's addresses are shifted into its own ``core_region`` of the DRAM
    (capacity / cores by default).  The first ``warmup`` instructions of every
    trace only warm the LLC; timing and MPKI start afterwards.
    """
    if not 1 <= len(traces) <= 8:
        raise ValueError("1 to 8 cores are supported")
    ratio = cpu_freq_mhz / config.clock_freq_mhz  # CPU cycles per DRAM cycle
    rate = issue_width * ratio  # instructions per DRAM cycle
    llc = Cache(llc_bytes, llc_ways)
    ctrl = MemoryController(config, policy, tracker=tracker, **(controller_kw or {}))
    amap = ctrl.address_map
    cap = amap.capacity
    region = core_region if core_region is not None else cap // len(traces)
    cores = []
    for i, t in enumerate(traces):
        target = t.instructions if instructions is None else min(instructions + warmup, t.instructions)
        cores.append(Core(i, t, target, (i * region) % cap))

    for core in cores:
        _warm(core, llc, warmup, cap)

    def all_done() -> bool:
        return all(c.finish is not None for c in cores)

    ready: List = [(0.0, c.cid) for c in cores if not c.done]
    heapq.heapify(ready)
    stalled: List[Core] = []
    backlog: deque = deque()  # writebacks refused by a full write queue

    def on_complete(req, t):
        core = cores[req.core_id]
        if core.blocked is req:
            core.blocked = None
            if t > core.time:
                core.time = float(t)
            heapq.heappush(ready, (core.time, core.cid))
            return True
        if core.finish is None and core.icount >= core.target and _retire(core):
            _finish(core, max(core.time, float(t)))
            return True
        return False

    ctrl.on_complete = on_complete

    def send_write(addr, now):
        req = ctrl.make_request(RequestKind.WRITE, addr, now, -1)
        if not ctrl.enqueue(req):
            backlog.append(req)

    while True:
        if all_done():
            break
        while backlog and ctrl.can_accept(RequestKind.WRITE):
            req = backlog.popleft()
            req.arrival = ctrl.now
            ctrl.enqueue(req)
        if stalled and ctrl.can_accept(RequestKind.READ):
            still = []
            for core in stalled:
                if ctrl.enqueue(core.stalled):
                    core.loads.append((core.icount, core.stalled))
                    core.stalled = None
                    core.time = max(core.time, float(ctrl.now))
                    core.icount += 1
                    core.time += 1.0 / rate
                    core.pos += 1
                    core.gap_left = -1
                    heapq.heappush(ready, (core.time, core.cid))
                else:
                    still.append(core)
            stalled = still
        t_next = ready[0][0] if ready else INF
        if t_next == INF and not stalled and not backlog:
            if all(c.done for c in cores):
                break
            # only outstanding loads remain
            if not ctrl.completions and not ctrl.pending():
                break
        if stalled or backlog:
            # advance the controller one event at a time so freed slots are seen
            sel = ctrl.select()
            nxt = min(sel[0] if sel else INF, ctrl.completions[0][0] if ctrl.completions else INF)
            if nxt < t_next:
                ctrl.run_until(nxt + 1)
                continue
            if nxt == INF and t_next == INF:
                raise RuntimeError("simulation deadlock")
        if ctrl.run_until(t_next):
            continue
        _, cid = heapq.heappop(ready)
        core = cores[cid]
        if core.done or core.blocked is not None:
            continue
        _step(core, llc, ctrl, rate, window, cap, send_write, stalled, ready)

    ctrl.drain()
    for core in cores:
        if core.finish is None:
            last = max((r.done for _, r in core.loads), default=0)
            _finish(core, max(core.time, float(last)))
    results = []
    for core in cores:
        n = min(core.icount, core.target) - core.timed_from
        cyc = max(core.finish, 1e-9) * ratio
        results.append(CoreResult(n, cyc, n / cyc if n else 0.0,
                                  1000.0 * core.timed_misses / n if n else 0.0))
    meta = {"cores": len(cores), "warmup_instructions": warmup, "window": window,
            "issue_width": issue_width, "cpu_freq_mhz": cpu_freq_mhz,
            "warmup_policy": "LLC warmed functionally with mitigation disabled"}
    return SimResult(results, ctrl.metrics(), meta, ctrl.log)


def _warm(core: Core, llc: Cache, warmup: int, cap: int) -> None:
    gaps, writes, addrs = core.gaps, core.writes, core.addrs
    while core.pos < len(gaps) and core.icount + gaps[core.pos] < warmup:
        core.icount += gaps[core.pos] + 1
        if not core.bypass:
            llc.access((addrs[core.pos] + core.offset) % cap, writes[core.pos])
        core.pos += 1
    core.timed_from = core.icount
    if core.pos >= len(gaps) or core.icount >= core.target:
        core.finish = 0.0


def _finish(core: Core, t: float) -> None:
    core.finish = t
    core.timed_misses = core.misses


def _retire(core: Core) -> bool:
    loads = core.loads
    while loads and loads[0][1].done >= 0:
        loads.popleft()
    return not loads


def _step(core: Core, llc: Cache, ctrl: MemoryController, rate: float, window: int,
          cap: int, send_write, stalled: list, ready: list) -> None:
    """Process trace records until the core blocks, stalls, or yields to others."""
    loads = core.loads
    budget = 32
    while budget:
        budget -= 1
        if core.pos >= len(core.gaps) or core.icount >= core.target:
            core.icount = min(core.icount, core.target)
            if _retire(core):
                _finish(core, core.time)
            return  # otherwise resumes when its last load completes

        gap = core.gap_left if core.gap_left >= 0 else core.gaps[core.pos]
        m = core.icount + gap
        while loads and loads[0][1].done >= 0:
            loads.popleft()
        # an attacker fences after each flushed access: one load in flight
        win = 1 if core.bypass else window
        if loads and m - loads[0][0] >= win:
            j, req = loads[0]
            stop = j + win
            if stop > core.icount:
                core.time += (stop - core.icount) / rate
                core.icount = stop
                core.gap_left = m - stop
            core.blocked = req
            return
        core.time += (m - core.icount) / rate
        core.icount = m
        # instruction m is the memory access; it may lie past the target
        if m >= core.target:
            core.icount = core.target
            continue
        addr = (core.addrs[core.pos] + core.offset) % cap
        write = core.writes[core.pos]
        hit, wb = (False, None) if core.bypass else llc.access(addr, write)
        now = int(math.ceil(core.time))
        if wb is not None:
            send_write(wb % cap, now)
        if not hit:
            core.misses += 1
            if not write:
                req = ctrl.make_request(RequestKind.READ, addr, now, core.cid)
                if not ctrl.enqueue(req):
                    core.stalled = req
                    stalled.append(core)
                    return
                loads.append((m, req))
        core.icount = m + 1
        core.time += 1.0 / rate
        core.pos += 1
        core.gap_left = -1
        if not hit or (ready and core.time > ready[0][0]):
            break
    heapq.heappush(ready, (core.time, core.cid))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def weighted_speedup(shared_ipc: Sequence[float], alone_ipc: Sequence[float]) -> float:
    if len(shared_ipc) != len(alone_ipc):
        raise ValueError("per-core IPC lists differ in length")
    if any(a <= 0 for a in alone_ipc):
        raise ValueError("alone IPC must be positive")
    return float(sum(s / a for s, a in zip(shared_ipc, alone_ipc)))


def normalized_performance(ws: float, baseline_ws: float) -> float:
    """Weighted speedup relative to the no-mitigation baseline, in percent."""
    if baseline_ws <= 0:
        raise ValueError("baseline weighted speedup must be positive")
    return 100.0 * ws / baseline_ws


def measured_mpki(trace: Trace, llc_bytes: int = 16 << 20, ways: int = 8, warmup: int = 0) -> float:
    """LLC misses per kilo-instruction of ``trace`` on a private cache (no timing)."""
    llc = Cache(llc_bytes, ways)
    icount = 0
    misses = 0
    for g, w, a in zip(trace.gaps.tolist(), trace.writes.tolist(), trace.addrs.tolist()):
        icount += g + 1
        hit, _ = llc.access(a, w)
        if not hit and icount > warmup:
            misses += 1
    timed = icount - min(warmup, icount)
    return 1000.0 * misses / timed if timed else 0.0
