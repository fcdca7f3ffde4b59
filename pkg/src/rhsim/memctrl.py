"""
FR-FCFS memory controller with baseline refresh and mitigation directives.

The controller is event driven: instead of ticking every DRAM cycle it asks
each bank for the earliest cycle its next command becomes legal and jumps
there.  At most one command issues per cycle (single command bus).

Priority at a given cycle: REF (once due) > mitigation refresh directives >
row-hit column commands > everything else, oldest first within a class.
"""

from __future__ import annotations

import enum
import heapq
from collections import deque
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from .dram import (BankState, Command, CommandKind, DramConfig, apply, ref_batch_rows)
from .fault import ExposureTracker
from .mitigation import IncreasedRefresh, MitigationPolicy, RefreshDirective

INF = float("inf")

ACT, PRE, RD, WR, REF, MREF = (CommandKind.ACT, CommandKind.PRE, CommandKind.RD,
                               CommandKind.WR, CommandKind.REF, CommandKind.MITIGATION_REF)


class RequestKind(str, enum.Enum):
    READ = "read"
    WRITE = "write"
    ACTIVATE = "activate"  # open a row and nothing else; used by attack streams


class Request:
    __slots__ = ("kind", "address", "arrival", "core_id", "bank", "row", "column", "done")

    def __init__(self, kind: RequestKind, address: int, arrival: int, core_id: int = 0,
                 bank: int = 0, row: int = 0, column: int = 0):
        self.kind = kind
        self.address = address
        self.arrival = arrival
        self.core_id = core_id
        self.bank = bank
        self.row = row
        self.column = column
        self.done = -1

    def __repr__(self):
        return (f"Request({self.kind.value}, bank={self.bank}, row={self.row}, "
                f"arrival={self.arrival})")


class AddressMap:
    """Byte address <-> (flat bank, row, column byte) for one channel/rank.

    ``row-interleaved`` (default) is ``row:bank_group:bank:column`` from the
    most to the least significant bits, so consecutive addresses stay in one
    row.  ``line-interleaved`` is ``row:column:bank_group:bank:line`` and
    spreads consecutive cache lines over banks.
    """

    SCHEMES = ("row-interleaved", "line-interleaved")

    def __init__(self, config: DramConfig, scheme: str = "row-interleaved", line_bytes: int = 64):
        if scheme not in self.SCHEMES:
            raise ValueError(f"unknown address scheme {scheme!r}")
        self.scheme = scheme
        self.banks = config.num_banks
        self.rows = config.rows_per_bank
        self.row_bytes = config.row_size_bytes
        self.line = line_bytes
        self.capacity = config.capacity_bytes

    def decode(self, addr: int) -> Tuple[int, int, int]:
        if not 0 <= addr < self.capacity:
            raise IndexError(f"address {addr:#x} outside capacity {self.capacity:#x}")
        if self.scheme == "row-interleaved":
            col = addr % self.row_bytes
            rest = addr // self.row_bytes
            return rest % self.banks, rest // self.banks, col
        off = addr % self.line
        rest = addr // self.line
        bank = rest % self.banks
        rest //= self.banks
        lines_per_row = self.row_bytes // self.line
        col = (rest % lines_per_row) * self.line + off
        return bank, rest // lines_per_row, col

    def encode(self, bank: int, row: int, col: int) -> int:
        if self.scheme == "row-interleaved":
            return (row * self.banks + bank) * self.row_bytes + col
        lines_per_row = self.row_bytes // self.line
        line_idx, off = divmod(col, self.line)
        return ((row * lines_per_row + line_idx) * self.banks + bank) * self.line + off


class MemoryController:
    """One channel, one rank.  Feed it requests, then call :meth:`run_until`."""

    def __init__(self, config: DramConfig, policy: Optional[MitigationPolicy] = None, *,
                 tracker: Optional[ExposureTracker] = None, refresh: bool = True,
                 mitigation_priority: bool = True, queue_size: int = 64,
                 write_high: int = 48, write_low: int = 16,
                 address_map: Optional[AddressMap] = None,
                 on_complete: Optional[Callable[[Request, int], bool]] = None,
                 log_commands: bool = False):
        if config.channels != 1 or config.ranks != 1:
            raise ValueError("the controller models a single channel and rank")
        self.config = config
        self.policy = policy or MitigationPolicy(config.rows_per_bank)
        self.tracker = tracker
        self.refresh = refresh
        self.mitigation_priority = mitigation_priority
        self.queue_size = queue_size
        self.write_high, self.write_low = write_high, write_low
        self.address_map = address_map or AddressMap(config)
        self.on_complete = on_complete
        nb = config.num_banks
        self.nb = nb
        self.banks = [BankState(config) for _ in range(nb)]
        self.reads: List[List[Request]] = [[] for _ in range(nb)]
        self.writes: List[List[Request]] = [[] for _ in range(nb)]
        self.acts: List[List[Request]] = [[] for _ in range(nb)]
        self.dirq: List[deque] = [deque() for _ in range(nb)]
        self.dir_rows: List[set] = [set() for _ in range(nb)]
        self.n_reads = self.n_writes = 0
        self.draining = False
        self.active = set()  # banks with queued work
        self.open_banks = set()
        self.now = 0
        self.t_refi = self.policy.refresh_interval_cycles(config)
        self.next_ref = self.t_refi
        self.ref_batch = 0
        self.completions: List[Tuple[int, int, Request]] = []
        self._seq = 0
        self.log: Optional[List[Command]] = [] if log_commands else None
        # accounting
        self.t_rc = config.t_rc_cycles
        self.t_burst = config.t_burst_cycles
        self.read_latency = config.t_cl_cycles + self.t_burst
        self.busy_cycles = 0
        self.mitigation_cycles = 0
        self.counts = {k: 0 for k in CommandKind}
        self.served = 0
        self.directives = 0
        self.dropped_directives = 0
        if isinstance(self.policy, IncreasedRefresh):
            # share of each REF that only exists because of the shortened window
            self._ref_mitigation_share = max(0.0, 1.0 - self.t_refi / config.t_refi_cycles)
        else:
            self._ref_mitigation_share = 0.0

    # -- request side ------------------------------------------------------
    def can_accept(self, kind: RequestKind) -> bool:
        if kind is RequestKind.WRITE:
            return self.n_writes < self.queue_size
        if kind is RequestKind.READ:
            return self.n_reads < self.queue_size
        return True

    def make_request(self, kind: RequestKind, address: int, arrival: int, core_id: int = 0) -> Request:
        bank, row, col = self.address_map.decode(address)
        return Request(kind, address, arrival, core_id, bank, row, col)

    def enqueue(self, req: Request) -> bool:
        """Queue ``req``; returns False (backpressure) when its queue is full."""
        if not self.can_accept(req.kind):
            return False
        if req.arrival < self.now:
            req.arrival = self.now
        if req.kind is RequestKind.READ:
            self.reads[req.bank].append(req)
            self.n_reads += 1
        elif req.kind is RequestKind.WRITE:
            self.writes[req.bank].append(req)
            self.n_writes += 1
            if self.n_writes > self.write_high:
                self.draining = True
        else:
            self.acts[req.bank].append(req)
        self.active.add(req.bank)
        return True

    def add_directive(self, d: RefreshDirective) -> None:
        rows = self.dir_rows[d.bank]
        if d.row in rows:
            self.dropped_directives += 1  # already pending, one refresh covers both
            return
        rows.add(d.row)
        self.dirq[d.bank].append((d.row, self.now))
        self.directives += 1
        self.active.add(d.bank)

    def pending(self) -> int:
        return self.n_reads + self.n_writes + sum(len(a) for a in self.acts) + \
            sum(len(q) for q in self.dirq)

    # -- scheduling ----------------------------------------------------------
    def _bank_candidate(self, b: int):
        """``(ready_cycle, class, age, kind, row, request)`` for bank ``b`` or None."""
        st = self.banks[b]
        dq = self.dirq[b]
        if dq and self.mitigation_priority:
            if st.open_row is not None:
                return (st.pre_ready(), 0, dq[0][1], PRE, st.open_row, None)
            return (st.act_ready(), 0, dq[0][1], MREF, dq[0][0], None)
        if self.draining or self.n_reads == 0:
            lst = self.writes[b] or self.reads[b]
        else:
            lst = self.reads[b]
        if not lst:
            lst = self.acts[b]
        best = None
        if lst:
            best = lst[0]
        if dq and (best is None or dq[0][1] <= best.arrival):
            if st.open_row is not None:
                return (st.pre_ready(), 2, dq[0][1], PRE, st.open_row, None)
            return (st.act_ready(), 2, dq[0][1], MREF, dq[0][0], None)
        if best is None:
            return None
        open_row = st.open_row
        # a request can never be served before it arrives
        if open_row is not None:
            if best.kind is not RequestKind.ACTIVATE:
                for r in lst:
                    if r.row == open_row:
                        k = RD if r.kind is RequestKind.READ else WR
                        return (max(st.col_ready(), r.arrival), 1, r.arrival, k, open_row, r)
            return (max(st.pre_ready(), best.arrival), 2, best.arrival, PRE, open_row, None)
        return (max(st.act_ready(), best.arrival), 2, best.arrival, ACT, best.row, best)

    def _refresh_candidate(self):
        at = self.next_ref
        if self.open_banks:
            b = min(self.open_banks)
            st = self.banks[b]
            return (max(at, st.pre_ready(), self.now), b, PRE, st.open_row)
        ready = max(st.act_ready() for st in self.banks)
        return (max(at, ready, self.now), -1, REF, self.ref_batch)

    def select(self):
        """Next command as ``(cycle, bank, kind, row, request)``, or None if idle."""
        now = self.now
        best = None
        best_key = None
        for b in self.active:
            cand = self._bank_candidate(b)
            if cand is None:
                continue
            c = cand[0] if cand[0] > now else now
            key = (c, cand[1], cand[2], b)
            if best_key is None or key < best_key:
                best_key = key
                best = (c, b, cand[3], cand[4], cand[5])
        if self.refresh and (best is None or best[0] >= self.next_ref):
            c, b, kind, row = self._refresh_candidate()
            return (c, b, kind, row, None)
        return best

    def _settle_active(self, b: int) -> None:
        if not (self.reads[b] or self.writes[b] or self.acts[b] or self.dirq[b]):
            self.active.discard(b)

    def issue(self, c: int, b: int, kind: CommandKind, row: int, req: Optional[Request]) -> None:
        if kind is REF:
            cmd = Command(REF, -1, row, c)
            for st in self.banks:
                apply(st, cmd, c)
            self.now = c + 1
            self.counts[REF] += 1
            busy = self.config.ref_cycles * self.nb
            self.busy_cycles += busy
            self.mitigation_cycles += busy * self._ref_mitigation_share
            rows = ref_batch_rows(self.config, row)
            if self.tracker is not None:
                self.tracker.refresh_rows_all_banks(rows, self.nb)
            for d in self.policy.on_refresh(c, rows):
                self.add_directive(d)
            self.ref_batch += 1
            self.next_ref += self.t_refi
            if self.log is not None:
                self.log.append(cmd)
            return
        st = self.banks[b]
        cmd = Command(kind, b, row, c)
        apply(st, cmd, c)
        self.now = c + 1
        self.counts[kind] += 1
        if self.log is not None:
            self.log.append(cmd)
        if kind is ACT:
            self.open_banks.add(b)
            self.busy_cycles += self.t_rc
            if self.tracker is not None:
                self.tracker.activate(b, row)
            if req is not None and req.kind is RequestKind.ACTIVATE:
                self.acts[b].remove(req)
                req.done = c
                self.served += 1
                self._settle_active(b)
            for d in self.policy.on_activate(b, row, c):
                self.add_directive(d)
        elif kind is PRE:
            self.open_banks.discard(b)
        elif kind is MREF:
            self.busy_cycles += self.t_rc
            self.mitigation_cycles += self.t_rc
            self.dirq[b].popleft()
            self.dir_rows[b].discard(row)
            if self.tracker is not None:
                self.tracker.refresh(b, row)
            self._settle_active(b)
        else:
            self.busy_cycles += self.t_burst
            self.served += 1
            if kind is RD:
                self.reads[b].remove(req)
                self.n_reads -= 1
                self._seq += 1
                heapq.heappush(self.completions, (c + self.read_latency, self._seq, req))
            else:
                self.writes[b].remove(req)
                self.n_writes -= 1
                req.done = c
                if self.n_writes <= self.write_low:
                    self.draining = False
            self._settle_active(b)

    def step(self) -> bool:
        """Issue the next command regardless of time; False when nothing is left."""
        sel = self.select()
        if sel is None:
            return False
        self.issue(*sel)
        return True

    def run_until(self, t: float) -> bool:
        """Advance through every event before cycle ``t``.

        Returns True early when a read completion callback asks for control
        (a core woke up); otherwise returns False once nothing before ``t`` is
        left.
        """
        comps = self.completions
        while True:
            sel = self.select()
            tc = sel[0] if sel is not None else INF
            te = comps[0][0] if comps else INF
            if te <= tc:
                if te >= t:
                    break
                _, _, req = heapq.heappop(comps)
                req.done = te
                if self.on_complete is not None and self.on_complete(req, te):
                    return True
                continue
            if tc >= t:
                break
            self.issue(*sel)
        if t != INF and t > self.now:
            self.now = int(t) if t == int(t) else int(t) + 1
        return False

    def drain(self) -> None:
        """Run until every queued request and directive has been served."""
        while self.pending():
            self.step()
        comps = self.completions
        while comps:
            te, _, req = heapq.heappop(comps)
            req.done = te
            self.now = max(self.now, te)
            if self.on_complete is not None:
                self.on_complete(req, te)

    # -- attack streams ------------------------------------------------------
    def run_activation_stream(self, bank: int, rows: Iterable[int],
                              stop: Optional[Callable[[], bool]] = None) -> int:
        """Back-to-back activations of ``rows`` (in order) in one bank.

        Each activation is queued only after the previous one issued, so the
        stream is as fast as timing allows (one ACT per t_rc).  Pending
        directives are served in between.  Returns the number of ACTs issued.
        """
        n = 0
        acts = self.acts[bank]
        for row in rows:
            req = Request(RequestKind.ACTIVATE, 0, self.now, 0, bank, row, 0)
            acts.append(req)
            self.active.add(bank)
            while req.done < 0:
                self.step()
            n += 1
            if stop is not None and stop():
                break
        return n

    # -- metrics -------------------------------------------------------------
    def metrics(self) -> dict:
        busy = self.busy_cycles
        return {
            "bandwidth_overhead": self.mitigation_cycles / busy if busy else 0.0,
            "busy_cycles": busy,
            "mitigation_cycles": self.mitigation_cycles,
            "served_requests": self.served,
            "directives": self.directives,
            "act": self.counts[ACT],
            "ref": self.counts[REF],
            "mitigation_ref": self.counts[MREF],
            "cycles": self.now,
            "overhead_denominator": "consumed bank-busy cycles",
        }
