"""
The RowHammer characterization loop and the analyses built on its output.

Every test follows the same hygiene: write the data pattern, refresh the
victim, run the core hammer loop with refresh disabled (bounded by 32 ms),
read the neighbourhood back and restore it.  The chip's command log records
each step so the ordering can be audited afterwards.

Victims and aggressors are *physical* rows here; only the mapping
reverse-engineering routine works through logical addresses, since its job
is to discover the physical layout.
"""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .dram import MappingKind, RowMapping
from .fault import HC_SWEEP_CAP, PATTERN_NAMES, ChipState, FlipRecord, HammerRefused

WORD_BITS = 64


@dataclass
class FlipDatabase:
    """Observed flips of a characterization run.

    Each entry is ``(record, iteration, victim)``; ``victim`` is the physical
    row whose aggressors were hammered.  Entries are only ever added.
    """

    entries: Set[Tuple[FlipRecord, int, int]] = field(default_factory=set)
    metadata: dict = field(default_factory=dict)

    def add(self, records: Iterable[FlipRecord], iteration: int, victim: int) -> None:
        for r in records:
            self.entries.add((r, iteration, victim))

    def __len__(self) -> int:
        return len(self.entries)

    def records(self) -> Set[FlipRecord]:
        return {e[0] for e in self.entries}

    def cells(self, dp: Optional[str] = None, hc: Optional[int] = None) -> Set[Tuple[int, int]]:
        """Distinct ``(row, bit)`` flips, optionally under one pattern / HC."""
        return {(r.row, r.bit_index) for r, _, _ in self.entries
                if (dp is None or r.data_pattern == dp) and (hc is None or r.hc == hc)}

    def merge(self, other: "FlipDatabase") -> "FlipDatabase":
        return FlipDatabase(self.entries | other.entries, {**self.metadata, **other.metadata})

    def to_csv(self, path) -> None:
        rows = sorted((r.data_pattern, r.hc, r.row, r.bit_index, it, v, r.observed_value)
                      for r, it, v in self.entries)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["pattern", "hc", "row", "bit", "iteration", "victim", "observed_value"])
            w.writerows(rows)


def _default_rows(chip: ChipState) -> range:
    # victims need both aggressors inside the bank
    return range(1, chip.phys_rows - 1)


def hammer_test(chip: ChipState, victim: int, hc: int) -> List[FlipRecord]:
    """One hammer test of a physical victim under the currently written pattern."""
    aggressors = [r for r in (victim - 1, victim + 1) if 0 <= r < chip.phys_rows]
    chip.refresh_row(victim)
    chip.hammer_loop(aggressors, hc)
    flips = chip.read_flips(victim, hc)
    chip.restore(victim)
    return flips


def run_characterization(chip: ChipState, dps: Sequence[str] = PATTERN_NAMES,
                         hc_sweep: Sequence[int] = (HC_SWEEP_CAP,),
                         rows: Optional[Iterable[int]] = None,
                         iterations: int = 1) -> FlipDatabase:
    """Hammer every victim in ``rows`` for every pattern, HC and iteration.

    Raises :class:`~rhsim.fault.HammerRefused` before any test if an HC breaks
    the 32 ms core-loop bound.
    """
    rows = list(_default_rows(chip) if rows is None else rows)
    hc_sweep = [int(h) for h in hc_sweep]
    limit = chip.max_hc()
    for hc in hc_sweep:
        if hc < 1 or hc > limit:
            raise HammerRefused(f"HC={hc} outside [1, {limit}] for the 32 ms core-loop bound")
    db = FlipDatabase(metadata={"profile": chip.profile.label, "patterns": list(dps),
                                "hc_sweep": hc_sweep, "iterations": iterations,
                                "rows": [rows[0], rows[-1]] if rows else []})
    for dp in dps:
        chip.write_pattern(dp)
        for hc in hc_sweep:
            for it in range(iterations):
                chip.resample_noise()
                for v in rows:
                    db.add(hammer_test(chip, v, hc), it, v)
    return db


def check_hygiene(log: Sequence[tuple], limit_ns: float = 32e6) -> None:
    """Assert the per-test command order on a chip log.

    Every HAMMER must directly follow a REFRESH of its victim, run below the
    core-loop time bound, and be followed by READ then RESTORE of that victim.
    """
    for i, entry in enumerate(log):
        if entry[0] != "HAMMER":
            continue
        _, aggressors, hc, dur = entry
        if dur >= limit_ns:
            raise AssertionError(f"core loop {i} lasted {dur} ns")
        prev = log[i - 1] if i else None
        if prev is None or prev[0] != "REFRESH":
            raise AssertionError(f"core loop {i} not preceded by a victim refresh")
        victim = prev[1]
        if i + 2 >= len(log) or log[i + 1] != ("READ", victim) or log[i + 2] != ("RESTORE", victim):
            raise AssertionError(f"core loop {i} not followed by read-back and restore")


# ---------------------------------------------------------------------------
# Analyses
# ---------------------------------------------------------------------------

def coverage(db: FlipDatabase, dp: str) -> float:
    """Share of all observed flips that ``dp`` exposes."""
    union = db.cells()
    if not union:
        raise ValueError("coverage is undefined for an empty flip database")
    return len(db.cells(dp)) / len(union)


class Outcome(str, enum.Enum):
    FOUND = "found"
    NOT_ROWHAMMERABLE = "not RowHammerable"
    UNREACHABLE = "unreachable"


@dataclass
class HcFirstResult:
    hc: Optional[int]
    outcome: Outcome
    probes: int = 0


def _any_flip(chip: ChipState, hc: int, rows: Sequence[int], dps: Sequence[str],
              need: int = 1, word_bits: int = WORD_BITS) -> bool:
    """Does some test at ``hc`` show a word with at least ``need`` flips?"""
    for dp in dps:
        chip.write_pattern(dp)
        for v in rows:
            flips = hammer_test(chip, v, hc)
            if not flips:
                continue
            if need == 1:
                return True
            per_word = Counter((f.row, f.bit_index // word_bits) for f in flips)
            if max(per_word.values()) >= need:
                return True
    return False


def _search(chip, rows, dps, step, cap, need, word_bits) -> HcFirstResult:
    """Smallest multiple of ``step`` (capped) whose test shows a flip; flips are monotone in HC."""
    hi_idx = cap // step
    probes = 0

    def ok(i):
        nonlocal probes
        probes += 1
        return _any_flip(chip, i * step, rows, dps, need, word_bits)

    if hi_idx < 1 or not ok(hi_idx):
        return HcFirstResult(None, Outcome.NOT_ROWHAMMERABLE if need == 1 else Outcome.UNREACHABLE,
                             probes)
    lo, hi = 0, hi_idx  # ok(lo) is False by convention (HC 0), ok(hi) is True
    # coarse sweep on a doubling grid, then binary refinement
    i = 1
    while i < hi:
        if ok(i):
            hi = i
            break
        lo = i
        i *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return HcFirstResult(hi * step, Outcome.FOUND, probes)


def find_hc_first(chip: ChipState, rows: Optional[Iterable[int]] = None, step: int = 100,
                  dps: Optional[Sequence[str]] = None, cap: int = HC_SWEEP_CAP) -> HcFirstResult:
    """Smallest swept HC (a multiple of ``step``) that flips any bit.

    ``rows`` may be one victim, a collection, or None for the whole chip.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    if isinstance(rows, int):
        rows = [rows]
    rows = list(_default_rows(chip) if rows is None else rows)
    dps = list(dps or PATTERN_NAMES)
    return _search(chip, rows, dps, step, min(cap, chip.max_hc()), 1, WORD_BITS)


@dataclass
class NthWordResult:
    n: int
    hc: Optional[int]
    multiplier: Optional[float]  # HC_n / HC_(n-1)
    outcome: Outcome


def hc_nth_word(chip: ChipState, n: int, word_bits: int = WORD_BITS,
                rows: Optional[Iterable[int]] = None, step: int = 1,
                dps: Optional[Sequence[str]] = None, cap: int = HC_SWEEP_CAP,
                previous: Optional[int] = None) -> NthWordResult:
    """Smallest HC at which some aligned ``word_bits`` word holds ``n`` flips.

    ``multiplier`` compares with the same search for ``n - 1`` (pass
    ``previous`` to reuse an earlier result); it is the HC_first gain an
    ``(n-1)``-error-correcting code would give.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rows = list(_default_rows(chip) if rows is None else rows)
    dps = list(dps or PATTERN_NAMES)
    cap = min(cap, chip.max_hc())
    res = _search(chip, rows, dps, step, cap, n, word_bits)
    mult = None
    if n > 1 and res.hc is not None:
        if previous is None:
            previous = _search(chip, rows, dps, step, cap, n - 1, word_bits).hc
        if previous:
            mult = res.hc / previous
    return NthWordResult(n, res.hc, mult, res.outcome)


def spatial_histogram(db: FlipDatabase, mapping: Optional[RowMapping] = None) -> Dict[int, float]:
    """Fraction of flips at each physical offset from the tested victim."""
    counts: Counter = Counter()
    for r, _, victim in db.entries:
        phys = mapping.physical(r.row) if mapping is not None else r.row
        counts[phys - victim] += 1
    total = sum(counts.values())
    if not total:
        return {}
    return {o: c / total for o, c in sorted(counts.items())}


def monotonic_fraction(chip: ChipState, hc_sweep: Sequence[int] = range(25_000, 150_001, 5_000),
                       iterations: int = 20, rows: Optional[Iterable[int]] = None,
                       dp: Optional[str] = None) -> float:
    """Percentage of ever-flipping cells whose flip frequency never drops as HC grows.

    A cell's frequency at an HC is how many of ``iterations`` repeated tests
    showed it flipped.  With no threshold jitter every iteration is identical,
    so only one is run and its count scaled.
    """
    hc_sweep = sorted(int(h) for h in hc_sweep)
    rows = list(_default_rows(chip) if rows is None else rows)
    dp = dp or chip.profile.worst_pattern or PATTERN_NAMES[0]
    chip.write_pattern(dp)
    runs = iterations if chip.jitter > 0 else 1
    freq: Dict[Tuple[int, int], np.ndarray] = {}
    for j, hc in enumerate(hc_sweep):
        for _ in range(runs):
            chip.resample_noise()
            seen = set()
            for v in rows:
                for f in hammer_test(chip, v, hc):
                    seen.add((f.row, f.bit_index))
            for cell in seen:
                arr = freq.get(cell)
                if arr is None:
                    arr = freq[cell] = np.zeros(len(hc_sweep), dtype=int)
                arr[j] += iterations // runs
    if not freq:
        return 100.0
    mono = sum(1 for a in freq.values() if np.all(np.diff(a) >= 0))
    return 100.0 * mono / len(freq)


# ---------------------------------------------------------------------------
# Row-mapping reverse engineering
# ---------------------------------------------------------------------------

@dataclass
class MappingHypothesis:
    kind: MappingKind
    neighbors: Dict[int, Tuple[int, ...]]  # probed logical row -> inferred physical neighbours
    inconclusive: List[int]
    pair_phase: Optional[int] = None
    order: Optional[List[int]] = None  # logical rows in inferred physical order

    def agreement(self, mapping: RowMapping, rows: Optional[Iterable[int]] = None) -> float:
        """Share of probed rows whose inferred neighbours match ``mapping``."""
        rows = list(self.neighbors) if rows is None else list(rows)
        if not rows:
            return 0.0
        good = sum(1 for r in rows
                   if set(self.neighbors.get(r, ())) == set(true_neighbors(mapping, r)))
        return good / len(rows)


def true_neighbors(mapping: RowMapping, row: int) -> Tuple[int, ...]:
    """Logical rows on the wordlines physically adjacent to ``row``."""
    p = mapping.physical(row)
    out = []
    for q in (p - 1, p + 1):
        if 0 <= q < mapping.physical_rows:
            if mapping.kind is MappingKind.PAIRED_WORDLINE:
                out.extend((mapping.logical(q, 0), mapping.logical(q, 1)))
            else:
                out.append(mapping.logical(q))
    return tuple(sorted(out))


def reverse_engineer_mapping(chip: ChipState, rows: Optional[Iterable[int]] = None,
                             hc: Optional[int] = None, dp: Optional[str] = None,
                             cutoff: float = 0.4) -> MappingHypothesis:
    """Infer physical adjacency by single-sided hammering of logical rows.

    Hammering row ``L`` flips cells mostly in its physical neighbours.  Each
    flipped row ``M`` is scored by the share of all of ``M``'s flips (over
    every probe) that ``L`` caused, which cancels the uneven density of weak
    cells across rows; the best-scoring rows are ``L``'s neighbours.  If most
    probes show four such rows forming two consecutive even/odd pairs and
    none in ``L``'s own pair, wordlines are paired.  Needs a chip dense
    enough in weak cells for every row to flip.
    """
    n_rows = chip.profile.rows
    rows = list(range(n_rows) if rows is None else rows)
    hc = hc or chip.max_hc()
    chip.write_pattern(dp or chip.profile.worst_pattern or PATTERN_NAMES[0])
    raw: Dict[int, Dict[int, int]] = {}
    totals: Counter = Counter()
    chip.refresh_rows(range(chip.phys_rows))
    for L in rows:
        chip.hammer_logical([L], hc)
        counts = chip.visible_flip_counts()
        counts.pop(L, None)
        raw[L] = counts
        totals.update(counts)
        chip.restore(chip.mapping.physical(L), span=chip.phys_rows)
    ranked: Dict[int, List[Tuple[int, float]]] = {
        L: sorted(((m, c / totals[m]) for m, c in counts.items()), key=lambda kv: (-kv[1], kv[0]))
        for L, counts in raw.items()}

    def strong(lst, k):
        if not lst:
            return []
        top = lst[0][1]
        return [r for r, c in lst[:k] if c >= cutoff * top]

    paired_votes = 0
    for L, lst in ranked.items():
        s = strong(lst, 5)
        if len(s) == 4 and _two_pairs(s) and (L ^ 1) not in dict(lst[:4]):
            paired_votes += 1
    paired = paired_votes > len(rows) / 2
    k = 4 if paired else 2
    neighbors, inconclusive = {}, []
    for L, lst in ranked.items():
        s = strong(lst, k)
        if not s:
            inconclusive.append(L)
            continue
        neighbors[L] = tuple(sorted(s))
    if paired:
        return MappingHypothesis(MappingKind.PAIRED_WORDLINE, neighbors, inconclusive, pair_phase=0)
    identity = sum(1 for L, s in neighbors.items()
                   if set(s) == {r for r in (L - 1, L + 1) if 0 <= r < n_rows})
    if neighbors and identity >= 0.99 * len(neighbors):
        return MappingHypothesis(MappingKind.IDENTITY, neighbors, inconclusive,
                                 order=sorted(neighbors))
    return MappingHypothesis(MappingKind.PERMUTED, neighbors, inconclusive,
                             order=_walk(neighbors))


def _two_pairs(rows: Sequence[int]) -> bool:
    halves = Counter(r >> 1 for r in rows)
    return len(halves) == 2 and all(v == 2 for v in halves.values())


def _walk(neighbors: Dict[int, Tuple[int, ...]]) -> Optional[List[int]]:
    """Physical order from a path-shaped adjacency graph, or None if it is not a path."""
    adj: Dict[int, set] = {}
    # an edge seen from either end counts; a row with no cells may miss one side
    for r, s in neighbors.items():
        for q in s:
            adj.setdefault(r, set()).add(q)
            adj.setdefault(q, set()).add(r)
    ends = [r for r, s in adj.items() if len(s) == 1]
    if len(ends) != 2 or any(len(s) > 2 for s in adj.values()):
        return None
    order, prev, cur = [], None, min(ends)
    while cur is not None:
        order.append(cur)
        nxt = [q for q in adj[cur] if q != prev]
        prev, cur = cur, (nxt[0] if nxt else None)
    return order if len(order) == len(adj) else None


def profiling_time_estimate(capacity: float, row_size: float, per_row_time: float) -> float:
    """Time to hammer every row once: ``capacity / row_size * per_row_time``."""
    if capacity <= 0 or row_size <= 0 or per_row_time <= 0:
        raise ValueError("inputs must be positive")
    return capacity / row_size * per_row_time
