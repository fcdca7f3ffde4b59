"""
Refresh-based RowHammer mitigation policies and their tuning formulas.

Every policy consumes the activation stream of the memory controller
(``on_activate``) plus one ``on_refresh`` call per REF command and returns
single-row refresh directives.  Policies key their state by flat bank index
and logical row, and find victims through the bank's row mapping.

Throughout this module a "hammer" on a victim means one activation of a
physically adjacent row; a policy is secure when no row ever accumulates
``hc_first`` such activations without being refreshed.
"""

from __future__ import annotations

import math
import random
from collections import deque
from typing import Dict, List, NamedTuple, Optional, Tuple

from .dram import DramConfig, MappingKind, RowMapping, adjacent_rows


class InfeasibleTuning(ValueError):
    """No parameter value meets the requested reliability target."""


class UnsupportedConfiguration(ValueError):
    """The mechanism cannot be configured for this HC_first."""


class RefreshDirective(NamedTuple):
    bank: int
    row: int
    reason: str


# ---------------------------------------------------------------------------
# Tuning formulas
# ---------------------------------------------------------------------------

def para_tune(hc_first: int, ber_target: float = 1e-15, t_rc: float = 50.0,
              period_s: float = 3600.0) -> float:
    """Smallest PARA probability meeting ``ber_target`` per ``period_s`` of hammering.

    Failure model: each activation refreshes each neighbour with probability
    ``p/2`` once it closes, so the ``hc_first``-th adjacent activation lands
    before its own refresh can; a victim reaches ``hc_first`` unrefreshed
    activations with probability ``(1 - p/2)**(hc_first - 1)``.  An attacker
    gets ``period_s / (hc_first * t_rc)`` attempts per period.  ``t_rc`` is in ns.
    """
    if hc_first < 1:
        raise ValueError("hc_first must be >= 1")
    if not 0 < ber_target < 1:
        raise ValueError("ber_target must lie in (0, 1)")
    attempts = period_s / (hc_first * t_rc * 1e-9)
    ratio = ber_target / attempts
    if ratio >= 1:
        return 0.0
    if hc_first == 1:
        raise InfeasibleTuning("with hc_first=1 the first activation already succeeds")
    p = -2.0 * math.expm1(math.log(ratio) / (hc_first - 1))
    if p > 1.0:
        raise InfeasibleTuning(f"PARA needs p={p:.3f} > 1 for hc_first={hc_first}")
    return p


def para_failure_probability(p: float, hc_first: int) -> float:
    """Probability that one attack attempt of ``hc_first`` activations succeeds."""
    return (1.0 - p / 2.0) ** max(hc_first - 1, 0)


TWICE_MIN_HC = 32_000


def twice_thresholds(hc_first: int, t_refw: float = 64.0, t_refi: float = 7.8125,
                     ideal: bool = False) -> Tuple[float, float]:
    """``(t_RH, pruning_threshold)`` for TWiCe; ``t_refw`` in ms, ``t_refi`` in us."""
    if hc_first < 4:
        raise ValueError("hc_first must be >= 4")
    t_rh = hc_first // 4 if hc_first % 4 == 0 else hc_first / 4
    refs = t_refw * 1e3 / t_refi
    # the counter floor is t_RH >= refs per window (hc_first >= 32768); the
    # published cut-off of 32k is used, so 32k itself is served
    if not ideal and hc_first < TWICE_MIN_HC:
        raise UnsupportedConfiguration(
            f"TWiCe is not supported below hc_first={TWICE_MIN_HC}; got {hc_first}")
    return t_rh, t_rh / refs


class RefreshWindow(NamedTuple):
    t_refw_ms: float
    supported: bool


INCREASED_REFRESH_MIN_HC = 32_000


def increased_refresh_window(hc_first: int, t_rc: float = 50.0) -> RefreshWindow:
    """Refresh window (ms) that allows fewer than ``hc_first`` activations per row."""
    if hc_first < 1:
        raise ValueError("hc_first must be >= 1")
    return RefreshWindow(hc_first * t_rc / 1e6, hc_first >= INCREASED_REFRESH_MIN_HC)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

class MitigationPolicy:
    """No-op policy; also the base class of all mechanisms."""

    name = "none"

    def __init__(self, rows_per_bank: int, mapping: Optional[RowMapping] = None):
        self.rows = rows_per_bank
        if mapping is not None and mapping.kind is MappingKind.IDENTITY:
            mapping = None
        self.mapping = mapping
        self._victim_cache: Dict[int, Tuple[int, ...]] = {}

    def victims(self, row: int) -> Tuple[int, ...]:
        if self.mapping is None:
            if 0 < row < self.rows - 1:
                return (row - 1, row + 1)
            return (1,) if row == 0 else (row - 1,)
        v = self._victim_cache.get(row)
        if v is None:
            v = tuple(r for _, r in adjacent_rows(self.mapping, row, 1))
            self._victim_cache[row] = v
        return v

    def on_activate(self, bank: int, row: int, now: int) -> List[RefreshDirective]:
        return []

    def on_refresh(self, now: int, rows: range) -> List[RefreshDirective]:
        return []

    def refresh_interval_cycles(self, config: DramConfig) -> int:
        return config.t_refi_cycles

    def metadata(self) -> dict:
        return {"mechanism": self.name}


class Para(MitigationPolicy):
    """Probabilistic adjacent-row refresh on every activation.

    With ``split`` (default) each neighbour is refreshed independently with
    probability ``p/2``; with ``split=False`` each gets probability ``p``.
    """

    name = "PARA"

    def __init__(self, rows_per_bank: int, p: float, seed: int = 0,
                 mapping: Optional[RowMapping] = None, split: bool = True):
        super().__init__(rows_per_bank, mapping)
        if not 0 <= p <= 1:
            raise ValueError("p must lie in [0, 1]")
        self.p = p
        self.split = split
        self.q = p / 2 if split else p
        self.rng = random.Random(seed)

    def on_activate(self, bank, row, now):
        q = self.q
        if q <= 0:
            return []
        rnd = self.rng.random
        return [RefreshDirective(bank, v, "PARA") for v in self.victims(row) if rnd() < q]

    def metadata(self):
        return {"mechanism": self.name, "p": self.p, "split": self.split}


class ProHit(MitigationPolicy):
    """Probabilistic hot/cold victim tables; refreshes the hot-table top at each REF.

    ``hot[b][0]`` is the highest-priority entry of bank ``b``; ``cold[b]`` is in
    insertion order (index 0 inserted least recently).
    """

    name = "ProHIT"

    def __init__(self, rows_per_bank: int, banks: int, hot_size: int = 4, cold_size: int = 4,
                 p_i: float = 0.0277, p_e: float = 0.5, p_t: float = 0.5, seed: int = 0,
                 mapping: Optional[RowMapping] = None):
        super().__init__(rows_per_bank, mapping)
        self.hot_size, self.cold_size = hot_size, cold_size
        self.p_i, self.p_e, self.p_t = p_i, p_e, p_t
        self.hot: List[List[int]] = [[] for _ in range(banks)]
        self.cold: List[List[int]] = [[] for _ in range(banks)]
        self.rng = random.Random(seed)

    def _pick(self, n: int, p: float) -> int:
        """Index 0 w.p. (1-p) + p/n, any other index w.p. p/n."""
        if n <= 1:
            return 0
        u = self.rng.random()
        if u < 1.0 - p:
            return 0
        return min(n - 1, int((u - (1.0 - p)) / p * n))

    def on_activate(self, bank, row, now):
        hot, cold = self.hot[bank], self.cold[bank]
        for v in self.victims(row):
            if v in hot:
                i = hot.index(v)
                if i > 0:
                    hot[i - 1], hot[i] = hot[i], hot[i - 1]
            elif v in cold:
                cold.remove(v)
                pos = self._pick(len(hot), self.p_t) if hot else 0
                hot.insert(pos, v)
                if len(hot) > self.hot_size:
                    hot.pop()
            elif self.rng.random() < self.p_i:
                if len(cold) >= self.cold_size:
                    cold.pop(self._pick(len(cold), self.p_e))
                cold.append(v)
        return []

    def on_refresh(self, now, rows):
        out = []
        for b, hot in enumerate(self.hot):
            if hot:
                out.append(RefreshDirective(b, hot.pop(0), "ProHIT"))
        return out

    def metadata(self):
        return {"mechanism": self.name, "hot_size": self.hot_size, "cold_size": self.cold_size,
                "p_i": self.p_i, "p_e": self.p_e, "p_t": self.p_t}


class MrLoc(MitigationPolicy):
    """Victim queue with locality-weighted refresh probability.

    When a victim is re-inserted while still queued, it is refreshed with a
    probability falling linearly from ``p_max`` (gap 0) to ``p_min`` (gap at
    or beyond ``horizon`` cycles).
    """

    name = "MRLoc"

    def __init__(self, rows_per_bank: int, banks: int, queue_size: int = 16,
                 p_max: float = 0.05, p_min: float = 0.0, horizon: int = 480, seed: int = 0,
                 mapping: Optional[RowMapping] = None):
        super().__init__(rows_per_bank, mapping)
        if queue_size < 1 or horizon < 1:
            raise ValueError("queue_size and horizon must be >= 1")
        self.queue_size = queue_size
        self.p_max, self.p_min, self.horizon = p_max, p_min, horizon
        self.queues: List[deque] = [deque() for _ in range(banks)]
        self.stamp: List[Dict[int, int]] = [{} for _ in range(banks)]
        self.rng = random.Random(seed)

    def probability(self, gap: int) -> float:
        frac = min(max(gap, 0), self.horizon) / self.horizon
        return self.p_max - (self.p_max - self.p_min) * frac

    def on_activate(self, bank, row, now):
        q, stamp = self.queues[bank], self.stamp[bank]
        out = []
        for v in self.victims(row):
            last = stamp.get(v)
            if last is not None:
                q.remove(v)
                del stamp[v]
                if self.rng.random() < self.probability(now - last):
                    out.append(RefreshDirective(bank, v, "MRLoc"))
                    continue
            if len(q) >= self.queue_size:
                del stamp[q.popleft()]
            q.append(v)
            stamp[v] = now
        return out

    def metadata(self):
        return {"mechanism": self.name, "queue_size": self.queue_size, "p_max": self.p_max,
                "p_min": self.p_min, "horizon_cycles": self.horizon}


class Twice(MitigationPolicy):
    """Counter table with lifetime-rate pruning at each REF.

    Entries are ``[act_count, life_count]`` keyed by victim row.  An entry whose
    count exceeds ``t_rh`` triggers a refresh and is reset.  Entries whose row
    is covered by the current REF batch are dropped, since that row has just
    been refreshed.
    """

    name = "TWiCe"

    def __init__(self, rows_per_bank: int, banks: int, hc_first: int,
                 t_refw: float = 64.0, t_refi: float = 7.8125, ideal: bool = False,
                 mapping: Optional[RowMapping] = None):
        super().__init__(rows_per_bank, mapping)
        self.hc_first = hc_first
        self.ideal = ideal
        self.t_rh, self.pruning_threshold = twice_thresholds(hc_first, t_refw, t_refi, ideal)
        self.tables: List[Dict[int, List[int]]] = [{} for _ in range(banks)]
        self.max_occupancy = 0
        if ideal:
            self.name = "TWiCe-ideal"

    def on_activate(self, bank, row, now):
        table = self.tables[bank]
        out = None
        for v in self.victims(row):
            e = table.get(v)
            if e is None:
                table[v] = [1, 0]
                continue
            e[0] += 1
            if e[0] > self.t_rh:
                del table[v]
                if out is None:
                    out = []
                out.append(RefreshDirective(bank, v, self.name))
        if len(table) > self.max_occupancy:
            self.max_occupancy = len(table)
        return out or []

    def prune(self, now: int = 0) -> None:
        th = self.pruning_threshold
        for table in self.tables:
            dead = []
            for v, e in table.items():
                e[1] += 1
                if e[0] < th * e[1]:
                    dead.append(v)
            for v in dead:
                del table[v]

    def on_refresh(self, now, rows):
        for table in self.tables:
            if table:
                for r in rows:
                    table.pop(r, None)
        self.prune(now)
        return []

    def occupancy(self) -> int:
        return sum(len(t) for t in self.tables)

    def metadata(self):
        return {"mechanism": self.name, "hc_first": self.hc_first, "t_rh": self.t_rh,
                "pruning_threshold": self.pruning_threshold, "ideal_mode": self.ideal}


class IdealRefresh(MitigationPolicy):
    """Oracle that refreshes a victim right before its ``hc_first``-th hammer."""

    name = "Ideal"

    def __init__(self, rows_per_bank: int, banks: int, hc_first: int,
                 mapping: Optional[RowMapping] = None):
        super().__init__(rows_per_bank, mapping)
        if hc_first < 2:
            raise ValueError("hc_first must be >= 2")
        self.hc_first = hc_first
        self.limit = hc_first - 1
        self.banks = banks
        self.counters: Dict[int, int] = {}

    def on_activate(self, bank, row, now):
        counters = self.counters
        base = bank * self.rows
        out = None
        for v in self.victims(row):
            key = base + v
            c = counters.get(key, 0) + 1
            if c >= self.limit:
                counters.pop(key, None)
                if out is None:
                    out = []
                out.append(RefreshDirective(bank, v, "Ideal"))
            else:
                counters[key] = c
        return out or []

    def on_refresh(self, now, rows):
        counters = self.counters
        if counters:
            for b in range(self.banks):
                base = b * self.rows
                for r in rows:
                    counters.pop(base + r, None)
        return []

    def metadata(self):
        return {"mechanism": self.name, "hc_first": self.hc_first}


class IncreasedRefresh(MitigationPolicy):
    """Shortens the refresh window to ``hc_first * t_rc``; keeps 8192 REFs per window."""

    name = "IncreasedRefresh"

    def __init__(self, rows_per_bank: int, hc_first: int, config: DramConfig):
        super().__init__(rows_per_bank)
        window = increased_refresh_window(hc_first, config.t_rc)
        if not window.supported:
            raise UnsupportedConfiguration(
                f"increased refresh does not scale below hc_first={INCREASED_REFRESH_MIN_HC}")
        self.hc_first = hc_first
        self.t_refw_ms = window.t_refw_ms
        self.t_refi_ns = window.t_refw_ms * 1e6 / config.refs_per_window

    def refresh_interval_cycles(self, config: DramConfig) -> int:
        # round down: refreshing early is the safe direction
        return max(1, int(self.t_refi_ns * config.clock_freq_mhz / 1000.0))

    def metadata(self):
        return {"mechanism": self.name, "hc_first": self.hc_first, "t_refw_ms": self.t_refw_ms}


MECHANISMS = ("none", "PARA", "ProHIT", "MRLoc", "TWiCe", "TWiCe-ideal", "Ideal",
              "IncreasedRefresh")
#: single evaluation point of the mechanisms that lack a scaling model
FIXED_POINT_MECHANISMS = {"ProHIT": 2000, "MRLoc": 2000}


def build_policy(mechanism: str, hc_first: int, config: DramConfig, seed: int = 0,
                 params: Optional[dict] = None, mapping: Optional[RowMapping] = None,
                 strict_fixed_point: bool = True) -> MitigationPolicy:
    """Construct a policy tuned for ``hc_first``.

    Raises :class:`UnsupportedConfiguration` or :class:`InfeasibleTuning` for
    pairs the mechanism cannot handle.
    """
    params = dict(params or {})
    rows, banks = config.rows_per_bank, config.num_banks
    if mechanism == "none":
        return MitigationPolicy(rows, mapping)
    if mechanism == "PARA":
        p = params.pop("p", None)
        if p is None:
            p = para_tune(hc_first, params.pop("ber_target", 1e-15), config.t_rc,
                          params.pop("period_s", 3600.0))
        return Para(rows, p, seed=seed, mapping=mapping, **params)
    if mechanism in FIXED_POINT_MECHANISMS:
        if strict_fixed_point and hc_first != FIXED_POINT_MECHANISMS[mechanism]:
            raise UnsupportedConfiguration(
                f"{mechanism} is only defined for hc_first={FIXED_POINT_MECHANISMS[mechanism]}")
        cls = ProHit if mechanism == "ProHIT" else MrLoc
        if cls is MrLoc:
            params.setdefault("horizon", max(1, params.get("queue_size", 16) // 2) * config.t_rc_cycles)
        return cls(rows, banks, seed=seed, mapping=mapping, **params)
    if mechanism in ("TWiCe", "TWiCe-ideal"):
        return Twice(rows, banks, hc_first, config.t_refw, config.t_refi,
                     ideal=mechanism == "TWiCe-ideal", mapping=mapping)
    if mechanism == "Ideal":
        return IdealRefresh(rows, banks, hc_first, mapping=mapping)
    if mechanism == "IncreasedRefresh":
        return IncreasedRefresh(rows, hc_first, config)
    raise ValueError(f"unknown mechanism {mechanism!r}")
