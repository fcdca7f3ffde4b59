"""
RowHammer vulnerability profiles and bit-flip injection.

A profile is a set of deterministic vulnerable cells.  Each cell has a hammer
threshold, the set of data patterns that sensitise it, and a signed physical
offset from the victim row of the double-sided hammer that flips it.  The
number of cells with ``threshold <= HC`` follows ``c * HC**k``, which is the
log-log linear relation between hammer count and flip count observed on real
chips.

Exposure bookkeeping: the chip keeps a cumulative activation counter per
physical row.  A cell couples to one or two aggressor rows with weights; its
exposure is the weighted activation count of those rows since the cell's own
row was last refreshed (or activated).  One hammer (one ACT to each side of a
double-sided victim) therefore adds exactly 1 to the exposure of a victim cell.
"""

from __future__ import annotations

import json
import math
import enum
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .dram import DramConfig, DramType, MappingKind, RowMapping
from .ecc import sec_code, visible_flips

SCHEMA_VERSION = 1
CALIBRATION_RATE = 1e-6
HC_SWEEP_CAP = 150_000
CORE_LOOP_LIMIT_S = 0.032


class GenerationError(ValueError):
    """The requested profile parameters cannot be realised."""


class HammerRefused(ValueError):
    """The core hammer loop would outlast the 32 ms retention-safe bound."""


# ---------------------------------------------------------------------------
# Data patterns
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataPattern:
    name: str
    byte: int
    row_alternating: bool = False

    def row_byte(self, offset_from_victim: int) -> int:
        """Byte written to the row ``offset_from_victim`` physical rows away."""
        if self.row_alternating and offset_from_victim % 2:
            return self.byte ^ 0xFF
        return self.byte

    def bit(self, offset_from_victim: int, bit_index: int) -> int:
        return (self.row_byte(offset_from_victim) >> (bit_index % 8)) & 1


PATTERNS: Dict[str, DataPattern] = {
    p.name: p for p in (
        DataPattern("SO0", 0x00), DataPattern("SO1", 0xFF),
        DataPattern("CO0", 0x55), DataPattern("CO1", 0xAA),
        DataPattern("CH0", 0x55, True), DataPattern("CH1", 0xAA, True),
        DataPattern("RS0", 0x00, True), DataPattern("RS1", 0xFF, True),
    )
}
PATTERN_NAMES: Tuple[str, ...] = tuple(PATTERNS)


def pattern(name) -> DataPattern:
    if isinstance(name, DataPattern):
        return name
    try:
        return PATTERNS[name]
    except KeyError:
        raise ValueError(f"unknown data pattern {name!r}") from None


# ---------------------------------------------------------------------------
# Cells and profiles
# ---------------------------------------------------------------------------

class Side(str, enum.Enum):
    DOUBLE = "double"
    SINGLE_UPPER = "single-upper"  # disturbed by a row above it
    SINGLE_LOWER = "single-lower"  # disturbed by a row below it


@dataclass(frozen=True)
class VulnerableCell:
    row: int  # physical row (wordline)
    bit_index: int
    threshold: int
    sensitizing_patterns: FrozenSet[str]
    offset: int = 0  # physical offset from the victim of the flipping hammer
    half: int = 0  # which logical row of a paired wordline holds the bit

    @property
    def side(self) -> Side:
        if self.offset == 0:
            return Side.DOUBLE
        return Side.SINGLE_LOWER if self.offset > 0 else Side.SINGLE_UPPER

    def couplings(self) -> Tuple[Tuple[int, float], ...]:
        """``(row delta, weight)`` of the aggressor rows that disturb this cell."""
        if self.offset == 0:
            return ((-1, 0.5), (1, 0.5))
        if self.offset > 0:
            return ((-(self.offset - 1), 1.0),)
        return ((-self.offset - 1, 1.0),)

    def to_list(self) -> list:
        return [self.row, self.bit_index, self.threshold,
                sorted(self.sensitizing_patterns), self.offset, self.half]

    @classmethod
    def from_list(cls, v: Sequence) -> "VulnerableCell":
        return cls(int(v[0]), int(v[1]), int(v[2]), frozenset(v[3]), int(v[4]), int(v[5]))


class FlipRecord(NamedTuple):
    data_pattern: str
    hc: int
    row: int  # logical row
    bit_index: int
    observed_value: int


DEFAULT_OFFSET_WEIGHTS = {
    # digitised approximations of the spatial distribution; marked approximate
    "DDR": {0: 0.80, -2: 0.10, 2: 0.10},
    "LPDDR4-1x": {0: 0.70, -2: 0.12, 2: 0.12, -4: 0.03, 4: 0.03},
    "LPDDR4-1y": {0: 0.60, -2: 0.14, 2: 0.14, -4: 0.045, 4: 0.045, -6: 0.015, 6: 0.015},
}


def _check_offset_weights(w: Dict[int, float]) -> Dict[int, float]:
    w = {int(k): float(v) for k, v in w.items() if float(v) > 0}
    if not w:
        raise GenerationError("offset_weights is empty")
    for k in w:
        if k % 2 or abs(k) > 6:
            raise GenerationError(f"offset {k} must be even and within [-6, 6]")
    total = sum(w.values())
    if not math.isclose(total, 1.0, rel_tol=1e-6):
        raise GenerationError(f"offset weights sum to {total}, expected 1")
    by_dist: Dict[int, float] = {}
    for k, v in w.items():
        by_dist[abs(k)] = max(by_dist.get(abs(k), 0.0), v)
    dists = sorted(by_dist)
    for a, b in zip(dists, dists[1:]):
        if by_dist[b] > by_dist[a] + 1e-12:
            raise GenerationError("offset weights must not grow with distance")
    return w


@dataclass
class ProfileSpec:
    """Generation parameters of a synthetic vulnerability profile."""

    label: str
    hc_first_min: int
    dram_type: str = "DDR4"
    #: HC at which the flip rate reaches 1e-6 (calibration anchor)
    hc_star: Optional[float] = None
    #: explicit power-law coefficients; override the hc_star calibration
    rate_coeff: Optional[float] = None
    rate_exp: Optional[float] = None
    hc_max: int = HC_SWEEP_CAP
    rows: int = 1024
    row_size_bytes: int = 8192
    offset_weights: Optional[Dict[int, float]] = None
    worst_pattern: Optional[str] = None
    worst_pattern_prob: float = 0.9
    other_pattern_prob: float = 0.3
    cluster: float = 0.3
    single_sided_floor: float = 1.25
    mapping_kind: str = "Identity"
    mapping_seed: Optional[int] = None
    on_die_ecc: Optional[bool] = None
    max_cells: int = 500_000
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["offset_weights"] is not None:
            d["offset_weights"] = {str(k): v for k, v in d["offset_weights"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileSpec":
        d = dict(d)
        if d.get("offset_weights") is not None:
            d["offset_weights"] = {int(k): float(v) for k, v in d["offset_weights"].items()}
        return cls(**d)


@dataclass
class VulnerabilityProfile:
    label: str
    dram_type: DramType
    hc_first_min: int
    rate_coeff: float
    rate_exp: float
    offset_weights: Dict[int, float]
    cells: List[VulnerableCell]
    on_die_ecc: bool
    mapping_kind: MappingKind = MappingKind.IDENTITY
    mapping_seed: Optional[int] = None
    rows: int = 1024
    row_size_bytes: int = 8192
    worst_pattern: Optional[str] = None
    hc_star: Optional[float] = None
    temperature_c: float = 50.0
    spec: Optional[ProfileSpec] = None
    notes: str = ""

    def __post_init__(self):
        self.dram_type = DramType(self.dram_type)
        self.mapping_kind = MappingKind(self.mapping_kind)
        if self.on_die_ecc != (self.dram_type is DramType.LPDDR4):
            raise GenerationError("on-die ECC must be present exactly on LPDDR4 profiles")
        if self.cells and min(c.threshold for c in self.cells) != self.hc_first_min:
            raise GenerationError("hc_first_min must equal the smallest cell threshold")

    @property
    def total_bits(self) -> int:
        return self.rows * self.row_size_bytes * 8

    @property
    def physical_rows(self) -> int:
        return self.rows // 2 if self.mapping_kind is MappingKind.PAIRED_WORDLINE else self.rows

    def mapping(self) -> RowMapping:
        return RowMapping(self.mapping_kind, self.rows, self.mapping_seed)

    def expected_flips(self, hc: float) -> float:
        if hc < self.hc_first_min:
            return 0.0
        return self.rate_coeff * hc ** self.rate_exp

    def thresholds(self) -> np.ndarray:
        return np.array([c.threshold for c in self.cells], dtype=np.int64)

    # -- serialisation ----------------------------------------------------
    def to_dict(self, include_cells: bool = True) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "label": self.label,
            "dram_type": self.dram_type.value,
            "hc_first_min": self.hc_first_min,
            "rate_coeff": self.rate_coeff,
            "rate_exp": self.rate_exp,
            "hc_star": self.hc_star,
            "calibration": {"flips_at_hc_first_min": 1, "rate_at_hc_star": CALIBRATION_RATE,
                            "calibrated_construct": True},
            "offset_weights": {str(k): v for k, v in self.offset_weights.items()},
            "offset_weights_approximate": True,
            "worst_pattern": self.worst_pattern,
            "on_die_ecc": self.on_die_ecc,
            "mapping": {"kind": self.mapping_kind.value, "seed": self.mapping_seed},
            "rows": self.rows,
            "row_size_bytes": self.row_size_bytes,
            "temperature_c": self.temperature_c,
            "notes": self.notes,
            "generation": self.spec.to_dict() if self.spec else None,
        }
        if include_cells or self.spec is None:
            d["cells"] = [c.to_list() for c in self.cells]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VulnerabilityProfile":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported profile schema version {version!r}")
        if "cells" not in d:
            if not d.get("generation"):
                raise ValueError("profile has neither cells nor a generation spec")
            return generate_profile(ProfileSpec.from_dict(d["generation"]))
        spec = ProfileSpec.from_dict(d["generation"]) if d.get("generation") else None
        return cls(
            label=d["label"], dram_type=d["dram_type"], hc_first_min=int(d["hc_first_min"]),
            rate_coeff=float(d["rate_coeff"]), rate_exp=float(d["rate_exp"]),
            offset_weights={int(k): float(v) for k, v in d["offset_weights"].items()},
            cells=[VulnerableCell.from_list(v) for v in d["cells"]],
            on_die_ecc=bool(d["on_die_ecc"]), mapping_kind=d["mapping"]["kind"],
            mapping_seed=d["mapping"].get("seed"), rows=int(d["rows"]),
            row_size_bytes=int(d["row_size_bytes"]), worst_pattern=d.get("worst_pattern"),
            hc_star=d.get("hc_star"), temperature_c=float(d.get("temperature_c", 50.0)),
            spec=spec, notes=d.get("notes", ""))

    def save(self, path, include_cells: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(include_cells), indent=2) + "\n")


def load_profile(path) -> VulnerabilityProfile:
    return VulnerabilityProfile.from_dict(json.loads(Path(path).read_text()))


PROFILE_DIR = Path(__file__).parent / "profiles"


def bundled_profiles() -> List[str]:
    return sorted(p.stem for p in PROFILE_DIR.glob("*.json"))


def load_bundled(name: str) -> VulnerabilityProfile:
    """Load a bundled profile by file stem, e.g. ``"LPDDR4-1y_MfrA"``."""
    return load_profile(PROFILE_DIR / f"{name.replace('/', '_')}.json")


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _power_law(spec: ProfileSpec, total_bits: int) -> Tuple[float, float]:
    if spec.rate_exp is not None:
        k = float(spec.rate_exp)
        if k <= 0:
            raise GenerationError("rate_exp must be > 0")
        c = float(spec.rate_coeff) if spec.rate_coeff is not None else spec.hc_first_min ** -k
        if c <= 0:
            raise GenerationError("rate_coeff must be > 0")
        return c, k
    if spec.hc_star is None:
        raise GenerationError("need either hc_star or rate_exp")
    target = CALIBRATION_RATE * total_bits
    if target <= 1:
        raise GenerationError("chip too small to reach the 1e-6 calibration rate")
    if spec.hc_star <= spec.hc_first_min:
        raise GenerationError("hc_star must exceed hc_first_min")
    k = math.log(target) / math.log(spec.hc_star / spec.hc_first_min)
    return spec.hc_first_min ** -k, k


def generate_profile(spec: ProfileSpec) -> VulnerabilityProfile:
    """Sample a deterministic vulnerability profile from ``spec``.

    Thresholds are stratified so that ``#{cells: threshold <= HC}`` stays
    within one of ``c * HC**k`` for every HC up to ``hc_max``; the weakest cell
    sits exactly at ``hc_first_min``.
    """
    if spec.hc_first_min < 1:
        raise GenerationError("hc_first_min must be >= 1")
    dram_type = DramType(spec.dram_type)
    ecc = spec.on_die_ecc if spec.on_die_ecc is not None else dram_type is DramType.LPDDR4
    mapping_kind = MappingKind(spec.mapping_kind)
    phys_rows = spec.rows // 2 if mapping_kind is MappingKind.PAIRED_WORDLINE else spec.rows
    bits_per_phys_row = spec.row_size_bytes * 8 * (2 if mapping_kind is MappingKind.PAIRED_WORDLINE else 1)
    total_bits = spec.rows * spec.row_size_bytes * 8
    c, k = _power_law(spec, total_bits)
    hc_max = max(spec.hc_max, spec.hc_first_min)
    n_cells = max(1, int(math.floor(c * hc_max ** k + 1e-9)))
    if n_cells > min(total_bits, spec.max_cells):
        raise GenerationError(f"c*HC^k = {n_cells} cells exceeds the chip/cell budget")
    if phys_rows < 3:
        raise GenerationError("need at least three physical rows")

    weights = _check_offset_weights(spec.offset_weights or DEFAULT_OFFSET_WEIGHTS["DDR"])
    offsets = np.array(sorted(weights))
    probs = np.array([weights[o] for o in offsets])
    probs = probs / probs.sum()
    worst = spec.worst_pattern
    if worst is not None:
        pattern(worst)

    rng = np.random.default_rng(spec.seed)
    # stratified thresholds: cell i (1-based) lies in [hc_min*(i-1)^(1/k), hc_min*i^(1/k))
    i = np.arange(1, n_cells + 1, dtype=float)
    v = rng.random(n_cells)
    thr = spec.hc_first_min * (i - 1 + v) ** (1.0 / k)
    thr = np.ceil(thr).astype(np.int64)
    thr[0] = spec.hc_first_min
    thr[1:] = np.maximum(thr[1:], spec.hc_first_min + 1)

    cell_offsets = rng.choice(offsets, size=n_cells, p=probs)
    cell_offsets[thr < spec.single_sided_floor * spec.hc_first_min] = 0

    word_bits = 64
    words_per_row = bits_per_phys_row // word_bits
    occupied = set()
    rows_out = np.empty(n_cells, dtype=np.int64)
    bits_out = np.empty(n_cells, dtype=np.int64)
    for n in range(n_cells):
        placed = False
        if n > 0 and rng.random() < spec.cluster:
            j = int(rng.integers(n))
            if cell_offsets[j] != 0 and thr[n] < spec.single_sided_floor * spec.hc_first_min:
                j = 0  # the weakest cell is always double-sided
            row = int(rows_out[j])
            word = int(bits_out[j]) // word_bits
            free = [b for b in range(word * word_bits, (word + 1) * word_bits)
                    if (row, b) not in occupied]
            if free:
                cell_offsets[n] = cell_offsets[j]
                bit = free[int(rng.integers(len(free)))]
                placed = True
        if not placed:
            o = int(cell_offsets[n])
            for _ in range(1000):
                victim = int(rng.integers(1, phys_rows - 1))
                row = victim + o
                bit = int(rng.integers(words_per_row * word_bits))
                if 0 <= row < phys_rows and (row, bit) not in occupied:
                    break
            else:
                raise GenerationError("could not place cell")
        occupied.add((row, bit))
        rows_out[n] = row
        bits_out[n] = bit

    ecc_pair = ecc and n_cells >= 2
    if ecc_pair:
        # On-die ECC corrects a lone weak cell, so the weakest cell gets a
        # partner in the same 128-bit code word that fails one hammer later;
        # the first *visible* flip then appears right at hc_first_min.
        thr[1] = spec.hc_first_min + 1
        cell_offsets[1] = 0
        row0, bit0 = int(rows_out[0]), int(bits_out[0])
        occupied.discard((int(rows_out[1]), int(bits_out[1])))
        word = bit0 // 128
        free = [b for b in range(word * 128, word * 128 + 128)
                if b != bit0 and (row0, b) not in occupied]
        rows_out[1], bits_out[1] = row0, free[int(rng.integers(len(free)))]
        occupied.add((row0, int(bits_out[1])))

    patt_sets = []
    for n in range(n_cells):
        s = {p for p in PATTERN_NAMES if rng.random() < spec.other_pattern_prob}
        if worst is not None and (n == 0 or rng.random() < spec.worst_pattern_prob):
            s.add(worst)
        if not s:
            s.add(worst or PATTERN_NAMES[int(rng.integers(len(PATTERN_NAMES)))])
        patt_sets.append(s)
    if ecc_pair:
        patt_sets[1] |= patt_sets[0]
    first_free = 2 if ecc_pair else 1
    if n_cells > first_free:
        # no single pattern may expose every cell
        for p in PATTERN_NAMES:
            if all(p in s for s in patt_sets):
                cand = [n for n in range(first_free, n_cells) if len(patt_sets[n]) > 1]
                if not cand:
                    cand = list(range(first_free, n_cells))
                    n = cand[int(rng.integers(len(cand)))]
                    patt_sets[n] = {q for q in PATTERN_NAMES if q != p}
                else:
                    patt_sets[cand[int(rng.integers(len(cand)))]].discard(p)

    row_bits = spec.row_size_bytes * 8
    cells = []
    for n in range(n_cells):
        b = int(bits_out[n])
        half, bit = (b // row_bits, b % row_bits) if mapping_kind is MappingKind.PAIRED_WORDLINE else (0, b)
        cells.append(VulnerableCell(int(rows_out[n]), bit, int(thr[n]),
                                    frozenset(patt_sets[n]), int(cell_offsets[n]), half))
    return VulnerabilityProfile(
        label=spec.label, dram_type=dram_type, hc_first_min=spec.hc_first_min,
        rate_coeff=c, rate_exp=k, offset_weights=weights, cells=cells, on_die_ecc=ecc,
        mapping_kind=mapping_kind, mapping_seed=spec.mapping_seed, rows=spec.rows,
        row_size_bytes=spec.row_size_bytes, worst_pattern=worst, hc_star=spec.hc_star,
        spec=spec)


def fit_power_law(hcs: Sequence[float], counts: Sequence[float]) -> Tuple[float, float]:
    """Least-squares fit of ``counts = c * hc**k`` on log-log axes -> ``(c, k)``."""
    x = np.log(np.asarray(hcs, dtype=float))
    y = np.log(np.asarray(counts, dtype=float))
    k, logc = np.polyfit(x, y, 1)
    return float(np.exp(logc)), float(k)


def expected_flip_rate(profile: VulnerabilityProfile, hc: float) -> float:
    if hc < 1:
        raise ValueError("hc must be >= 1")
    return min(1.0, max(0.0, profile.expected_flips(hc) / profile.total_bits))


def calibration_hc(profile: VulnerabilityProfile, rate: float = CALIBRATION_RATE) -> float:
    """HC at which the profile's rate curve reaches ``rate``."""
    return (rate * profile.total_bits / profile.rate_coeff) ** (1.0 / profile.rate_exp)


# ---------------------------------------------------------------------------
# Chip state
# ---------------------------------------------------------------------------

class ChipState:
    """Mutable exposure state of one simulated chip (single bank)."""

    def __init__(self, profile: VulnerabilityProfile, config: Optional[DramConfig] = None,
                 jitter: float = 0.0, seed: int = 0):
        self.profile = profile
        self.config = config or DramConfig(dram_type=profile.dram_type,
                                           rows_per_bank=profile.rows,
                                           row_size_bytes=profile.row_size_bytes)
        self.mapping = profile.mapping()
        self.phys_rows = profile.physical_rows
        self.jitter = jitter
        self.rng = np.random.default_rng(seed)
        cells = profile.cells
        n = len(cells)
        self.cell_row = np.array([c.row for c in cells], dtype=np.int64)
        self.cell_bit = np.array([c.bit_index for c in cells], dtype=np.int64)
        self.cell_half = np.array([c.half for c in cells], dtype=np.int64)
        self.cell_offset = np.array([c.offset for c in cells], dtype=np.int64)
        self.cell_thr = np.array([c.threshold for c in cells], dtype=float)
        self.eff_thr = self.cell_thr.copy()
        # up to two coupled aggressor rows per cell; row index -1 = unused
        self.c_row = np.full((n, 2), -1, dtype=np.int64)
        self.c_w = np.zeros((n, 2))
        for i, cell in enumerate(cells):
            for j, (d, w) in enumerate(cell.couplings()):
                r = cell.row + d
                if 0 <= r < self.phys_rows:
                    self.c_row[i, j] = r
                    self.c_w[i, j] = w
        self.cell_patterns = [c.sensitizing_patterns for c in cells]
        self.acts = np.zeros(self.phys_rows + 1, dtype=float)  # last slot absorbs -1
        self.snap = np.zeros(n)
        self.latched = np.zeros(n, dtype=bool)
        self.data_pattern: Optional[DataPattern] = None
        self.pattern_mask = np.ones(n, dtype=bool)
        order = np.argsort(self.cell_row, kind="stable")
        self._by_row_order = order
        self._row_start = np.searchsorted(self.cell_row[order], np.arange(self.phys_rows + 1))
        self.log: List[tuple] = []
        self.now_ns = 0.0

    # -- helpers ----------------------------------------------------------
    def cells_in_rows(self, lo: int, hi: int) -> np.ndarray:
        lo = max(lo, 0)
        hi = min(hi, self.phys_rows)
        if lo >= hi:
            return np.empty(0, dtype=np.int64)
        return self._by_row_order[self._row_start[lo]:self._row_start[hi]]

    def _exposure(self, idx: np.ndarray) -> np.ndarray:
        return (self.acts[self.c_row[idx]] * self.c_w[idx]).sum(axis=1) - self.snap[idx]

    def max_hc(self) -> int:
        """Largest HC whose core loop stays below the 32 ms bound."""
        loop_ns_per_hammer = 2 * self.config.t_rc
        return int(math.ceil(CORE_LOOP_LIMIT_S * 1e9 / loop_ns_per_hammer)) - 1

    # -- commands ---------------------------------------------------------
    def write_pattern(self, dp) -> None:
        dp = pattern(dp)
        self.data_pattern = dp
        self.pattern_mask = np.array([dp.name in s for s in self.cell_patterns], dtype=bool)
        self.refresh_rows(range(self.phys_rows))
        self.latched[:] = False
        self.log.append(("WRITE", dp.name))

    def refresh_rows(self, rows: Iterable[int]) -> None:
        rows = list(rows)
        if not rows:
            return
        if len(rows) > 64:
            idx = self.cells_in_rows(min(rows), max(rows) + 1)
            sel = np.isin(self.cell_row[idx], rows)
            idx = idx[sel]
        else:
            idx = np.concatenate([self.cells_in_rows(r, r + 1) for r in rows])
        if idx.size:
            exp = self._exposure(idx)
            self.latched[idx] |= (exp >= self.eff_thr[idx]) & self.pattern_mask[idx]
            self.snap[idx] += exp

    def refresh_row(self, row: int) -> None:
        self.refresh_rows((row,))
        self.log.append(("REFRESH", row))

    def activate(self, row: int, count: int = 1) -> None:
        """``count`` back-to-back activations of physical ``row``."""
        self.refresh_rows((row,))  # activation restores the opened row
        self.acts[row] += count

    def hammer_loop(self, aggressors: Sequence[int], hc: int) -> None:
        """Core loop: ``hc`` rounds of one ACT to each aggressor, no refresh."""
        if hc > self.max_hc():
            raise HammerRefused(f"HC={hc} exceeds the 32 ms core-loop bound "
                                f"({self.max_hc()} at tRC={self.config.t_rc} ns)")
        for a in aggressors:
            self.refresh_rows((a,))
            self.acts[a] += hc
        dur = 2 * hc * self.config.t_rc if len(aggressors) > 1 else hc * self.config.t_rc
        self.log.append(("HAMMER", tuple(aggressors), hc, dur))
        self.now_ns += dur

    def flipped_cells(self, lo: int, hi: int) -> np.ndarray:
        idx = self.cells_in_rows(lo, hi)
        if idx.size == 0:
            return idx
        hit = self.latched[idx] | ((self._exposure(idx) >= self.eff_thr[idx]) & self.pattern_mask[idx])
        return idx[hit]

    def _visible(self, idx: np.ndarray) -> List[Tuple[int, int, int]]:
        """``(physical row, half, bit)`` of flipped cells as seen after on-die ECC."""
        raw: Dict[Tuple[int, int], List[int]] = {}
        for i in idx.tolist():
            raw.setdefault((int(self.cell_row[i]), int(self.cell_half[i])), []).append(int(self.cell_bit[i]))
        row_bits = self.profile.row_size_bytes * 8
        out = []
        for (prow, half), bits in raw.items():
            if self.profile.on_die_ecc:
                words: Dict[int, List[int]] = {}
                for b in bits:
                    words.setdefault(b // 128, []).append(b % 128)
                bits = [w * 128 + b for w, wb in words.items() for b in visible_flips(wb)]
            out.extend((prow, half, b) for b in sorted(bits) if b < row_bits)
        return out

    def read_flips(self, victim: int, hc: int, span: int = 7) -> List[FlipRecord]:
        """System-visible flips in rows near ``victim`` (after on-die ECC)."""
        dp = self.data_pattern
        idx = self.flipped_cells(victim - span, victim + span + 1)
        self.log.append(("READ", victim))
        if idx.size == 0:
            return []
        logical = self.mapping.logical
        return [FlipRecord(dp.name, hc, logical(prow, half), b, 1 - dp.bit(prow - victim, b))
                for prow, half, b in self._visible(idx)]

    # -- logical (controller-visible) access --------------------------------
    def hammer_logical(self, aggressors: Sequence[int], hc: int) -> None:
        """Core loop on logical rows; the chip resolves their wordlines."""
        self.hammer_loop([self.mapping.physical(r) for r in aggressors], hc)

    def visible_flip_counts(self) -> Dict[int, int]:
        """Visible flips per logical row over the whole chip."""
        idx = self.flipped_cells(0, self.phys_rows)
        if not self.profile.on_die_ecc:
            keys = self.cell_row[idx] * 2 + self.cell_half[idx]
            uniq, cnt = np.unique(keys, return_counts=True)
            logical = self.mapping.logical
            return {logical(int(k) >> 1, int(k) & 1): int(c) for k, c in zip(uniq, cnt)}
        counts: Dict[int, int] = {}
        for prow, half, _ in self._visible(idx):
            r = self.mapping.logical(prow, half)
            counts[r] = counts.get(r, 0) + 1
        return counts

    def restore(self, victim: int, span: int = 7) -> None:
        """Rewrite the data pattern around ``victim``; clears latched flips."""
        lo, hi = max(0, victim - span), min(self.phys_rows, victim + span + 1)
        self.refresh_rows(range(lo, hi))
        self.latched[self.cells_in_rows(lo, hi)] = False
        self.log.append(("RESTORE", victim))

    def resample_noise(self) -> None:
        """Draw fresh per-iteration threshold noise (no-op when jitter is 0)."""
        if self.jitter > 0:
            noise = self.rng.normal(0.0, self.jitter, size=self.cell_thr.size)
            self.eff_thr = self.cell_thr * np.maximum(0.0, 1.0 + noise)


def hammer(profile: VulnerabilityProfile, chip: ChipState, victim: int, hc: int,
           dp, aggressors: Optional[Sequence[int]] = None) -> List[FlipRecord]:
    """Double-sided hammer of physical ``victim`` and read back the flips.

    The victim is *not* refreshed first; callers wanting a clean test refresh
    it explicitly (as the characterization routine does).
    """
    if chip.profile is not profile:
        raise ValueError("chip state belongs to a different profile")
    if hc < 1:
        raise ValueError("hc must be >= 1")
    if chip.data_pattern is None or chip.data_pattern.name != pattern(dp).name:
        chip.write_pattern(dp)
    if aggressors is None:
        aggressors = [r for r in (victim - 1, victim + 1) if 0 <= r < chip.phys_rows]
    chip.hammer_loop(aggressors, hc)
    return chip.read_flips(victim, hc)


# ---------------------------------------------------------------------------
# Aggregate exposure accounting used by the memory controller and verifier
# ---------------------------------------------------------------------------

class ExposureTracker:
    """Un-refreshed adjacent-activation counts for every row of every bank.

    This is the quantity every mitigation must keep below ``hc_first``.
    Counts are keyed by physical row; ``exposure`` takes a logical row.
    """

    def __init__(self, rows_per_bank: int, mapping: Optional[RowMapping] = None):
        self.rows = rows_per_bank
        if mapping is not None and mapping.kind is MappingKind.IDENTITY:
            mapping = None
        self.mapping = mapping
        self.phys_rows = mapping.physical_rows if mapping else rows_per_bank
        self.counts: Dict[int, int] = {}
        self.max_exposure = 0
        self.max_key = None

    def _phys(self, row: int) -> int:
        return row if self.mapping is None else self.mapping.physical(row)

    def activate(self, bank: int, row: int) -> None:
        counts = self.counts
        p = self._phys(row)
        base = bank * self.rows
        counts.pop(base + p, None)
        for q in (p - 1, p + 1):
            if 0 <= q < self.phys_rows:
                key = base + q
                c = counts.get(key, 0) + 1
                counts[key] = c
                if c > self.max_exposure:
                    self.max_exposure = c
                    self.max_key = (bank, q)

    def refresh(self, bank: int, row: int) -> None:
        self.counts.pop(bank * self.rows + self._phys(row), None)

    def refresh_rows_all_banks(self, rows: range, banks: int) -> None:
        if not self.counts:
            return
        phys = {self._phys(r) for r in rows}
        for b in range(banks):
            base = b * self.rows
            for p in phys:
                self.counts.pop(base + p, None)

    def exposure(self, bank: int, row: int) -> int:
        return self.counts.get(bank * self.rows + self._phys(row), 0)
