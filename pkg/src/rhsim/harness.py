"""
Experiment configuration, mitigation sweeps, security verification and
report emission.

A sweep runs every (mechanism, HC_first) pair over a set of multi-core
workload mixes and reports DRAM bandwidth overhead and performance normalized
to the unmitigated system.  Pairs a mechanism cannot serve are reported as
N/A rows with a reason rather than failing the run.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .dram import CommandKind, DramConfig, RowMapping, ref_batch_rows
from .fault import ExposureTracker
from .memctrl import MemoryController
from .mitigation import (FIXED_POINT_MECHANISMS, MECHANISMS, IncreasedRefresh, InfeasibleTuning,
                         MitigationPolicy, UnsupportedConfiguration, build_policy,
                         para_failure_probability)
from .workload import (Pattern, Trace, attack_rows, gen_random_trace, normalized_performance,
                       read_trace, simulate, weighted_speedup, AttackKind)

DEFAULT_HC_SWEEP = (200_000, 100_000, 50_000, 32_000, 16_000, 8_000, 4_800, 2_000,
                    1_024, 512, 256, 128, 64)
#: lowest HC_first per chip type, drawn as vertical markers on plots
CHIP_MARKERS = {"DDR3-old": 69_200, "DDR3-new": 22_400, "DDR4-old": 17_500,
                "DDR4-new": 10_000, "LPDDR4-1x": 16_800, "LPDDR4-1y": 4_800}
DETERMINISTIC = ("TWiCe", "TWiCe-ideal", "Ideal", "IncreasedRefresh")
PROBABILISTIC = ("PARA", "ProHIT", "MRLoc")


class ConfigError(ValueError):
    """The experiment configuration is malformed."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class WorkloadSpec:
    mixes: int = 8
    cores: int = 8
    instructions: int = 2_000_000
    warmup: int = 20_000
    #: explicit per-mix trace paths; overrides the synthetic mixes
    traces: Optional[List[List[str]]] = None
    mpki_range: Tuple[float, float] = (10.0, 740.0)


@dataclass
class ExperimentConfig:
    dram: DramConfig = field(default_factory=DramConfig)
    mechanisms: List[str] = field(default_factory=lambda: [m for m in MECHANISMS if m != "none"])
    mechanism_params: Dict[str, dict] = field(default_factory=dict)
    hc_first: List[int] = field(default_factory=lambda: list(DEFAULT_HC_SWEEP))
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    profile: Optional[str] = None  # bundled name or path; used by characterize
    seed: int = 0
    #: seeds of the probabilistic mechanisms; results are averaged over them
    seeds: Optional[List[int]] = None
    output_dir: str = "results"
    para_ber: float = 1e-15
    para_period_s: float = 3600.0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "dram" in d:
                d["dram"] = DramConfig.from_dict(d["dram"])
            if "workload" in d:
                w = dict(d["workload"])
                wk = set(w) - set(WorkloadSpec.__dataclass_fields__)
                if wk:
                    raise ConfigError(f"unknown workload keys: {sorted(wk)}")
                if "mpki_range" in w:
                    w["mpki_range"] = tuple(w["mpki_range"])
                d["workload"] = WorkloadSpec(**w)
            cfg = cls(**d)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dram"] = self.dram.to_dict()
        d["workload"]["mpki_range"] = list(self.workload.mpki_range)
        return d

    def validate(self) -> None:
        for m in self.mechanisms:
            if m not in MECHANISMS:
                raise ConfigError(f"unknown mechanism {m!r}; choose from {MECHANISMS}")
        for m in self.mechanism_params:
            if m not in MECHANISMS:
                raise ConfigError(f"parameters given for unknown mechanism {m!r}")
        if not self.hc_first or any(not isinstance(h, int) or h < 1 for h in self.hc_first):
            raise ConfigError("hc_first must be a non-empty list of positive integers")
        w = self.workload
        if not 1 <= w.cores <= 8:
            raise ConfigError("workload.cores must lie in [1, 8]")
        if w.mixes < 1 or w.instructions < 1 or w.warmup < 0:
            raise ConfigError("workload mixes/instructions must be positive")
        lo, hi = w.mpki_range
        if not 0 < lo <= hi <= 1000:
            raise ConfigError("workload.mpki_range must satisfy 0 < lo <= hi <= 1000")
        if w.traces is not None and (not w.traces or any(not m for m in w.traces)):
            raise ConfigError("workload.traces must be a non-empty list of non-empty mixes")
        if not 0 < self.para_ber < 1:
            raise ConfigError("para_ber must lie in (0, 1)")
        if self.seeds is not None and (not self.seeds or len(set(self.seeds)) != len(self.seeds)):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if self.dram.channels != 1 or self.dram.ranks != 1:
            raise ConfigError("only single-channel, single-rank systems are simulated")


def load_config(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# Workload mixes
# ---------------------------------------------------------------------------

@dataclass
class Mix:
    name: str
    traces: List[Trace]

    @property
    def mpki(self) -> float:
        targets = [t.mpki_target for t in self.traces if t.mpki_target is not None]
        return float(np.mean(targets)) if targets else float("nan")


def synthetic_mixes(spec: WorkloadSpec, config: DramConfig, seed: int = 0) -> List[Mix]:
    """Mixes whose mean intensity rises geometrically across ``mpki_range``.

    Each core draws an MPKI around its mix's level and one of three access
    patterns; about a quarter of the cores cycle through LLC-conflicting
    lines of a single bank, which concentrates activations on a few rows.
    """
    lo, hi = spec.mpki_range
    levels = np.geomspace(lo, hi, spec.mixes) if spec.mixes > 1 else np.array([math.sqrt(lo * hi)])
    region = config.capacity_bytes // spec.cores
    length = spec.instructions + spec.warmup
    mixes = []
    for i, level in enumerate(levels):
        rng = np.random.default_rng([seed, i])
        traces = []
        for c in range(spec.cores):
            mpki = float(np.clip(level * rng.uniform(0.5, 1.5), lo, hi))
            u = rng.random()
            pat = Pattern.CONFLICT if u < 0.25 else (Pattern.STREAM if u < 0.5 else Pattern.RANDOM)
            footprint = region - (1 << 20)
            t = gen_random_trace(round(mpki, 1), footprint, length, seed=int(rng.integers(1 << 31)),
                                 pattern=pat)
            traces.append(t)
        mixes.append(Mix(f"mix{i}", traces))
    return mixes


def load_mixes(spec: WorkloadSpec) -> List[Mix]:
    return [Mix(f"mix{i}", [read_trace(p) for p in paths]) for i, paths in enumerate(spec.traces)]


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    row_type: str  # "data", "aggregate" or "baseline"
    mechanism: str
    hc_first: Optional[int]
    mix: str
    bandwidth_overhead: Optional[float]
    normalized_performance: Optional[float]
    perf_min: Optional[float] = None
    perf_max: Optional[float] = None
    overhead_min: Optional[float] = None
    overhead_max: Optional[float] = None
    status: str = "ok"
    reason: str = ""
    tuned: str = ""


@dataclass
class SweepResult:
    rows: List[SweepRow]
    metadata: dict

    def aggregate(self, mechanism: str, hc_first: int) -> SweepRow:
        for r in self.rows:
            if r.row_type == "aggregate" and r.mechanism == mechanism and r.hc_first == hc_first:
                return r
        raise KeyError((mechanism, hc_first))

    def data(self, mechanism: str, hc_first: int) -> List[SweepRow]:
        return [r for r in self.rows if r.row_type == "data" and r.mechanism == mechanism
                and r.hc_first == hc_first]


def _tuned(policy: MitigationPolicy) -> str:
    meta = policy.metadata()
    return ";".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in meta.items() if k != "mechanism")


def replay_emits_directive(policy: MitigationPolicy, log, config: DramConfig) -> bool:
    """Would ``policy`` have issued any directive on this recorded command stream?

    Until its first directive a policy cannot influence the controller, so
    a silent replay proves the mitigated run equals the unmitigated one.
    """
    for cmd in log:
        if cmd.kind is CommandKind.ACT:
            if policy.on_activate(cmd.bank, cmd.row, cmd.issue_cycle):
                return True
        elif cmd.kind is CommandKind.REF:
            if policy.on_refresh(cmd.issue_cycle, ref_batch_rows(config, cmd.row)):
                return True
    return False



def make_policy(mechanism: str, hc_first: int, config: ExperimentConfig, seed: int = 0,
                strict_fixed_point: bool = True) -> MitigationPolicy:
    params = dict(config.mechanism_params.get(mechanism, {}))
    if mechanism == "PARA" and "p" not in params:
        params.setdefault("ber_target", config.para_ber)
        params.setdefault("period_s", config.para_period_s)
    return build_policy(mechanism, hc_first, config.dram, seed=seed, params=params,
                        strict_fixed_point=strict_fixed_point)


def run_sweep(config: ExperimentConfig, progress=None) -> SweepResult:
    """Every (mechanism, HC_first) pair over every mix, plus per-pair aggregates."""
    config.validate()
    dram = config.dram
    w = config.workload
    mixes = load_mixes(w) if w.traces else synthetic_mixes(w, dram, config.seed)
    t0 = time.time()
    sim_kw = dict(instructions=w.instructions, warmup=w.warmup)

    # IPC of each trace running alone, and the unmitigated shared baseline
    alone: Dict[str, List[float]] = {}
    base_ws: Dict[str, float] = {}
    base_logs: Dict[str, list] = {}
    rows: List[SweepRow] = []
    for mix in mixes:
        alone[mix.name] = [simulate([t], dram, **sim_kw).cores[0].ipc for t in mix.traces]
        res = simulate(mix.traces, dram, None, controller_kw={"log_commands": True}, **sim_kw)
        base_ws[mix.name] = weighted_speedup(res.ipc, alone[mix.name])
        base_logs[mix.name] = res.log
        rows.append(SweepRow("baseline", "none", None, mix.name, 0.0, 100.0,
                             tuned=f"weighted_speedup={base_ws[mix.name]:.6g}"))

    tuned_meta: Dict[str, Dict[int, str]] = {}
    runs = shortcuts = 0
    for mech in config.mechanisms:
        if mech == "none":
            continue
        for hc in config.hc_first:
            try:
                make_policy(mech, hc, config, config.seed)
            except (UnsupportedConfiguration, InfeasibleTuning, ValueError) as e:
                rows.append(SweepRow("aggregate", mech, hc, "all", None, None,
                                     status="N/A", reason=str(e)))
                continue
            perfs, ovs = [], []
            tuned = ""
            seeds = (config.seeds or [config.seed]) if mech in PROBABILISTIC else [config.seed]
            for mix in mixes:
                runs_p, runs_o = [], []
                for seed in seeds:
                    policy = make_policy(mech, hc, config, seed)
                    tuned = _tuned(policy)
                    probe = make_policy(mech, hc, config, seed)
                    if not isinstance(policy, IncreasedRefresh) and \
                            not replay_emits_directive(probe, base_logs[mix.name], dram):
                        runs_p.append(100.0)
                        runs_o.append(0.0)
                        shortcuts += 1
                        continue
                    res = simulate(mix.traces, dram, policy, **sim_kw)
                    ws = weighted_speedup(res.ipc, alone[mix.name])
                    runs_p.append(normalized_performance(ws, base_ws[mix.name]))
                    runs_o.append(res.controller["bandwidth_overhead"])
                    runs += 1
                perf, ov = float(np.mean(runs_p)), float(np.mean(runs_o))
                perfs.append(perf)
                ovs.append(ov)
                rows.append(SweepRow("data", mech, hc, mix.name, ov, perf, tuned=tuned))
                if progress:
                    progress(mech, hc, mix.name, perf, ov)
            tuned_meta.setdefault(mech, {})[hc] = tuned
            rows.append(SweepRow("aggregate", mech, hc, "all", float(np.mean(ovs)),
                                 float(np.mean(perfs)), min(perfs), max(perfs), min(ovs),
                                 max(ovs), tuned=tuned))
    meta = {
        "config": config.to_dict(),
        "mixes": {m.name: {"mpki_targets": [t.mpki_target for t in m.traces],
                           "mean_mpki": m.mpki} for m in mixes},
        "tuned_parameters": {m: {str(h): v for h, v in d.items()} for m, d in tuned_meta.items()},
        "bandwidth_overhead_denominator": "consumed bank-busy cycles (ACT/MitigationREF/REF "
                                          "occupancy t_rc, RD/WR t_burst)",
        "plot": {"x": "hc_first, descending left to right",
                 "overhead_axis": "log scale, inverted",
                 "markers": CHIP_MARKERS},
        "warmup": "LLC warmed functionally with mitigation disabled, then metrics reset",
        "simulated_runs": runs,
        "replay_shortcuts": shortcuts,
        "elapsed_s": time.time() - t0,
    }
    return SweepResult(rows, meta)



# ---------------------------------------------------------------------------
# Security verification
# ---------------------------------------------------------------------------

@dataclass
class SecurityReport:
    mechanism: str
    hc_first: int
    trials: int
    failures: int
    upper_conf_bound: float
    max_exposure: int
    mode: str
    target: Optional[float] = None
    tuned: str = ""

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials

    @property
    def three_sigma_limit(self) -> Optional[float]:
        if self.target is None:
            return None
        return self.target + 3.0 * math.sqrt(self.target * (1 - self.target) / self.trials)

    @property
    def secure(self) -> bool:
        if self.target is None:
            return self.failures == 0
        return self.failure_rate <= self.three_sigma_limit

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(failure_rate=self.failure_rate, secure=self.secure,
                 three_sigma_limit=self.three_sigma_limit)
        return d


def clopper_pearson_upper(failures: int, trials: int, confidence: float = 0.95) -> float:
    """One-sided upper confidence bound on a binomial failure probability."""
    if failures >= trials:
        return 1.0
    return float(stats.beta.ppf(confidence, failures + 1, trials - failures))


def _victim(config: DramConfig, mapping: Optional[RowMapping]) -> int:
    v = config.rows_per_bank // 2
    if mapping is not None and mapping.kind.value == "PairedWordline":
        v -= v % 2
    return v


def verify_security(mechanism: str, hc_first: int, trials: int = 1, seed: int = 0,
                    config: Optional[ExperimentConfig] = None, mode: Optional[str] = None,
                    target: Optional[float] = None, mapping: Optional[RowMapping] = None,
                    attack: str = "double_sided", rotate: int = 1,
                    window_cycles: Optional[int] = None) -> SecurityReport:
    """Adversarial hammering of one bank; counts trials where a row reaches ``hc_first``.

    ``mode="refresh-window"`` (default for deterministic mechanisms) drives
    the full memory controller for one refresh window per trial and audits
    every row with an exposure tracker.  ``mode="attack-window"`` (default for
    probabilistic ones) runs each trial as a fresh attack of ``hc_first``
    back-to-back adjacent activations fed straight to the policy, with REF
    events at the baseline cadence; a trial fails if the victim is never
    refreshed.  ``target`` is the per-trial failure probability the mechanism
    is expected to meet; ``None`` demands zero failures.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    config = config or ExperimentConfig()
    dram = config.dram
    if mode is None:
        mode = "attack-window" if mechanism in PROBABILISTIC else "refresh-window"
    strict = mechanism not in FIXED_POINT_MECHANISMS
    policy = make_policy(mechanism, hc_first, config, seed, strict_fixed_point=strict)
    tuned = _tuned(policy)
    if target is None and mechanism == "PARA":
        target = para_failure_probability(policy.p, hc_first)
    elif target is None and mechanism in FIXED_POINT_MECHANISMS:
        target = 1e-3
    victim = _victim(dram, mapping)
    rows = attack_rows(AttackKind(attack), victim, 1, dram.rows_per_bank, mapping, rotate=rotate)
    failures = 0
    worst = 0
    if mode == "refresh-window":
        end = window_cycles or dram.t_refw_cycles
        for t in range(trials):
            pol = policy if t == 0 else make_policy(mechanism, hc_first, config, seed + t, strict)
            tracker = ExposureTracker(dram.rows_per_bank, mapping)
            ctrl = MemoryController(dram, pol, tracker=tracker)

            def stream():
                while True:
                    yield from rows

            ctrl.run_activation_stream(0, stream(), stop=lambda: ctrl.now >= end)
            ctrl.drain()
            worst = max(worst, tracker.max_exposure)
            failures += tracker.max_exposure >= hc_first
    elif mode == "attack-window":
        refi_acts = max(1, dram.t_refi_cycles // dram.t_rc_cycles)
        t_rc = dram.t_rc_cycles
        rng = np.random.default_rng(seed)
        phases = rng.integers(0, refi_acts, size=trials)
        nrows = len(rows)
        for t in range(trials):
            if mechanism != "PARA" and t:
                policy = make_policy(mechanism, hc_first, config, seed + t, strict)
            tracker = ExposureTracker(dram.rows_per_bank, mapping)
            counts = tracker.counts
            phase = int(phases[t])
            now = 0
            for i in range(hc_first * nrows // 2 if attack == "double_sided" else hc_first):
                row = rows[i % nrows]
                tracker.activate(0, row)
                now += t_rc
                for d in policy.on_activate(0, row, now):
                    tracker.refresh(d.bank, d.row)
                if (i + phase) % refi_acts == 0:
                    # the REF's own batch is far from the victim; only its directives matter
                    for d in policy.on_refresh(now, range(0)):
                        tracker.refresh(d.bank, d.row)
                remaining = hc_first * nrows // 2 - i - 1
                if not counts or max(counts.values()) + remaining < hc_first:
                    break
            worst = max(worst, tracker.max_exposure)
            failures += tracker.max_exposure >= hc_first
    else:
        raise ValueError(f"unknown verification mode {mode!r}")
    return SecurityReport(mechanism, hc_first, trials, failures,
                          clopper_pearson_upper(failures, trials), worst, mode, target, tuned)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

CSV_COLUMNS = ["row_type", "mechanism", "hc_first", "mix", "bandwidth_overhead",
               "normalized_performance", "perf_min", "perf_max", "overhead_min",
               "overhead_max", "status", "reason", "tuned"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def emit_report(result: SweepResult, out_dir, formats: Sequence[str] = ("csv",)) -> List[Path]:
    """Write ``sweep.csv`` and ``sweep_meta.json`` (and ``sweep_long.csv`` on request)."""
    if not result.rows:
        raise ValueError("cannot report an empty sweep")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "sweep.csv"
    with open(p, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(CSV_COLUMNS)
        for r in result.rows:
            wr.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    paths.append(p)
    if "long" in formats:
        p = out / "sweep_long.csv"
        order = sorted({r.hc_first for r in result.rows if r.hc_first is not None}, reverse=True)
        with open(p, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["mechanism", "hc_first", "x_position", "metric", "value", "min", "max"])
            for r in result.rows:
                if r.row_type != "aggregate" or r.status != "ok":
                    continue
                x = order.index(r.hc_first)
                wr.writerow([r.mechanism, r.hc_first, x, "bandwidth_overhead",
                             _fmt(r.bandwidth_overhead), _fmt(r.overhead_min), _fmt(r.overhead_max)])
                wr.writerow([r.mechanism, r.hc_first, x, "normalized_performance",
                             _fmt(r.normalized_performance), _fmt(r.perf_min), _fmt(r.perf_max)])
        paths.append(p)
    p = out / "sweep_meta.json"
    meta = dict(result.metadata)
    meta["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    p.write_text(json.dumps(meta, indent=2, default=str) + "\n")
    paths.append(p)
    return paths
