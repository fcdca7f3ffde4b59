"""
Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 security
verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .dram import DramConfig
from .fault import (GenerationError, HammerRefused, ProfileSpec, bundled_profiles, generate_profile,
                    load_bundled, load_profile, ChipState, calibration_hc)
from .harness import (ConfigError, ExperimentConfig, emit_report, load_config, make_policy,
                      run_sweep, verify_security)
from .mitigation import MECHANISMS, InfeasibleTuning, UnsupportedConfiguration
from .workload import (AttackKind, Pattern, TraceError, gen_attack_trace, gen_random_trace,
                       read_trace, simulate, write_trace)

EXIT_OK, EXIT_CONFIG, EXIT_INSECURE = 0, 2, 3
log = logging.getLogger("rhsim")


def _profile(name: str):
    if Path(name).exists():
        return load_profile(name)
    if name.replace("/", "_") in bundled_profiles():
        return load_bundled(name)
    raise ConfigError(f"no profile file or bundled profile named {name!r}; "
                      f"bundled: {', '.join(bundled_profiles())}")


def _emit(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, default=str)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_characterize(a) -> int:
    from . import characterize as ch
    prof = _profile(a.profile)
    chip = ChipState(prof)
    rows = range(a.rows) if a.rows else None
    res = ch.find_hc_first(chip, rows=rows, step=a.step)
    out = {"profile": prof.label, "hc_first": res.hc, "outcome": res.outcome.value,
           "step": a.step, "probes": res.probes}
    if a.coverage and res.hc is not None:
        # offsets are compared at the HC where the rate curve reaches 1e-6
        hc = a.coverage_hc or min(chip.max_hc(), int(round(calibration_hc(prof))))
        db = ch.run_characterization(chip, hc_sweep=[hc], rows=rows or range(min(64, prof.physical_rows)))
        out["coverage"] = {dp: ch.coverage(db, dp) for dp in ch.PATTERN_NAMES} if len(db) else {}
        out["spatial_histogram"] = ch.spatial_histogram(db, chip.mapping)
        out["coverage_hc"] = hc
    _emit(out, a.out)
    return EXIT_OK


def cmd_simulate(a) -> int:
    cfg = load_config(a.config) if a.config else ExperimentConfig()
    traces = [read_trace(p) for p in a.traces]
    policy = None
    if a.mechanism != "none":
        policy = make_policy(a.mechanism, a.hc_first, cfg, a.seed)
    res = simulate(traces, cfg.dram, policy, instructions=a.instructions, warmup=a.warmup)
    _emit({"mechanism": a.mechanism, "hc_first": a.hc_first,
           "cores": [c.__dict__ for c in res.cores], "controller": res.controller,
           "metadata": res.metadata, "policy": policy.metadata() if policy else None}, a.out)
    return EXIT_OK


def cmd_sweep(a) -> int:
    cfg = load_config(a.config) if a.config else ExperimentConfig()
    out = a.out or cfg.output_dir

    def progress(mech, hc, mix, perf, ov):
        log.info("%s hc_first=%s %s: perf=%.2f%% overhead=%.4f", mech, hc, mix, perf, ov)

    res = run_sweep(cfg, progress=progress)
    for p in emit_report(res, out, ["csv", "long"] if a.long else ["csv"]):
        print(p)
    return EXIT_OK


def cmd_verify(a) -> int:
    cfg = load_config(a.config) if a.config else ExperimentConfig()
    if a.ber is not None:
        cfg.para_ber = a.ber
    if a.period is not None:
        cfg.para_period_s = a.period
    rep = verify_security(a.mechanism, a.hc_first, trials=a.trials, seed=a.seed, config=cfg,
                          mode=a.mode, target=a.target, attack=a.attack)
    _emit(rep.to_dict(), a.out)
    return EXIT_OK if rep.secure else EXIT_INSECURE


def cmd_gen_profile(a) -> int:
    if a.spec:
        spec = ProfileSpec.from_dict(json.loads(Path(a.spec).read_text()))
    else:
        spec = ProfileSpec(label=a.label, hc_first_min=a.hc_first_min, dram_type=a.dram_type,
                           hc_star=a.hc_star or 6.0 * a.hc_first_min, worst_pattern=a.worst_pattern,
                           mapping_kind=a.mapping, mapping_seed=a.mapping_seed, rows=a.rows,
                           seed=a.seed)
    prof = generate_profile(spec)
    prof.save(a.out, include_cells=a.cells)
    print(f"{a.out}: {len(prof.cells)} cells, hc_first_min={prof.hc_first_min}")
    return EXIT_OK


def cmd_gen_trace(a) -> int:
    if a.attack:
        trace = gen_attack_trace(AttackKind(a.attack), a.victim, a.length, DramConfig(),
                                 bank=a.bank, rotate=a.rotate)
    else:
        trace = gen_random_trace(a.mpki, a.footprint << 20, a.length, seed=a.seed,
                                 pattern=Pattern(a.pattern))
    write_trace(trace, a.out)
    print(f"{a.out}: {len(trace)} records, {trace.instructions} instructions")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rhsim", description="RowHammer characterization and "
                                "mitigation simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("characterize", help="search a vulnerability profile for HC_first")
    s.add_argument("--profile", required=True, help="profile file or bundled name")
    s.add_argument("--step", type=int, default=100)
    s.add_argument("--rows", type=int, help="test only the first N rows")
    s.add_argument("--coverage", action="store_true", help="also report coverage and offsets")
    s.add_argument("--coverage-hc", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_characterize)

    s = sub.add_parser("simulate", help="run traces on the multi-core system")
    s.add_argument("traces", nargs="+")
    s.add_argument("--mechanism", choices=MECHANISMS, default="none")
    s.add_argument("--hc-first", type=int, default=2000)
    s.add_argument("--instructions", type=int)
    s.add_argument("--warmup", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="mechanism x HC_first sweep over workload mixes")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--long", action="store_true", help="also write the long-format table")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("verify", help="adversarial security check of one mechanism")
    s.add_argument("--mechanism", choices=[m for m in MECHANISMS if m != "none"], required=True)
    s.add_argument("--hc-first", type=int, required=True)
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=["refresh-window", "attack-window"])
    s.add_argument("--target", type=float, help="tolerated per-trial failure probability")
    s.add_argument("--ber", type=float, help="PARA failure target per period")
    s.add_argument("--period", type=float, help="PARA target period in seconds")
    s.add_argument("--attack", choices=[k.value for k in AttackKind], default="double_sided")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("gen-profile", help="generate a synthetic vulnerability profile")
    s.add_argument("--spec", help="JSON file of generation parameters")
    s.add_argument("--label", default="custom")
    s.add_argument("--hc-first-min", type=int, default=10_000)
    s.add_argument("--dram-type", choices=["DDR3", "DDR4", "LPDDR4"], default="DDR4")
    s.add_argument("--hc-star", type=float, help="HC at a 1e-6 flip rate (default 6 x hc-first-min)")
    s.add_argument("--worst-pattern")
    s.add_argument("--mapping", choices=["Identity", "PairedWordline", "Permuted"], default="Identity")
    s.add_argument("--mapping-seed", type=int)
    s.add_argument("--rows", type=int, default=1024)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cells", action="store_true", help="store the cells, not only the generation parameters")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_profile)

    s = sub.add_parser("gen-trace", help="write a synthetic or attack trace")
    s.add_argument("--mpki", type=float, default=10.0)
    s.add_argument("--pattern", choices=[x.value for x in Pattern], default="random")
    s.add_argument("--footprint", type=int, default=256, help="MiB")
    s.add_argument("--length", type=int, default=100_000,
                   help="instructions, or hammers for an attack trace")
    s.add_argument("--attack", choices=[k.value for k in AttackKind])
    s.add_argument("--victim", type=int, default=1000)
    s.add_argument("--bank", type=int, default=0)
    s.add_argument("--rotate", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_trace)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GenerationError, TraceError, HammerRefused, UnsupportedConfiguration,
            InfeasibleTuning, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
