"""How mitigation cost grows as chips become more vulnerable.

Sweeps each mechanism over a few HC_first values on two small synthetic
mixes and prints mean normalized performance and DRAM bandwidth overhead.
The full-size version of this experiment is demos/acceptance_sweep.json,
run through the CLI.

Run: python3 demos/03_scaling_sweep.py
"""

from rhsim.harness import ExperimentConfig, run_sweep

cfg = ExperimentConfig.from_dict({
    "mechanisms": ["PARA", "TWiCe-ideal", "Ideal", "IncreasedRefresh"],
    "hc_first": [200_000, 32_000, 4_800, 1_000, 128],
    "workload": {"mixes": 2, "cores": 4, "instructions": 5_000, "warmup": 1_000},
})
res = run_sweep(cfg)

print(f"{'mechanism':18s}" + "".join(f"{h:>10}" for h in cfg.hc_first))
for mech in cfg.mechanisms:
    cells = []
    for h in cfg.hc_first:
        row = res.aggregate(mech, h)
        cells.append(f"{row.normalized_performance:9.1f}%" if row.status == "ok" else f"{'N/A':>10}")
    print(f"{mech:18s}" + "".join(cells))
print(f"({res.metadata['elapsed_s']:.0f} s)")
