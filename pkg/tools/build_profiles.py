"""
Regenerate the bundled vulnerability profiles.

Each file stores only the generation spec; cells are regenerated
deterministically on load.  The lowest HC_first per chip and the worst data
pattern per type-node come from published characterization tables; HC* (the
HC at which the flip rate reaches 1e-6) is set to six times HC_first.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rhsim.fault import DEFAULT_OFFSET_WEIGHTS, PROFILE_DIR, ProfileSpec, generate_profile  # noqa: E402

# (type-node, manufacturer, lowest HC_first, worst pattern, mapping)
TABLE = [
    ("DDR3-old", "A", 69_200, None, "Identity"),
    ("DDR3-old", "B", 157_000, None, "Identity"),
    ("DDR3-old", "C", 155_000, None, "Identity"),
    ("DDR3-new", "A", 85_000, None, "Identity"),
    ("DDR3-new", "B", 22_400, "CH0", "Identity"),
    ("DDR3-new", "C", 24_000, "CH0", "Identity"),
    ("DDR4-old", "A", 17_500, "RS1", "Identity"),
    ("DDR4-old", "B", 30_000, "RS1", "Identity"),
    ("DDR4-old", "C", 87_000, "RS0", "Identity"),
    ("DDR4-new", "A", 10_000, "RS0", "Identity"),
    ("DDR4-new", "B", 25_000, "RS0", "Identity"),
    ("DDR4-new", "C", 40_000, "CH1", "Identity"),
    ("LPDDR4-1x", "A", 43_200, "CH1", "Identity"),
    ("LPDDR4-1x", "B", 16_800, "CH0", "PairedWordline"),
    ("LPDDR4-1y", "A", 4_800, "RS1", "Identity"),
    ("LPDDR4-1y", "C", 9_600, "RS1", "Identity"),
]


def spec_for(node: str, mfr: str, hc: int, worst, mapping: str, seed: int) -> ProfileSpec:
    dram_type = node.split("-")[0]
    weights = DEFAULT_OFFSET_WEIGHTS[node] if node.startswith("LPDDR4") else DEFAULT_OFFSET_WEIGHTS["DDR"]
    return ProfileSpec(label=f"{node}/Mfr{mfr}", hc_first_min=hc, dram_type=dram_type,
                       hc_star=6.0 * hc, offset_weights=dict(weights), worst_pattern=worst,
                       mapping_kind=mapping, seed=seed)


def main() -> None:
    PROFILE_DIR.mkdir(exist_ok=True)
    for seed, row in enumerate(TABLE):
        spec = spec_for(*row, seed=seed)
        prof = generate_profile(spec)
        path = PROFILE_DIR / f"{spec.label.replace('/', '_')}.json"
        prof.save(path, include_cells=False)
        print(f"{path.name}: {len(prof.cells)} cells, hc_first_min={prof.hc_first_min}")


if __name__ == "__main__":
    main()
