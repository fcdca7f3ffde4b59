"""Characterize a bundled LPDDR4 chip the way a test infrastructure would.

Walks through the analyses in order: the first flipping hammer count, which
data pattern exposes which flips, where flips land relative to the victim,
how many hammers it takes to put 1/2/3 flips in one ECC word, and how on-die
ECC hides the monotone growth of flips.

Run: python3 demos/01_characterize_chip.py
"""

from rhsim import characterize as ch
from rhsim.fault import PATTERN_NAMES, ChipState, calibration_hc, load_bundled

NAME = "LPDDR4-1y/MfrA"
ROWS = range(1, 400)  # a slice keeps the demo under a minute

prof = load_bundled(NAME)
chip = ChipState(prof)
print(f"{NAME}: {len(prof.cells)} vulnerable cells, on-die ECC {prof.on_die_ecc}")

# HC_first: coarse doubling then binary refinement in steps of 100 hammers.
# The search sees flips through on-die ECC, so it can land a step above the
# weakest raw cell when that cell's lone flip is corrected.
res = ch.find_hc_first(chip, step=100)
print(f"HC_first found {res.hc} ({res.outcome.value}); planted minimum {prof.hc_first_min}")

# pattern coverage at the calibration point (flip rate 1e-6)
hc = int(calibration_hc(prof))
db = ch.run_characterization(chip, hc_sweep=[hc], rows=ROWS)
print(f"coverage at HC {hc}:")
for dp in PATTERN_NAMES:
    print(f"  {dp:4s} {ch.coverage(db, dp):6.1%}")

# spatial distribution: share of flips at each row offset from the victim
hist = ch.spatial_histogram(db)
print("flips by row offset:", {k: round(v, 3) for k, v in sorted(hist.items())})

# hammers needed for the first word with 1, 2 and 3 flips; behind on-die ECC a
# lone flip is corrected, so the first visible word often already holds several
prev = None
for n in (1, 2, 3):
    r = ch.hc_nth_word(chip, n, rows=ROWS, step=100, previous=prev)
    print(f"first 64-bit word with {n} flip(s): HC {r.hc}")
    prev = r.hc

# on-die ECC makes visible flip behaviour non-monotone in HC
frac = ch.monotonic_fraction(chip, range(25_000, 150_001, 25_000), iterations=5, rows=ROWS)
print(f"cells with monotone flip probability: {frac:.1f}%")
