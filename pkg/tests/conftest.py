"""Shared fixtures."""

import pytest

from rhsim.dram import DramConfig
from rhsim.fault import ProfileSpec, generate_profile


@pytest.fixture(scope="session")
def ddr4():
    return DramConfig()


@pytest.fixture(scope="session")
def small_profile():
    return generate_profile(ProfileSpec(label="t", hc_first_min=4800, dram_type="DDR4",
                                        hc_star=6 * 4800, worst_pattern="RS1", rows=256, seed=7))


@pytest.fixture(scope="session")
def ecc_profile():
    return generate_profile(ProfileSpec(label="e", hc_first_min=4800, dram_type="LPDDR4",
                                        hc_star=6 * 4800, worst_pattern="RS1", rows=256, seed=3))


def dense_spec(mapping: str, seed: int = 1) -> ProfileSpec:
    """Enough weak cells per row that single-sided hammering flips every neighbour."""
    return ProfileSpec(label=f"dense-{mapping}", hc_first_min=1000, dram_type="DDR4",
                       rate_exp=2.9, hc_max=40_000, worst_pattern="RS0", mapping_kind=mapping,
                       mapping_seed=3, seed=seed)


#: acceptance criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
