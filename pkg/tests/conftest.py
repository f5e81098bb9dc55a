import os
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

from tpipe_sim import PipelineConfig, build_schedule, simulate

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CRITERIA: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")


def tpipe_cfg(p, m, **kw):
    """v=2 config with T_unit = 1."""
    return PipelineConfig(p=p, m=m, v=2, t_fwd=2 * p, **kw)


def run(cfg, strategy):
    return simulate(build_schedule(cfg, strategy), cfg)


@pytest.fixture
def criterion():
    return record_criterion


def frac(x):
    return Fraction(x)
