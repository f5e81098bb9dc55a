from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tpipe_sim import DomainError, OffloadPolicy, PipelineConfig, RecomputeMode, RecomputePolicy
from tpipe_sim.analytic import (
    analytic_report,
    baseline_peaks,
    bwd_interval,
    cross_check,
    fwd_interval,
    offload_conditions,
    standard_recompute_forms,
    tpipe_lifespans,
    tpipe_peaks,
    tpipe_time,
    trecomp_closed_forms,
    trecomp_efficiency,
)

from conftest import run, tpipe_cfg


def test_tpipe_peaks_examples():
    assert tpipe_peaks(8) == (9, 4, Fraction(13, 16))
    assert tpipe_peaks(3) == (4, 2, Fraction(1))
    with pytest.raises(DomainError):
        tpipe_peaks(2)


def test_mixed_ceiling_is_exact():
    # 2/3 + 0 + 1 + 3/2 = 19/6; a float sum can land on either side of an integer elsewhere
    for p in range(3, 200):
        c1 = tpipe_peaks(p)[0]
        inner = Fraction(2, 3) + -(-(p - 3) // 6) + -(-(2 * p - 3) // 6) + Fraction(p, 2)
        assert c1 - 1 < inner <= c1


def test_large_p_limit():
    assert Fraction(74, 100) < tpipe_peaks(120)[2] < Fraction(78, 100)


def test_intervals():
    assert fwd_interval(8) == 1
    assert bwd_interval(8) == 5
    life1, life2 = tpipe_lifespans(8)
    assert life2 == 22 and life1 == 6 * 8 - 2 + 1 + 5


def test_tpipe_time():
    assert tpipe_time(8, 8) == (16, 42, 32, 90, Fraction(7, 15))
    assert tpipe_time(1, 5)[4] == 0
    assert tpipe_time(4, 800)[4] < Fraction(1, 100)


def test_trecomp_forms():
    tr = trecomp_closed_forms(8, 8)
    assert tuple(tr) == (26, 4, 97)
    assert tr.blocks == 4
    assert tr.storage_fraction == Fraction(5, 16)
    big = trecomp_closed_forms(100, 1)
    assert Fraction(24, 100) < big.storage_fraction_no_buffer < Fraction(26, 100)
    assert big.storage_fraction == Fraction(51, 200)


def test_standard_recompute_forms():
    d = standard_recompute_forms(8, 8)
    assert d["total_time"] == 105
    assert d["activation_fraction"] == Fraction(1, 2)


@pytest.mark.parametrize("p", range(6, 60))
def test_efficiency_claim(p):
    tr = trecomp_closed_forms(p, p).storage_fraction
    assert tr <= Fraction(2, 3) * standard_recompute_forms(p, p)["activation_fraction"]


def test_baseline_peaks():
    assert baseline_peaks(4, 1, 3) == Fraction(1, 4)
    assert baseline_peaks(4, 2, 0) == Fraction(11, 8)
    assert baseline_peaks(1, 3, 0) == 1


def test_offload_conditions():
    t_bwd = 32
    assert offload_conditions(8, 4 * t_bwd, 0, 16, t_bwd) == (True, True)
    assert offload_conditions(8, Fraction(41, 10) * t_bwd, 0, 16, t_bwd)[0] is False
    assert offload_conditions(5, 0, 0, 1, 2) == (True, True)
    with pytest.raises(DomainError):
        offload_conditions(1, 0, 0, 1, 2)


@pytest.mark.parametrize("p", [6, 8, 12])
def test_report_matches_simulation_at_m_2p(p):
    cfg = tpipe_cfg(p, 2 * p)
    _, _, rep = run(cfg, "tpipe")
    checks = cross_check(analytic_report(cfg, "TPipe"), cfg, rep)
    assert {k for k, v in checks.items() if v["status"] == "divergence"} == set()


def test_report_marks_divergence():
    cfg = tpipe_cfg(8, 8, recompute=RecomputePolicy(RecomputeMode.BLOCKWISE, Fraction(1, 2)))
    from tpipe_sim import build_schedule, simulate
    from tpipe_sim.recomp import recompute_pipeline

    g, plan = recompute_pipeline(build_schedule(cfg, "tpipe"), cfg.recompute)
    _, _, rep = simulate(g, cfg)
    checks = cross_check(analytic_report(cfg, "TPipe"), cfg, rep, plan)
    assert checks["total_time"] == {
        "id": "trecomp.total_time", "status": "divergence", "analytic": "97", "simulated": "94",
    }
    assert checks["stage0_peak_blocks"]["status"] == "match"


@pytest.mark.parametrize("p, v", [(4, 2), (4, 4), (8, 2), (8, 4)])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_interleave_bubble_is_one_over_v(p, v, k):
    m = k * p
    one = run(PipelineConfig(p=p, m=m, t_fwd=p * v), "1f1b")[2]
    inter = run(PipelineConfig(p=p, m=m, v=v, t_fwd=p * v), "interleave")[2]
    for s in range(p):
        assert (inter.total_time - inter.busy_time[s]) * v == one.total_time - one.busy_time[s]


@given(st.integers(3, 400))
def test_peak_fraction_is_consistent(p):
    c1, c2, total = tpipe_peaks(p)
    assert total == Fraction(c1 + c2, 2 * p)
    assert c2 <= c1
