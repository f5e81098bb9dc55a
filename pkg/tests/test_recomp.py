from fractions import Fraction

import pytest

from tpipe_sim import (
    ConflictUnresolvable,
    DomainError,
    IncompatibleStrategy,
    PipelineConfig,
    RecomputeMode,
    RecomputePolicy,
    TaskKind,
    build_schedule,
    simulate,
    validate_graph,
)
from tpipe_sim.core import ceil_div
from tpipe_sim.recomp import (
    apply_layer_grouped_trecomp,
    apply_standard_recompute,
    apply_trecomp,
    delay_rounds,
    recompute_pipeline,
)

from conftest import tpipe_cfg

F, B, R = TaskKind.FORWARD, TaskKind.BACKWARD, TaskKind.RECOMPUTE
HALF = Fraction(1, 2)


def blockwise(k=None):
    return RecomputePolicy(RecomputeMode.BLOCKWISE, HALF, k)


def oracle_k(p):
    # brute-force search over the printed constraint, independent of the module
    interval = 3 + 6 * ceil_div(p - 3, 6) - p
    delta = ceil_div(p - 1, 2) - ceil_div(p - 3, 6) - 1
    return next(k for k in range(100) if interval - delta + 7 * k >= 0)


# frozen from oracle_k
DELAY_TABLE = {
    3: 0, 4: 0, 5: 0, 6: 0, 7: 0, 8: 1, 9: 1, 10: 0, 11: 0, 12: 0, 13: 1, 14: 1, 15: 1,
    16: 0, 17: 0, 18: 1, 19: 1, 20: 1, 21: 1, 22: 1, 23: 1, 24: 1, 25: 1, 26: 1, 27: 2,
    28: 1, 29: 1, 30: 1, 31: 1, 32: 2, 33: 2, 34: 1, 35: 1, 36: 2, 37: 2, 38: 2, 39: 2,
    40: 1, 41: 2,
}


def test_delay_rounds_matches_frozen_table():
    assert {p: delay_rounds(p) for p in DELAY_TABLE} == DELAY_TABLE
    assert all(oracle_k(p) == k for p, k in DELAY_TABLE.items())


def test_delay_rounds_anchor_points():
    assert delay_rounds(8) == 1
    assert delay_rounds(40) == 1
    assert delay_rounds(41) == 2
    with pytest.raises(DomainError):
        delay_rounds(2)


def test_zero_ratio_is_identity():
    g = build_schedule(tpipe_cfg(4, 4), "tpipe")
    new, plan = recompute_pipeline(g, RecomputePolicy(RecomputeMode.BLOCKWISE, 0))
    assert new is g and not plan.selected


def test_blockwise_needs_tpipe():
    g = build_schedule(PipelineConfig(p=4, m=8, v=2, t_fwd=8), "interleave")
    with pytest.raises(IncompatibleStrategy):
        apply_trecomp(g, blockwise())


def test_trecomp_reference_point():
    cfg = tpipe_cfg(8, 8, recompute=blockwise())
    g, plan = apply_trecomp(build_schedule(cfg, "tpipe"), cfg.recompute)
    _, _, rep = simulate(g, cfg)
    assert plan.k == 1
    assert rep.stage0_blocks() == 5
    assert rep.peak_activation[0] == Fraction(1, 4)
    assert rep.peak_buffer[0] == Fraction(1, 16)
    assert rep.total_time == 94
    assert rep.recompute_time == 8 * 8


def test_recompute_tasks_have_no_cross_stage_edges():
    cfg = tpipe_cfg(5, 5, recompute=blockwise())
    g, _ = apply_trecomp(build_schedule(cfg, "tpipe"), cfg.recompute)
    for succ, preds in g.deps.items():
        for pred in preds:
            if R in (succ.kind, pred.kind):
                assert succ.stage == pred.stage


@pytest.mark.parametrize("p", [3, 5, 8, 13, 24])
def test_dependency_preservation(p):
    cfg = tpipe_cfg(p, p, recompute=blockwise())
    base = build_schedule(cfg, "tpipe")
    g, _ = apply_trecomp(base, cfg.recompute)

    def cross(graph):
        return {(a, b) for b, ps in graph.deps.items() for a in ps
                if a.stage != b.stage and a.kind in (F, B) and b.kind in (F, B)}

    assert cross(g) == cross(base)


def test_standard_recompute_on_onefoneb():
    cfg = PipelineConfig(p=8, m=8, t_fwd=16)
    g = apply_standard_recompute(build_schedule(cfg, "1f1b"), HALF)
    _, _, rep = simulate(g, cfg)
    assert rep.total_time == 7 * (8 - 1 + 8)
    assert rep.peak_activation[0] == HALF
    assert rep.peak_buffer[0] == Fraction(1, 8)


def test_override_k_zero_legality_depends_on_p():
    cfg = tpipe_cfg(12, 12, recompute=blockwise(0))
    g, plan = apply_trecomp(build_schedule(cfg, "tpipe"), cfg.recompute)
    assert plan.k == 0 and validate_graph(g).empty
    cfg = tpipe_cfg(9, 9, recompute=blockwise(0))
    g, _ = apply_trecomp(build_schedule(cfg, "tpipe"), cfg.recompute)
    assert not validate_graph(g).empty


def test_computed_k_with_conflicts_raises(monkeypatch):
    import tpipe_sim.recomp as recomp

    monkeypatch.setattr(recomp, "delay_rounds", lambda p: 0)
    cfg = tpipe_cfg(9, 9, recompute=blockwise())
    with pytest.raises(ConflictUnresolvable) as info:
        apply_trecomp(build_schedule(cfg, "tpipe"), cfg.recompute)
    assert len(info.value.report) > 0


def test_layer_grouped_accumulation_conflicts():
    cfg = tpipe_cfg(8, 8, recompute=blockwise())
    g, plan = apply_layer_grouped_trecomp(build_schedule(cfg, "tpipe"), cfg.recompute, k=0)
    rep = validate_graph(g)
    assert len(rep) >= 1
    assert all(R not in (t.kind for t in seq) for seq in g.stage_order)


@pytest.mark.parametrize("p", range(4, 25))
def test_delay_is_runtime_neutral(p):
    base = build_schedule(tpipe_cfg(p, p), "tpipe")
    g0, _ = apply_trecomp(base, blockwise(0))
    if not validate_graph(g0).empty:
        pytest.skip("k=0 is not legal here")
    g1, _ = apply_trecomp(base, blockwise(1))
    t0 = simulate(g0)[0].total_time
    t1 = simulate(g1)[0].total_time
    assert t0 == t1


@pytest.mark.parametrize("p", range(3, 41))
def test_no_deep_layer_penalty(p):
    cfg = tpipe_cfg(p, 2 * p)
    plain = simulate(build_schedule(cfg, "tpipe"), cfg)[2]
    g, _ = apply_trecomp(build_schedule(cfg, "tpipe"), blockwise())
    rec = simulate(g, cfg)[2]
    assert rec.chunk_peak_blocks[0][2] <= plain.chunk_peak_blocks[0][2]
    assert rec.chunk_peak_blocks[0][1] == 0
