from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tpipe_sim import IncompatibleStrategy, PipelineConfig, StrategyKind, TaskKind, build_schedule
from tpipe_sim.sched import expand_template, tpipe_priority, tpipe_template, validate_graph, TaskGraph
from tpipe_sim.core import TaskId

F, B = TaskKind.FORWARD, TaskKind.BACKWARD


@pytest.mark.parametrize("text, kind", [
    ("1f1b", StrategyKind.ONE_F_ONE_B),
    ("OneFOneB", StrategyKind.ONE_F_ONE_B),
    ("interleave", StrategyKind.INTERLEAVE),
    ("Interleave-1F1B", StrategyKind.INTERLEAVE),
    ("t-pipe", StrategyKind.TPIPE),
])
def test_strategy_aliases(text, kind):
    assert StrategyKind.parse(text) is kind


def test_strategy_requirements():
    with pytest.raises(IncompatibleStrategy):
        build_schedule(PipelineConfig(p=4, m=4, v=2), "1f1b")
    with pytest.raises(IncompatibleStrategy):
        build_schedule(PipelineConfig(p=4, m=4, v=1), "tpipe")
    with pytest.raises(IncompatibleStrategy):
        build_schedule(PipelineConfig(p=4, m=6, v=2), "interleave")


def test_onefoneb_steady_alternation():
    g = build_schedule(PipelineConfig(p=4, m=8), "1f1b")
    for s, seq in enumerate(g.stage_order):
        warm = 4 - s - 1
        assert all(t.kind is F for t in seq[:warm])
        steady = seq[warm:warm + 2 * (8 - warm)]
        assert [t.kind for t in steady] == [F, B] * (8 - warm)


def test_tpipe_template_period_is_six_units():
    tmpl = tpipe_template(8, 2, Fraction(1), Fraction(2))
    assert tmpl.period * tmpl.tick == 6


def test_tpipe_priority_prefers_deep_backward():
    ready = [TaskId(0, 1, 1, B), TaskId(0, 2, 3, B), TaskId(0, 1, 2, F)]
    assert tpipe_priority(ready) == TaskId(0, 2, 3, B)
    assert tpipe_priority([TaskId(0, 2, 1, F), TaskId(0, 1, 2, F)]) == TaskId(0, 2, 1, F)


def test_plain_tpipe_plan_is_conflict_free():
    for p in (3, 8, 13):
        g = build_schedule(PipelineConfig(p=p, m=2 * p, v=2, t_fwd=2 * p), "tpipe")
        assert validate_graph(g).empty


def test_validate_graph_flags_reordered_stage():
    g = build_schedule(PipelineConfig(p=2, m=2), "1f1b")
    order = list(g.stage_order)
    order[0] = tuple(reversed(order[0]))
    bad = g.evolve(stage_order=tuple(order))
    kinds = {c.kind for c in validate_graph(bad).entries}
    assert "order" in kinds and "cycle" in kinds


def test_validate_graph_flags_missing_task():
    g = build_schedule(PipelineConfig(p=2, m=2), "1f1b")
    order = list(g.stage_order)
    order[1] = order[1][:-1]
    rep = validate_graph(g.evolve(stage_order=tuple(order)))
    assert [c.kind for c in rep.entries] == ["structure"]


strategies = st.sampled_from(["1f1b", "interleave", "tpipe"])


@st.composite
def graphs(draw):
    strategy = draw(strategies)
    p = draw(st.integers(1, 9))
    v = 1 if strategy == "1f1b" else draw(st.integers(2, 3))
    m = p * draw(st.integers(1, 3)) if strategy == "interleave" else draw(st.integers(1, 12))
    cfg = PipelineConfig(p=p, m=m, v=v, t_fwd=p * v,
                         bwd_fwd_ratio=draw(st.sampled_from([1, 2, Fraction(3, 2)])))
    return cfg, build_schedule(cfg, strategy)


@given(graphs())
def test_forward_and_backward_counts(pair):
    cfg, g = pair
    n = cfg.p * cfg.v * cfg.m
    kinds = [t.kind for seq in g.stage_order for t in seq]
    assert kinds.count(F) == n
    assert kinds.count(B) == n
    assert set(g.durations) == {t for seq in g.stage_order for t in seq}
