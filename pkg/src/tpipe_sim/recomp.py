"""Recomputation transforms.

Layer-grouped recomputation inflates every Backward by ``ratio`` of a forward
and keeps ``1 - ratio`` of each activation block. Block-wise temporal
recomputation discards whole shallow chunks after their Forward and
regenerates each block in a standalone Recompute task placed right before
the consuming Backward on the same stage.

For v = 2, backward/forward ratio 2 and zero latency the block-wise layout
is a closed-form period-7 frame. Per stage s (residues mod 7):

    B2 at beta - 2s, R1 at beta + 3 - 2s, B1 at beta + 4 - 2s,
    free forward slots x = beta + 2 - 2s and y = beta + 6 - 2s.

Forward chains alternate between x and y. Chunk 2 is pinned to launch
``a + k`` rounds after chunk 1, where ``a`` is the plain schedule's lag,
so its chain ends exactly where its Backward starts. When the pinned start
comes before chunk 1 has left the last stage, the plan carries a
dependency conflict, which is what the delay rounds remove.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Optional

from .core import (
    ConflictUnresolvable,
    DomainError,
    IncompatibleStrategy,
    RecomputeMode,
    RecomputePolicy,
    TaskKind,
    ceil_div,
    tid,
)
from .sched import (
    StrategyKind,
    TaskGraph,
    Template,
    _durations,
    dataflow_deps,
    PlannedTimes,
    expand_template,
    tpipe_template,
    validate_graph,
)

F, B, R = TaskKind.FORWARD, TaskKind.BACKWARD, TaskKind.RECOMPUTE
ROUND = 7


@dataclass(frozen=True)
class RecompPlan:
    selected: frozenset = frozenset()
    mode: RecomputeMode = RecomputeMode.NONE
    k: int = 0
    buffer_blocks: dict = field(default_factory=dict)
    layout: str = ""
    notes: tuple = ()

    def as_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "selected": sorted([list(x) for x in self.selected]),
            "k": self.k,
            "buffer_blocks": {str(s): n for s, n in sorted(self.buffer_blocks.items())},
            "layout": self.layout,
            "notes": list(self.notes),
        }


def fwd_lag_rounds(p: int) -> int:
    return ceil_div(p - 3, 6)


def interval_shift(p: int) -> int:
    """Growth of the chunk turnaround once chunk-1 recompute enters the period."""
    return ceil_div(p - 1, 2) - ceil_div(p - 3, 6) - 1


def delay_rounds(p: int) -> int:
    """Smallest k >= 0 that keeps chunk 2's launch after chunk 1 leaves the pipeline."""
    if p < 3:
        raise DomainError("delay_rounds needs p >= 3")
    slack = (3 + 6 * fwd_lag_rounds(p) - p) - interval_shift(p)
    k = 0
    while slack + ROUND * k < 0:
        k += 1
    return k


def apply_standard_recompute(g: TaskGraph, ratio) -> TaskGraph:
    ratio = Fraction(ratio)
    if not 0 <= ratio <= 1:
        raise DomainError("ratio must lie in [0, 1]")
    if ratio == 0:
        return g
    extra = ratio * g.f_dur
    durations = {t: (d + extra if t.kind is B else d) for t, d in g.durations.items()}
    keep = {(s, c): 1 - ratio for s in range(g.p) for c in range(1, g.v + 1)}
    buffers = tuple((t, t, g.act_block) for t in g.durations if t.kind is B)
    tags = dict(g.tags)
    tags["recompute"] = "layer-grouped"
    new = g.evolve(durations=durations, keep=keep, buffers=buffers, tags=tags)
    if g.planned is not None:
        # the plan keeps its original slots, so inflated backwards collide in it
        new = new.evolve(planned=PlannedTimes(g.template, new.durations))
    return new


def _closed_form_offsets(p: int, k: int) -> dict:
    """Tick offsets (one tick = one forward block) of the v=2 frame."""
    beta, o2 = (1, 3) if p % 2 == 0 else (5, 4)

    def nxt(t: int, r: int) -> int:
        return t + ((r - t) % ROUND)

    def slot(t: int, s: int) -> int:
        return min(nxt(t, (beta + 2 - 2 * s) % ROUND), nxt(t, (beta + 6 - 2 * s) % ROUND))

    offs = {}
    t = 0
    for s in range(p):
        if s:
            t = slot(t, s)
        offs[(F, 1, s)] = t
        t += 1
    t = ROUND * (fwd_lag_rounds(p) + k) + o2
    for s in range(p):
        if s:
            t = slot(t, s)
        offs[(F, 2, s)] = t
        t += 1
    for s in range(p - 1, -1, -1):
        offs[(B, 2, s)] = t
        t += 2
    r = nxt(t, (beta + 3 - 2 * (p - 1)) % ROUND)
    for s in range(p - 1, -1, -1):
        offs[(R, 1, s)] = r
        offs[(B, 1, s)] = r + 1
        r += 2
    return offs


def _shift_after_first_chunk(offs: dict, delta: int) -> dict:
    out = {}
    for key, t in offs.items():
        kind, c, _ = key
        out[key] = t if (kind is F and c == 1) else t + delta
    return out


def _uses_closed_form(g: TaskGraph, chunks: tuple) -> bool:
    return (g.v == 2 and g.p >= 3 and chunks == (1,) and g.latency == 0
            and g.b_dur == 2 * g.f_dur)


def _blockwise_template(g: TaskGraph, chunks: tuple, k: int) -> tuple:
    if _uses_closed_form(g, chunks):
        offs = _closed_form_offsets(g.p, k)
        return Template(ROUND, g.f_dur, MappingProxyType(offs)), "closed-form period-7 frame"
    tmpl = tpipe_template(g.p, g.v, g.f_dur, g.b_dur, g.latency, rec_chunks=chunks, r_dur=g.f_dur)
    offs = _shift_after_first_chunk(dict(tmpl.offsets), k * tmpl.period)
    return Template(tmpl.period, tmpl.tick, MappingProxyType(offs)), "modulo search"


def _selection(g: TaskGraph, policy: RecomputePolicy) -> tuple:
    if g.v < 2:
        raise IncompatibleStrategy("block-wise recomputation needs v >= 2")
    if g.strategy is not StrategyKind.TPIPE:
        raise IncompatibleStrategy("block-wise recomputation is defined on TPipe graphs")
    return policy.selected_chunks(g.v)


def _resolve_k(g: TaskGraph, policy: RecomputePolicy) -> int:
    if policy.delay_rounds_override is not None:
        return policy.delay_rounds_override
    return delay_rounds(g.p) if g.p >= 3 else 0


def _plan_notes(g: TaskGraph, policy: RecomputePolicy, chunks: tuple) -> tuple:
    notes = []
    if policy.ratio * g.v != len(chunks):
        notes.append(f"ratio {policy.ratio} rounded to {len(chunks)} of {g.v} chunks")
    if len(chunks) != 1 or g.v != 2:
        notes.append("delay rounds applied as-is outside the full shallow-chunk v=2 case")
    return tuple(notes)


def _graph_from_template(g: TaskGraph, tmpl: Template, selected: set, fused: bool) -> TaskGraph:
    p, v, m = g.p, g.v, g.m
    if fused:
        durations = _durations(p, v, m, g.f_dur, g.b_dur)
        for t in durations:
            if t.kind is B and (t.stage, t.chunk) in selected:
                durations[t] = g.f_dur + g.b_dur
        offs = dict(tmpl.offsets)
        for (kind, c, s) in list(offs):
            if kind is R:
                offs[(B, c, s)] = offs.pop((R, c, s))
        tmpl = Template(tmpl.period, tmpl.tick, MappingProxyType(offs))
        deps = dataflow_deps(p, v, m)
        buffers = tuple((t, t, g.act_block) for t in durations if t.kind is B and (t.stage, t.chunk) in selected)
    else:
        durations = _durations(p, v, m, g.f_dur, g.b_dur, rec=selected, r_dur=g.f_dur)
        deps = dataflow_deps(p, v, m, recompute=selected)
        buffers = tuple(
            (tid(s, c, i, R), tid(s, c, i, B), g.act_block)
            for i in range(1, m + 1) for (s, c) in sorted(selected)
        )
    durations = MappingProxyType(durations)
    planned, order = expand_template(tmpl, p, v, m, durations)
    keep = {key: Fraction(0) for key in selected}
    return g.evolve(
        durations=durations, deps=deps, stage_order=order, planned=planned,
        template=tmpl, keep=keep, buffers=buffers,
    )


def apply_trecomp(g: TaskGraph, policy: RecomputePolicy):
    """Block-wise temporal recomputation; returns (graph, plan)."""
    if policy.mode is not RecomputeMode.BLOCKWISE or policy.ratio == 0:
        return g, RecompPlan()
    chunks = _selection(g, policy)
    if not chunks:
        return g, RecompPlan(mode=policy.mode, notes=("ratio rounds to zero chunks",))
    k = _resolve_k(g, policy)
    tmpl, layout = _blockwise_template(g, chunks, k)
    selected = {(s, c) for s in range(g.p) for c in chunks}
    new = _graph_from_template(g, tmpl, selected, fused=False)
    tags = dict(g.tags)
    tags["recompute"] = "block-wise"
    new = new.evolve(tags=tags)
    plan = RecompPlan(
        selected=frozenset(selected), mode=policy.mode, k=k,
        buffer_blocks={s: 1 for s in range(g.p)}, layout=layout,
        notes=_plan_notes(g, policy, chunks),
    )
    if policy.delay_rounds_override is None:
        report = validate_graph(new)
        if report:
            raise ConflictUnresolvable(f"{len(report)} dependency conflicts at k={k}", report)
    return new, plan


def apply_layer_grouped_trecomp(g: TaskGraph, policy: RecomputePolicy, k: Optional[int] = None):
    """Shallow-chunk recomputation fused into the Backward (accumulating layout).

    Uses the same slots as the block-wise frame but each regenerate-and-backward
    pair is one task, so it cannot begin until the upstream Backward arrives.
    The returned graph is not validated; its conflicts are the point.
    """
    chunks = _selection(g, policy)
    if not chunks:
        return g, RecompPlan(mode=policy.mode)
    if k is None:
        k = policy.delay_rounds_override or 0
    tmpl, layout = _blockwise_template(g, chunks, k)
    selected = {(s, c) for s in range(g.p) for c in chunks}
    new = _graph_from_template(g, tmpl, selected, fused=True)
    tags = dict(g.tags)
    tags["recompute"] = "layer-grouped accumulation"
    new = new.evolve(tags=tags)
    plan = RecompPlan(
        selected=frozenset(selected), mode=RecomputeMode.STANDARD, k=k,
        buffer_blocks={s: 1 for s in range(g.p)}, layout=layout + " (fused)",
    )
    return new, plan


def recompute_pipeline(g: TaskGraph, policy: Optional[RecomputePolicy]):
    """Apply whatever the policy asks for; returns (graph, plan)."""
    if policy is None or policy.mode is RecomputeMode.NONE or policy.ratio == 0:
        return g, RecompPlan()
    if policy.mode is RecomputeMode.BLOCKWISE:
        return apply_trecomp(g, policy)
    if g.strategy is StrategyKind.TPIPE:
        return apply_layer_grouped_trecomp(g, policy)
    new = apply_standard_recompute(g, policy.ratio)
    plan = RecompPlan(
        selected=frozenset((s, c) for s in range(g.p) for c in range(1, g.v + 1)),
        mode=policy.mode, buffer_blocks={s: 1 for s in range(g.p)},
        layout="inflated backward",
    )
    return new, plan
