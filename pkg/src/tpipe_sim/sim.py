"""Deterministic list-schedule executor.

Every stage issues its tasks strictly in ``stage_order``. A task starts at the
later of (a) the end of the previous task on its stage and (b) the end of each
predecessor, plus the point-to-point latency when the predecessor lives on
another stage. Time runs on an integer tick grid derived from the durations,
so the arithmetic is exact and fast; values leave the module as Fractions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction
from typing import Optional

from .core import DeadlockError, DomainError, PipelineConfig, TaskId, TaskKind
from .sched import TaskGraph, ticks_for

F, B, R = TaskKind.FORWARD, TaskKind.BACKWARD, TaskKind.RECOMPUTE


@dataclass(frozen=True)
class Timeline:
    p: int
    tick: Fraction
    tasks: tuple
    starts: tuple
    ends: tuple
    index: dict = field(repr=False, compare=False)
    durations_by_stage: tuple = ()

    def start(self, t: TaskId) -> Fraction:
        return self.starts[self.index[t]] * self.tick

    def end(self, t: TaskId) -> Fraction:
        return self.ends[self.index[t]] * self.tick

    def start_ticks(self, t: TaskId) -> int:
        return self.starts[self.index[t]]

    def end_ticks(self, t: TaskId) -> int:
        return self.ends[self.index[t]]

    @property
    def total_ticks(self) -> int:
        return max(self.ends) if self.ends else 0

    @property
    def total_time(self) -> Fraction:
        return self.total_ticks * self.tick

    def busy_time(self, stage: int) -> Fraction:
        return self.durations_by_stage[stage] * self.tick

    @cached_property
    def _by_stage(self) -> tuple:
        rows = [[] for _ in range(self.p)]
        for k, t in enumerate(self.tasks):
            rows[t.stage].append((self.starts[k], self.ends[k], t))
        for r in rows:
            r.sort(key=lambda x: (x[0], x[1]))
        return tuple(tuple(r) for r in rows)

    def stage_tasks(self, stage: int) -> tuple:
        """(start_ticks, end_ticks, task) on one stage, in execution order."""
        return self._by_stage[stage]

    def idle_intervals(self, stage: int, lo: int, hi: int) -> list:
        """Idle (start, end) tick intervals of ``stage`` inside [lo, hi)."""
        gaps = []
        cur = lo
        for a, b, _ in self.stage_tasks(stage):
            if b <= cur or a >= hi:
                if a >= hi:
                    break
                continue
            if a > cur:
                gaps.append((cur, min(a, hi)))
            cur = max(cur, b)
            if cur >= hi:
                break
        if cur < hi:
            gaps.append((cur, hi))
        return gaps


@dataclass(frozen=True)
class MemoryTimeline:
    """Per-stage piecewise-constant occupancy.

    ``steps[s]`` is a list of (time_ticks, activation_units, buffer_units)
    after each change; memory is counted in units of ``unit`` (m_a fractions).
    """

    p: int
    tick: Fraction
    unit: Fraction
    steps: tuple
    model_state: tuple
    peak_activation: tuple
    peak_buffer: tuple
    peak_total: tuple
    chunk_peaks: tuple  # per stage: {chunk: peak units}

    def series(self, stage: int):
        for t, a, b in self.steps[stage]:
            yield t * self.tick, a * self.unit, b * self.unit, self.model_state[stage]


@dataclass(frozen=True)
class SimReport:
    p: int
    m: int
    v: int
    t_unit: Fraction
    act_block: Fraction
    total_time: Fraction
    busy_time: tuple
    bubble_ratio: Fraction
    stage_bubble: tuple
    useful_time: Fraction
    recompute_time: Fraction
    peak_activation: tuple
    peak_buffer: tuple
    peak_total: tuple
    peak_model_state: tuple
    chunk_peak_blocks: tuple
    fwd_interval: Optional[Fraction] = None
    bwd_interval: Optional[Fraction] = None
    measure_microbatch: Optional[int] = None

    @property
    def total_time_units(self) -> Fraction:
        return self.total_time / self.t_unit

    def stage0_blocks(self) -> Fraction:
        return self.peak_total[0] / self.act_block


def _execute(g: TaskGraph) -> Timeline:
    values = set(g.durations.values())
    values.add(g.latency)
    tick = ticks_for(*values)
    order = g.stage_order
    tasks = [t for seq in order for t in seq]
    index = {t: k for k, t in enumerate(tasks)}
    n = len(tasks)
    as_ticks = {d: int(d / tick) for d in values}
    gd = g.durations
    dur = [as_ticks[gd[t]] for t in tasks]
    lat = int(g.latency / tick)
    preds: list = [None] * n
    succs: list = [[] for _ in range(n)]
    cnt = [0] * n
    for k, t in enumerate(tasks):
        ps = []
        for u in g.deps.get(t, ()):
            j = index[u]
            ps.append((j, lat if u.stage != t.stage else 0))
            succs[j].append(k)
        preds[k] = ps
        cnt[k] = len(ps)
    stage_of = [t.stage for t in tasks]
    offsets = []
    acc = 0
    for seq in order:
        offsets.append(acc)
        acc += len(seq)
    head = list(offsets)
    stop = [offsets[s] + len(order[s]) for s in range(g.p)]
    free = [0] * g.p
    start = [0] * n
    end = [0] * n
    stack = list(range(g.p - 1, -1, -1))
    while stack:
        s = stack.pop()
        k = head[s]
        while k < stop[s] and cnt[k] == 0:
            st = free[s]
            for j, extra in preds[k]:
                e = end[j] + extra
                if e > st:
                    st = e
            start[k] = st
            end[k] = st + dur[k]
            free[s] = end[k]
            for w in succs[k]:
                cnt[w] -= 1
                if cnt[w] == 0 and head[stage_of[w]] == w and stage_of[w] != s:
                    stack.append(stage_of[w])
            k += 1
            head[s] = k
    stuck = [order[s][head[s] - offsets[s]] for s in range(g.p) if head[s] < stop[s]]
    if stuck:
        names = ", ".join(t.label() for t in stuck[:4])
        raise DeadlockError(f"no issuable task while work remains; blocked heads: {names}")
    busy = [0] * g.p
    for k in range(n):
        busy[stage_of[k]] += dur[k]
    return Timeline(g.p, tick, tuple(tasks), tuple(start), tuple(end), index, tuple(busy))


def _memory(g: TaskGraph, tl: Timeline, model_state: Fraction) -> MemoryTimeline:
    amounts = {g.act_block * g.keep_fraction(s, c) for s in range(g.p) for c in range(1, g.v + 1)}
    amounts.update(a for *_, a in g.buffers)
    amounts.add(g.act_block)
    unit = ticks_for(*amounts)
    blk = {}
    for s in range(g.p):
        for c in range(1, g.v + 1):
            blk[(s, c)] = int(g.act_block * g.keep_fraction(s, c) / unit)
    # events: (time, order, delta_act, delta_buf, chunk); releases sort first at equal times
    events = [[] for _ in range(g.p)]
    for k, t in enumerate(tl.tasks):
        if t.kind is F:
            a = blk[(t.stage, t.chunk)]
            if a:
                events[t.stage].append((tl.ends[k], 1, a, 0, t.chunk))
        elif t.kind is B:
            a = blk[(t.stage, t.chunk)]
            if a:
                events[t.stage].append((tl.ends[k], 0, -a, 0, t.chunk))
    for first, last, amount in g.buffers:
        u = int(amount / unit)
        events[first.stage].append((tl.start_ticks(first), 1, 0, u, 0))
        events[last.stage].append((tl.end_ticks(last), 0, 0, -u, 0))
    steps, pa, pb, pt, cps = [], [], [], [], []
    for s in range(g.p):
        ev = sorted(events[s], key=lambda e: (e[0], e[1]))
        act = buf = 0
        best_a = best_b = best_t = 0
        per_chunk = {c: 0 for c in range(1, g.v + 1)}
        chunk_best = dict(per_chunk)
        rows = []
        for time, _, da, db, c in ev:
            act += da
            buf += db
            if da:
                per_chunk[c] += da
                if per_chunk[c] > chunk_best[c]:
                    chunk_best[c] = per_chunk[c]
            best_a = max(best_a, act)
            best_b = max(best_b, buf)
            best_t = max(best_t, act + buf)
            if rows and rows[-1][0] == time:
                rows[-1] = (time, act, buf)
            else:
                rows.append((time, act, buf))
        steps.append(tuple(rows))
        pa.append(best_a)
        pb.append(best_b)
        pt.append(best_t)
        cps.append(chunk_best)
    ms = tuple(model_state / g.p for _ in range(g.p))
    return MemoryTimeline(g.p, tl.tick, unit, tuple(steps), ms, tuple(pa), tuple(pb), tuple(pt), tuple(cps))


def measure_intervals(tl: Timeline, p: int, m: int, v: int) -> tuple:
    """Forward and backward chunk-turnaround gaps of the median micro-batch.

    fwd: start of chunk-2 forward on stage 0 minus end of chunk-1 forward on
    the last stage. bwd: start of chunk-1 backward on the last stage minus end
    of chunk-2 backward on stage 0.
    """
    if v != 2:
        raise DomainError("interval measurement is defined for v = 2")
    j = -(-m // 2)
    fwd = tl.start(TaskId(0, 2, j, F)) - tl.end(TaskId(p - 1, 1, j, F))
    bwd = tl.start(TaskId(p - 1, 1, j, B)) - tl.end(TaskId(0, 2, j, B))
    return fwd, bwd


def simulate(g: TaskGraph, cfg: Optional[PipelineConfig] = None, model_state: Optional[Fraction] = None):
    """Run ``g`` and return (Timeline, MemoryTimeline, SimReport)."""
    if model_state is None:
        model_state = Fraction(0)
        if cfg is not None:
            model_state = cfg.model_state
            if cfg.offload is not None:
                saved = Fraction(len(cfg.offload.chunks(cfg.v)), cfg.v)
                model_state = model_state * (1 - saved)
    tl = _execute(g)
    mem = _memory(g, tl, model_state)
    total = tl.total_time
    busy = tuple(tl.busy_time(s) for s in range(g.p))
    if total:
        stage_bubble = tuple(1 - b / total for b in busy)
        bubble = 1 - sum(busy) / (g.p * total)
    else:
        stage_bubble = tuple(Fraction(0) for _ in busy)
        bubble = Fraction(0)
    rec_time = sum((g.durations[t] for t in g.durations if t.kind is R), Fraction(0))
    f_int = b_int = mb = None
    if g.v == 2 and g.p >= 1:
        f_int, b_int = measure_intervals(tl, g.p, g.m, g.v)
        mb = -(-g.m // 2)
    t_unit = g.f_dur  # one block's forward equals one time unit
    rep = SimReport(
        p=g.p, m=g.m, v=g.v, t_unit=t_unit, act_block=g.act_block,
        total_time=total, busy_time=busy, bubble_ratio=bubble, stage_bubble=stage_bubble,
        useful_time=g.useful_time(), recompute_time=rec_time,
        peak_activation=tuple(x * mem.unit for x in mem.peak_activation),
        peak_buffer=tuple(x * mem.unit for x in mem.peak_buffer),
        peak_total=tuple(x * mem.unit for x in mem.peak_total),
        peak_model_state=mem.model_state,
        chunk_peak_blocks=tuple(
            {c: x * mem.unit / g.act_block for c, x in cp.items()} for cp in mem.chunk_peaks
        ),
        fwd_interval=f_int, bwd_interval=b_int, measure_microbatch=mb,
    )
    return tl, mem, rep


def mfu_proxy(rep: SimReport) -> Fraction:
    """Useful compute over stage-time; recompute and backward inflation count as overhead."""
    if rep.total_time == 0:
        return Fraction(0)
    return rep.useful_time / (rep.p * rep.total_time)


def timeline_to_dict(tl: Timeline, t_unit: Fraction) -> dict:
    rows = []
    for k in sorted(range(len(tl.tasks)), key=lambda k: (tl.tasks[k].stage, tl.starts[k], tl.ends[k])):
        t = tl.tasks[k]
        rows.append({
            "stage": t.stage, "chunk": t.chunk, "microbatch": t.microbatch, "kind": t.kind.value,
            "start": _rs(tl.starts[k] * tl.tick), "end": _rs(tl.ends[k] * tl.tick),
        })
    return {"p": tl.p, "tick": _rs(tl.tick), "t_unit": _rs(t_unit), "total_time": _rs(tl.total_time), "tasks": rows}


def timeline_from_dict(d: dict) -> tuple:
    """Rebuild (Timeline, t_unit) from ``timeline_to_dict`` output."""
    tick = Fraction(d["tick"])
    tasks, starts, ends = [], [], []
    busy = [0] * d["p"]
    for r in d["tasks"]:
        t = TaskId(r["stage"], r["chunk"], r["microbatch"], TaskKind(r["kind"]))
        a, b = int(Fraction(r["start"]) / tick), int(Fraction(r["end"]) / tick)
        tasks.append(t)
        starts.append(a)
        ends.append(b)
        busy[t.stage] += b - a
    index = {t: k for k, t in enumerate(tasks)}
    tl = Timeline(d["p"], tick, tuple(tasks), tuple(starts), tuple(ends), index, tuple(busy))
    return tl, Fraction(d["t_unit"])


def _rs(x: Fraction) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
