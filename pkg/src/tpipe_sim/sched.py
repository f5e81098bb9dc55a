"""Schedule generation: per-stage issue order plus the cross-stage dependency graph.

Three strategies are provided. ``OneFOneB`` and ``Interleave1F1B`` are list
schedules with the usual warmup depths. ``TPipe`` is built from a periodic
template: one micro-batch's tasks are laid out on a modulo reservation table
(period = one forward and one backward of every chunk), every later
micro-batch is the same layout shifted by one period, and each stage issues
its tasks in planned-start order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, Optional

from .core import (
    IncompatibleStrategy,
    PipelineConfig,
    TaskId,
    TaskKind,
    ceil_div,
    tid,
)

F, B, R = TaskKind.FORWARD, TaskKind.BACKWARD, TaskKind.RECOMPUTE


class StrategyKind(str, Enum):
    ONE_F_ONE_B = "OneFOneB"
    INTERLEAVE = "Interleave1F1B"
    TPIPE = "TPipe"

    @classmethod
    def parse(cls, text: str) -> "StrategyKind":
        key = text.replace("-", "").replace("_", "").lower()
        aliases = {
            "onefoneb": cls.ONE_F_ONE_B,
            "1f1b": cls.ONE_F_ONE_B,
            "interleave1f1b": cls.INTERLEAVE,
            "interleave": cls.INTERLEAVE,
            "tpipe": cls.TPIPE,
        }
        if key not in aliases:
            raise IncompatibleStrategy(f"unknown strategy {text!r}")
        return aliases[key]


@dataclass(frozen=True)
class Template:
    """Planned offsets (in ticks) of micro-batch 1; micro-batch i adds (i-1)*period."""

    period: int
    tick: Fraction
    offsets: Mapping[tuple, int]

    def start(self, kind: TaskKind, chunk: int, stage: int, mb: int) -> int:
        return self.offsets[(kind, chunk, stage)] + self.period * (mb - 1)


@dataclass(frozen=True)
class TaskGraph:
    p: int
    m: int
    v: int
    strategy: StrategyKind
    f_dur: Fraction
    b_dur: Fraction
    latency: Fraction
    act_block: Fraction
    durations: Mapping[TaskId, Fraction]
    deps: Mapping[TaskId, tuple]
    stage_order: tuple
    planned: Optional[Mapping[TaskId, Fraction]] = None
    template: Optional[Template] = None
    # fraction of an activation block kept from Forward end to Backward end
    keep: Mapping[tuple, Fraction] = field(default_factory=lambda: MappingProxyType({}))
    # (first task, last task, amount): held from first.start to last.end
    buffers: tuple = ()
    tags: Mapping[str, object] = field(default_factory=lambda: MappingProxyType({}))

    @property
    def tasks(self) -> Iterable[TaskId]:
        return self.durations.keys()

    def keep_fraction(self, stage: int, chunk: int) -> Fraction:
        return self.keep.get((stage, chunk), Fraction(1))

    def useful_time(self) -> Fraction:
        return (self.f_dur + self.b_dur) * self.p * self.v * self.m

    def stage_of(self, t: TaskId) -> int:
        return t.stage

    def evolve(self, **changes) -> "TaskGraph":
        for key in ("durations", "deps", "planned", "keep", "tags"):
            if isinstance(changes.get(key), dict):
                changes[key] = MappingProxyType(dict(changes[key]))
        return replace(self, **changes)


def dataflow_deps(p: int, v: int, m: int, recompute: Iterable[tuple] = ()) -> dict:
    """Forward/backward chain edges, plus F->R->B same-stage edges for recomputed blocks."""
    rec = set(recompute)
    deps: dict[TaskId, tuple] = {}
    for i in range(1, m + 1):
        for c in range(1, v + 1):
            for s in range(p):
                fwd = tid(s, c, i, F)
                if s > 0:
                    deps[fwd] = (tid(s - 1, c, i, F),)
                elif c > 1:
                    deps[fwd] = (tid(p - 1, c - 1, i, F),)
                else:
                    deps[fwd] = ()
                if s < p - 1:
                    up = tid(s + 1, c, i, B)
                elif c < v:
                    up = tid(0, c + 1, i, B)
                else:
                    up = None
                own = tid(s, c, i, F)
                bwd = tid(s, c, i, B)
                if (s, c) in rec:
                    rt = tid(s, c, i, R)
                    deps[rt] = (own,)
                    deps[bwd] = ((up,) if up else ()) + (rt,)
                else:
                    deps[bwd] = ((up,) if up else ()) + (own,)
    return deps


def _durations(p, v, m, f, b, rec=(), r_dur=None) -> dict:
    out = {}
    for i in range(1, m + 1):
        for c in range(1, v + 1):
            for s in range(p):
                out[tid(s, c, i, F)] = f
                out[tid(s, c, i, B)] = b
                if (s, c) in rec:
                    out[tid(s, c, i, R)] = r_dur if r_dur is not None else f
    return out


def _check_strategy(cfg: PipelineConfig, strategy: StrategyKind) -> None:
    if strategy is StrategyKind.ONE_F_ONE_B and cfg.v != 1:
        raise IncompatibleStrategy("OneFOneB requires v = 1")
    if strategy in (StrategyKind.INTERLEAVE, StrategyKind.TPIPE) and cfg.v < 2:
        raise IncompatibleStrategy(f"{strategy.value} requires v >= 2")
    if strategy is StrategyKind.INTERLEAVE and cfg.m % cfg.p:
        # micro-batches are issued in groups of p per chunk
        raise IncompatibleStrategy("Interleave1F1B requires m to be a multiple of p")


def build_schedule(cfg: PipelineConfig, strategy) -> TaskGraph:
    if isinstance(strategy, str) and not isinstance(strategy, StrategyKind):
        strategy = StrategyKind.parse(strategy)
    _check_strategy(cfg, strategy)
    f = cfg.t_fwd / (cfg.v * cfg.p)
    b = f * cfg.bwd_fwd_ratio
    p, v, m = cfg.p, cfg.v, cfg.m
    base = dict(
        p=p, m=m, v=v, strategy=strategy, f_dur=f, b_dur=b,
        latency=cfg.p2p_latency, act_block=cfg.act_block,
        durations=MappingProxyType(_durations(p, v, m, f, b)),
        deps=MappingProxyType(dataflow_deps(p, v, m)),
    )
    if strategy is StrategyKind.ONE_F_ONE_B:
        return TaskGraph(stage_order=_one_f_one_b_order(p, m), **base)
    if strategy is StrategyKind.INTERLEAVE:
        return TaskGraph(stage_order=_interleave_order(p, v, m), **base)
    tmpl = tpipe_template(p, v, f, b, cfg.p2p_latency)
    planned, order = expand_template(tmpl, p, v, m, base["durations"])
    return TaskGraph(stage_order=order, planned=planned, template=tmpl, **base)


def _one_f_one_b_order(p: int, m: int) -> tuple:
    order = []
    for s in range(p):
        warm = min(p - s - 1, m)
        seq = [TaskId(s, 1, i, F) for i in range(1, warm + 1)]
        nf, nb = warm, 0
        while nb < m:
            if nf < m:
                nf += 1
                seq.append(TaskId(s, 1, nf, F))
            nb += 1
            seq.append(TaskId(s, 1, nb, B))
        order.append(tuple(seq))
    return tuple(order)


def _virtual_sequence(p: int, v: int, m: int, reverse_chunks: bool) -> list:
    """Micro-batches go in groups of p; each group sweeps every chunk in turn."""
    seq = []
    for g0 in range(1, m + 1, p):
        size = min(p, m - g0 + 1)
        chunks = range(v, 0, -1) if reverse_chunks else range(1, v + 1)
        for c in chunks:
            seq.extend((c, g0 + j) for j in range(size))
    return seq


def _interleave_order(p: int, v: int, m: int) -> tuple:
    fseq = _virtual_sequence(p, v, m, False)
    bseq = _virtual_sequence(p, v, m, True)
    total = m * v
    order = []
    for s in range(p):
        warm = min((p - s - 1) * 2 + (v - 1) * p, total)
        seq = [TaskId(s, c, i, F) for c, i in fseq[:warm]]
        nf, nb = warm, 0
        while nb < total:
            if nf < total:
                c, i = fseq[nf]
                seq.append(TaskId(s, c, i, F))
                nf += 1
            c, i = bseq[nb]
            seq.append(TaskId(s, c, i, B))
            nb += 1
        order.append(tuple(seq))
    return tuple(order)


def tpipe_priority(ready: Iterable[TaskId]) -> TaskId:
    """Deterministic pick among ready tasks of one stage.

    Backward beats Forward; deeper chunk first among backwards, then lower
    micro-batch; among forwards lower micro-batch, then lower chunk.
    """
    ready = list(ready)
    if not ready:
        raise ValueError("ready set is empty")

    def key(t: TaskId):
        if t.kind is B:
            return (0, -t.chunk, t.microbatch)
        if t.kind is R:
            return (0, -t.chunk, t.microbatch)
        return (1, t.microbatch, t.chunk)

    return min(ready, key=key)


# --- periodic template search -------------------------------------------------


def ticks_for(*values: Fraction) -> Fraction:
    """Largest tick that divides every value (so all become integers)."""
    den = 1
    for x in values:
        den = math.lcm(den, Fraction(x).denominator)
    num = 0
    for x in values:
        num = math.gcd(num, (Fraction(x) * den).numerator)
    return Fraction(num or 1, den)


@dataclass
class _Search:
    p: int
    v: int
    f: int
    b: int
    lat: int
    rec: Mapping[int, int]

    @property
    def period(self) -> int:
        return self.v * (self.f + self.b) + sum(self.rec.values())

    def backward_layouts(self):
        """Yield (hops, relative offsets, per-stage residues) for tight backward chains."""
        P, p, v = self.period, self.p, self.v
        for hops in itertools.product(range(P), repeat=v - 1):
            rel = {}
            occ = [set() for _ in range(p)]
            t = 0
            ok = True
            for ci, c in enumerate(range(v, 0, -1)):
                if ci > 0:
                    t += self.lat + hops[ci - 1]
                rd = self.rec.get(c, 0)
                for s in range(p - 1, -1, -1):
                    if s < p - 1:
                        t += self.lat
                    for u in range(t - rd, t + self.b):
                        if u % P in occ[s]:
                            ok = False
                            break
                        occ[s].add(u % P)
                    if not ok:
                        break
                    rel[(B, c, s)] = t
                    if rd:
                        rel[(R, c, s)] = t - rd
                    t += self.b
                if not ok:
                    break
            if ok:
                yield hops, rel, occ

    def place_forwards(self, occ, shift):
        P, p, v, f = self.period, self.p, self.v, self.f
        occ = [{(u + shift) % P for u in o} for o in occ]
        start = {}
        ready = 0
        for c in range(1, v + 1):
            for s in range(p):
                t0 = 0 if (c == 1 and s == 0) else ready
                for _ in range(P + 1):
                    if all((t0 + u) % P not in occ[s] for u in range(f)):
                        break
                    if c == 1 and s == 0:
                        return None
                    t0 += 1
                else:
                    return None
                for u in range(f):
                    occ[s].add((t0 + u) % P)
                start[(F, c, s)] = t0
                ready = t0 + f + self.lat
        return start, ready - self.lat

    def best(self):
        P = self.period
        best = None
        for hops, rel, occ in self.backward_layouts():
            for shift in range(P):
                placed = self.place_forwards(occ, shift)
                if placed is None:
                    continue
                start, fend = placed
                b0 = fend + ((shift - fend) % P)
                offs = dict(start)
                for key, x in rel.items():
                    offs[key] = b0 + x
                life = [offs[(B, c, 0)] - offs[(F, c, 0)] for c in range(1, self.v + 1)]
                cost = sum(ceil_div(l + self.f, P) for c, l in zip(range(1, self.v + 1), life) if c not in self.rec)
                key = (cost, sum(life), hops, shift)
                if best is None or key < best[0]:
                    best = (key, offs)
        if best is None:
            raise RuntimeError("no periodic layout exists")
        return best[1]


def tpipe_template(p: int, v: int, f: Fraction, b: Fraction, latency: Fraction = Fraction(0),
                   rec_chunks: Iterable[int] = (), r_dur: Optional[Fraction] = None) -> Template:
    """Search the modulo layout that minimises resident activation blocks of kept chunks.

    Backward chains run back to back inside a chunk; forwards take the earliest
    free residue. Ties break toward shorter total lifespan.
    """
    r_dur = f if r_dur is None else r_dur
    rec_chunks = tuple(rec_chunks)
    tick = ticks_for(f, b, latency, r_dur) if rec_chunks else ticks_for(f, b, latency)
    ft, bt, lt = int(f / tick), int(b / tick), int(latency / tick)
    rt = int(r_dur / tick)
    search = _Search(p, v, ft, bt, lt, {c: rt for c in rec_chunks})
    offs = search.best()
    return Template(search.period, tick, MappingProxyType(offs))


class PlannedTimes(Mapping):
    """Read-only view of template start times, computed on access."""

    def __init__(self, tmpl: Template, tasks: Mapping):
        self._tmpl = tmpl
        self._tasks = tasks

    def ticks(self, t: TaskId) -> int:
        return self._tmpl.offsets[(t.kind, t.chunk, t.stage)] + self._tmpl.period * (t.microbatch - 1)

    def __getitem__(self, t: TaskId) -> Fraction:
        if t not in self._tasks:
            raise KeyError(t)
        return self._tmpl.tick * self.ticks(t)

    def __iter__(self):
        return iter(self._tasks)

    def __len__(self) -> int:
        return len(self._tasks)


def expand_template(tmpl: Template, p: int, v: int, m: int, durations: Mapping) -> tuple:
    per_stage = [[] for _ in range(p)]
    period = tmpl.period
    for (kind, c, s), off in tmpl.offsets.items():
        # recompute sorts just ahead of its backward when starts coincide
        rank = 0 if kind is R else 1
        row = per_stage[s]
        for i in range(1, m + 1):
            t = tid(s, c, i, kind)
            if t in durations:
                row.append((off + period * (i - 1), rank, t))
    order = tuple(tuple(x[2] for x in sorted(lst)) for lst in per_stage)
    return PlannedTimes(tmpl, durations), order


# --- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Conflict:
    kind: str  # "order" | "cycle" | "planned" | "overlap" | "structure"
    pred: Optional[TaskId]
    succ: Optional[TaskId]
    stage: int
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pred": self.pred.label() if self.pred else None,
            "succ": self.succ.label() if self.succ else None,
            "stage": self.stage,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ConflictReport:
    entries: tuple = ()

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def empty(self) -> bool:
        return not self.entries

    def as_list(self) -> list:
        return [e.as_dict() for e in self.entries]


def validate_graph(g: TaskGraph) -> ConflictReport:
    out: list[Conflict] = []
    pos = {}
    for s, seq in enumerate(g.stage_order):
        for k, t in enumerate(seq):
            if t.stage != s or t in pos:
                out.append(Conflict("structure", None, t, s, "task listed on the wrong stage or twice"))
            pos[t] = k
    for t in g.durations:
        if t not in pos:
            out.append(Conflict("structure", None, t, t.stage, "task missing from stage order"))
    if out:
        return ConflictReport(tuple(out))

    for succ, preds in g.deps.items():
        for pred in preds:
            if pred.stage == succ.stage and pos[pred] > pos[succ]:
                out.append(Conflict("order", pred, succ, succ.stage, "stage order issues successor first"))

    out.extend(_cycle_conflicts(g))

    if g.planned is not None:
        out.extend(_planned_conflicts(g))
    return ConflictReport(tuple(out))


def _planned_conflicts(g: TaskGraph) -> list:
    # compare on an integer grid; plans are almost always template views
    values = set(g.durations.values())
    values.add(g.latency)
    planned = g.planned
    if isinstance(planned, PlannedTimes):
        tick = ticks_for(planned._tmpl.tick, *values)
        scale = int(planned._tmpl.tick / tick)
        start = {t: planned.ticks(t) * scale for t in g.durations}
    else:
        tick = ticks_for(*values, *planned.values())
        start = {t: int(planned[t] / tick) for t in g.durations}
    as_ticks = {d: int(d / tick) for d in values}
    dur = {t: as_ticks[d] for t, d in g.durations.items()}
    lat = as_ticks[g.latency]
    out = []
    for succ, preds in g.deps.items():
        for pred in preds:
            need = start[pred] + dur[pred] + (lat if pred.stage != succ.stage else 0)
            if start[succ] < need:
                out.append(Conflict(
                    "planned", pred, succ, succ.stage,
                    f"planned start {start[succ] * tick} precedes ready time {need * tick}",
                ))
    for s, seq in enumerate(g.stage_order):
        for a, b in zip(seq, seq[1:]):
            if start[b] < start[a] + dur[a]:
                out.append(Conflict("overlap", a, b, s, "planned tasks overlap on one stage"))
    return out


def _cycle_conflicts(g: TaskGraph) -> list:
    succs: dict = {t: [] for t in g.durations}
    indeg = {t: 0 for t in g.durations}
    for succ, preds in g.deps.items():
        for pred in preds:
            succs[pred].append(succ)
            indeg[succ] += 1
    for seq in g.stage_order:
        for a, b in zip(seq, seq[1:]):
            succs[a].append(b)
            indeg[b] += 1
    queue = [t for t, d in indeg.items() if d == 0]
    seen = 0
    while queue:
        t = queue.pop()
        seen += 1
        for u in succs[t]:
            indeg[u] -= 1
            if indeg[u] == 0:
                queue.append(u)
    if seen == len(indeg):
        return []
    # walk backwards through unresolved nodes to expose one cycle
    left = {t for t, d in indeg.items() if d > 0}
    preds_of: dict = {t: [] for t in left}
    for a in left:
        for b in succs[a]:
            if b in left:
                preds_of[b].append(a)
    node = min(left)
    path, index = [], {}
    while node not in index:
        index[node] = len(path)
        path.append(node)
        node = min(preds_of[node])
    cycle = path[index[node]:][::-1]
    res = []
    for a, b in zip(cycle, cycle[1:] + cycle[:1]):
        res.append(Conflict("cycle", a, b, b.stage, "dependency and stage order form a cycle"))
    return res
