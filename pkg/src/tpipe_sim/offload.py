"""Host-side optimizer offload planning.

Gradients of an offloaded chunk leave the device between that chunk's last
Backward and the next-shallower chunk's last Backward on each stage; the
quantized weights come back between the two chunks' first Forwards of the
following iteration. The planner fills the measured idle gaps greedily.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .core import DomainError, PipelineConfig, TaskKind, ceil_div, rational_str, tid
from .sched import StrategyKind
from .sim import Timeline

F, B = TaskKind.FORWARD, TaskKind.BACKWARD


def available_offload_time(p: int, t_bwd) -> Fraction:
    if p < 2:
        raise DomainError("offload window needs p >= 2")
    return (p - ceil_div(2 * p - 3, 6) - 1) * Fraction(t_bwd) / (2 * p)


def available_upload_time(p: int, t_fwd) -> Fraction:
    if p < 2:
        raise DomainError("upload window needs p >= 2")
    return (p - ceil_div(p - 3, 6) - 1) * Fraction(t_fwd) / (2 * p)


def offload_feasible(p: int, t_step, t_bwd) -> bool:
    return Fraction(t_step) / (2 * p) <= available_offload_time(p, t_bwd)


def upload_feasible(p: int, t_upload, t_fwd) -> bool:
    return Fraction(t_upload) / (2 * p) <= available_upload_time(p, t_fwd)


def _overlap(available: Fraction, required: Fraction) -> Fraction:
    if required == 0:
        return Fraction(1)
    return min(Fraction(1), available / required)


@dataclass(frozen=True)
class Placement:
    kind: TaskKind
    stage: int
    chunk: int
    start: Fraction
    end: Fraction


@dataclass(frozen=True)
class ChunkOffload:
    chunk: int
    offload_window: Optional[tuple]
    upload_window: Optional[tuple]
    idle_offload: Fraction
    idle_upload: Fraction
    required_offload: Fraction
    required_upload: Fraction
    overlap_offload: Fraction
    overlap_upload: Fraction

    @property
    def achieved_overlap(self) -> Fraction:
        return min(self.overlap_offload, self.overlap_upload)

    def as_dict(self) -> dict:
        def win(w):
            return None if w is None else [rational_str(w[0]), rational_str(w[1])]
        return {
            "chunk": self.chunk,
            "offload_window": win(self.offload_window),
            "upload_window": win(self.upload_window),
            "idle_offload": rational_str(self.idle_offload),
            "idle_upload": rational_str(self.idle_upload),
            "required_offload": rational_str(self.required_offload),
            "required_upload": rational_str(self.required_upload),
            "overlap_offload": rational_str(self.overlap_offload),
            "overlap_upload": rational_str(self.overlap_upload),
            "achieved_overlap": rational_str(self.achieved_overlap),
        }


@dataclass(frozen=True)
class OffloadPlan:
    per_chunk: tuple
    feasible_offload: bool
    feasible_upload: bool
    model_state_saving: Fraction
    hardware_agnostic: bool
    placements: tuple = ()

    @property
    def achieved_overlap(self) -> Fraction:
        if not self.per_chunk:
            return Fraction(1)
        return min(c.achieved_overlap for c in self.per_chunk)

    def as_dict(self) -> dict:
        return {
            "per_chunk": [c.as_dict() for c in self.per_chunk],
            "feasible_offload": self.feasible_offload,
            "feasible_upload": self.feasible_upload,
            "model_state_saving": rational_str(self.model_state_saving),
            "on_device_model_state": rational_str(1 - self.model_state_saving),
            "hardware_agnostic": self.hardware_agnostic,
            "achieved_overlap": rational_str(self.achieved_overlap),
        }


def _fill(gaps: list, need: int) -> list:
    out = []
    for a, b in gaps:
        if need <= 0:
            break
        take = min(b - a, need)
        out.append((a, a + take))
        need -= take
    return out


def _window_idle(tl: Timeline, stage: int, lo: int, hi: int) -> tuple:
    if hi <= lo:
        return [], 0
    gaps = tl.idle_intervals(stage, lo, hi)
    return gaps, sum(b - a for a, b in gaps)


def plan_offload(cfg: PipelineConfig, timeline: Timeline, strategy=None) -> OffloadPlan:
    """Place gradient offload and weight upload of each offloaded chunk into idle gaps."""
    policy = cfg.offload
    if policy is None:
        return OffloadPlan((), True, True, Fraction(0), True)
    strategy = StrategyKind.parse(strategy or cfg.strategy or "TPipe") if not isinstance(strategy, StrategyKind) else strategy
    p, v, m = cfg.p, cfg.v, cfg.m
    chunks = policy.chunks(v)
    saving = Fraction(len(chunks), v)
    if p >= 2:
        feas_off = offload_feasible(p, policy.t_step, cfg.t_bwd)
        feas_up = upload_feasible(p, policy.t_upload, cfg.t_fwd)
    else:
        feas_off = policy.t_step == 0
        feas_up = policy.t_upload == 0
    req_off = policy.t_step / (v * p)
    req_up = policy.t_upload / (v * p)
    if strategy is not StrategyKind.TPIPE:
        # overlap with warmup/cooldown compute, modeled as free
        per = tuple(
            ChunkOffload(c, None, None, Fraction(0), Fraction(0), req_off, req_up, Fraction(1), Fraction(1))
            for c in chunks
        )
        return OffloadPlan(per, feas_off, feas_up, saving, False)

    tick = timeline.tick
    need_off = req_off / tick
    need_up = req_up / tick
    total = timeline.total_ticks
    per, placements = [], []
    for c in chunks:
        idle_off_min = idle_up_min = None
        win_off = win_up = None
        idle0_off = idle0_up = Fraction(0)
        for s in range(p):
            lo = timeline.end_ticks(tid(s, c, m, B))
            hi = timeline.start_ticks(tid(s, c - 1, m, B)) if c > 1 else total
            gaps, idle = _window_idle(timeline, s, lo, hi)
            segs = _fill(gaps, need_off)
            for a, b in segs:
                placements.append(Placement(TaskKind.GRAD_OFFLOAD, s, c, a * tick, b * tick))
            ulo = timeline.end_ticks(tid(s, c - 1, 1, F)) if c > 1 else 0
            uhi = timeline.start_ticks(tid(s, c, 1, F))
            ugaps, uidle = _window_idle(timeline, s, ulo, uhi)
            for a, b in _fill(ugaps, need_up):
                placements.append(Placement(TaskKind.WEIGHT_UPLOAD, s, c, a * tick, b * tick))
            idle_off_min = idle if idle_off_min is None else min(idle_off_min, idle)
            idle_up_min = uidle if idle_up_min is None else min(idle_up_min, uidle)
            if s == 0:
                idle0_off, idle0_up = idle * tick, uidle * tick
                if segs:
                    win_off = (segs[0][0] * tick, segs[-1][1] * tick)
                ug = _fill(ugaps, need_up)
                if ug:
                    win_up = (ug[0][0] * tick, ug[-1][1] * tick)
        per.append(ChunkOffload(
            chunk=c, offload_window=win_off, upload_window=win_up,
            idle_offload=idle0_off, idle_upload=idle0_up,
            required_offload=req_off, required_upload=req_up,
            overlap_offload=_overlap(idle_off_min * tick, req_off),
            overlap_upload=_overlap(idle_up_min * tick, req_up),
        ))
    return OffloadPlan(tuple(per), feas_off, feas_up, saving, True, tuple(placements))


def scaling_report(cfg: PipelineConfig, sweep) -> list:
    """Rows (p, available/required) for the cooldown window under (p, seq_scale) pairs.

    ``seq_scale`` stretches t_bwd (a sequence-length proxy) while t_step stays put.
    Rows with no offload work report None.
    """
    t_step = cfg.offload.t_step if cfg.offload else Fraction(0)
    rows = []
    for p, scale in sweep:
        t_bwd = cfg.t_bwd * Fraction(scale)
        avail = available_offload_time(p, t_bwd) if p >= 2 else Fraction(0)
        need = Fraction(t_step) / (2 * p)
        rows.append((p, None if need == 0 else avail / need))
    return rows
