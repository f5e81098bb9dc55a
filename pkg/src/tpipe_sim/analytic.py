"""Closed-form predictions used as oracles for the simulator.

All values are exact Fractions. Time is expressed in T_unit (one block's
forward) unless a function says otherwise; memory in fractions of m_a.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .core import DomainError, PipelineConfig, RecomputeMode, ceil_div, rational_str
from .offload import (
    available_offload_time,
    available_upload_time,
    offload_feasible,
    upload_feasible,
)
from .recomp import delay_rounds


def _need(p: int, low: int = 3) -> None:
    if p < low:
        raise DomainError(f"closed form needs p >= {low}")


def fwd_interval(p: int) -> int:
    _need(p)
    return 3 + 6 * ceil_div(p - 3, 6) - p


def bwd_interval(p: int) -> int:
    _need(p)
    return 3 + 6 * ceil_div(2 * p - 3, 6) - 2 * p


def tpipe_lifespans(p: int) -> tuple:
    """(chunk1, chunk2) activation lifespans at stage 0, Forward start to Backward start."""
    _need(p)
    life2 = p + 2 * p - 2
    life1 = 6 * p - 2 + fwd_interval(p) + bwd_interval(p)
    return life1, life2


def tpipe_peaks(p: int) -> tuple:
    """(chunk1_blocks, chunk2_blocks, total_fraction of m_a)."""
    _need(p)
    a, b = ceil_div(p - 3, 6), ceil_div(2 * p - 3, 6)
    c1 = math.ceil(Fraction(2, 3) + a + b + Fraction(p, 2))
    c2 = math.ceil(Fraction(3 * p - 2, 6))
    return c1, c2, Fraction(c1 + c2, 2 * p)


def tpipe_time(p: int, m: int) -> tuple:
    """(warmup, steady, cooldown, total, bubble_ratio), times in T_unit."""
    total = 6 * (m + p - 1)
    return 2 * p, 6 * (m - 1), 4 * p, total, Fraction(p - 1, m + p - 1)


@dataclass(frozen=True)
class TRecompForms:
    life_chunk2: int
    blocks: int  # ceil(life / round)
    blocks_simplified: int  # floor(p/2), the printed simplification
    total_time: int
    storage_fraction: Fraction  # (floor(p/2) + 1 buffer) / 2p
    storage_fraction_no_buffer: Fraction

    def __iter__(self):
        return iter((self.life_chunk2, self.blocks_simplified, self.total_time))


def trecomp_closed_forms(p: int, m: int) -> TRecompForms:
    _need(p)
    life = 3 * p + ceil_div(p - 1, 2) - 2
    blocks = ceil_div(life, 7)
    simple = p // 2
    return TRecompForms(
        life_chunk2=life,
        blocks=blocks,
        blocks_simplified=simple,
        total_time=6 * p + 7 * (m - 1),
        storage_fraction=Fraction(simple + 1, 2 * p),
        storage_fraction_no_buffer=Fraction(simple, 2 * p),
    )


def standard_recompute_forms(p: int, m: int, ratio=Fraction(1, 2)) -> dict:
    """1F1B with layer-grouped recomputation; time in the v=2 T_unit (a 1F1B forward is 2)."""
    ratio = Fraction(ratio)
    per_stage = 2 + 4 + 2 * ratio  # forward, backward, regenerate
    return {
        "total_time": per_stage * (m - 1 + p),
        "activation_fraction": 1 - ratio,
        "buffer_fraction": Fraction(1, p) if ratio else Fraction(0),
    }


def trecomp_efficiency(p: int) -> Fraction:
    """(1F1B + 50% recompute storage) / (block-wise storage incl. buffer)."""
    return standard_recompute_forms(p, p)["activation_fraction"] / trecomp_closed_forms(p, p).storage_fraction


def baseline_peaks(p: int, v: int, stage: int) -> Fraction:
    if not 0 <= stage < p:
        raise DomainError("stage out of range")
    if v == 1:
        return Fraction(p - stage, p)
    warm = (p - stage - 1) * 2 + (v - 1) * p + 1
    return Fraction(warm, p * v)


def onefoneb_bubble_time(p: int, t_fwd, t_bwd) -> Fraction:
    """Idle time of one stage over an iteration (zero latency); times are whole-model."""
    return (p - 1) * (Fraction(t_fwd) + Fraction(t_bwd)) / p


def interleave_bubble_time(p: int, v: int, t_fwd, t_bwd) -> Fraction:
    return onefoneb_bubble_time(p, t_fwd, t_bwd) / v


def offload_conditions(p: int, t_step, t_upload, t_fwd, t_bwd) -> tuple:
    if p < 2:
        raise DomainError("offload conditions need p >= 2")
    return offload_feasible(p, t_step, t_bwd), upload_feasible(p, t_upload, t_fwd)


@dataclass(frozen=True)
class AnalyticReport:
    strategy: str
    entries: dict = field(default_factory=dict)  # name -> (value, identifier)

    def get(self, name: str):
        item = self.entries.get(name)
        return None if item is None else item[0]

    def as_dict(self) -> dict:
        out = {}
        for name, (value, ident) in self.entries.items():
            out[name] = {"value": _jsonable(value), "id": ident}
        return {"strategy": self.strategy, "entries": out}


def _jsonable(x):
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, (int, Fraction)):
        return rational_str(Fraction(x))
    if isinstance(x, (tuple, list)):
        return [_jsonable(y) for y in x]
    return str(x)


def analytic_report(cfg: PipelineConfig, strategy: str) -> AnalyticReport:
    """Every closed form that applies to ``cfg`` under ``strategy``.

    Times are in T_unit (t_fwd / (v p)); memory in fractions of m_a.
    Values that only hold at v=2, ratio 2 are omitted elsewhere.
    """
    p, m, v = cfg.p, cfg.m, cfg.v
    tu = cfg.t_unit
    e: dict = {}
    canonical = cfg.bwd_fwd_ratio == 2 and cfg.p2p_latency == 0
    rc = cfg.recompute
    rmode = rc.mode if rc is not None and rc.ratio > 0 else RecomputeMode.NONE
    if strategy == "TPipe" and v == 2 and p >= 3 and canonical:
        if rmode is RecomputeMode.NONE:
            c1, c2, frac = tpipe_peaks(p)
            warm, steady, cool, total, bubble = tpipe_time(p, m)
            life1, life2 = tpipe_lifespans(p)
            e["total_time"] = (total , "tpipe.total_time")
            e["bubble_ratio"] = (bubble, "tpipe.bubble_ratio")
            e["warmup"] = (warm , "tpipe.warmup")
            e["steady"] = (steady , "tpipe.steady")
            e["cooldown"] = (cool , "tpipe.cooldown")
            e["chunk1_peak_blocks"] = (c1, "tpipe.peak_chunk1")
            e["chunk2_peak_blocks"] = (c2, "tpipe.peak_chunk2")
            e["stage0_peak_fraction"] = (frac, "tpipe.peak_total")
            e["life_chunk1"] = (life1 , "tpipe.life_chunk1")
            e["life_chunk2"] = (life2 , "tpipe.life_chunk2")
            e["fwd_interval"] = (fwd_interval(p) , "tpipe.fwd_interval")
            e["bwd_interval"] = (bwd_interval(p) , "tpipe.bwd_interval")
        elif rmode is RecomputeMode.BLOCKWISE and rc.selected_chunks(v) == (1,):
            tr = trecomp_closed_forms(p, m)
            e["total_time"] = (tr.total_time , "trecomp.total_time")
            e["life_chunk2"] = (tr.life_chunk2 , "trecomp.life_chunk2")
            e["chunk2_blocks"] = (tr.blocks, "trecomp.blocks_ceil")
            e["chunk2_blocks_simplified"] = (tr.blocks_simplified, "trecomp.blocks_floor_half_p")
            e["stage0_peak_blocks"] = (tr.blocks_simplified + 1, "trecomp.blocks_with_buffer")
            e["stage0_peak_fraction"] = (tr.storage_fraction, "trecomp.storage_fraction")
            e["delay_rounds"] = (delay_rounds(p), "trecomp.delay_rounds")
    if strategy == "OneFOneB":
        e["stage_peaks"] = (tuple(baseline_peaks(p, 1, s) for s in range(p)), "baseline.1f1b_staircase")
        if cfg.p2p_latency == 0:
            f = cfg.t_fwd / p / tu
            b = f * cfg.bwd_fwd_ratio
            if rmode is RecomputeMode.STANDARD:
                b += rc.ratio * f
                e["stage0_activation_fraction"] = (1 - rc.ratio, "baseline.1f1b_recompute_storage")
            e["total_time"] = ((m + p - 1) * (f + b), "baseline.1f1b_total_time")
            e["bubble_ratio"] = (Fraction(p - 1, m + p - 1), "baseline.1f1b_bubble_ratio")
    if strategy == "Interleave1F1B" and m >= 2 * p:
        e["stage0_peak_fraction"] = (baseline_peaks(p, v, 0), "baseline.interleave_peak")
        if cfg.p2p_latency == 0 and rmode is RecomputeMode.NONE:
            e["bubble_time"] = (
                interleave_bubble_time(p, v, cfg.t_fwd, cfg.t_bwd) / tu,
                "baseline.interleave_bubble_time",
            )
    if cfg.offload is not None and p >= 2:
        t_bwd = cfg.t_bwd
        e["available_offload"] = (available_offload_time(p, t_bwd) / tu, "offload.available_offload")
        e["available_upload"] = (available_upload_time(p, cfg.t_fwd) / tu, "offload.available_upload")
        fo, fu = offload_conditions(p, cfg.offload.t_step, cfg.offload.t_upload, cfg.t_fwd, t_bwd)
        e["feasible_offload"] = (fo, "offload.condition_offload")
        e["feasible_upload"] = (fu, "offload.condition_upload")
    return AnalyticReport(strategy, e)


def _simulated(name: str, cfg: PipelineConfig, rep, plan=None):
    ma, tu = cfg.m_a, rep.t_unit
    if name == "total_time":
        return rep.total_time / tu
    if name == "bubble_ratio":
        return rep.bubble_ratio
    if name == "chunk1_peak_blocks":
        return rep.chunk_peak_blocks[0].get(1)
    if name == "chunk2_peak_blocks" or name == "chunk2_blocks":
        return rep.chunk_peak_blocks[0].get(2)
    if name == "stage0_peak_fraction":
        return rep.peak_total[0] / ma
    if name == "stage0_peak_blocks":
        return rep.stage0_blocks()
    if name == "stage0_activation_fraction":
        return rep.peak_activation[0] / ma
    if name == "fwd_interval":
        return None if rep.fwd_interval is None else rep.fwd_interval / tu
    if name == "bwd_interval":
        return None if rep.bwd_interval is None else rep.bwd_interval / tu
    if name == "stage_peaks":
        return tuple(x / ma for x in rep.peak_activation)
    if name == "bubble_time":
        return (rep.total_time - rep.busy_time[0]) / tu
    if name == "delay_rounds" and plan is not None:
        return plan.k
    return None


def cross_check(report: AnalyticReport, cfg: PipelineConfig, rep, plan=None) -> dict:
    """Compare each analytic entry with its simulated counterpart.

    Entries with no simulated counterpart are listed with status "analytic-only".
    """
    out = {}
    for name, (value, ident) in report.entries.items():
        sim = _simulated(name, cfg, rep, plan)
        if sim is None:
            out[name] = {"id": ident, "status": "analytic-only", "analytic": _jsonable(value)}
        elif sim == value:
            out[name] = {"id": ident, "status": "match", "value": _jsonable(value)}
        else:
            out[name] = {
                "id": ident, "status": "divergence",
                "analytic": _jsonable(value), "simulated": _jsonable(sim),
            }
    return out
