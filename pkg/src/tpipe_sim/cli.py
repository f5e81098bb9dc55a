"""Command-line frontend.

Exit codes: 0 success, 1 other package error, 2 config/usage error,
3 unresolved dependency conflicts, 4 executor deadlock.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Any, Optional

from .analytic import AnalyticReport, analytic_report, cross_check
from .core import (
    ConflictUnresolvable,
    DeadlockError,
    IncompatibleStrategy,
    ParseError,
    PipelineConfig,
    TpipeError,
    UnknownFormat,
    ValidationError,
    config_from_dict,
    config_to_dict,
    load_config,
    rational_str,
    to_rational,
)
from .modelspec import PROVENANCE, ModelSpec, apply_model, load_model_spec, max_layers
from .offload import OffloadPlan, plan_offload
from .recomp import RecompPlan, recompute_pipeline
from .render import render
from .sched import StrategyKind, TaskGraph, build_schedule, validate_graph
from .sim import MemoryTimeline, SimReport, Timeline, mfu_proxy, simulate, timeline_from_dict, timeline_to_dict

SEEDLESS_ENV = "TPIPE_SIM_SEEDLESS"  # reserved; the simulator has no randomness
DEFAULT_RUN_CAP = 10_000
COMPARE_COLUMNS = (
    "label", "strategy", "p", "m", "v", "total_time", "bubble_ratio",
    "peak_mem", "mfu_proxy", "max_layers",
)


# --- running one config ---------------------------------------------------------


@dataclass
class RunResult:
    cfg: PipelineConfig
    strategy: StrategyKind
    graph: TaskGraph
    timeline: Timeline
    memory: MemoryTimeline
    report: SimReport
    recomp: RecompPlan
    offload: OffloadPlan
    analytic: AnalyticReport
    notes: list = field(default_factory=list)

    @property
    def peak_fraction(self) -> Fraction:
        """Worst-stage activation + buffer peak, in m_a."""
        return max(self.report.peak_total) / self.cfg.m_a


def resolve_strategy(cfg: PipelineConfig, override: Optional[str]) -> StrategyKind:
    name = override or cfg.strategy
    if name is None:
        name = "OneFOneB" if cfg.v == 1 else "TPipe"
    try:
        return StrategyKind.parse(name)
    except ValueError as exc:
        raise ValidationError("strategy", str(exc)) from None


def run_config(cfg: PipelineConfig, strategy: Optional[str] = None) -> RunResult:
    kind = resolve_strategy(cfg, strategy)
    g = build_schedule(cfg, kind)
    g, plan = recompute_pipeline(g, cfg.recompute)
    conflicts = validate_graph(g)
    if conflicts:
        raise ConflictUnresolvable(f"{len(conflicts)} dependency conflicts in the planned schedule", conflicts)
    tl, mem, rep = simulate(g, cfg)
    off = plan_offload(cfg, tl, kind)
    an = analytic_report(cfg, kind.value)
    return RunResult(cfg, kind, g, tl, mem, rep, plan, off, an)


# --- serialization ----------------------------------------------------------------


def _rs(x) -> Optional[str]:
    return None if x is None else rational_str(Fraction(x))


def sim_report_dict(rep: SimReport, m_a: Fraction) -> dict:
    """Times in T_unit, memory in m_a."""
    tu = rep.t_unit

    def t(x):
        return None if x is None else _rs(x / tu)

    return {
        "t_unit": _rs(tu),
        "total_time": t(rep.total_time),
        "bubble_ratio": _rs(rep.bubble_ratio),
        "stage_bubble": [_rs(x) for x in rep.stage_bubble],
        "busy_time": [t(x) for x in rep.busy_time],
        "useful_time": t(rep.useful_time),
        "recompute_time": t(rep.recompute_time),
        "peak_activation": [_rs(x / m_a) for x in rep.peak_activation],
        "peak_buffer": [_rs(x / m_a) for x in rep.peak_buffer],
        "peak_total": [_rs(x / m_a) for x in rep.peak_total],
        "peak_model_state": [_rs(x / m_a) for x in rep.peak_model_state],
        "chunk_peak_blocks": [{str(c): _rs(n) for c, n in sorted(d.items())} for d in rep.chunk_peak_blocks],
        "fwd_interval": t(rep.fwd_interval),
        "bwd_interval": t(rep.bwd_interval),
        "measure_microbatch": rep.measure_microbatch,
        "mfu_proxy": _rs(mfu_proxy(rep)),
    }


def report_dict(res: RunResult, model_note: Optional[str] = None) -> dict:
    out = {
        "config": config_to_dict(res.cfg),
        "strategy": res.strategy.value,
        "units": {"time": "T_unit", "memory": "m_a"},
        "sim": sim_report_dict(res.report, res.cfg.m_a),
        "analytic": res.analytic.as_dict(),
        "checks": cross_check(res.analytic, res.cfg, res.report, res.recomp),
        "offload": res.offload.as_dict(),
        "recompute": res.recomp.as_dict(),
    }
    if model_note:
        out["model_provenance"] = model_note
    return out


def memory_csv(mem: MemoryTimeline, t_unit: Fraction, m_a: Fraction) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "time", "activation", "buffer", "model_state", "total"])
    for s in range(mem.p):
        for t, a, b, ms in mem.series(s):
            w.writerow([s, _rs(t / t_unit), _rs(a / m_a), _rs(b / m_a), _rs(ms / m_a), _rs((a + b + ms) / m_a)])
    return buf.getvalue()


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- helpers ---------------------------------------------------------------------


def bundled_config_path(name: str) -> str:
    return str(resources.files("tpipe_sim").joinpath(f"data/configs/{name}"))


def _load(path: str, model: Optional[str]) -> tuple:
    cfg = load_config(path)
    note = None
    if model is not None:
        spec = load_model_spec(None if model == "example" else model)
        cfg = apply_model(cfg, spec)
        note = PROVENANCE
    return cfg, note


def _budget_bytes(text: str) -> Fraction:
    try:
        gb = to_rational(text, "budget-gb")
    except ValidationError as exc:
        raise ValidationError("budget-gb", str(exc)) from None
    if gb <= 0:
        raise ValidationError("budget-gb", "must be positive")
    return gb * 10**9


# --- commands ---------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg, note = _load(args.config, args.model)
    res = run_config(cfg, args.strategy)
    out = args.out or "."
    write_atomic(os.path.join(out, "report.json"), dumps(report_dict(res, note)))
    write_atomic(os.path.join(out, "timeline.json"), dumps(timeline_to_dict(res.timeline, res.report.t_unit)))
    write_atomic(os.path.join(out, "memory.csv"), memory_csv(res.memory, res.report.t_unit, cfg.m_a))
    print(f"total_time {rational_str(res.report.total_time_units)} T_unit; wrote {out}")
    return 0


def cmd_render(args) -> int:
    fmt = args.format or "svg"
    if fmt not in ("svg", "text"):
        raise UnknownFormat(f"unknown render format {fmt!r}; expected svg or text")
    try:
        with open(args.timeline, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {args.timeline}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"timeline is not valid JSON: {exc.msg}") from None
    tl, t_unit = timeline_from_dict(data)
    text = render(tl, t_unit, fmt)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def compare_rows(paths: list, strategy: Optional[str] = None, spec: Optional[ModelSpec] = None,
                 budget: Optional[Fraction] = None) -> list:
    rows = []
    for path in paths:
        cfg = load_config(path)
        if spec is not None:
            cfg = apply_model(cfg, spec)
        res = run_config(cfg, strategy)
        rows.append(_row(res, spec, budget))
    return rows


def _row(res: RunResult, spec: Optional[ModelSpec], budget: Optional[Fraction]) -> dict:
    cfg, rep = res.cfg, res.report
    on_device = 1 - res.offload.model_state_saving
    row = {
        "label": cfg.label or "",
        "strategy": res.strategy.value,
        "p": cfg.p,
        "m": cfg.m,
        "v": cfg.v,
        "total_time": _rs(rep.total_time_units),
        "bubble_ratio": _rs(rep.bubble_ratio),
        "peak_mem": _rs(res.peak_fraction),
        "mfu_proxy": _rs(mfu_proxy(rep)),
        "max_layers": "",
    }
    if spec is not None and budget is not None:
        row["max_layers"] = max_layers(spec, cfg.p, res.peak_fraction, on_device, budget)
    return row


_METRIC_COLUMN = {"peak_mem": "peak_mem", "bubble": "bubble_ratio", "total_time": "total_time", "mfu_proxy": "mfu_proxy"}


def rows_csv(rows: list, columns=COMPARE_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def cmd_compare(args) -> int:
    paths = args.config
    if not paths or len(paths) < 2:
        raise ValidationError("config", "compare needs at least two --config files")
    spec = None
    budget = None
    if args.budget_gb is not None:
        budget = _budget_bytes(args.budget_gb)
        spec = load_model_spec(None if args.model in (None, "example") else args.model)
    elif args.model is not None:
        spec = load_model_spec(None if args.model == "example" else args.model)
    rows = compare_rows(paths, args.strategy, spec, budget)
    if args.metric:
        col = _METRIC_COLUMN[args.metric]
        rows = sorted(rows, key=lambda r: Fraction(r[col]))
    text = rows_csv(rows)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# --- sweep -------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """Values to vary over a base config.

    ``axes`` maps a config key (dotted for nested keys, e.g. "recompute.ratio",
    plus the pseudo key "strategy") to a nonempty list of values.
    """

    base: dict
    axes: dict
    mode: str = "product"
    out: Optional[str] = None
    cap: int = DEFAULT_RUN_CAP

    def __post_init__(self):
        if self.mode not in ("product", "zip"):
            raise ValidationError("mode", "must be 'product' or 'zip'")
        if not self.axes:
            raise ValidationError("axes", "at least one axis is required")
        for k, vals in self.axes.items():
            if not isinstance(vals, list) or not vals:
                raise ValidationError(f"axes.{k}", "must be a nonempty list")
        if self.mode == "zip" and len({len(v) for v in self.axes.values()}) != 1:
            raise ValidationError("axes", "zip mode needs equal-length lists")
        if self.run_count() > self.cap:
            raise ValidationError("axes", f"{self.run_count()} runs exceed the cap of {self.cap}")

    def run_count(self) -> int:
        lens = [len(v) for v in self.axes.values()]
        if self.mode == "zip":
            return lens[0]
        n = 1
        for x in lens:
            n *= x
        return n

    def points(self) -> list:
        keys = sorted(self.axes)
        if self.mode == "zip":
            combos = zip(*(self.axes[k] for k in keys))
        else:
            combos = itertools.product(*(self.axes[k] for k in keys))
        out = []
        for combo in combos:
            d = json.loads(json.dumps(self.base))
            for k, val in zip(keys, combo):
                _set_dotted(d, k, val)
            out.append(d)
        return out


def _set_dotted(d: dict, key: str, val) -> None:
    parts = key.split(".")
    for part in parts[:-1]:
        d = d.setdefault(part, {})
    d[parts[-1]] = val


def load_sweep(path: str, cap: Optional[int] = None) -> SweepSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"sweep spec is not valid JSON: {exc.msg}") from None
    if not isinstance(data, dict) or "base" not in data or "axes" not in data:
        raise ParseError("sweep spec needs 'base' and 'axes'")
    base = data["base"]
    if isinstance(base, str):
        with open(os.path.join(os.path.dirname(os.path.abspath(path)), base), encoding="utf-8") as fh:
            base = json.load(fh)
    return SweepSpec(base, data["axes"], data.get("mode", "product"), data.get("out"),
                     cap if cap is not None else data.get("cap", DEFAULT_RUN_CAP))


def _sweep_one(point: dict) -> dict:
    row: dict = {c: "" for c in COMPARE_COLUMNS}
    row["error"] = ""
    try:
        cfg = config_from_dict(point)
        res = run_config(cfg)
        row.update(_row(res, None, None))
    except TpipeError as exc:
        row.update({"label": point.get("label", ""), "p": point.get("p", ""), "m": point.get("m", ""),
                    "v": point.get("v", ""), "strategy": point.get("strategy", "")})
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(spec: SweepSpec, workers: int = 1) -> list:
    points = spec.points()
    if workers <= 1:
        return [_sweep_one(pt) for pt in points]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_one, points, chunksize=max(1, len(points) // (4 * workers))))


def cmd_sweep(args) -> int:
    spec = load_sweep(args.spec, args.cap)
    rows = run_sweep(spec, args.workers)
    text = rows_csv(rows, COMPARE_COLUMNS + ("error",))
    out = args.out or spec.out
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)
    return 0


# --- analytic / offload / sched ------------------------------------------------


def _table(pairs: list) -> str:
    width = max((len(k) for k, _ in pairs), default=0)
    return "".join(f"{k:<{width}}  {v}\n" for k, v in pairs)


def cmd_analytic(args) -> int:
    cfg, _ = _load(args.config, args.model)
    kind = resolve_strategy(cfg, args.strategy)
    rep = analytic_report(cfg, kind.value)
    fmt = args.format or "json"
    if fmt == "json":
        sys.stdout.write(dumps(rep.as_dict()))
    elif fmt == "text":
        d = rep.as_dict()["entries"]
        sys.stdout.write(_table([(f"{k} [{v['id']}]", json.dumps(v["value"])) for k, v in d.items()]))
    else:
        raise UnknownFormat(f"unknown format {fmt!r}; expected json or text")
    return 0


def cmd_offload(args) -> int:
    cfg, _ = _load(args.config, args.model)
    if cfg.offload is None:
        raise ValidationError("offload", "config has no offload policy")
    res = run_config(cfg, args.strategy)
    d = res.offload.as_dict()
    d["strategy"] = res.strategy.value
    fmt = args.format or "json"
    if fmt == "json":
        sys.stdout.write(dumps(d))
    elif fmt == "text":
        pairs = [(k, json.dumps(v)) for k, v in d.items() if k != "per_chunk"]
        for c in d["per_chunk"]:
            pairs.extend((f"chunk{c['chunk']}.{k}", json.dumps(v)) for k, v in c.items() if k != "chunk")
        sys.stdout.write(_table(pairs))
    else:
        raise UnknownFormat(f"unknown format {fmt!r}; expected json or text")
    return 0


def cmd_sched_dump(args) -> int:
    cfg, _ = _load(args.config, args.model)
    kind = resolve_strategy(cfg, args.strategy)
    g, plan = recompute_pipeline(build_schedule(cfg, kind), cfg.recompute)
    tu = g.f_dur
    fmt = args.format or "text"
    if fmt == "json":
        stages = []
        for seq in g.stage_order:
            rows = []
            for t in seq:
                row = {"task": t.label(), "duration": _rs(g.durations[t] / tu)}
                if g.planned is not None:
                    row["planned_start"] = _rs(g.planned[t] / tu)
                rows.append(row)
            stages.append(rows)
        conflicts = validate_graph(g)
        sys.stdout.write(dumps({
            "strategy": kind.value, "stages": stages,
            "recompute": plan.as_dict(), "conflicts": conflicts.as_list(),
        }))
    elif fmt == "text":
        for s, seq in enumerate(g.stage_order):
            sys.stdout.write(f"S{s}: " + " ".join(t.label().split("@")[0] for t in seq) + "\n")
    else:
        raise UnknownFormat(f"unknown format {fmt!r}; expected json or text")
    return 0


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tpipe-sim", description="Pipeline-parallel schedule simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--strategy", help="OneFOneB | Interleave1F1B | TPipe (overrides the config)")
        p.add_argument("--model", help="ModelSpec JSON, or 'example' for the bundled one")

    p = sub.add_parser("simulate", help="simulate one config and write report/timeline/memory files")
    common(p)
    p.add_argument("--out", help="output directory (default: .)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render a timeline.json as SVG or text")
    p.add_argument("timeline")
    p.add_argument("--format", default="svg")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("compare", help="one CSV row per config")
    p.add_argument("--config", action="append", required=True)
    p.add_argument("--strategy")
    p.add_argument("--model")
    p.add_argument("--budget-gb", dest="budget_gb")
    p.add_argument("--metric", choices=sorted(_METRIC_COLUMN))
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="run a SweepSpec")
    p.add_argument("spec")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cap", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analytic", help="print closed-form predictions")
    common(p)
    p.add_argument("--format", default="json")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("offload", help="offload planning")
    osub = p.add_subparsers(dest="offload_command", required=True)
    q = osub.add_parser("feasibility", help="offload windows, overlap and feasibility")
    common(q)
    q.add_argument("--format", default="json")
    q.set_defaults(func=cmd_offload)

    p = sub.add_parser("sched", help="schedule inspection")
    ssub = p.add_subparsers(dest="sched_command", required=True)
    q = ssub.add_parser("dump", help="per-stage task order")
    common(q)
    q.add_argument("--format", default="text")
    q.set_defaults(func=cmd_sched_dump)
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ParseError, ValidationError, IncompatibleStrategy, UnknownFormat)):
        return 2
    if isinstance(exc, ConflictUnresolvable):
        return 3
    if isinstance(exc, DeadlockError):
        return 4
    return 1


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TpipeError as exc:
        msg = f"error: {type(exc).__name__}: {exc}"
        if isinstance(exc, ConflictUnresolvable) and exc.report is not None:
            entries = exc.report.as_list()
            shown = "; ".join(f"{e['pred']}->{e['succ']} ({e['kind']})" for e in entries[:5])
            more = f" (+{len(entries) - 5} more)" if len(entries) > 5 else ""
            msg += f": {shown}{more}"
        print(msg, file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
