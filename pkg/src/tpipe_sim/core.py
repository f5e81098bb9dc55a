"""Domain types, exact arithmetic helpers and config ingestion."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, NamedTuple, Optional

Rational = Fraction


class TpipeError(Exception):
    """Base class for all package errors."""


class ParseError(TpipeError):
    pass


class ValidationError(TpipeError):
    def __init__(self, field_name: str, message: str = ""):
        self.field = field_name
        super().__init__(f"{field_name}: {message}" if message else field_name)


class DomainError(TpipeError):
    pass


class IncompatibleStrategy(TpipeError):
    pass


class ConflictUnresolvable(TpipeError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class DeadlockError(TpipeError):
    pass


class UnknownFormat(TpipeError):
    pass


class TaskKind(str, Enum):
    FORWARD = "F"
    BACKWARD = "B"
    RECOMPUTE = "R"
    GRAD_OFFLOAD = "GO"
    OPT_STEP_HOST = "OH"
    WEIGHT_UPLOAD = "WU"
    OPT_STEP_DEVICE = "OD"


class TaskId(NamedTuple):
    stage: int
    chunk: int
    microbatch: int
    kind: TaskKind

    def label(self) -> str:
        return f"{self.kind.value}{self.chunk}.{self.microbatch}@{self.stage}"


_tuple_new = tuple.__new__


def tid(stage: int, chunk: int, microbatch: int, kind: TaskKind) -> TaskId:
    """Fast TaskId constructor for hot loops."""
    return _tuple_new(TaskId, (stage, chunk, microbatch, kind))


class RecomputeMode(str, Enum):
    NONE = "None"
    STANDARD = "StandardLayerGrouped"
    BLOCKWISE = "BlockWiseTemporal"


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def frac_ceil(x: Fraction) -> int:
    return math.ceil(x)


def to_rational(value: Any, name: str) -> Fraction:
    """Parse an int or a "num/den" (or decimal) string into a Fraction."""
    if isinstance(value, bool):
        raise ValidationError(name, "expected a rational, got a boolean")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            raise ValidationError(name, f"cannot parse {value!r} as a rational") from None
    if isinstance(value, float):
        raise ValidationError(name, "floats are not accepted; use an integer or a 'num/den' string")
    raise ValidationError(name, f"unsupported type {type(value).__name__}")


def rational_str(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


@dataclass(frozen=True)
class RecomputePolicy:
    mode: RecomputeMode = RecomputeMode.NONE
    ratio: Fraction = Fraction(0)
    delay_rounds_override: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", RecomputeMode(self.mode))
        object.__setattr__(self, "ratio", to_rational(self.ratio, "recompute.ratio"))

    def chunk_count(self, v: int) -> int:
        # nearest integer, ties toward more recomputation
        return math.floor(self.ratio * v + Fraction(1, 2))

    def selected_chunks(self, v: int) -> tuple[int, ...]:
        return tuple(range(1, self.chunk_count(v) + 1))


@dataclass(frozen=True)
class OffloadPolicy:
    t_step: Fraction = Fraction(0)
    t_upload: Fraction = Fraction(0)
    chunks_offloaded: Optional[frozenset] = None

    def __post_init__(self):
        object.__setattr__(self, "t_step", to_rational(self.t_step, "offload.t_step"))
        object.__setattr__(self, "t_upload", to_rational(self.t_upload, "offload.t_upload"))
        if self.chunks_offloaded is not None:
            object.__setattr__(self, "chunks_offloaded", frozenset(self.chunks_offloaded))

    def chunks(self, v: int) -> tuple[int, ...]:
        if self.chunks_offloaded is None:
            return (v,)
        return tuple(sorted(self.chunks_offloaded, reverse=True))


_RATIONAL_FIELDS = ("bwd_fwd_ratio", "t_fwd", "m_a", "p2p_latency", "model_state")


@dataclass(frozen=True)
class PipelineConfig:
    p: int
    m: int
    v: int = 1
    bwd_fwd_ratio: Fraction = Fraction(2)
    t_fwd: Fraction = Fraction(1)
    m_a: Fraction = Fraction(1)
    p2p_latency: Fraction = Fraction(0)
    recompute: Optional[RecomputePolicy] = None
    offload: Optional[OffloadPolicy] = None
    model_state: Fraction = Fraction(0)
    strategy: Optional[str] = None
    label: Optional[str] = None

    def __post_init__(self):
        for name in _RATIONAL_FIELDS:
            object.__setattr__(self, name, to_rational(getattr(self, name), name))
        validate(self)

    @property
    def t_unit(self) -> Fraction:
        return self.t_fwd / (self.v * self.p)

    @property
    def act_block(self) -> Fraction:
        return self.m_a / (self.v * self.p)

    @property
    def t_bwd(self) -> Fraction:
        return self.t_fwd * self.bwd_fwd_ratio

    def replace(self, **changes) -> "PipelineConfig":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return PipelineConfig(**data)


def validate(cfg: PipelineConfig) -> None:
    for name in ("p", "m", "v"):
        val = getattr(cfg, name)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise ValidationError(name, "must be an integer >= 1")
    if cfg.bwd_fwd_ratio <= 0:
        raise ValidationError("bwd_fwd_ratio", "must be > 0")
    if cfg.t_fwd <= 0:
        raise ValidationError("t_fwd", "must be > 0")
    if cfg.m_a <= 0:
        raise ValidationError("m_a", "must be > 0")
    if cfg.p2p_latency < 0:
        raise ValidationError("p2p_latency", "must be >= 0")
    if cfg.model_state < 0:
        raise ValidationError("model_state", "must be >= 0")
    rc = cfg.recompute
    if rc is not None:
        if not 0 <= rc.ratio <= 1:
            raise ValidationError("recompute.ratio", "must lie in [0, 1]")
        if rc.delay_rounds_override is not None and rc.delay_rounds_override < 0:
            raise ValidationError("recompute.delay_rounds_override", "must be >= 0")
        if rc.mode is RecomputeMode.BLOCKWISE and cfg.v < 2:
            raise ValidationError("recompute.mode", "BlockWiseTemporal needs v >= 2")
    off = cfg.offload
    if off is not None:
        if off.t_step < 0:
            raise ValidationError("offload.t_step", "must be >= 0")
        if off.t_upload < 0:
            raise ValidationError("offload.t_upload", "must be >= 0")
        if off.chunks_offloaded is not None and not set(off.chunks_offloaded) <= set(range(1, cfg.v + 1)):
            raise ValidationError("offload.chunks_offloaded", "must be a subset of 1..v")


def derived_units(cfg: PipelineConfig) -> tuple[Fraction, Fraction]:
    return cfg.t_unit, cfg.act_block


_TOP_KEYS = {"p", "m", "v", "bwd_fwd_ratio", "t_fwd", "m_a", "p2p_latency", "recompute",
             "offload", "model_state", "strategy", "label"}


def _int_field(d: dict, name: str, default=None) -> int:
    if name not in d:
        if default is None:
            raise ValidationError(name, "missing")
        return default
    val = d[name]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ValidationError(name, "must be an integer")
    return val


def config_from_dict(d: dict) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ParseError("config must be a JSON object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    rc = None
    if d.get("recompute") is not None:
        r = d["recompute"]
        if not isinstance(r, dict):
            raise ValidationError("recompute", "must be an object")
        try:
            mode = RecomputeMode(r.get("mode", "None"))
        except ValueError:
            raise ValidationError("recompute.mode", f"unknown mode {r.get('mode')!r}") from None
        ratio = to_rational(r.get("ratio", 0 if mode is RecomputeMode.NONE else 1), "recompute.ratio")
        k = r.get("delay_rounds_override")
        if k is not None and (isinstance(k, bool) or not isinstance(k, int)):
            raise ValidationError("recompute.delay_rounds_override", "must be an integer")
        rc = RecomputePolicy(mode, ratio, k)
    off = None
    if d.get("offload") is not None:
        o = d["offload"]
        if not isinstance(o, dict):
            raise ValidationError("offload", "must be an object")
        chunks = o.get("chunks_offloaded")
        if chunks is not None:
            if not isinstance(chunks, list) or not all(isinstance(c, int) and not isinstance(c, bool) for c in chunks):
                raise ValidationError("offload.chunks_offloaded", "must be a list of integers")
            chunks = frozenset(chunks)
        off = OffloadPolicy(
            to_rational(o.get("t_step", 0), "offload.t_step"),
            to_rational(o.get("t_upload", 0), "offload.t_upload"),
            chunks,
        )
    for name in ("strategy", "label"):
        if d.get(name) is not None and not isinstance(d[name], str):
            raise ValidationError(name, "must be a string")
    return PipelineConfig(
        p=_int_field(d, "p"),
        m=_int_field(d, "m"),
        v=_int_field(d, "v", 1),
        bwd_fwd_ratio=to_rational(d.get("bwd_fwd_ratio", 2), "bwd_fwd_ratio"),
        t_fwd=to_rational(d.get("t_fwd", 1), "t_fwd"),
        m_a=to_rational(d.get("m_a", 1), "m_a"),
        p2p_latency=to_rational(d.get("p2p_latency", 0), "p2p_latency"),
        recompute=rc,
        offload=off,
        model_state=to_rational(d.get("model_state", 0), "model_state"),
        strategy=d.get("strategy"),
        label=d.get("label"),
    )


def config_to_dict(cfg: PipelineConfig) -> dict:
    out: dict[str, Any] = {
        "p": cfg.p,
        "m": cfg.m,
        "v": cfg.v,
        "bwd_fwd_ratio": rational_str(cfg.bwd_fwd_ratio),
        "t_fwd": rational_str(cfg.t_fwd),
        "m_a": rational_str(cfg.m_a),
        "p2p_latency": rational_str(cfg.p2p_latency),
        "model_state": rational_str(cfg.model_state),
    }
    if cfg.recompute is not None:
        rc = cfg.recompute
        out["recompute"] = {"mode": rc.mode.value, "ratio": rational_str(rc.ratio)}
        if rc.delay_rounds_override is not None:
            out["recompute"]["delay_rounds_override"] = rc.delay_rounds_override
    if cfg.offload is not None:
        off = cfg.offload
        out["offload"] = {"t_step": rational_str(off.t_step), "t_upload": rational_str(off.t_upload)}
        if off.chunks_offloaded is not None:
            out["offload"]["chunks_offloaded"] = sorted(off.chunks_offloaded)
    if cfg.strategy is not None:
        out["strategy"] = cfg.strategy
    if cfg.label is not None:
        out["label"] = cfg.label
    return out


def serialize(cfg: PipelineConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return loads_config(text)


def loads_config(text: str) -> PipelineConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    return config_from_dict(data)
