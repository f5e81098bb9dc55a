"""Exact-time simulator for pipeline-parallel training schedules."""
from .core import (
    ConflictUnresolvable,
    DeadlockError,
    DomainError,
    IncompatibleStrategy,
    OffloadPolicy,
    ParseError,
    PipelineConfig,
    RecomputeMode,
    RecomputePolicy,
    TaskId,
    TaskKind,
    TpipeError,
    UnknownFormat,
    ValidationError,
    config_from_dict,
    config_to_dict,
    load_config,
)
from .sched import StrategyKind, build_schedule, validate_graph
from .sim import simulate

__all__ = [
    "ConflictUnresolvable", "DeadlockError", "DomainError", "IncompatibleStrategy",
    "OffloadPolicy", "ParseError", "PipelineConfig", "RecomputeMode", "RecomputePolicy",
    "StrategyKind", "TaskId", "TaskKind", "TpipeError", "UnknownFormat", "ValidationError",
    "build_schedule", "config_from_dict", "config_to_dict", "load_config", "simulate",
    "validate_graph",
]
