"""Model and hardware description to config scalars.

The memory model is deliberately simple and linear in the layer count:

* activations of one micro-batch across all layers (m_a, bytes)
  = layers * seq_len * micro_batch * hidden * bytes_per_activation
* parameters = 12 * layers * hidden**2
* model state (bytes) = parameters * optimizer_bytes_per_param
* t_fwd = 2 * parameters * tokens_per_microbatch / device_flops
* t_step = parameters * grad_bytes / host_bandwidth + parameters / host_throughput
* t_upload = parameters * upload_bytes / host_bandwidth

Time is in whatever unit the bandwidth, throughput and flops share.
"""
from __future__ import annotations

import json
from dataclasses import MISSING, dataclass, fields, replace
from fractions import Fraction
from importlib import resources

from .core import OffloadPolicy, ParseError, PipelineConfig, ValidationError, to_rational

PROVENANCE = (
    "m_a = layers*seq_len*micro_batch*hidden*bytes_per_activation; "
    "params = 12*layers*hidden^2; model_state = params*optimizer_bytes_per_param; "
    "t_fwd = 2*params*tokens/device_flops; "
    "t_step = params*grad_bytes/host_bandwidth + params/host_throughput; "
    "t_upload = params*upload_bytes/host_bandwidth"
)


@dataclass(frozen=True)
class ModelSpec:
    layers: int
    hidden: int
    seq_len: int
    micro_batch: int
    bytes_per_activation: Fraction
    optimizer_bytes_per_param: Fraction
    host_bandwidth: Fraction
    host_throughput: Fraction
    device_flops: Fraction = Fraction(10**15)
    grad_bytes: Fraction = Fraction(2)
    upload_bytes: Fraction = Fraction(1)
    tokens_per_iteration: int = 0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.type == "int":
                if isinstance(val, bool) or not isinstance(val, int):
                    raise ValidationError(f.name, "must be an integer")
                if f.name == "tokens_per_iteration":
                    if val < 0:
                        raise ValidationError(f.name, "must be >= 0")
                    continue
            else:
                val = to_rational(val, f.name)
                object.__setattr__(self, f.name, val)
            if val <= 0:
                raise ValidationError(f.name, "must be positive")

    @property
    def params(self) -> int:
        return 12 * self.layers * self.hidden ** 2

    @property
    def tokens_per_microbatch(self) -> int:
        return self.seq_len * self.micro_batch

    def with_layers(self, layers: int) -> "ModelSpec":
        return replace(self, layers=layers)


@dataclass(frozen=True)
class ModelScalars:
    m_a: Fraction
    t_fwd: Fraction
    t_step: Fraction
    t_upload: Fraction
    model_state: Fraction
    note: str = PROVENANCE


def model_to_config(spec: ModelSpec) -> ModelScalars:
    params = spec.params
    m_a = spec.layers * spec.tokens_per_microbatch * spec.hidden * spec.bytes_per_activation
    t_fwd = Fraction(2 * params * spec.tokens_per_microbatch) / spec.device_flops
    t_step = params * spec.grad_bytes / spec.host_bandwidth + Fraction(params) / spec.host_throughput
    t_upload = params * spec.upload_bytes / spec.host_bandwidth
    return ModelScalars(m_a, t_fwd, t_step, t_upload, params * spec.optimizer_bytes_per_param)


def state_to_activation_ratio(spec: ModelSpec) -> Fraction:
    """Model-state bytes over the activation bytes of a whole iteration."""
    if not spec.tokens_per_iteration:
        raise ValidationError("tokens_per_iteration", "needed for the iteration ratio")
    per_iter = spec.layers * spec.tokens_per_iteration * spec.hidden * spec.bytes_per_activation
    return spec.params * spec.optimizer_bytes_per_param / per_iter


def apply_model(cfg: PipelineConfig, spec: ModelSpec) -> PipelineConfig:
    sc = model_to_config(spec)
    off = cfg.offload
    if off is not None:
        off = OffloadPolicy(sc.t_step, sc.t_upload, off.chunks_offloaded)
    return cfg.replace(m_a=sc.m_a, t_fwd=sc.t_fwd, model_state=sc.model_state, offload=off)


def max_layers(spec: ModelSpec, p: int, act_fraction: Fraction, state_on_device: Fraction,
               budget: Fraction, limit: int = 100_000) -> int:
    """Largest layer count whose per-device peak fits ``budget`` bytes.

    Per device: act_fraction * m_a + state_on_device * model_state / p. Both
    terms are linear in layers, so the scan needs no simulation.
    """
    best = 0
    for layers in range(1, limit + 1):
        sc = model_to_config(spec.with_layers(layers))
        need = act_fraction * sc.m_a + state_on_device * sc.model_state / p
        if need > budget:
            break
        best = layers
    return best


def load_model_spec(path=None) -> ModelSpec:
    """Read a ModelSpec JSON file; no path gives the bundled example."""
    if path is None:
        text = resources.files("tpipe_sim").joinpath("data/example_model.json").read_text()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model spec is not valid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ParseError("model spec must be a JSON object")
    known = {f.name for f in fields(ModelSpec)}
    unknown = set(data) - known - {"name"}
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    missing = [f.name for f in fields(ModelSpec) if f.name not in data and f.default is MISSING]
    if missing:
        raise ValidationError(missing[0], "missing")
    data.pop("name", None)
    return ModelSpec(**data)
