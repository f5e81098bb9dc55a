from dataclasses import replace
from fractions import Fraction

import pytest

from tpipe_sim import ValidationError
from tpipe_sim.modelspec import (
    ModelSpec,
    load_model_spec,
    max_layers,
    model_to_config,
    state_to_activation_ratio,
)


def spec(**kw):
    base = dict(layers=4, hidden=16, seq_len=8, micro_batch=1, bytes_per_activation=2,
                optimizer_bytes_per_param=16, host_bandwidth=100, host_throughput=1000)
    base.update(kw)
    return ModelSpec(**base)


def test_hand_computed_scalars():
    s = spec()
    sc = model_to_config(s)
    params = 12 * 4 * 16 ** 2
    assert sc.m_a == 4 * 8 * 16 * 2
    assert sc.model_state == params * 16
    assert sc.t_step == Fraction(params * 2, 100) + Fraction(params, 1000)
    assert sc.t_upload == Fraction(params, 100)


def test_doubling_sequence_doubles_activations():
    a, b = model_to_config(spec()), model_to_config(spec(seq_len=16))
    assert b.m_a == 2 * a.m_a
    assert b.t_step / (2 * b.t_fwd) < a.t_step / (2 * a.t_fwd)


@pytest.mark.parametrize("field", ["layers", "hidden", "host_bandwidth", "bytes_per_activation"])
def test_nonpositive_fields_rejected(field):
    with pytest.raises(ValidationError):
        spec(**{field: 0})


def test_bundled_spec_state_is_small_next_to_activations():
    s = load_model_spec()
    assert state_to_activation_ratio(s) < Fraction(1, 100)


def test_max_layers_is_linear_scan_boundary():
    s = spec()
    per_layer = model_to_config(replace(s, layers=1))
    budget = 10 * (per_layer.m_a + per_layer.model_state / 2)
    assert max_layers(s, 2, Fraction(1), Fraction(1), budget) == 10
    assert max_layers(s, 2, Fraction(1), Fraction(1), budget - 1) == 9
