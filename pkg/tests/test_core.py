import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tpipe_sim.core import (
    OffloadPolicy,
    ParseError,
    PipelineConfig,
    RecomputeMode,
    RecomputePolicy,
    TaskId,
    TaskKind,
    ValidationError,
    config_from_dict,
    config_to_dict,
    derived_units,
    load_config,
    loads_config,
    serialize,
    to_rational,
)


def test_defaults_and_units():
    cfg = config_from_dict({"p": 8, "m": 8, "v": 2})
    assert cfg.bwd_fwd_ratio == 2
    assert cfg.t_unit == Fraction(1, 16)
    cfg = config_from_dict({"p": 8, "m": 8, "v": 2, "t_fwd": 16})
    assert derived_units(cfg) == (1, Fraction(1, 16))


def test_direct_construction_normalizes_to_fractions():
    cfg = PipelineConfig(p=4, m=4, v=2, t_fwd=8)
    assert isinstance(cfg.t_fwd, Fraction)
    assert isinstance(cfg.t_unit, Fraction)


@pytest.mark.parametrize(
    "data, field",
    [
        ({"p": 0, "m": 4}, "p"),
        ({"p": 4}, "m"),
        ({"p": 4, "m": 4, "t_fwd": 1.5}, "t_fwd"),
        ({"p": 4, "m": 4, "t_fwd": "abc"}, "t_fwd"),
        ({"p": 4, "m": 4, "colour": 1}, "colour"),
        ({"p": 4, "m": 4, "v": 1, "recompute": {"mode": "BlockWiseTemporal", "ratio": "1/2"}}, "recompute.mode"),
        ({"p": 4, "m": 4, "recompute": {"mode": "Sometimes"}}, "recompute.mode"),
        ({"p": 4, "m": 4, "recompute": {"mode": "StandardLayerGrouped", "ratio": "3/2"}}, "recompute.ratio"),
        ({"p": 4, "m": 4, "v": 2, "offload": {"chunks_offloaded": [3]}}, "offload.chunks_offloaded"),
        ({"p": 4, "m": 4, "p2p_latency": -1}, "p2p_latency"),
    ],
)
def test_invalid_configs_name_the_field(data, field):
    with pytest.raises(ValidationError) as info:
        config_from_dict(data)
    assert info.value.field == field


def test_bad_json_is_a_parse_error(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_config(str(path))
    with pytest.raises(ParseError):
        load_config(str(tmp_path / "missing.json"))


def test_rational_strings():
    assert to_rational("3/4", "x") == Fraction(3, 4)
    assert to_rational(5, "x") == 5
    with pytest.raises(ValidationError):
        to_rational(True, "x")


def test_chunk_selection_rounds_half_up():
    assert RecomputePolicy(RecomputeMode.BLOCKWISE, Fraction(1, 2)).selected_chunks(2) == (1,)
    assert RecomputePolicy(RecomputeMode.BLOCKWISE, Fraction(1, 4)).selected_chunks(2) == (1,)
    assert RecomputePolicy(RecomputeMode.BLOCKWISE, Fraction(1, 5)).selected_chunks(2) == ()
    assert RecomputePolicy(RecomputeMode.BLOCKWISE, Fraction(3, 8)).selected_chunks(4) == (1, 2)


def test_offload_defaults_to_deepest_chunk():
    assert OffloadPolicy().chunks(4) == (4,)
    assert OffloadPolicy(chunks_offloaded=frozenset({2, 3})).chunks(4) == (3, 2)


def test_task_label():
    assert TaskId(3, 2, 5, TaskKind.BACKWARD).label() == "B2.5@3"


rationals = st.fractions(min_value=Fraction(1, 1000), max_value=1000)


@st.composite
def configs(draw):
    v = draw(st.integers(1, 4))
    d = {
        "p": draw(st.integers(1, 64)),
        "m": draw(st.integers(1, 128)),
        "v": v,
        "bwd_fwd_ratio": str(draw(rationals)),
        "t_fwd": str(draw(rationals)),
        "m_a": str(draw(rationals)),
        "p2p_latency": str(draw(st.fractions(min_value=0, max_value=10))),
    }
    if draw(st.booleans()):
        modes = ["None", "StandardLayerGrouped"] + (["BlockWiseTemporal"] if v >= 2 else [])
        d["recompute"] = {
            "mode": draw(st.sampled_from(modes)),
            "ratio": str(draw(st.fractions(min_value=0, max_value=1))),
        }
    if draw(st.booleans()):
        d["offload"] = {
            "t_step": str(draw(st.fractions(min_value=0, max_value=100))),
            "t_upload": str(draw(st.fractions(min_value=0, max_value=100))),
        }
    return d


@given(configs())
def test_serialize_round_trip(data):
    cfg = config_from_dict(data)
    again = loads_config(serialize(cfg))
    assert again == cfg
    assert config_to_dict(again) == config_to_dict(cfg)


@given(st.integers(1, 200), st.integers(1, 16), st.fractions(min_value=Fraction(1, 10**6), max_value=10**6))
def test_derived_units_are_exact(p, v, t_fwd):
    cfg = PipelineConfig(p=p, m=1, v=v, t_fwd=t_fwd)
    t_unit, block = derived_units(cfg)
    assert isinstance(t_unit, Fraction) and isinstance(block, Fraction)
    assert t_unit * v * p == t_fwd
    assert block * v * p == cfg.m_a
