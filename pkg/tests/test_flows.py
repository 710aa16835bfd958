import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowaug.errors import FlowValidationError
from flowaug.flows import (
    FEATURES,
    MAX_PACKETS,
    ClassLabel,
    FlowRecord,
    Origin,
    PacketFeatures,
    from_matrix,
    make_flow,
    stack_flows,
    to_matrix,
)

WEB = ClassLabel(0, "web")

packets = st.builds(
    PacketFeatures,
    src_port=st.integers(0, 65535),
    dst_port=st.integers(0, 65535),
    inter_arrival_time=st.floats(0, 1e4, allow_nan=False),
    payload_length=st.integers(0, 65535),
    direction=st.integers(0, 1),
    tcp_window_size=st.integers(0, 2**20),
)


@st.composite
def flows(draw):
    first = draw(packets)
    first = PacketFeatures(*first.as_tuple()[:4], 1, first.tcp_window_size)
    rest = draw(st.lists(packets, max_size=MAX_PACKETS - 1))
    return FlowRecord((first, *rest), WEB)


def test_feature_order():
    assert FEATURES == ("src_port", "dst_port", "inter_arrival_time", "payload_length", "direction", "tcp_window_size")


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(src_port=-1),
        dict(dst_port=65536),
        dict(direction=2),
        dict(inter_arrival_time=-0.1),
        dict(inter_arrival_time=float("nan")),
        dict(payload_length=-5),
        dict(tcp_window_size=-1),
    ],
)
def test_packet_invariants(kwargs):
    base = dict(src_port=1, dst_port=2, inter_arrival_time=0.0, payload_length=0, direction=1, tcp_window_size=0)
    base.update(kwargs)
    with pytest.raises(FlowValidationError):
        PacketFeatures(**base)


def test_flow_length_bounds():
    p = PacketFeatures(1, 2, 0.0, 10, 1, 0)
    with pytest.raises(FlowValidationError):
        FlowRecord((), WEB)
    with pytest.raises(FlowValidationError):
        FlowRecord((p,) * 21, WEB)
    assert len(FlowRecord((p,) * 20, WEB)) == 20


def test_first_packet_direction():
    with pytest.raises(FlowValidationError):
        make_flow([(1, 2, 0.0, 10, 0, 0)], WEB)


def test_to_matrix_pads_with_zeros():
    flow = make_flow([(80, 443, 0.0, 120, 1, 1000), (443, 80, 0.01, 1400, 0, 2000)], WEB)
    m = to_matrix(flow)
    assert m.shape == (6, 20)
    assert m[:, 0].tolist() == [80, 443, 0.0, 120, 1, 1000]
    assert m[:, 1].tolist() == [443, 80, 0.01, 1400, 0, 2000]
    assert not m[:, 2:].any()


def test_full_flow_has_no_padding():
    flow = make_flow([(5, 6, 0.5, 7, 1, 8)] * 20, WEB)
    assert (to_matrix(flow)[0] == 5).all()


@given(flows())
@settings(max_examples=60, deadline=None)
def test_matrix_round_trip(flow):
    back = from_matrix(to_matrix(flow), len(flow), flow.label)
    assert back.same_features(flow)


def test_equality_is_identity():
    a = make_flow([(1, 2, 0.0, 3, 1, 4)], WEB)
    b = make_flow([(1, 2, 0.0, 3, 1, 4)], WEB)
    assert a != b and a.same_features(b)


def test_origin_coerced():
    flow = FlowRecord((PacketFeatures(1, 2, 0.0, 3, 1, 4),), WEB, "generated")
    assert flow.origin is Origin.GENERATED


def test_stack_flows():
    a = make_flow([(1, 2, 0.0, 3, 1, 4)], WEB)
    b = make_flow([(1, 2, 0.0, 3, 1, 4), (2, 1, 0.1, 9, 0, 4)], WEB)
    data, lengths = stack_flows([a, b])
    assert data.shape == (2, 20, 6) and lengths.tolist() == [1, 2]
    assert np.array_equal(data[1].T, to_matrix(b))
