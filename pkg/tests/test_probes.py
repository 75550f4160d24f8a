import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualprobe.probes import (
    METADATA_FIELDS,
    CodecError,
    InfoLabel,
    ProbeFrame,
    ProbeKind,
    decode_frame,
    encode_frame,
    label_size,
    metadata_bitmap,
)

AP = ProbeKind.AUXILIARY
DP = ProbeKind.DYNAMIC


def test_bitmap_bits():
    assert metadata_bitmap({"queue_length"}) == 0x0001
    assert metadata_bitmap({"queue_length", "congestion_status"}) == 0x0005
    assert metadata_bitmap(set()) == 0


def test_bitmap_unknown_name():
    with pytest.raises(CodecError):
        metadata_bitmap({"temperature"})


def test_hand_derived_ap_bytes():
    raw = encode_frame(ProbeFrame(AP, (2, 3)), l_th=4)
    assert raw == bytes.fromhex("01 02 03 FF FF 00")
    assert decode_frame(raw, 4) == ProbeFrame(AP, (2, 3))


def test_hand_derived_dp_bytes():
    raw = encode_frame(ProbeFrame(DP, (5,), 0x0001), l_th=4)
    assert raw == bytes.fromhex("02 01 00 01 05 00")


def test_empty_ap_is_type_pad_count():
    assert encode_frame(ProbeFrame(AP, ()), 5) == b"\x01" + b"\xff" * 5 + b"\x00"


def test_label_layouts():
    # switch id (2) + latency (4) + port status (1)
    assert label_size(AP) == 7
    # switch id + queue_length u32 + port_timestamp u64
    assert label_size(DP, 0b1001) == 2 + 4 + 8


def test_labels_are_big_endian():
    frame = ProbeFrame(DP, (), 0x0001, (InfoLabel(0x0102, (0x0A0B0C0D,)),))
    assert encode_frame(frame, 4) == bytes.fromhex("02 00 00 01 01 01 02 0A 0B 0C 0D")


def test_ap_overflow():
    with pytest.raises(CodecError, match="overflow"):
        encode_frame(ProbeFrame(AP, (1, 2, 3)), 2)


def test_ap_rejects_bitmap():
    with pytest.raises(CodecError):
        ProbeFrame(AP, (), 1)


@pytest.mark.parametrize("raw,match", [
    (b"", "truncated"),
    (b"\x07\x00", "unknown probe type"),
    (b"\x01\x02", "truncated"),
    (bytes.fromhex("01 02 FF 03 00"), "inconsistent"),
    (bytes.fromhex("02 02 00 00 05"), "truncated"),
    (bytes.fromhex("02 01 00 00 FF 00"), "inconsistent"),
    (bytes.fromhex("02 00 00 00 00 AA"), "trailing"),
    (bytes.fromhex("02 00 00 01 01 00 01"), "truncated"),
])
def test_decode_errors(raw, match):
    with pytest.raises(CodecError, match=match):
        decode_frame(raw, 3)


FMT = {"B": 0xFF, "H": 0xFFFF, "I": 0xFFFFFFFF, "Q": 0xFFFFFFFFFFFFFFFF}


@st.composite
def frames(draw):
    kind = draw(st.sampled_from([AP, DP]))
    l_th = draw(st.integers(1, 24))
    if kind is AP:
        bitmap = 0
        sr = draw(st.lists(st.integers(0, 254), max_size=l_th))
        codes = ["I", "B"]
    else:
        bitmap = draw(st.integers(0, 0x7F))
        sr = draw(st.lists(st.integers(0, 254), max_size=40))
        codes = [METADATA_FIELDS[b][1] for b in sorted(METADATA_FIELDS) if bitmap >> b & 1]
    labels = draw(st.lists(st.builds(
        lambda sid, vals: InfoLabel(sid, tuple(vals)),
        st.integers(0, 0xFFFF),
        st.tuples(*[st.integers(0, FMT[c]) for c in codes]),
    ), max_size=12))
    return ProbeFrame(kind, tuple(sr), bitmap, tuple(labels)), l_th


@given(frames())
def test_round_trip(case):
    frame, l_th = case
    raw = encode_frame(frame, l_th)
    assert decode_frame(raw, l_th) == frame
    assert encode_frame(decode_frame(raw, l_th), l_th) == raw


@given(frames())
def test_ap_length_depends_only_on_label_count(case):
    frame, l_th = case
    if frame.kind is AP:
        expected = 1 + l_th + 1 + 7 * len(frame.info_stack)
        assert len(encode_frame(frame, l_th)) == expected


def test_json_view():
    f = ProbeFrame(AP, (3,), 0, (InfoLabel(2, (150, 1)),))
    assert f.to_json()["info_stack"] == [{"switch_id": 2, "link_latency_us": 150, "port_status": 1}]


def test_label_field_overflow():
    with pytest.raises(CodecError):
        encode_frame(ProbeFrame(AP, (), 0, (InfoLabel(1, (2**32, 0)),)), 2)
    assert struct.calcsize(">HIB") == 7
