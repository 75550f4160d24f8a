"""Wire format of auxiliary and dynamic probes.

Only the telemetry payload is modelled; L2-L4 headers are not serialised and
the probe kind travels in the leading type byte.

Auxiliary probe::

    [type=0x01][sr: u8 * l_th, padded with 0xFF][info_count: u8][labels]
    label = [switch_id: u16][link_latency_us: u32][port_status: u8]

Dynamic probe::

    [type=0x02][length: u8][bitmap: u16][sr: u8 * length][info_count: u8][labels]
    label = [switch_id: u16][one field per set bitmap bit, ascending bit order]

All multi-byte integers are big-endian.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

AUX_TYPE = 0x01
DYN_TYPE = 0x02
PAD = 0xFF
MAX_SR = 255


class ProbeKind(enum.Enum):
    AUXILIARY = AUX_TYPE
    DYNAMIC = DYN_TYPE


class CodecError(ValueError):
    pass


# bit -> (name, struct code)
METADATA_FIELDS: dict[int, tuple[str, str]] = {
    0: ("queue_length", "I"),
    1: ("switch_workload", "I"),
    2: ("congestion_status", "B"),
    3: ("port_timestamp", "Q"),
    4: ("port_packet_count", "Q"),
    5: ("queue_loss_per_mille", "I"),
    6: ("port_loss_per_mille", "I"),
}
FIELD_BITS = {name: bit for bit, (name, _) in METADATA_FIELDS.items()}
KNOWN_BITS = sum(1 << b for b in METADATA_FIELDS)

AUX_FIELDS = (("link_latency_us", "I"), ("port_status", "B"))
SWITCH_ID = "H"


def metadata_bitmap(field_names) -> int:
    bitmap = 0
    for name in field_names:
        if name not in FIELD_BITS:
            raise CodecError(f"unknown metadata field {name!r}")
        bitmap |= 1 << FIELD_BITS[name]
    return bitmap


def bitmap_fields(bitmap: int) -> list[tuple[str, str]]:
    if bitmap & ~KNOWN_BITS:
        raise CodecError(f"bitmap 0x{bitmap:04x} sets unassigned bits")
    return [METADATA_FIELDS[b] for b in sorted(METADATA_FIELDS) if bitmap >> b & 1]


def label_format(kind: ProbeKind, bitmap: int = 0) -> struct.Struct:
    fields = AUX_FIELDS if kind is ProbeKind.AUXILIARY else bitmap_fields(bitmap)
    return struct.Struct(">" + SWITCH_ID + "".join(code for _, code in fields))


def label_size(kind: ProbeKind, bitmap: int = 0) -> int:
    return label_format(kind, bitmap).size


@dataclass(frozen=True)
class InfoLabel:
    switch_id: int
    fields: tuple[int, ...]

    def as_dict(self, kind: ProbeKind, bitmap: int = 0) -> dict[str, int]:
        names = [n for n, _ in (AUX_FIELDS if kind is ProbeKind.AUXILIARY else bitmap_fields(bitmap))]
        return dict(zip(names, self.fields))


@dataclass(frozen=True)
class ProbeFrame:
    kind: ProbeKind
    sr_stack: tuple[int, ...] = ()
    bitmap: int = 0
    info_stack: tuple[InfoLabel, ...] = field(default=())

    def __post_init__(self):
        if self.kind is ProbeKind.AUXILIARY and self.bitmap:
            raise CodecError("auxiliary probes carry no bitmap")
        for port in self.sr_stack:
            if not 0 <= port < PAD:
                raise CodecError(f"port label {port} out of range 0..254")

    def field_names(self) -> list[str]:
        if self.kind is ProbeKind.AUXILIARY:
            return [n for n, _ in AUX_FIELDS]
        return [n for n, _ in bitmap_fields(self.bitmap)]

    def to_json(self) -> dict:
        names = self.field_names()
        return {
            "kind": self.kind.name.lower(),
            "sr_stack": list(self.sr_stack),
            "bitmap": self.bitmap,
            "info_stack": [
                {"switch_id": lab.switch_id, **dict(zip(names, lab.fields))} for lab in self.info_stack
            ],
        }


def encode_frame(frame: ProbeFrame, l_th: int) -> bytes:
    fmt = label_format(frame.kind, frame.bitmap)
    if frame.kind is ProbeKind.AUXILIARY:
        if len(frame.sr_stack) > l_th:
            raise CodecError(f"SR stack overflow: {len(frame.sr_stack)} labels > capacity {l_th}")
        head = bytes([AUX_TYPE, *frame.sr_stack]) + bytes([PAD]) * (l_th - len(frame.sr_stack))
    else:
        if len(frame.sr_stack) > MAX_SR:
            raise CodecError(f"SR stack overflow: {len(frame.sr_stack)} labels > {MAX_SR}")
        head = struct.pack(">BBH", DYN_TYPE, len(frame.sr_stack), frame.bitmap) + bytes(frame.sr_stack)
    if len(frame.info_stack) > 255:
        raise CodecError("INFO stack holds at most 255 labels")
    out = bytearray(head)
    out.append(len(frame.info_stack))
    for lab in frame.info_stack:
        try:
            out += fmt.pack(lab.switch_id, *lab.fields)
        except struct.error as exc:
            raise CodecError(f"label for switch {lab.switch_id}: {exc}") from None
    return bytes(out)


def decode_frame(data: bytes, l_th: int) -> ProbeFrame:
    if not data:
        raise CodecError("truncated buffer: empty")
    ptype = data[0]
    if ptype == AUX_TYPE:
        kind, bitmap = ProbeKind.AUXILIARY, 0
        if len(data) < 1 + l_th + 1:
            raise CodecError("truncated buffer: SR stack")
        raw = data[1:1 + l_th]
        depth = raw.find(PAD)
        depth = l_th if depth < 0 else depth
        if any(b != PAD for b in raw[depth:]):
            raise CodecError("inconsistent length: port label after padding")
        sr = tuple(raw[:depth])
        pos = 1 + l_th
    elif ptype == DYN_TYPE:
        kind = ProbeKind.DYNAMIC
        if len(data) < 4:
            raise CodecError("truncated buffer: dynamic header")
        length, bitmap = struct.unpack_from(">BH", data, 1)
        if len(data) < 4 + length + 1:
            raise CodecError("truncated buffer: SR stack")
        sr = tuple(data[4:4 + length])
        if PAD in sr:
            raise CodecError("inconsistent length: padding inside dynamic SR stack")
        pos = 4 + length
    else:
        raise CodecError(f"unknown probe type 0x{ptype:02x}")

    fmt = label_format(kind, bitmap)
    count = data[pos]
    pos += 1
    if len(data) < pos + count * fmt.size:
        raise CodecError("truncated buffer: INFO stack")
    if len(data) > pos + count * fmt.size:
        raise CodecError("inconsistent length: trailing bytes after INFO stack")
    labels = []
    for _ in range(count):
        sid, *vals = fmt.unpack_from(data, pos)
        labels.append(InfoLabel(sid, tuple(vals)))
        pos += fmt.size
    return ProbeFrame(kind, sr, bitmap, tuple(labels))
