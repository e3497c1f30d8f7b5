"""MQTT 3.1.1 wire codec for the packet subset used by the test pipeline.

Canonical, bit-exact encoding of CONNECT, CONNACK, PUBLISH (QoS 0/1),
PUBACK, SUBSCRIBE, SUBACK, UNSUBSCRIBE, UNSUBACK, PINGREQ, PINGRESP and
DISCONNECT. QoS 2 and MQTT 5.0 are out of scope. The codec is strict in
both directions: it refuses to encode invariant-violating packets and to
decode frames that break the protocol rules.

``encode_malformed`` deliberately produces broken frames for tampering
attacks; every malformation is rejected by ``decode`` or flagged by the
mock broker, never silently accepted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import StridetestError
from .topics import is_valid_filter, is_valid_topic

PROTOCOL_NAME = b"MQTT"
PROTOCOL_LEVEL = 4
MAX_REMAINING_LENGTH = 268_435_455
MAX_PACKET_ID = 0xFFFF

# Control packet type codes (high nibble of the first header byte).
CONNECT, CONNACK, PUBLISH, PUBACK = 1, 2, 3, 4
SUBSCRIBE, SUBACK, UNSUBSCRIBE, UNSUBACK = 8, 9, 10, 11
PINGREQ, PINGRESP, DISCONNECT = 12, 13, 14

SUBACK_FAILURE = 0x80


class EncodeError(StridetestError):
    """Packet violates an invariant; the message names the field."""


class DecodeError(StridetestError):
    """Malformed frame; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Connect:
    client_id: str
    clean_session: bool = True
    keep_alive_s: int = 60
    username: str | None = None
    password: str | None = None


@dataclass(frozen=True)
class ConnAck:
    session_present: bool
    return_code: int  # 0..5 per the 3.1.1 table


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes
    qos: int = 0
    dup: bool = False
    retain: bool = False
    packet_id: int | None = None  # required iff qos == 1


@dataclass(frozen=True)
class PubAck:
    packet_id: int


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    topics: tuple[tuple[str, int], ...]  # (filter, requested qos)


@dataclass(frozen=True)
class SubAck:
    packet_id: int
    return_codes: tuple[int, ...]  # granted qos or 0x80 failure


@dataclass(frozen=True)
class Unsubscribe:
    packet_id: int
    topics: tuple[str, ...]


@dataclass(frozen=True)
class UnsubAck:
    packet_id: int


@dataclass(frozen=True)
class PingReq:
    pass


@dataclass(frozen=True)
class PingResp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


Packet = (
    Connect
    | ConnAck
    | Publish
    | PubAck
    | Subscribe
    | SubAck
    | Unsubscribe
    | UnsubAck
    | PingReq
    | PingResp
    | Disconnect
)


def encode_remaining_length(n: int) -> bytes:
    """MQTT variable-length integer, 1-4 bytes."""
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise EncodeError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        digit = n % 128
        n //= 128
        if n > 0:
            digit |= 0x80
        out.append(digit)
        if n == 0:
            return bytes(out)


def decode_remaining_length(buf: bytes, offset: int) -> tuple[int, int] | None:
    """Returns (value, bytes consumed) or None if more bytes are needed.

    Raises DecodeError when the encoding exceeds four bytes.
    """
    value = 0
    multiplier = 1
    for i in range(4):
        if offset + i >= len(buf):
            return None
        byte = buf[offset + i]
        value += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            return value, i + 1
        multiplier *= 128
    raise DecodeError("remaining length exceeds 4 bytes", offset + 3)


def _utf8(value: str, what: str) -> bytes:
    data = value.encode("utf-8")
    if len(data) > 0xFFFF:
        raise EncodeError(f"{what} exceeds 65535 bytes")
    return struct.pack(">H", len(data)) + data


def _check_packet_id(pid: int | None, what: str) -> int:
    if pid is None:
        raise EncodeError(f"{what}: packet_id is required")
    if not 1 <= pid <= MAX_PACKET_ID:
        raise EncodeError(f"{what}: packet_id {pid} out of range 1..65535")
    return pid


def _encode_body(p: Packet) -> tuple[int, int, bytes]:
    """Returns (packet type, header flags, variable header + payload)."""
    if isinstance(p, Connect):
        flags = 0
        if p.clean_session:
            flags |= 0x02
        if p.username is not None:
            flags |= 0x80
        if p.password is not None:
            if p.username is None:
                raise EncodeError("connect: password requires username")
            flags |= 0x40
        if not 0 <= p.keep_alive_s <= 0xFFFF:
            raise EncodeError(f"connect: keep_alive_s {p.keep_alive_s} out of range")
        body = (
            _utf8("MQTT", "protocol name")
            + bytes([PROTOCOL_LEVEL, flags])
            + struct.pack(">H", p.keep_alive_s)
            + _utf8(p.client_id, "client_id")
        )
        if p.username is not None:
            body += _utf8(p.username, "username")
        if p.password is not None:
            body += _utf8(p.password, "password")
        return CONNECT, 0, body
    if isinstance(p, ConnAck):
        if not 0 <= p.return_code <= 5:
            raise EncodeError(f"connack: return_code {p.return_code} out of range")
        return CONNACK, 0, bytes([1 if p.session_present else 0, p.return_code])
    if isinstance(p, Publish):
        if p.qos not in (0, 1):
            raise EncodeError(f"publish: qos {p.qos} unsupported")
        if not is_valid_topic(p.topic):
            raise EncodeError(f"publish: invalid topic {p.topic!r}")
        flags = (0x08 if p.dup else 0) | (p.qos << 1) | (0x01 if p.retain else 0)
        body = _utf8(p.topic, "topic")
        if p.qos == 1:
            body += struct.pack(">H", _check_packet_id(p.packet_id, "publish"))
        elif p.packet_id is not None:
            raise EncodeError("publish: packet_id forbidden at qos 0")
        return PUBLISH, flags, body + p.payload
    if isinstance(p, PubAck):
        return PUBACK, 0, struct.pack(">H", _check_packet_id(p.packet_id, "puback"))
    if isinstance(p, Subscribe):
        if not p.topics:
            raise EncodeError("subscribe: at least one topic filter required")
        body = struct.pack(">H", _check_packet_id(p.packet_id, "subscribe"))
        for topic_filter, qos in p.topics:
            if not is_valid_filter(topic_filter):
                raise EncodeError(f"subscribe: invalid filter {topic_filter!r}")
            if qos not in (0, 1):
                raise EncodeError(f"subscribe: qos {qos} unsupported")
            body += _utf8(topic_filter, "topic filter") + bytes([qos])
        return SUBSCRIBE, 0x02, body
    if isinstance(p, SubAck):
        body = struct.pack(">H", _check_packet_id(p.packet_id, "suback"))
        for code in p.return_codes:
            if code not in (0, 1, SUBACK_FAILURE):
                raise EncodeError(f"suback: return code {code} invalid")
        return SUBACK, 0, body + bytes(p.return_codes)
    if isinstance(p, Unsubscribe):
        if not p.topics:
            raise EncodeError("unsubscribe: at least one topic filter required")
        body = struct.pack(">H", _check_packet_id(p.packet_id, "unsubscribe"))
        for topic_filter in p.topics:
            if not is_valid_filter(topic_filter):
                raise EncodeError(f"unsubscribe: invalid filter {topic_filter!r}")
            body += _utf8(topic_filter, "topic filter")
        return UNSUBSCRIBE, 0x02, body
    if isinstance(p, UnsubAck):
        return UNSUBACK, 0, struct.pack(">H", _check_packet_id(p.packet_id, "unsuback"))
    if isinstance(p, PingReq):
        return PINGREQ, 0, b""
    if isinstance(p, PingResp):
        return PINGRESP, 0, b""
    if isinstance(p, Disconnect):
        return DISCONNECT, 0, b""
    raise EncodeError(f"unsupported packet {type(p).__name__}")


def encode(p: Packet) -> bytes:
    """Canonical 3.1.1 frame for a valid packet."""
    ptype, flags, body = _encode_body(p)
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


class _Reader:
    """Bounded cursor over one frame body; all overruns are decode errors."""

    def __init__(self, buf: bytes, start: int, end: int):
        self.buf = buf
        self.pos = start
        self.end = end

    def remaining(self) -> int:
        return self.end - self.pos

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > self.end:
            raise DecodeError(f"truncated {what}", self.pos)
        data = self.buf[self.pos : self.pos + n]
        self.pos += n
        return data

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack(">H", self.take(2, what))[0]

    def utf8(self, what: str) -> str:
        start = self.pos
        length = self.u16(f"{what} length")
        raw = self.take(length, what)
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError(f"{what} is not valid UTF-8", start) from None
        if "\x00" in text:
            raise DecodeError(f"{what} contains U+0000", start)
        return text

    def packet_id(self, what: str) -> int:
        start = self.pos
        pid = self.u16(f"{what} packet id")
        if pid == 0:
            raise DecodeError(f"{what}: packet id 0 is forbidden", start)
        return pid


def _decode_connect(r: _Reader) -> Connect:
    name_start = r.pos
    name = r.take(2, "protocol name length")
    name_len = struct.unpack(">H", name)[0]
    proto = r.take(name_len, "protocol name")
    if proto != PROTOCOL_NAME:
        raise DecodeError(f"unexpected protocol name {proto!r}", name_start)
    level = r.u8("protocol level")
    if level != PROTOCOL_LEVEL:
        raise DecodeError(f"unsupported protocol level {level}", r.pos - 1)
    flags = r.u8("connect flags")
    if flags & 0x01:
        raise DecodeError("connect reserved flag set", r.pos - 1)
    if flags & 0x04:
        raise DecodeError("will messages unsupported", r.pos - 1)
    has_username = bool(flags & 0x80)
    has_password = bool(flags & 0x40)
    if has_password and not has_username:
        raise DecodeError("password flag without username flag", r.pos - 1)
    keep_alive = r.u16("keep alive")
    client_id = r.utf8("client id")
    username = r.utf8("username") if has_username else None
    password = r.utf8("password") if has_password else None
    return Connect(
        client_id=client_id,
        clean_session=bool(flags & 0x02),
        keep_alive_s=keep_alive,
        username=username,
        password=password,
    )


def _decode_publish(r: _Reader, flags: int) -> Publish:
    qos = (flags >> 1) & 0x03
    if qos == 3:
        raise DecodeError("publish qos 3 is malformed", r.pos)
    if qos == 2:
        raise DecodeError("publish qos 2 unsupported", r.pos)
    topic_start = r.pos
    topic = r.utf8("topic")
    if not is_valid_topic(topic):
        raise DecodeError(f"invalid publish topic {topic!r}", topic_start)
    packet_id = r.packet_id("publish") if qos == 1 else None
    payload = r.take(r.remaining(), "payload")
    return Publish(
        topic=topic,
        payload=payload,
        qos=qos,
        dup=bool(flags & 0x08),
        retain=bool(flags & 0x01),
        packet_id=packet_id,
    )


def _decode_subscribe(r: _Reader) -> Subscribe:
    pid = r.packet_id("subscribe")
    topics: list[tuple[str, int]] = []
    while r.remaining():
        filter_start = r.pos
        topic_filter = r.utf8("topic filter")
        if not is_valid_filter(topic_filter):
            raise DecodeError(f"invalid topic filter {topic_filter!r}", filter_start)
        qos = r.u8("requested qos")
        if qos not in (0, 1):
            raise DecodeError(f"requested qos {qos} unsupported", r.pos - 1)
        topics.append((topic_filter, qos))
    if not topics:
        raise DecodeError("subscribe without topic filters", r.pos)
    return Subscribe(packet_id=pid, topics=tuple(topics))


def _decode_suback(r: _Reader) -> SubAck:
    pid = r.packet_id("suback")
    codes = r.take(r.remaining(), "return codes")
    for i, code in enumerate(codes):
        if code not in (0, 1, SUBACK_FAILURE):
            raise DecodeError(f"suback return code {code:#x} invalid", r.pos - len(codes) + i)
    if not codes:
        raise DecodeError("suback without return codes", r.pos)
    return SubAck(packet_id=pid, return_codes=tuple(codes))


def _decode_unsubscribe(r: _Reader) -> Unsubscribe:
    pid = r.packet_id("unsubscribe")
    topics: list[str] = []
    while r.remaining():
        filter_start = r.pos
        topic_filter = r.utf8("topic filter")
        if not is_valid_filter(topic_filter):
            raise DecodeError(f"invalid topic filter {topic_filter!r}", filter_start)
        topics.append(topic_filter)
    if not topics:
        raise DecodeError("unsubscribe without topic filters", r.pos)
    return Unsubscribe(packet_id=pid, topics=tuple(topics))


_EXACT_FLAGS = {
    CONNECT: 0,
    CONNACK: 0,
    PUBACK: 0,
    SUBSCRIBE: 0x02,
    SUBACK: 0,
    UNSUBSCRIBE: 0x02,
    UNSUBACK: 0,
    PINGREQ: 0,
    PINGRESP: 0,
    DISCONNECT: 0,
}


def decode(buf: bytes) -> tuple[Packet, int] | None:
    """Decode one complete frame from the start of ``buf``.

    Returns (packet, bytes consumed), or None when ``buf`` is a strict
    prefix of a valid frame (never consumes a partial frame). Raises
    DecodeError for malformed input.
    """
    if not buf:
        return None
    first = buf[0]
    ptype = first >> 4
    flags = first & 0x0F
    if ptype in (0, 15):
        raise DecodeError(f"reserved packet type {ptype}", 0)
    if ptype in (5, 6, 7):
        raise DecodeError(f"packet type {ptype} (qos 2 handshake) unsupported", 0)
    varint = decode_remaining_length(buf, 1)
    if varint is None:
        return None
    remaining, varint_len = varint
    body_start = 1 + varint_len
    total = body_start + remaining
    if len(buf) < total:
        return None
    if ptype in _EXACT_FLAGS and flags != _EXACT_FLAGS[ptype]:
        raise DecodeError(f"invalid header flags {flags:#x} for type {ptype}", 0)

    r = _Reader(buf, body_start, total)
    packet: Packet
    if ptype == CONNECT:
        packet = _decode_connect(r)
    elif ptype == CONNACK:
        ack_flags = r.u8("connack flags")
        if ack_flags > 1:
            raise DecodeError(f"connack flags {ack_flags:#x} invalid", r.pos - 1)
        rc = r.u8("connack return code")
        if rc > 5:
            raise DecodeError(f"connack return code {rc} invalid", r.pos - 1)
        packet = ConnAck(session_present=bool(ack_flags), return_code=rc)
    elif ptype == PUBLISH:
        packet = _decode_publish(r, flags)
    elif ptype == PUBACK:
        packet = PubAck(packet_id=r.packet_id("puback"))
    elif ptype == SUBSCRIBE:
        packet = _decode_subscribe(r)
    elif ptype == SUBACK:
        packet = _decode_suback(r)
    elif ptype == UNSUBSCRIBE:
        packet = _decode_unsubscribe(r)
    elif ptype == UNSUBACK:
        packet = UnsubAck(packet_id=r.packet_id("unsuback"))
    elif ptype == PINGREQ:
        packet = PingReq()
    elif ptype == PINGRESP:
        packet = PingResp()
    else:
        packet = Disconnect()
    if r.pos != total:
        raise DecodeError(f"{total - r.pos} trailing bytes in frame", r.pos)
    return packet, total


# --- deliberately malformed frames -------------------------------------


@dataclass(frozen=True)
class TruncatedFrame:
    """A strict prefix of a valid frame; the receiver must keep waiting."""

    base: Packet
    keep: int


@dataclass(frozen=True)
class BadRemainingLength:
    """Valid body with the declared length shifted by ``delta``."""

    base: Packet
    delta: int


@dataclass(frozen=True)
class ReservedType:
    """Two-byte frame whose first byte uses a reserved or invalid type."""

    first_byte: int = 0x00


@dataclass(frozen=True)
class OversizedClientId:
    """CONNECT whose client id is longer than its 16-bit length field
    can declare: the declared length is clamped to 65535, leaving the
    frame internally inconsistent."""

    length: int = 70000


MalformationSpec = TruncatedFrame | BadRemainingLength | ReservedType | OversizedClientId


def encode_malformed(spec: MalformationSpec) -> bytes:
    if isinstance(spec, TruncatedFrame):
        frame = encode(spec.base)
        if not 0 <= spec.keep < len(frame):
            raise EncodeError(f"keep {spec.keep} not a strict prefix of {len(frame)} bytes")
        return frame[: spec.keep]
    if isinstance(spec, BadRemainingLength):
        frame = encode(spec.base)
        declared = decode_remaining_length(frame, 1)
        assert declared is not None
        value, varint_len = declared
        shifted = value + spec.delta
        if not 0 <= shifted <= MAX_REMAINING_LENGTH or shifted == value:
            raise EncodeError(f"delta {spec.delta} does not produce a distinct valid length")
        return frame[:1] + encode_remaining_length(shifted) + frame[1 + varint_len :]
    if isinstance(spec, ReservedType):
        if not 0 <= spec.first_byte <= 0xFF:
            raise EncodeError(f"first_byte {spec.first_byte} out of range")
        return bytes([spec.first_byte, 0x00])
    if isinstance(spec, OversizedClientId):
        if spec.length <= 0xFFFF:
            raise EncodeError(f"length {spec.length} fits the 16-bit field; not oversized")
        variable_header = _utf8("MQTT", "protocol name") + bytes([PROTOCOL_LEVEL, 0x02, 0, 60])
        payload = struct.pack(">H", 0xFFFF) + b"a" * spec.length
        body = variable_header + payload
        if len(body) > MAX_REMAINING_LENGTH:
            raise EncodeError(f"length {spec.length} exceeds the maximum frame size")
        return bytes([CONNECT << 4]) + encode_remaining_length(len(body)) + body
    raise EncodeError(f"unknown malformation spec {type(spec).__name__}")
