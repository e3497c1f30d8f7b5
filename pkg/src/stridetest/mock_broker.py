"""Embedded mock MQTT broker: a pure 3.1.1 state machine.

``handle`` is a pure function of (state, connection, packet): it never
mutates its inputs and returns the replies, forwards to other
connections, the set of connections to close, and the successor state.
Folding it over any packet sequence is therefore reproducible, which is
what makes generated suites deterministic and independently checkable.

Time is logical: the broker clock advances one millisecond per handled
packet, so rate-limiting decisions depend only on the packet sequence,
not on the wall clock. The in-process harness and the TCP server share
this state machine, byte-identical behavior included.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from . import codec
from .topics import filter_matches, is_valid_filter

CLOCK_STEP_MS = 1
RATE_WINDOW_MS = 1000

# CONNACK return codes used by the broker.
RC_ACCEPTED = 0
RC_IDENTIFIER_REJECTED = 2
RC_SERVER_UNAVAILABLE = 3
RC_BAD_CREDENTIALS = 4
RC_NOT_AUTHORIZED = 5

ConnKey = int


@dataclass(frozen=True)
class MockBrokerConfig:
    max_connections: int = 100
    max_publish_per_second: int = 0  # 0 = unlimited
    max_payload_bytes: int = 65536
    strict_mode: bool = True
    username: str | None = None
    password: str | None = None

    def to_dict(self) -> dict:
        return {
            "max_connections": self.max_connections,
            "max_publish_per_second": self.max_publish_per_second,
            "max_payload_bytes": self.max_payload_bytes,
            "strict_mode": self.strict_mode,
            "auth": self.username is not None,
        }


@dataclass(frozen=True)
class _ConnState:
    client_id: str | None = None  # None until CONNECT is accepted
    window_start_ms: int = 0
    window_count: int = 0


@dataclass(frozen=True)
class MockBrokerState:
    config: MockBrokerConfig = field(default_factory=MockBrokerConfig)
    conns: Mapping[ConnKey, _ConnState] = field(default_factory=dict)
    owner_of: Mapping[str, ConnKey] = field(default_factory=dict)  # client id -> conn
    subscriptions: Mapping[str, frozenset[str]] = field(default_factory=dict)
    next_pid: Mapping[str, int] = field(default_factory=dict)  # outbound ids per client
    clock_ms: int = 0


@dataclass(frozen=True)
class HandleResult:
    replies: tuple[codec.Packet, ...]
    forwards: tuple[tuple[ConnKey, codec.Packet], ...]
    closes: frozenset[ConnKey]
    state: MockBrokerState

    @property
    def closes_sender(self) -> bool:
        return bool(self.closes)


def initial_state(config: MockBrokerConfig | None = None) -> MockBrokerState:
    return MockBrokerState(config=config or MockBrokerConfig())


def _drop_client(state: MockBrokerState, conn: ConnKey) -> MockBrokerState:
    """Remove a connection and, clean-session style, everything it owns."""
    conns = dict(state.conns)
    info = conns.pop(conn, None)
    owner_of = dict(state.owner_of)
    subscriptions = dict(state.subscriptions)
    next_pid = dict(state.next_pid)
    if info is not None and info.client_id is not None:
        if owner_of.get(info.client_id) == conn:
            owner_of.pop(info.client_id, None)
            subscriptions.pop(info.client_id, None)
            next_pid.pop(info.client_id, None)
    return replace(
        state, conns=conns, owner_of=owner_of, subscriptions=subscriptions, next_pid=next_pid
    )


def connection_closed(state: MockBrokerState, conn: ConnKey) -> MockBrokerState:
    """Transport-level close (peer went away); same cleanup as a kick."""
    return _drop_client(state, conn)


def _close(state: MockBrokerState, conn: ConnKey, *, also: ConnKey | None = None) -> HandleResult:
    closes = {conn} if also is None else {conn, also}
    for c in closes:
        state = _drop_client(state, c)
    return HandleResult((), (), frozenset(closes), state)


def _handle_connect(
    state: MockBrokerState, conn: ConnKey, p: codec.Connect
) -> HandleResult:
    cfg = state.config
    if not p.client_id:
        reply = codec.ConnAck(session_present=False, return_code=RC_IDENTIFIER_REJECTED)
        closed = _drop_client(state, conn)
        return HandleResult((reply,), (), frozenset({conn}), closed)
    if cfg.username is not None:
        if p.username is None:
            reply = codec.ConnAck(session_present=False, return_code=RC_NOT_AUTHORIZED)
            return HandleResult((reply,), (), frozenset({conn}), _drop_client(state, conn))
        if p.username != cfg.username or (p.password or "") != (cfg.password or ""):
            reply = codec.ConnAck(session_present=False, return_code=RC_BAD_CREDENTIALS)
            return HandleResult((reply,), (), frozenset({conn}), _drop_client(state, conn))

    closes: set[ConnKey] = set()
    existing = state.owner_of.get(p.client_id)
    if existing is not None:
        # 3.1.1 takeover rule: the new connection wins, the old one is closed
        state = _drop_client(state, existing)
        closes.add(existing)
    elif len(state.owner_of) >= cfg.max_connections:
        reply = codec.ConnAck(session_present=False, return_code=RC_SERVER_UNAVAILABLE)
        return HandleResult((reply,), (), frozenset({conn}), _drop_client(state, conn))

    conns = dict(state.conns)
    conns[conn] = replace(conns[conn], client_id=p.client_id)
    owner_of = dict(state.owner_of)
    owner_of[p.client_id] = conn
    subscriptions = dict(state.subscriptions)
    subscriptions[p.client_id] = frozenset()
    next_pid = dict(state.next_pid)
    next_pid[p.client_id] = 1
    new_state = replace(
        state, conns=conns, owner_of=owner_of, subscriptions=subscriptions, next_pid=next_pid
    )
    reply = codec.ConnAck(session_present=False, return_code=RC_ACCEPTED)
    return HandleResult((reply,), (), frozenset(closes), new_state)


def _rate_limited(state: MockBrokerState, conn: ConnKey) -> tuple[bool, MockBrokerState]:
    cfg = state.config
    if cfg.max_publish_per_second <= 0:
        return False, state
    info = state.conns[conn]
    now = state.clock_ms
    if now - info.window_start_ms >= RATE_WINDOW_MS:
        info = replace(info, window_start_ms=now, window_count=1)
    else:
        info = replace(info, window_count=info.window_count + 1)
    conns = dict(state.conns)
    conns[conn] = info
    state = replace(state, conns=conns)
    return info.window_count > cfg.max_publish_per_second, state


def _handle_publish(
    state: MockBrokerState, conn: ConnKey, p: codec.Publish
) -> HandleResult:
    if len(p.payload) > state.config.max_payload_bytes:
        return _close(state, conn)
    limited, state = _rate_limited(state, conn)
    if limited:
        return _close(state, conn)

    replies: tuple[codec.Packet, ...] = ()
    if p.qos == 1:
        replies = (codec.PubAck(packet_id=p.packet_id),)

    forwards: list[tuple[ConnKey, codec.Packet]] = []
    next_pid = dict(state.next_pid)
    for client_id in sorted(state.subscriptions):
        target_conn = state.owner_of.get(client_id)
        if target_conn is None:
            continue
        matching = [f for f in state.subscriptions[client_id] if filter_matches(f, p.topic)]
        if not matching:
            continue
        # deliver once per client at the highest granted qos among matches
        out_qos = min(p.qos, 1)
        pid = None
        if out_qos == 1:
            pid = next_pid.get(client_id, 1)
            next_pid[client_id] = 1 if pid >= codec.MAX_PACKET_ID else pid + 1
        forwards.append(
            (
                target_conn,
                codec.Publish(topic=p.topic, payload=p.payload, qos=out_qos, packet_id=pid),
            )
        )
    state = replace(state, next_pid=next_pid)
    return HandleResult(replies, tuple(forwards), frozenset(), state)


def _handle_subscribe(
    state: MockBrokerState, conn: ConnKey, p: codec.Subscribe
) -> HandleResult:
    client_id = state.conns[conn].client_id
    assert client_id is not None
    granted: list[int] = []
    new_filters = set(state.subscriptions.get(client_id, frozenset()))
    for topic_filter, qos in p.topics:
        if not is_valid_filter(topic_filter):
            if state.config.strict_mode:
                return _close(state, conn)
            granted.append(codec.SUBACK_FAILURE)
            continue
        new_filters.add(topic_filter)
        granted.append(min(qos, 1))
    subscriptions = dict(state.subscriptions)
    subscriptions[client_id] = frozenset(new_filters)
    state = replace(state, subscriptions=subscriptions)
    reply = codec.SubAck(packet_id=p.packet_id, return_codes=tuple(granted))
    return HandleResult((reply,), (), frozenset(), state)


def _handle_unsubscribe(
    state: MockBrokerState, conn: ConnKey, p: codec.Unsubscribe
) -> HandleResult:
    client_id = state.conns[conn].client_id
    assert client_id is not None
    remaining = state.subscriptions.get(client_id, frozenset()) - set(p.topics)
    subscriptions = dict(state.subscriptions)
    subscriptions[client_id] = remaining
    state = replace(state, subscriptions=subscriptions)
    return HandleResult((codec.UnsubAck(packet_id=p.packet_id),), (), frozenset(), state)


def handle(state: MockBrokerState, conn: ConnKey, p: codec.Packet) -> HandleResult:
    """Process one decoded packet from one connection.

    Unknown connections are registered on their first packet. Protocol
    violations close the offending connection; they are outcomes, not
    errors.
    """
    state = replace(state, clock_ms=state.clock_ms + CLOCK_STEP_MS)
    if conn not in state.conns:
        conns = dict(state.conns)
        conns[conn] = _ConnState()
        state = replace(state, conns=conns)

    connected = state.conns[conn].client_id is not None
    if isinstance(p, codec.Connect):
        if connected:
            # second CONNECT on a live connection is a protocol violation
            return _close(state, conn)
        return _handle_connect(state, conn, p)
    if not connected:
        # 3.1.1: the first packet of a connection must be CONNECT
        return _close(state, conn)

    if isinstance(p, codec.Publish):
        return _handle_publish(state, conn, p)
    if isinstance(p, codec.Subscribe):
        return _handle_subscribe(state, conn, p)
    if isinstance(p, codec.Unsubscribe):
        return _handle_unsubscribe(state, conn, p)
    if isinstance(p, codec.PingReq):
        return HandleResult((codec.PingResp(),), (), frozenset(), state)
    if isinstance(p, codec.Disconnect):
        return _close(state, conn)
    # client-to-broker traffic must not contain broker-side packets
    return _close(state, conn)
