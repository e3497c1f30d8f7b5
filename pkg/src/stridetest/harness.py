"""Uniform execution surface over the system under test.

A :class:`Session` wraps either an in-process embedded mock broker or a
TCP connection to a real broker behind the same API, so suites generated
against one replay unchanged against the other. Every interaction is
classified into a :class:`Feedback` verdict by a fixed, total table:

* expected response received -> ``Accepted`` (error codes -> ``Rejected``)
* peer closed the connection -> ``ConnectionClosed``
* timeout where a response was expected -> ``NoResponse``
* liveness probe failure -> ``SutDown``
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

from . import codec, mock_broker
from .errors import SutDownError

DEFAULT_TIMEOUT_MS = 2000
# how long a TCP session waits to confirm expected silence
SILENCE_GRACE_MS = 150


class Verdict(Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    NO_RESPONSE = "NoResponse"
    CONNECTION_CLOSED = "ConnectionClosed"
    SUT_DOWN = "SutDown"


class Phase(Enum):
    FRESH = "Fresh"
    MQTT_CONNECTED = "MqttConnected"
    CLOSED = "Closed"


@dataclass(frozen=True)
class Feedback:
    verdict: Verdict
    packets: tuple[codec.Packet, ...] = ()
    latency_ms: int = 0


@dataclass(frozen=True)
class Expectation:
    """Read-stop rule for one interaction: which response ends the wait."""

    kind: str  # "packet" | "silence" | "close"
    packet_type: type | None = None
    closes_session: bool = False  # the client tears down after sending

    @staticmethod
    def packet(packet_type: type) -> "Expectation":
        return Expectation(kind="packet", packet_type=packet_type)

    @staticmethod
    def silence(closes_session: bool = False) -> "Expectation":
        return Expectation(kind="silence", closes_session=closes_session)

    @staticmethod
    def close() -> "Expectation":
        return Expectation(kind="close")


EXPECT_CONNACK = Expectation.packet(codec.ConnAck)
EXPECT_SILENCE = Expectation.silence()
EXPECT_CLOSE = Expectation.close()


def classify(
    expectation: Expectation,
    packets: list[codec.Packet],
    closed_by_peer: bool,
    timed_out: bool,
) -> Verdict:
    """The feedback classification table. Total and mutually exclusive."""
    if expectation.kind == "packet":
        for p in packets:
            if expectation.packet_type is not None and isinstance(p, expectation.packet_type):
                if isinstance(p, codec.ConnAck) and p.return_code != 0:
                    return Verdict.REJECTED
                if isinstance(p, codec.SubAck) and codec.SUBACK_FAILURE in p.return_codes:
                    return Verdict.REJECTED
                return Verdict.ACCEPTED
        if closed_by_peer:
            return Verdict.CONNECTION_CLOSED
        return Verdict.NO_RESPONSE
    if expectation.kind == "silence":
        if closed_by_peer:
            return Verdict.CONNECTION_CLOSED
        return Verdict.ACCEPTED
    # expectation "close": the wait ends on peer close; classification of a
    # close stays ConnectionClosed, silence degrades to NoResponse
    if closed_by_peer:
        return Verdict.CONNECTION_CLOSED
    return Verdict.NO_RESPONSE


class EmbeddedBroker:
    """Mutable facade over the pure mock state machine.

    Owns the per-connection inboxes and byte buffers and serializes all
    packet handling behind one lock; used both in-process and by the TCP
    server so the two transports share one code path.
    """

    def __init__(self, config: mock_broker.MockBrokerConfig | None = None):
        self.config = config or mock_broker.MockBrokerConfig()
        self._state = mock_broker.initial_state(self.config)
        self._lock = threading.Lock()
        self._next_conn = 0
        self._inboxes: dict[int, list[codec.Packet]] = {}
        self._buffers: dict[int, bytes] = {}
        self._closed: dict[int, bool] = {}
        self.halted = False

    def attach(self) -> int:
        with self._lock:
            conn = self._next_conn
            self._next_conn += 1
            self._inboxes[conn] = []
            self._buffers[conn] = b""
            self._closed[conn] = False
            return conn

    def detach(self, conn: int) -> None:
        with self._lock:
            if not self._closed.get(conn, True):
                self._state = mock_broker.connection_closed(self._state, conn)
            self._closed[conn] = True

    def is_closed(self, conn: int) -> bool:
        with self._lock:
            return self._closed.get(conn, True)

    def feed(self, conn: int, data: bytes) -> None:
        """Buffer incoming bytes and handle every complete frame."""
        with self._lock:
            if self._closed.get(conn, True) or self.halted:
                return
            buf = self._buffers[conn] + data
            while buf and not self._closed[conn]:
                try:
                    decoded = codec.decode(buf)
                except codec.DecodeError:
                    # the protocol checker: malformed bytes close the connection
                    self._close_locked(conn)
                    buf = b""
                    break
                if decoded is None:
                    break
                packet, consumed = decoded
                buf = buf[consumed:]
                result = mock_broker.handle(self._state, conn, packet)
                self._state = result.state
                self._inboxes[conn].extend(result.replies)
                for target, forwarded in result.forwards:
                    if not self._closed.get(target, True):
                        self._inboxes[target].append(forwarded)
                for closing in result.closes:
                    self._close_locked(closing)
            self._buffers[conn] = buf

    def _close_locked(self, conn: int) -> None:
        if not self._closed.get(conn, True):
            self._state = mock_broker.connection_closed(self._state, conn)
            self._closed[conn] = True

    def take_packets(self, conn: int) -> list[codec.Packet]:
        with self._lock:
            packets = self._inboxes.get(conn, [])
            self._inboxes[conn] = []
            return list(packets)

    def snapshot(self) -> mock_broker.MockBrokerState:
        with self._lock:
            return self._state


class _EmbeddedTransport:
    def __init__(self, broker: EmbeddedBroker):
        self.broker = broker
        self.conn = broker.attach()

    def send(self, frame: bytes) -> None:
        self.broker.feed(self.conn, frame)

    def receive(self, deadline: float, stop) -> tuple[list[codec.Packet], bool, bool]:
        # in-process handling is synchronous: everything the broker will
        # ever say about the frame is already in the inbox
        packets = self.broker.take_packets(self.conn)
        closed = self.broker.is_closed(self.conn)
        satisfied = stop(packets) if stop else False
        timed_out = not satisfied and not closed
        return packets, closed, timed_out

    def close(self) -> None:
        self.broker.detach(self.conn)


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout_ms: int):
        self.sock = socket.create_connection((host, port), timeout=timeout_ms / 1000)
        self.sock.settimeout(0.05)
        self.buffer = b""
        self.peer_closed = False

    def send(self, frame: bytes) -> None:
        self.sock.sendall(frame)

    def receive(self, deadline: float, stop) -> tuple[list[codec.Packet], bool, bool]:
        packets: list[codec.Packet] = []
        while time.monotonic() < deadline:
            while True:
                try:
                    decoded = codec.decode(self.buffer)
                except codec.DecodeError:
                    # a broker speaking garbage is indistinguishable from a
                    # torn-down connection for classification purposes
                    self.peer_closed = True
                    self.buffer = b""
                    decoded = None
                if decoded is None:
                    break
                packet, consumed = decoded
                self.buffer = self.buffer[consumed:]
                packets.append(packet)
            if stop and stop(packets):
                return packets, self.peer_closed, False
            if self.peer_closed:
                return packets, True, False
            try:
                chunk = self.sock.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                self.peer_closed = True
                return packets, True, False
            if not chunk:
                self.peer_closed = True
            else:
                self.buffer += chunk
        satisfied = bool(stop and stop(packets))
        return packets, self.peer_closed, not satisfied

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


@dataclass
class Session:
    """Single-owner interaction channel with the SUT."""

    transport: object
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    phase: Phase = Phase.FRESH
    descriptor: str = "embedded"

    def send_and_observe(
        self, frame: bytes, expectation: Expectation, wait_ms: int | None = None
    ) -> Feedback:
        """Write one frame and classify the SUT's reaction.

        At most one in-flight interaction per session; closed sessions
        reject sends with a ConnectionClosed verdict rather than an error.
        """
        return self.send_many([frame], expectation, wait_ms)

    def send_many(
        self, frames: list[bytes], expectation: Expectation, wait_ms: int | None = None
    ) -> Feedback:
        """Write a burst of frames back to back, then classify once.

        Used by flooding attacks: the frames are not individually awaited,
        the single classification covers the burst as a whole.
        """
        if self.phase is Phase.CLOSED:
            return Feedback(Verdict.CONNECTION_CLOSED)
        start = time.monotonic()
        try:
            for frame in frames:
                self.transport.send(frame)
        except OSError:
            self.phase = Phase.CLOSED
            return Feedback(Verdict.CONNECTION_CLOSED)

        stop = None
        if expectation.kind == "packet":
            want = expectation.packet_type
            stop = lambda pkts: any(isinstance(p, want) for p in pkts)  # noqa: E731
        if wait_ms is None:
            wait_ms = self.timeout_ms
            if expectation.kind == "silence" and isinstance(self.transport, _TcpTransport):
                wait_ms = min(self.timeout_ms, SILENCE_GRACE_MS)
        deadline = start + wait_ms / 1000
        packets, closed_by_peer, timed_out = self.transport.receive(deadline, stop)
        latency_ms = int((time.monotonic() - start) * 1000)

        if expectation.closes_session:
            # client-initiated teardown (DISCONNECT): the peer dropping the
            # socket afterwards is the expected outcome, not a rejection
            self.phase = Phase.CLOSED
            self.transport.close()
            return Feedback(Verdict.ACCEPTED, tuple(packets), latency_ms)

        verdict = classify(expectation, packets, closed_by_peer, timed_out)
        for p in packets:
            if isinstance(p, codec.ConnAck) and p.return_code == 0:
                self.phase = Phase.MQTT_CONNECTED
        if closed_by_peer:
            self.phase = Phase.CLOSED
        return Feedback(verdict, tuple(packets), latency_ms)

    def close(self) -> None:
        if self.phase is not Phase.CLOSED:
            self.phase = Phase.CLOSED
        self.transport.close()


@dataclass(frozen=True)
class TargetConfig:
    """Where sessions go: the embedded mock or a TCP endpoint."""

    kind: str = "embedded"  # "embedded" | "tcp"
    host: str = "127.0.0.1"
    port: int = 1883
    broker: mock_broker.MockBrokerConfig = field(default_factory=mock_broker.MockBrokerConfig)
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def describe(self) -> str:
        if self.kind == "embedded":
            return "embedded"
        return f"tcp://{self.host}:{self.port}"


class HarnessFactory:
    """Produces sessions, plus fresh broker instances for embedded runs."""

    def __init__(self, target: TargetConfig):
        self.target = target
        self._broker: EmbeddedBroker | None = None
        if target.kind == "embedded":
            self._broker = EmbeddedBroker(target.broker)

    @property
    def broker(self) -> EmbeddedBroker | None:
        return self._broker

    def reset(self) -> None:
        """Fresh broker state for the next test case (embedded only)."""
        if self.target.kind == "embedded":
            self._broker = EmbeddedBroker(self.target.broker)

    def open_session(self) -> Session:
        if self.target.kind == "embedded":
            assert self._broker is not None
            if self._broker.halted:
                raise SutDownError("embedded broker halted")
            transport = _EmbeddedTransport(self._broker)
            return Session(transport=transport, timeout_ms=self.target.timeout_ms)
        try:
            transport = _TcpTransport(self.target.host, self.target.port, self.target.timeout_ms)
        except OSError as exc:
            raise SutDownError(f"cannot reach {self.target.describe()}: {exc}") from exc
        return Session(
            transport=transport,
            timeout_ms=self.target.timeout_ms,
            descriptor=self.target.describe(),
        )


def open_session(target: TargetConfig) -> Session:
    return HarnessFactory(target).open_session()


def probe_liveness(factory: HarnessFactory, probe_id: str = "liveness-probe") -> bool:
    """CONNECT/DISCONNECT on a throwaway session; alive iff accepted."""
    try:
        session = factory.open_session()
    except SutDownError:
        return False
    try:
        cfg = factory.target.broker
        connect = codec.Connect(
            client_id=probe_id,
            username=cfg.username if factory.target.kind == "embedded" else None,
            password=cfg.password if factory.target.kind == "embedded" else None,
        )
        feedback = session.send_and_observe(codec.encode(connect), EXPECT_CONNACK)
        if feedback.verdict is not Verdict.ACCEPTED:
            return False
        session.send_and_observe(codec.encode(codec.Disconnect()), Expectation.silence(True))
        return True
    finally:
        session.close()
