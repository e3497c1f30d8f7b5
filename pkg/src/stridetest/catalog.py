"""The regular MQTT command list available to the test generator.

Each command declares a parameter schema, how to build its packet from
bound parameters, and the response rule that classifies the broker's
reaction. Parameter binding is a pure function of (command, rng state):
topics come from a fixed pool, payloads are short random byte strings,
client ids are ``tcg-`` plus eight hex characters.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from . import codec
from .errors import UsageError
from .harness import Expectation, Verdict

TOPIC_POOL = ("sensors/temp", "sensors/hum", "actuators/valve")
FILTER_POOL = TOPIC_POOL + ("sensors/#", "+/temp")
MAX_PAYLOAD_LEN = 64

ParamValue = str | int | bool


@dataclass(frozen=True)
class Command:
    name: str
    params: tuple[str, ...]
    expectation: Expectation
    build: Callable[[dict[str, ParamValue]], codec.Packet]
    # commands the broker only accepts in a given connection phase
    requires_connected: bool = True
    closes_session: bool = False


@dataclass(frozen=True)
class BoundAction:
    """One executable step: a regular command or an attack, with its
    parameters resolved and its wire frames prebuilt."""

    kind: str  # "command" | "attack"
    name: str
    params: dict[str, ParamValue] = field(default_factory=dict)
    frames: tuple[bytes, ...] = ()

    def __post_init__(self):
        if not self.frames:
            raise ValueError(f"{self.kind} {self.name!r}: frames must be non-empty")
        if self.kind == "command" and len(self.frames) != 1:
            raise ValueError(f"command {self.name!r}: exactly one frame expected")


def draw_client_id(rng: random.Random) -> str:
    return "tcg-" + "".join(rng.choice("0123456789abcdef") for _ in range(8))


def draw_payload(rng: random.Random) -> bytes:
    return bytes(rng.randrange(256) for _ in range(rng.randint(0, MAX_PAYLOAD_LEN)))


def draw_packet_id(rng: random.Random) -> int:
    return rng.randint(1, codec.MAX_PACKET_ID)


def _build_connect(p: dict) -> codec.Packet:
    return codec.Connect(
        client_id=p["client_id"],
        username=p.get("username"),
        password=p.get("password"),
    )


def _build_publish_qos0(p: dict) -> codec.Packet:
    return codec.Publish(topic=p["topic"], payload=bytes.fromhex(p["payload"]), qos=0)


def _build_publish_qos1(p: dict) -> codec.Packet:
    return codec.Publish(
        topic=p["topic"],
        payload=bytes.fromhex(p["payload"]),
        qos=1,
        packet_id=p["packet_id"],
    )


def _build_subscribe(p: dict) -> codec.Packet:
    return codec.Subscribe(packet_id=p["packet_id"], topics=((p["filter"], p["qos"]),))


def _build_unsubscribe(p: dict) -> codec.Packet:
    return codec.Unsubscribe(packet_id=p["packet_id"], topics=(p["filter"],))


def default_commands(
    username: str | None = None, password: str | None = None
) -> list[Command]:
    """The seven-command catalog; credentials apply to connect only."""
    connect_build = _build_connect
    if username is not None:
        def connect_build(p, _u=username, _p=password):  # noqa: E731
            return codec.Connect(client_id=p["client_id"], username=_u, password=_p)

    return [
        Command(
            name="connect",
            params=("client_id",),
            expectation=Expectation.packet(codec.ConnAck),
            build=connect_build,
            requires_connected=False,
        ),
        Command(
            name="disconnect",
            params=(),
            expectation=Expectation.silence(closes_session=True),
            build=lambda p: codec.Disconnect(),
            closes_session=True,
        ),
        Command(
            name="publish_qos0",
            params=("topic", "payload"),
            expectation=Expectation.silence(),
            build=_build_publish_qos0,
        ),
        Command(
            name="publish_qos1",
            params=("topic", "payload", "packet_id"),
            expectation=Expectation.packet(codec.PubAck),
            build=_build_publish_qos1,
        ),
        Command(
            name="subscribe",
            params=("filter", "qos", "packet_id"),
            expectation=Expectation.packet(codec.SubAck),
            build=_build_subscribe,
        ),
        Command(
            name="unsubscribe",
            params=("filter", "packet_id"),
            expectation=Expectation.packet(codec.UnsubAck),
            build=_build_unsubscribe,
        ),
        Command(
            name="ping",
            params=(),
            expectation=Expectation.packet(codec.PingResp),
            build=lambda p: codec.PingReq(),
        ),
    ]


def catalog_by_name(catalog: list[Command]) -> dict[str, Command]:
    return {c.name: c for c in catalog}


def lookup(catalog: list[Command], name: str) -> Command:
    for command in catalog:
        if command.name == name:
            return command
    raise UsageError(f"unknown command {name!r}")


def bind(command: Command, rng: random.Random) -> BoundAction:
    """Draw parameters from their domains and build the wire frame."""
    params: dict[str, ParamValue] = {}
    for name in command.params:
        if name == "client_id":
            params[name] = draw_client_id(rng)
        elif name == "topic":
            params[name] = rng.choice(TOPIC_POOL)
        elif name == "filter":
            params[name] = rng.choice(FILTER_POOL)
        elif name == "payload":
            params[name] = draw_payload(rng).hex()
        elif name == "packet_id":
            params[name] = draw_packet_id(rng)
        elif name == "qos":
            params[name] = rng.randint(0, 1)
        else:
            raise UsageError(f"command {command.name!r}: no domain for parameter {name!r}")
    frame = codec.encode(command.build(params))
    return BoundAction(kind="command", name=command.name, params=params, frames=(frame,))


# the expected verdict for every regular command on a healthy broker
COMMAND_EXPECTED_VERDICTS = frozenset({Verdict.ACCEPTED})
