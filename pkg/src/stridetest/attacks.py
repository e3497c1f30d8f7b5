"""Implemented attack patterns, invocable exactly like regular commands.

Each pattern binds its parameters up front (pure function of the rng and
the attack configuration), so the resulting step replays bit-identically.
``expected_verdicts`` is the verdict class a robust SUT may produce; the
generator appends an attack step only when the observed verdict falls in
that class, and the execution report flags steps that fall outside it.

The library is finite and hand-written: catalog_ref points at the public
catalog entry each pattern approximates, it is not a live integration.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

from . import codec
from .catalog import BoundAction, draw_client_id
from .errors import UsageError
from .harness import (
    EXPECT_CLOSE,
    EXPECT_CONNACK,
    Expectation,
    Feedback,
    Phase,
    Session,
    Verdict,
)
from .threats import StrideCategory, ThreatTemplate
from .risk import MAX_SCORE, ScoredThreat, prioritized_weights

MALFORMED_WAIT_MS = 300

Opener = Callable[[], Session]
Monitor = Callable[[str], None] | None


@dataclass(frozen=True)
class AttackConfig:
    flood_publish_count: int = 1000
    flood_publish_payload_bytes: int = 16
    flood_connect_count: int = 20
    flood_connect_concurrency: int = 8
    oversized_payload_bytes: int = 131072

    def to_dict(self) -> dict:
        return {
            "flood_publish_count": self.flood_publish_count,
            "flood_publish_payload_bytes": self.flood_publish_payload_bytes,
            "flood_connect_count": self.flood_connect_count,
            "flood_connect_concurrency": self.flood_connect_concurrency,
            "oversized_payload_bytes": self.oversized_payload_bytes,
        }


@dataclass(frozen=True)
class AttackPattern:
    attack_id: str
    title: str
    categories: frozenset[StrideCategory]
    catalog_ref: str
    expected_verdicts: frozenset[Verdict]
    # parameters (flood sizes etc.) are bound into the closure when the
    # library is built from an AttackConfig
    bind: Callable[[random.Random], BoundAction]
    run: Callable[[Session, BoundAction, Opener, Monitor], Feedback]


def _connect_frame(client_id: str, username: str | None = None, password: str | None = None) -> bytes:
    return codec.encode(codec.Connect(client_id=client_id, username=username, password=password))


def _ensure_connected(session: Session, client_id: str) -> Feedback | None:
    """Connect the session if it is still fresh; None means ready."""
    if session.phase is Phase.MQTT_CONNECTED:
        return None
    feedback = session.send_and_observe(_connect_frame(client_id), EXPECT_CONNACK)
    if feedback.verdict is Verdict.ACCEPTED:
        return None
    return feedback


# --- flood_publish ------------------------------------------------------


def _bind_flood_publish(rng: random.Random, cfg: AttackConfig) -> BoundAction:
    topic = rng.choice(("sensors/temp", "sensors/hum", "actuators/valve"))
    payload = bytes(rng.randrange(256) for _ in range(cfg.flood_publish_payload_bytes))
    params = {
        "count": cfg.flood_publish_count,
        "topic": topic,
        "payload": payload.hex(),
        "client_id": draw_client_id(rng) + "-fp",
    }
    frame = codec.encode(codec.Publish(topic=topic, payload=payload, qos=0))
    return BoundAction(
        kind="attack",
        name="flood_publish",
        params=params,
        frames=(frame,) * cfg.flood_publish_count,
    )


def _run_flood_publish(
    session: Session, bound: BoundAction, opener: Opener, monitor: Monitor
) -> Feedback:
    blocked = _ensure_connected(session, bound.params["client_id"])
    if blocked is not None:
        return blocked
    feedback = session.send_many(list(bound.frames), Expectation.silence())
    if monitor:
        monitor("flood_publish:after-burst")
    return feedback


# --- flood_connect ------------------------------------------------------


def _bind_flood_connect(rng: random.Random, cfg: AttackConfig) -> BoundAction:
    prefix = draw_client_id(rng) + "-fc"
    params = {
        "count": cfg.flood_connect_count,
        "concurrency": cfg.flood_connect_concurrency,
        "client_id_prefix": prefix,
        "client_id": prefix + "-main",
    }
    frames = tuple(
        _connect_frame(f"{prefix}-{i:04d}") for i in range(cfg.flood_connect_count)
    )
    return BoundAction(kind="attack", name="flood_connect", params=params, frames=frames)


def _run_flood_connect(
    session: Session, bound: BoundAction, opener: Opener, monitor: Monitor
) -> Feedback:
    blocked = _ensure_connected(session, bound.params["client_id"])
    if blocked is not None:
        return blocked
    concurrency = max(1, int(bound.params.get("concurrency", 8)))
    side_sessions: list[Session] = []
    verdicts: list[Verdict] = []
    total_latency = 0

    def open_one(frame: bytes) -> tuple[Session | None, Verdict, int]:
        try:
            side = opener()
        except Exception:
            return None, Verdict.SUT_DOWN, 0
        feedback = side.send_and_observe(frame, EXPECT_CONNACK)
        return side, feedback.verdict, feedback.latency_ms

    try:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            for side, verdict, latency in pool.map(open_one, bound.frames):
                if side is not None:
                    side_sessions.append(side)
                verdicts.append(verdict)
                total_latency += latency
        if monitor:
            monitor("flood_connect:during")
    finally:
        for side in side_sessions:
            side.close()
    if monitor:
        monitor("flood_connect:after-cleanup")
    if any(v is Verdict.SUT_DOWN for v in verdicts):
        verdict = Verdict.SUT_DOWN
    elif all(v is Verdict.ACCEPTED for v in verdicts):
        verdict = Verdict.ACCEPTED
    else:
        # the broker refused or dropped part of the flood: it defended itself
        verdict = Verdict.REJECTED
    return Feedback(verdict, (), total_latency)


# --- malformed_frame ----------------------------------------------------

_MALFORMATION_VARIANTS = ("truncated", "bad_remaining_length", "reserved_type", "oversized_client_id")


def _malformed_bytes(params: dict) -> bytes:
    variant = params["variant"]
    if variant == "truncated":
        return codec.encode_malformed(
            codec.TruncatedFrame(base=codec.Connect(client_id=params["client_id"]), keep=params["keep"])
        )
    if variant == "bad_remaining_length":
        return codec.encode_malformed(
            codec.BadRemainingLength(
                base=codec.Publish(topic="sensors/temp", payload=b"x" * 8, qos=0),
                delta=params["delta"],
            )
        )
    if variant == "reserved_type":
        return codec.encode_malformed(codec.ReservedType(first_byte=params["first_byte"]))
    if variant == "oversized_client_id":
        return codec.encode_malformed(codec.OversizedClientId(length=params["length"]))
    raise UsageError(f"unknown malformation variant {variant!r}")


def _bind_malformed_frame(rng: random.Random, cfg: AttackConfig) -> BoundAction:
    variant = rng.choice(_MALFORMATION_VARIANTS)
    params: dict = {"variant": variant, "client_id": draw_client_id(rng) + "-mf"}
    if variant == "truncated":
        params["keep"] = rng.randint(1, 8)
    elif variant == "bad_remaining_length":
        params["delta"] = rng.choice((-5, -3, 7, 64))
    elif variant == "reserved_type":
        params["first_byte"] = rng.choice((0x00, 0x0F, 0xF0, 0xFF))
    else:
        params["length"] = 70000
    return BoundAction(
        kind="attack", name="malformed_frame", params=params, frames=(_malformed_bytes(params),)
    )


def _run_malformed_frame(
    session: Session, bound: BoundAction, opener: Opener, monitor: Monitor
) -> Feedback:
    feedback = session.send_and_observe(bound.frames[0], EXPECT_CLOSE, wait_ms=MALFORMED_WAIT_MS)
    # the connection holds stray bytes now; tear it down either way
    session.close()
    return feedback


# --- oversized_payload --------------------------------------------------


def _bind_oversized_payload(rng: random.Random, cfg: AttackConfig) -> BoundAction:
    topic = rng.choice(("sensors/temp", "sensors/hum"))
    params = {
        "size_bytes": cfg.oversized_payload_bytes,
        "topic": topic,
        "packet_id": rng.randint(1, codec.MAX_PACKET_ID),
        "client_id": draw_client_id(rng) + "-op",
    }
    frame = codec.encode(
        codec.Publish(
            topic=topic,
            payload=b"\x5a" * cfg.oversized_payload_bytes,
            qos=1,
            packet_id=params["packet_id"],
        )
    )
    return BoundAction(kind="attack", name="oversized_payload", params=params, frames=(frame,))


def _run_oversized_payload(
    session: Session, bound: BoundAction, opener: Opener, monitor: Monitor
) -> Feedback:
    blocked = _ensure_connected(session, bound.params["client_id"])
    if blocked is not None:
        return blocked
    return session.send_and_observe(bound.frames[0], Expectation.packet(codec.PubAck))


# --- client_id_spoof ----------------------------------------------------


def _bind_client_id_spoof(rng: random.Random, cfg: AttackConfig) -> BoundAction:
    victim = draw_client_id(rng) + "-victim"
    params = {"client_id": victim}
    return BoundAction(
        kind="attack", name="client_id_spoof", params=params, frames=(_connect_frame(victim),)
    )


def _run_client_id_spoof(
    session: Session, bound: BoundAction, opener: Opener, monitor: Monitor
) -> Feedback:
    victim_id = bound.params["client_id"]
    try:
        victim = opener()
    except Exception:
        return Feedback(Verdict.SUT_DOWN)
    try:
        placed = victim.send_and_observe(_connect_frame(victim_id), EXPECT_CONNACK)
        if placed.verdict is not Verdict.ACCEPTED:
            return placed
        # now take the victim's identity from our own session; per 3.1.1
        # the broker must disconnect the older session (takeover)
        return session.send_and_observe(bound.frames[0], EXPECT_CONNACK)
    finally:
        victim.close()


# --- auth_bypass_probe --------------------------------------------------


def _bind_auth_bypass_probe(rng: random.Random, cfg: AttackConfig) -> BoundAction:
    client_id = draw_client_id(rng) + "-ab"
    mode = rng.choice(("empty", "wrong"))
    username = "" if mode == "empty" else "intruder"
    password = "" if mode == "empty" else "let-me-in"
    params = {"client_id": client_id, "username": username, "password": password}
    return BoundAction(
        kind="attack",
        name="auth_bypass_probe",
        params=params,
        frames=(_connect_frame(client_id, username, password),),
    )


def _run_auth_bypass_probe(
    session: Session, bound: BoundAction, opener: Opener, monitor: Monitor
) -> Feedback:
    return session.send_and_observe(bound.frames[0], EXPECT_CONNACK)


def builtin_attacks(config: AttackConfig | None = None) -> list[AttackPattern]:
    """The implemented pattern library, in stable id order."""
    cfg = config or AttackConfig()

    def with_config(binder):
        return lambda rng, c=cfg: binder(rng, c)

    return [
        AttackPattern(
            attack_id="auth_bypass_probe",
            title="Connect with empty or wrong credentials",
            categories=frozenset({StrideCategory.ELEVATION_OF_PRIVILEGE}),
            catalog_ref="CAPEC-114 Authentication Abuse",
            expected_verdicts=frozenset({Verdict.REJECTED, Verdict.CONNECTION_CLOSED}),
            bind=with_config(_bind_auth_bypass_probe),
            run=_run_auth_bypass_probe,
        ),
        AttackPattern(
            attack_id="client_id_spoof",
            title="Connect with a client id already in use",
            categories=frozenset({StrideCategory.SPOOFING}),
            catalog_ref="CAPEC-151 Identity Spoofing",
            expected_verdicts=frozenset(
                {Verdict.ACCEPTED, Verdict.REJECTED, Verdict.CONNECTION_CLOSED}
            ),
            bind=with_config(_bind_client_id_spoof),
            run=_run_client_id_spoof,
        ),
        AttackPattern(
            attack_id="flood_connect",
            title="Open many simultaneous connections",
            categories=frozenset({StrideCategory.DENIAL_OF_SERVICE}),
            catalog_ref="CAPEC-125 Flooding",
            expected_verdicts=frozenset({Verdict.ACCEPTED, Verdict.REJECTED}),
            bind=with_config(_bind_flood_connect),
            run=_run_flood_connect,
        ),
        AttackPattern(
            attack_id="flood_publish",
            title="Burst of rapid QoS 0 publishes",
            categories=frozenset({StrideCategory.DENIAL_OF_SERVICE}),
            catalog_ref="CAPEC-125 Flooding",
            expected_verdicts=frozenset(
                {Verdict.ACCEPTED, Verdict.REJECTED, Verdict.CONNECTION_CLOSED}
            ),
            bind=with_config(_bind_flood_publish),
            run=_run_flood_publish,
        ),
        AttackPattern(
            attack_id="malformed_frame",
            title="Deliberately broken wire frame",
            categories=frozenset({StrideCategory.TAMPERING}),
            catalog_ref="CAPEC-153 Input Data Manipulation",
            expected_verdicts=frozenset(
                {Verdict.REJECTED, Verdict.CONNECTION_CLOSED, Verdict.NO_RESPONSE}
            ),
            bind=with_config(_bind_malformed_frame),
            run=_run_malformed_frame,
        ),
        AttackPattern(
            attack_id="oversized_payload",
            title="Publish exceeding the broker payload limit",
            categories=frozenset({StrideCategory.DENIAL_OF_SERVICE}),
            catalog_ref="CAPEC-130 Excessive Allocation",
            expected_verdicts=frozenset({Verdict.REJECTED, Verdict.CONNECTION_CLOSED}),
            bind=with_config(_bind_oversized_payload),
            run=_run_oversized_payload,
        ),
    ]


def library_by_id(library: list[AttackPattern]) -> dict[str, AttackPattern]:
    return {a.attack_id: a for a in library}


def select_attacks(
    weights: dict[str, float], library: list[AttackPattern]
) -> list[tuple[AttackPattern, float]]:
    """The weighted action pool: exactly the attacks with weight > 0.

    Unknown attack ids are configuration errors.
    """
    by_id = library_by_id(library)
    pool: list[tuple[AttackPattern, float]] = []
    for attack_id in sorted(weights):
        if attack_id not in by_id:
            raise UsageError(f"weights reference unknown attack {attack_id!r}")
        if weights[attack_id] > 0:
            pool.append((by_id[attack_id], weights[attack_id]))
    return pool


def threat_gated_weights(
    scored: list[ScoredThreat],
    templates: list[ThreatTemplate],
    library: list[AttackPattern],
) -> dict[str, float]:
    """Full attack weighting: template references plus category fallback.

    A selected threat whose template names attacks weights those attacks;
    one whose template names none (or is unknown) enables every library
    attack tagged with the threat's category instead.
    """
    weights = prioritized_weights(scored, templates)
    by_id = {t.template_id: t for t in templates}
    for item in scored:
        if not item.selected:
            continue
        template = by_id.get(item.threat.template_id)
        if template is not None and template.attack_pattern_refs:
            continue
        for attack in library:
            if item.threat.category in attack.categories:
                weight = item.score / MAX_SCORE
                if weight > weights.get(attack.attack_id, 0.0):
                    weights[attack.attack_id] = weight
    return weights
