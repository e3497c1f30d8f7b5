"""Online feedback-directed construction of test sequences.

Every candidate step is executed against a live session and kept only if
the observed verdict falls in the action's expected class, so emitted
sequences never contain an illegal prefix. Positive cases draw uniformly
from the commands viable in the current connection phase; negative cases
append a deliberately protocol-illegal step from a closed list of known
violations and stop; attack cases interleave weighted attack draws with
regular commands.

Generation is a pure function of (seed, config, catalog, attack pool,
broker config): the rng is split per case by mixing the case index into
the master seed, and mock broker behavior is deterministic by
construction, so the same inputs serialize to byte-identical suites.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from . import PROTOCOL_VERSION
from .attacks import AttackPattern, Opener
from .catalog import Command, bind, catalog_by_name
from .errors import StridetestError, SutDownError
from .harness import HarnessFactory, Phase, Verdict
from .suites import CaseKind, Provenance, Step, TestCase, TestSuite, digest_of_doc, validate_suite

logger = logging.getLogger(__name__)

MAX_CASE_RETRIES = 3
_SEED_MIX = 0x9E3779B97F4A7C15
_SEED_MASK = (1 << 64) - 1

COMMAND_EXPECTED = frozenset({Verdict.ACCEPTED})

# commands a 3.1.1 broker accepts in each connection phase
VIABLE_FRESH = ("connect",)
VIABLE_CONNECTED = ("publish_qos0", "publish_qos1", "subscribe", "unsubscribe", "ping")

# the closed list of known protocol violations used to end negative cases
FRESH_VIOLATIONS = (
    "publish_qos0_before_connect",
    "publish_qos1_before_connect",
    "subscribe_before_connect",
    "ping_before_connect",
)
CONNECTED_VIOLATIONS = ("duplicate_connect", "publish_after_disconnect")


@dataclass(frozen=True)
class GenConfig:
    seed: int = 1
    num_positive: int = 5
    num_negative: int = 5
    num_attack: int = 5
    max_length: int = 15
    attack_probability: float = 0.3
    rejection_budget: int = 20

    def __post_init__(self):
        if not 0.0 <= self.attack_probability <= 1.0:
            raise ValueError(f"attack_probability {self.attack_probability} not in [0, 1]")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if min(self.num_positive, self.num_negative, self.num_attack) < 0:
            raise ValueError("case counts must be >= 0")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "num_positive": self.num_positive,
            "num_negative": self.num_negative,
            "num_attack": self.num_attack,
            "max_length": self.max_length,
            "attack_probability": self.attack_probability,
            "rejection_budget": self.rejection_budget,
        }


class GenerationAborted(StridetestError):
    """Generation could not finish; carries the partial suite."""

    def __init__(self, message: str, partial: TestSuite | None = None):
        super().__init__(message)
        self.partial = partial


def case_rng(seed: int, case_index: int) -> random.Random:
    """Split the master seed per case so cases are order-independent."""
    return random.Random((seed + _SEED_MIX * (case_index + 1)) & _SEED_MASK)


class SequenceBuilder:
    """Builds one test case online against one broker instance.

    The builder owns a session; when a rejected candidate kills the
    connection it reopens one and replays the accepted regular-command
    prefix to restore broker state before continuing.
    """

    def __init__(
        self,
        factory: HarnessFactory,
        rng: random.Random,
        catalog: list[Command],
        pool: list[tuple[AttackPattern, float]],
        cfg: GenConfig,
        monitor=None,
    ):
        self.factory = factory
        self.rng = rng
        self.commands = catalog_by_name(catalog)
        self.pool = pool
        self.cfg = cfg
        self.monitor = monitor
        self.budget = cfg.rejection_budget
        self.steps: list[Step] = []
        self.session = factory.open_session()

    # -- candidate execution ------------------------------------------

    def try_command(self, command: Command) -> Step | None:
        """Execute one bound command; append and return the step when the
        verdict is Accepted, otherwise burn budget and restore the session."""
        action = bind(command, self.rng)
        feedback = self.session.send_and_observe(action.frames[0], command.expectation)
        if feedback.verdict is Verdict.ACCEPTED:
            step = Step(action=action, expected=COMMAND_EXPECTED, observed=feedback)
            self.steps.append(step)
            return step
        self._reject()
        return None

    def try_attack(self, attack: AttackPattern) -> Step | None:
        action = attack.bind(self.rng)
        feedback = attack.run(self.session, action, self._opener(), self.monitor)
        if feedback.verdict is Verdict.SUT_DOWN:
            raise SutDownError(f"SUT went down during {attack.attack_id}")
        if feedback.verdict in attack.expected_verdicts:
            step = Step(
                action=action,
                expected=frozenset({feedback.verdict}),
                observed=feedback,
            )
            self.steps.append(step)
            if self.session.phase is Phase.CLOSED:
                self._restore()
            return step
        self._reject()
        return None

    def _opener(self) -> Opener:
        return self.factory.open_session

    def _reject(self) -> None:
        self.budget -= 1
        if self.session.phase is Phase.CLOSED:
            self._restore()

    def _restore(self) -> None:
        """Fresh connection, then replay the accepted regular prefix."""
        self.session.close()
        self.session = self.factory.open_session()
        for step in self.steps:
            if step.action.kind != "command":
                continue
            command = self.commands[step.action.name]
            feedback = self.session.send_and_observe(step.action.frames[0], command.expectation)
            if feedback.verdict is not Verdict.ACCEPTED:
                logger.debug("prefix replay diverged at %s: %s", step.action.name, feedback.verdict)
                return

    # -- drawing ------------------------------------------------------

    def _viable_commands(self) -> list[Command]:
        names = VIABLE_FRESH if self.session.phase is Phase.FRESH else VIABLE_CONNECTED
        return [self.commands[n] for n in names if n in self.commands]

    def extend(self, mode: CaseKind, force_attack: bool = False) -> Step | None:
        """One generation round: draw, execute, filter by feedback.

        Returns the appended step, or None when the candidate was rejected
        (budget already decremented) or no candidate is viable.
        """
        if self.session.phase is Phase.CLOSED:
            return None
        draw_attack = force_attack
        if mode is CaseKind.ATTACK and self.pool and not force_attack:
            draw_attack = self.rng.random() < self.cfg.attack_probability
        if draw_attack and self.pool:
            attacks, weights = zip(*self.pool)
            attack = self.rng.choices(attacks, weights=weights, k=1)[0]
            return self.try_attack(attack)
        viable = self._viable_commands()
        if not viable:
            return None
        return self.try_command(self.rng.choice(viable))

    def exhausted(self) -> bool:
        return self.budget <= 0

    def close(self) -> None:
        self.session.close()


def _negative_violation_steps(builder: SequenceBuilder, rng: random.Random) -> list[Step] | None:
    """Execute one known protocol violation; returns the closing step(s).

    The violating command is drawn from the closed list compatible with
    the current connection phase; its observed non-Accepted verdict
    becomes the expected class for replay.
    """
    session = builder.session
    commands = builder.commands
    fresh = session.phase is Phase.FRESH
    choice = rng.choice(FRESH_VIOLATIONS if fresh else CONNECTED_VIOLATIONS)

    closing: list[Step] = []
    if choice == "publish_after_disconnect":
        disconnect = commands["disconnect"]
        action = bind(disconnect, rng)
        feedback = session.send_and_observe(action.frames[0], disconnect.expectation)
        if feedback.verdict is not Verdict.ACCEPTED:
            return None
        closing.append(Step(action=action, expected=COMMAND_EXPECTED, observed=feedback))
        violating = commands["publish_qos0"]
    elif choice == "duplicate_connect":
        violating = commands["connect"]
    else:
        violating = commands[choice.rsplit("_before_connect", 1)[0]]

    action = bind(violating, rng)
    feedback = session.send_and_observe(action.frames[0], violating.expectation)
    if feedback.verdict is Verdict.ACCEPTED:
        # the SUT tolerated what 3.1.1 forbids; not usable as a negative end
        return None
    if feedback.verdict is Verdict.SUT_DOWN:
        raise SutDownError("SUT went down while probing a violation")
    closing.append(
        Step(action=action, expected=frozenset({feedback.verdict}), observed=feedback)
    )
    return closing


def _build_case(
    factory: HarnessFactory,
    rng: random.Random,
    catalog: list[Command],
    pool: list[tuple[AttackPattern, float]],
    cfg: GenConfig,
    kind: CaseKind,
    case_id: str,
    monitor=None,
) -> TestCase:
    last_error = "empty sequence"
    for _attempt in range(MAX_CASE_RETRIES):
        factory.reset()
        builder = SequenceBuilder(factory, rng, catalog, pool, cfg, monitor)
        try:
            if kind is CaseKind.NEGATIVE:
                target_prefix = rng.randint(0, cfg.max_length - 1)
                if target_prefix > 0:
                    while len(builder.steps) < target_prefix and not builder.exhausted():
                        if builder.extend(CaseKind.POSITIVE) is None and builder.session.phase is Phase.CLOSED:
                            break
                closing = _negative_violation_steps(builder, rng)
                if closing is not None:
                    return TestCase(case_id, kind, tuple(builder.steps + closing))
                last_error = "no violation produced a non-Accepted verdict"
                continue

            has_attack = False
            while len(builder.steps) < cfg.max_length and not builder.exhausted():
                force = (
                    kind is CaseKind.ATTACK
                    and not has_attack
                    and len(builder.steps) == cfg.max_length - 1
                )
                step = builder.extend(kind, force_attack=force)
                if step is not None and step.action.kind == "attack":
                    has_attack = True
            if kind is CaseKind.ATTACK and not has_attack:
                last_error = "no attack step could be appended"
                continue
            if builder.steps:
                return TestCase(case_id, kind, tuple(builder.steps))
            last_error = f"rejection budget exhausted after {cfg.rejection_budget} candidates"
        finally:
            builder.close()
    raise GenerationAborted(f"could not build {case_id}: {last_error}")


def environment_doc(factory: HarnessFactory) -> dict:
    target = factory.target
    doc: dict = {"protocol": PROTOCOL_VERSION, "target": target.kind}
    if target.kind == "embedded":
        doc["broker"] = target.broker.to_dict()
    else:
        doc["endpoint"] = f"{target.host}:{target.port}"
    return doc


def generate_suite(
    cfg: GenConfig,
    catalog: list[Command],
    pool: list[tuple[AttackPattern, float]],
    factory: HarnessFactory,
    threat_digest: str = "none",
    monitor=None,
) -> TestSuite:
    """Generate num_positive + num_negative + num_attack cases.

    Each case runs on its own fresh session (and, for the embedded
    target, a fresh broker instance). Attack cases are only produced when
    the threat-gated pool is non-empty. SutDown aborts with the partial
    suite attached.
    """
    environment = environment_doc(factory)
    env_digest = digest_of_doc(environment)
    provenance = Provenance(
        seed=cfg.seed,
        config_digest=digest_of_doc(cfg.to_dict()),
        threat_digest=threat_digest,
        environment_digest=env_digest,
    )
    suite_id = "suite-" + digest_of_doc(
        {
            "seed": cfg.seed,
            "config": provenance.config_digest,
            "threats": threat_digest,
            "environment": env_digest,
        }
    )[:12]

    num_attack = cfg.num_attack if pool else 0
    plan = (
        [(CaseKind.POSITIVE, i) for i in range(cfg.num_positive)]
        + [(CaseKind.NEGATIVE, i) for i in range(cfg.num_negative)]
        + [(CaseKind.ATTACK, i) for i in range(num_attack)]
    )
    cases: list[TestCase] = []
    for case_index, (kind, ordinal) in enumerate(plan):
        case_id = f"{kind.value}-{ordinal:03d}"
        rng = case_rng(cfg.seed, case_index)
        try:
            cases.append(
                _build_case(factory, rng, catalog, pool, cfg, kind, case_id, monitor)
            )
        except (SutDownError, GenerationAborted) as exc:
            partial = TestSuite(
                suite_id=suite_id,
                provenance=provenance,
                environment=environment,
                cases=tuple(cases),
            )
            raise GenerationAborted(f"{case_id}: {exc}", partial=partial) from exc
    suite = TestSuite(
        suite_id=suite_id, provenance=provenance, environment=environment, cases=tuple(cases)
    )
    problems = validate_suite(suite)
    if problems:
        raise GenerationAborted("generated suite violates shape invariants: " + "; ".join(problems))
    return suite
