"""Replay persisted suites against a target and diff the outcomes.

Execution is a separate step from generation: every case gets a fresh
session (and a fresh embedded broker instance), regular steps resend
their recorded frames byte-exactly, attack steps re-execute their pattern
from the recorded parameters. The SUT is liveness-probed before each
case, after every failure, and from inside flooding attacks; all probes
land in the report's liveness timeline.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from .attacks import AttackPattern, builtin_attacks, library_by_id
from .catalog import Command, catalog_by_name, default_commands
from .errors import StridetestError, SutDownError, UsageError
from .harness import Feedback, HarnessFactory, Verdict, probe_liveness
from .suites import (
    Step,
    TestCase,
    TestSuite,
    canonical_json_bytes,
    digest_of_doc,
    suite_doc,
)
from .generator import environment_doc

logger = logging.getLogger(__name__)

REPORT_FORMAT = "stridetest-report/1"
RECOVERY_PROBES = 3

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2


class Outcome(Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class ReportError(StridetestError):
    """Unreadable or structurally invalid report document."""


@dataclass(frozen=True)
class StepResult:
    index: int
    action_kind: str
    action_name: str
    expected: frozenset[Verdict]
    observed: Verdict | None  # None when the step never ran (SUT down)
    latency_ms: int
    outcome: Outcome
    robust: bool = True  # attack steps: verdict within the robust class


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    kind: str
    steps: tuple[StepResult, ...]

    @property
    def outcome(self) -> Outcome:
        if any(s.outcome is Outcome.FAIL for s in self.steps):
            return Outcome.FAIL
        if any(s.outcome is Outcome.INCONCLUSIVE for s in self.steps):
            return Outcome.INCONCLUSIVE
        return Outcome.PASS


@dataclass(frozen=True)
class LivenessProbe:
    at: str  # ISO timestamp
    alive: bool
    context: str


@dataclass
class ExecutionReport:
    suite_id: str
    suite_digest: str
    target: str
    environment_digest: str
    suite_environment_digest: str
    environment_mismatch: bool
    started_at: str
    duration_ms: int = 0
    cases: list[CaseResult] = field(default_factory=list)
    liveness: list[LivenessProbe] = field(default_factory=list)

    def summary(self) -> dict:
        counts = {"pass": 0, "fail": 0, "inconclusive": 0}
        steps = 0
        for case in self.cases:
            counts[case.outcome.value] += 1
            steps += len(case.steps)
        return {
            "cases": len(self.cases),
            "steps": steps,
            "pass": counts["pass"],
            "fail": counts["fail"],
            "inconclusive": counts["inconclusive"],
        }

    def exit_code(self) -> int:
        summary = self.summary()
        if summary["inconclusive"]:
            return EXIT_ERROR
        if summary["fail"] and not self.environment_mismatch:
            return EXIT_FAIL
        return EXIT_PASS


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class _Monitor:
    """Collects liveness probes into the report timeline."""

    def __init__(self, factory: HarnessFactory):
        self.factory = factory
        self.timeline: list[LivenessProbe] = []

    def __call__(self, context: str) -> bool:
        alive = probe_liveness(self.factory)
        self.timeline.append(LivenessProbe(at=_now_iso(), alive=alive, context=context))
        return alive


def _replay_step(
    step: Step,
    index: int,
    session,
    factory: HarnessFactory,
    commands: dict[str, Command],
    library: dict[str, AttackPattern],
    monitor: _Monitor,
) -> StepResult:
    action = step.action
    if action.kind == "command":
        command = commands.get(action.name)
        if command is None:
            raise UsageError(f"suite references unknown command {action.name!r}")
        feedback = session.send_and_observe(action.frames[0], command.expectation)
        robust = True
    else:
        attack = library.get(action.name)
        if attack is None:
            raise UsageError(f"suite references unknown attack {action.name!r}")
        feedback = attack.run(session, action, factory.open_session, monitor)
        robust = feedback.verdict in attack.expected_verdicts
    outcome = Outcome.PASS if feedback.verdict in step.expected else Outcome.FAIL
    return StepResult(
        index=index,
        action_kind=action.kind,
        action_name=action.name,
        expected=step.expected,
        observed=feedback.verdict,
        latency_ms=feedback.latency_ms,
        outcome=outcome,
        robust=robust,
    )


def _inconclusive(step: Step, index: int) -> StepResult:
    return StepResult(
        index=index,
        action_kind=step.action.kind,
        action_name=step.action.name,
        expected=step.expected,
        observed=None,
        latency_ms=0,
        outcome=Outcome.INCONCLUSIVE,
    )


def _run_case(
    case: TestCase,
    factory: HarnessFactory,
    commands: dict[str, Command],
    library: dict[str, AttackPattern],
    monitor: _Monitor,
) -> CaseResult:
    factory.reset()
    session = factory.open_session()
    results: list[StepResult] = []
    down_at: int | None = None
    try:
        for index, step in enumerate(case.steps):
            if down_at is not None:
                results.append(_inconclusive(step, index))
                continue
            try:
                result = _replay_step(step, index, session, factory, commands, library, monitor)
            except SutDownError:
                down_at = index
                results.append(_inconclusive(step, index))
                continue
            results.append(result)
            if result.outcome is Outcome.FAIL:
                alive = monitor(f"after failure in {case.case_id} step {index}")
                if not alive:
                    down_at = index + 1
    finally:
        session.close()
    return CaseResult(case_id=case.case_id, kind=case.kind.value, steps=tuple(results))


def run_suite(
    suite: TestSuite,
    factory: HarnessFactory,
    catalog: list[Command] | None = None,
    library: list[AttackPattern] | None = None,
) -> ExecutionReport:
    """Replay every case; the report is complete even when cases fail.

    Refuses to start when the initial liveness probe fails; a mid-run
    SUT outage marks the remaining steps of the current case
    inconclusive and retries a bounded number of recovery probes before
    each following case.
    """
    commands = catalog_by_name(catalog if catalog is not None else default_commands())
    attack_index = library_by_id(library if library is not None else builtin_attacks())

    environment = environment_doc(factory)
    env_digest = digest_of_doc(environment)
    suite_env_digest = suite.provenance.environment_digest
    monitor = _Monitor(factory)

    if not monitor("initial probe"):
        raise SutDownError(f"target {factory.target.describe()} failed the initial liveness probe")

    report = ExecutionReport(
        suite_id=suite.suite_id,
        suite_digest=suite_doc(suite)["digest"],
        target=factory.target.describe(),
        environment_digest=env_digest,
        suite_environment_digest=suite_env_digest,
        environment_mismatch=env_digest != suite_env_digest,
        started_at=_now_iso(),
    )
    start = time.monotonic()
    for case in suite.cases:
        alive = monitor(f"before {case.case_id}")
        retries = 0
        while not alive and retries < RECOVERY_PROBES:
            retries += 1
            alive = monitor(f"recovery probe {retries} before {case.case_id}")
        if not alive:
            report.cases.append(
                CaseResult(
                    case_id=case.case_id,
                    kind=case.kind.value,
                    steps=tuple(_inconclusive(s, i) for i, s in enumerate(case.steps)),
                )
            )
            continue
        report.cases.append(_run_case(case, factory, commands, attack_index, monitor))
    report.duration_ms = int((time.monotonic() - start) * 1000)
    report.liveness = monitor.timeline
    return report


# --- report serialization ----------------------------------------------


def report_doc(report: ExecutionReport) -> dict:
    return {
        "format": REPORT_FORMAT,
        "suite_id": report.suite_id,
        "suite_digest": report.suite_digest,
        "target": report.target,
        "environment_digest": report.environment_digest,
        "suite_environment_digest": report.suite_environment_digest,
        "environment_mismatch": report.environment_mismatch,
        "started_at": report.started_at,
        "duration_ms": report.duration_ms,
        "summary": report.summary(),
        "cases": [
            {
                "case_id": case.case_id,
                "kind": case.kind,
                "outcome": case.outcome.value,
                "steps": [
                    {
                        "index": s.index,
                        "action": s.action_kind,
                        "name": s.action_name,
                        "expected": sorted(v.value for v in s.expected),
                        "observed": s.observed.value if s.observed else None,
                        "latency_ms": s.latency_ms,
                        "outcome": s.outcome.value,
                        "robust": s.robust,
                    }
                    for s in case.steps
                ],
            }
            for case in report.cases
        ],
        "liveness": [
            {"at": p.at, "alive": p.alive, "context": p.context} for p in report.liveness
        ],
    }


def dump_report(report: ExecutionReport) -> bytes:
    return canonical_json_bytes(report_doc(report))


def write_report_file(report: ExecutionReport, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_report(report))


def load_report_doc(data: bytes) -> dict:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ReportError(f"report file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != REPORT_FORMAT:
        raise ReportError(f"not a {REPORT_FORMAT} document")
    return doc


def load_report_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return load_report_doc(fh.read())
    except FileNotFoundError as exc:
        raise UsageError(f"report file not found: {path}") from exc


# --- regression diffing -------------------------------------------------


def diff_reports(a: dict, b: dict) -> dict:
    """Every (case, step) whose outcome differs, grouped by case.

    Works on report documents so persisted reports from different runs
    and environments diff directly. Same suite only.
    """
    if a.get("suite_id") != b.get("suite_id"):
        raise UsageError(
            f"reports belong to different suites: {a.get('suite_id')!r} vs {b.get('suite_id')!r}"
        )
    differences = []
    cases_a = {c["case_id"]: c for c in a.get("cases", [])}
    cases_b = {c["case_id"]: c for c in b.get("cases", [])}
    for case_id in sorted(set(cases_a) | set(cases_b)):
        case_a = cases_a.get(case_id)
        case_b = cases_b.get(case_id)
        if case_a is None or case_b is None:
            differences.append(
                {
                    "case_id": case_id,
                    "missing_in": "a" if case_a is None else "b",
                    "steps": [],
                }
            )
            continue
        steps = []
        steps_a = {s["index"]: s for s in case_a["steps"]}
        steps_b = {s["index"]: s for s in case_b["steps"]}
        for index in sorted(set(steps_a) | set(steps_b)):
            sa = steps_a.get(index)
            sb = steps_b.get(index)
            outcome_a = sa["outcome"] if sa else "absent"
            outcome_b = sb["outcome"] if sb else "absent"
            if outcome_a != outcome_b:
                steps.append(
                    {
                        "index": index,
                        "name": (sa or sb)["name"],
                        "a": outcome_a,
                        "b": outcome_b,
                        "a_observed": sa.get("observed") if sa else None,
                        "b_observed": sb.get("observed") if sb else None,
                    }
                )
        if steps:
            differences.append({"case_id": case_id, "steps": steps})
    return {"suite_id": a.get("suite_id"), "differences": differences}


def dump_diff(diff: dict) -> bytes:
    return canonical_json_bytes(diff)
