"""Test case and suite types plus their persisted JSON form.

The suite file is the contract between generation and execution: stable
key order, UTF-8, hex-encoded frames, and a self-digest so tampering is
detected before replay. Generation-time feedback stays in memory; the
file carries exactly what replay needs (actions, frames, expected verdict
classes, provenance digests).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

from .catalog import BoundAction
from .errors import StridetestError, UsageError
from .harness import Feedback, Verdict

SUITE_FORMAT = "stridetest-suite/1"


class SuiteIntegrityError(StridetestError):
    """Suite document digest mismatch or structural corruption."""


class CaseKind(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    ATTACK = "attack"


@dataclass(frozen=True)
class Step:
    action: BoundAction
    expected: frozenset[Verdict]
    observed: Feedback | None = field(default=None, compare=False)


@dataclass(frozen=True)
class TestCase:
    case_id: str
    kind: CaseKind
    steps: tuple[Step, ...]


@dataclass(frozen=True)
class Provenance:
    seed: int
    config_digest: str
    threat_digest: str
    environment_digest: str


@dataclass(frozen=True)
class TestSuite:
    suite_id: str
    provenance: Provenance
    environment: dict
    cases: tuple[TestCase, ...]


def canonical_json_bytes(doc: dict) -> bytes:
    return (json.dumps(doc, indent=2, ensure_ascii=True, sort_keys=False) + "\n").encode("ascii")


def digest_of(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_of_doc(doc) -> str:
    return digest_of(json.dumps(doc, sort_keys=True, ensure_ascii=True).encode("ascii"))


def validate_suite(suite: TestSuite) -> list[str]:
    """Shape invariants; empty list iff the suite is well-formed."""
    problems: list[str] = []
    seen: set[str] = set()
    for case in suite.cases:
        if case.case_id in seen:
            problems.append(f"duplicate case id {case.case_id!r}")
        seen.add(case.case_id)
        if not case.steps:
            problems.append(f"{case.case_id}: empty case")
            continue
        if case.kind is CaseKind.POSITIVE:
            if any(step.expected != frozenset({Verdict.ACCEPTED}) for step in case.steps):
                problems.append(f"{case.case_id}: positive case with non-Accepted expectation")
        elif case.kind is CaseKind.NEGATIVE:
            *prefix, last = case.steps
            if any(step.expected != frozenset({Verdict.ACCEPTED}) for step in prefix):
                problems.append(f"{case.case_id}: non-Accepted expectation before the final step")
            allowed = {Verdict.REJECTED, Verdict.CONNECTION_CLOSED, Verdict.NO_RESPONSE}
            if not last.expected or not last.expected <= allowed:
                problems.append(f"{case.case_id}: final step must expect a rejection-class verdict")
        else:
            if not any(step.action.kind == "attack" for step in case.steps):
                problems.append(f"{case.case_id}: attack case without an attack step")
    return problems


def _step_doc(step: Step) -> dict:
    return {
        "action": step.action.kind,
        "name": step.action.name,
        "params": dict(sorted(step.action.params.items())),
        "frames": [f.hex() for f in step.action.frames],
        "expected": sorted(v.value for v in step.expected),
    }


def _case_doc(case: TestCase) -> dict:
    return {
        "case_id": case.case_id,
        "kind": case.kind.value,
        "steps": [_step_doc(s) for s in case.steps],
    }


def suite_doc(suite: TestSuite) -> dict:
    doc = {
        "format": SUITE_FORMAT,
        "suite_id": suite.suite_id,
        "digest": "",
        "provenance": {
            "seed": suite.provenance.seed,
            "config_digest": suite.provenance.config_digest,
            "threat_digest": suite.provenance.threat_digest,
            "environment_digest": suite.provenance.environment_digest,
        },
        "environment": suite.environment,
        "cases": [_case_doc(c) for c in suite.cases],
    }
    doc["digest"] = digest_of_doc(doc)
    return doc


def dump_suite(suite: TestSuite) -> bytes:
    return canonical_json_bytes(suite_doc(suite))


def _parse_step(doc: dict, where: str) -> Step:
    try:
        action = BoundAction(
            kind=doc["action"],
            name=doc["name"],
            params=dict(doc["params"]),
            frames=tuple(bytes.fromhex(f) for f in doc["frames"]),
        )
        expected = frozenset(Verdict(v) for v in doc["expected"])
    except (KeyError, ValueError) as exc:
        raise SuiteIntegrityError(f"{where}: bad step record: {exc}") from exc
    return Step(action=action, expected=expected)


def load_suite(data: bytes) -> TestSuite:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SuiteIntegrityError(f"suite file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != SUITE_FORMAT:
        raise SuiteIntegrityError(f"not a {SUITE_FORMAT} document")
    claimed = doc.get("digest", "")
    checked = dict(doc)
    checked["digest"] = ""
    if digest_of_doc(checked) != claimed:
        raise SuiteIntegrityError("suite digest mismatch: file was modified after generation")
    try:
        provenance = Provenance(
            seed=int(doc["provenance"]["seed"]),
            config_digest=doc["provenance"]["config_digest"],
            threat_digest=doc["provenance"]["threat_digest"],
            environment_digest=doc["provenance"]["environment_digest"],
        )
        cases = tuple(
            TestCase(
                case_id=case["case_id"],
                kind=CaseKind(case["kind"]),
                steps=tuple(
                    _parse_step(step, case["case_id"]) for step in case["steps"]
                ),
            )
            for case in doc["cases"]
        )
    except (KeyError, ValueError) as exc:
        raise SuiteIntegrityError(f"bad suite structure: {exc}") from exc
    suite = TestSuite(
        suite_id=doc["suite_id"],
        provenance=provenance,
        environment=dict(doc["environment"]),
        cases=cases,
    )
    problems = validate_suite(suite)
    if problems:
        raise SuiteIntegrityError("; ".join(problems))
    return suite


def write_suite_file(suite: TestSuite, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_suite(suite))


def load_suite_file(path) -> TestSuite:
    try:
        with open(path, "rb") as fh:
            return load_suite(fh.read())
    except FileNotFoundError as exc:
        raise UsageError(f"suite file not found: {path}") from exc
