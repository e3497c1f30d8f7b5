"""Likelihood x impact risk scoring over derived threats.

A 5x5 multiplicative matrix: likelihood is looked up per STRIDE category,
impact per (category, element kind). Threats scoring at or above the
threshold are selected; selected threats translate into attack weights
that steer test generation (weight = score / 25, max rule across threats
sharing an attack).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dfd import DfdModel, ElementKind
from .errors import StridetestError
from .threats import StrideCategory, Threat, ThreatTemplate, default_templates

MAX_SCORE = 25
DEFAULT_LIKELIHOOD = 3
DEFAULT_IMPACT = 3


class MatrixConfigError(StridetestError):
    """Unparseable or out-of-range risk matrix configuration."""


def _check_scale(value: int, what: str) -> int:
    if not 1 <= value <= 5:
        raise MatrixConfigError(f"{what} must be in 1..5, got {value}")
    return value


@dataclass(frozen=True)
class RiskMatrix:
    """Total maps over the closed category/kind enums; defaults fill gaps."""

    likelihood_of: dict[StrideCategory, int] = field(default_factory=dict)
    impact_of: dict[tuple[StrideCategory, ElementKind], int] = field(default_factory=dict)
    threshold: int = 12

    def __post_init__(self):
        if not 1 <= self.threshold <= MAX_SCORE:
            raise MatrixConfigError(f"threshold must be in 1..25, got {self.threshold}")
        full_likelihood = {c: DEFAULT_LIKELIHOOD for c in StrideCategory}
        for category, value in self.likelihood_of.items():
            full_likelihood[category] = _check_scale(value, f"likelihood.{category.value}")
        full_impact = {(c, k): DEFAULT_IMPACT for c in StrideCategory for k in ElementKind}
        for (category, kind), value in self.impact_of.items():
            full_impact[(category, kind)] = _check_scale(
                value, f"impact.{category.value}.{kind.value}"
            )
        object.__setattr__(self, "likelihood_of", full_likelihood)
        object.__setattr__(self, "impact_of", full_impact)

    def likelihood(self, category: StrideCategory) -> int:
        return self.likelihood_of[category]

    def impact(self, category: StrideCategory, kind: ElementKind) -> int:
        return self.impact_of[(category, kind)]


def default_matrix() -> RiskMatrix:
    """Opinionated defaults for a network-facing pub/sub hub."""
    c = StrideCategory
    k = ElementKind
    return RiskMatrix(
        likelihood_of={
            c.SPOOFING: 4,
            c.TAMPERING: 3,
            c.REPUDIATION: 2,
            c.INFORMATION_DISCLOSURE: 3,
            c.DENIAL_OF_SERVICE: 4,
            c.ELEVATION_OF_PRIVILEGE: 2,
        },
        impact_of={
            (c.DENIAL_OF_SERVICE, k.PROCESS): 5,
            (c.DENIAL_OF_SERVICE, k.DATA_FLOW): 4,
            (c.SPOOFING, k.PROCESS): 4,
            (c.TAMPERING, k.DATA_FLOW): 4,
            (c.INFORMATION_DISCLOSURE, k.DATA_STORE): 5,
        },
        threshold=12,
    )


@dataclass(frozen=True)
class ScoredThreat:
    threat: Threat
    likelihood: int
    impact: int
    selected: bool

    @property
    def score(self) -> int:
        return self.likelihood * self.impact


def assess(threats: list[Threat], matrix: RiskMatrix, model: DfdModel) -> list[ScoredThreat]:
    """Score every threat through the matrix, preserving order.

    The model supplies each threat's element kind for the impact lookup.
    """
    kinds = model.kinds()
    scored: list[ScoredThreat] = []
    for threat in threats:
        likelihood = matrix.likelihood(threat.category)
        impact = matrix.impact(threat.category, kinds[threat.element_id])
        scored.append(
            ScoredThreat(
                threat=threat,
                likelihood=likelihood,
                impact=impact,
                selected=likelihood * impact >= matrix.threshold,
            )
        )
    return scored


def prioritized_weights(
    scored: list[ScoredThreat],
    templates: list[ThreatTemplate] | None = None,
) -> dict[str, float]:
    """Attack weights from selected threats, via template attack references.

    Each attack referenced by a selected threat's template gets
    ``max(score) / 25`` over the threats contributing to it, in (0, 1].
    Templates are looked up by the threat's template id; the built-in
    table is used when none are given.
    """
    by_id = {t.template_id: t for t in (templates if templates is not None else default_templates())}
    weights: dict[str, float] = {}
    for item in scored:
        if not item.selected:
            continue
        template = by_id.get(item.threat.template_id)
        if template is None:
            continue
        for attack_id in template.attack_pattern_refs:
            weight = item.score / MAX_SCORE
            if weight > weights.get(attack_id, 0.0):
                weights[attack_id] = weight
    return weights


_LIKELIHOOD_PREFIX = "likelihood."
_IMPACT_PREFIX = "impact."


def load_matrix(text: str) -> RiskMatrix:
    """Parse the line-oriented matrix config.

    ``likelihood.<Category> = n``, ``impact.<Category>.<Kind> = n``,
    ``threshold = n``; blank lines and ``#`` comments are ignored, unknown
    keys are errors.
    """
    categories = {c.value: c for c in StrideCategory}
    kinds = {k.value: k for k in ElementKind}
    likelihood: dict[StrideCategory, int] = {}
    impact: dict[tuple[StrideCategory, ElementKind], int] = {}
    threshold = default_matrix().threshold
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MatrixConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value_text = line.partition("=")
        key = key.strip()
        try:
            value = int(value_text.strip())
        except ValueError:
            raise MatrixConfigError(f"line {lineno}: value {value_text.strip()!r} is not an integer") from None
        if key == "threshold":
            threshold = value
        elif key.startswith(_LIKELIHOOD_PREFIX):
            name = key[len(_LIKELIHOOD_PREFIX) :]
            if name not in categories:
                raise MatrixConfigError(f"line {lineno}: {name!r} is not a STRIDE category")
            likelihood[categories[name]] = value
        elif key.startswith(_IMPACT_PREFIX):
            parts = key[len(_IMPACT_PREFIX) :].split(".")
            if len(parts) != 2:
                raise MatrixConfigError(f"line {lineno}: expected impact.<Category>.<Kind>")
            category_name, kind_name = parts
            if category_name not in categories:
                raise MatrixConfigError(f"line {lineno}: {category_name!r} is not a STRIDE category")
            if kind_name not in kinds:
                raise MatrixConfigError(f"line {lineno}: {kind_name!r} is not an element kind")
            impact[(categories[category_name], kinds[kind_name])] = value
        else:
            raise MatrixConfigError(f"line {lineno}: unknown key {key!r}")
    return RiskMatrix(likelihood_of=likelihood, impact_of=impact, threshold=threshold)


def load_matrix_file(path) -> RiskMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        return load_matrix(fh.read())
