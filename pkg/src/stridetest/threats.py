"""STRIDE threat templates and rule-based derivation over a DFD model.

A template binds one STRIDE category to the element kinds it applies to;
derivation is the cross product of templates and elements filtered by the
applicability predicate. Threat ids are deterministic
(``template_id@element_id``) so re-derivation is stable across runs and
regression-diffable.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum

from .dfd import DfdModel, ElementKind, crosses_boundary, validate
from .errors import StridetestError


class StrideCategory(Enum):
    SPOOFING = "Spoofing"
    TAMPERING = "Tampering"
    REPUDIATION = "Repudiation"
    INFORMATION_DISCLOSURE = "InformationDisclosure"
    DENIAL_OF_SERVICE = "DenialOfService"
    ELEVATION_OF_PRIVILEGE = "ElevationOfPrivilege"


class TemplateError(StridetestError):
    """Ill-formed threat template or template file."""


class InvalidModelError(StridetestError):
    """Derivation refused because the model has structural violations."""


@dataclass(frozen=True)
class ThreatTemplate:
    template_id: str
    category: StrideCategory
    applies_to: frozenset[ElementKind]
    title: str  # may contain the {element} placeholder
    description: str = ""
    requires_boundary_crossing: bool = False
    attack_pattern_refs: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.applies_to:
            raise TemplateError(f"template {self.template_id!r}: applies_to is empty")
        if self.requires_boundary_crossing and ElementKind.DATA_FLOW not in self.applies_to:
            raise TemplateError(
                f"template {self.template_id!r}: boundary crossing only applies to data flows"
            )


@dataclass(frozen=True)
class Threat:
    threat_id: str
    template_id: str
    element_id: str
    category: StrideCategory
    # presentation only, reconstructible from the template; not identity
    title: str = field(default="", compare=False)


def threat_id_for(template_id: str, element_id: str) -> str:
    return f"{template_id}@{element_id}"


def default_templates() -> list[ThreatTemplate]:
    """The canonical per-element-kind STRIDE applicability table.

    Process -> S,T,R,I,D,E; DataStore -> T,R,I,D; ExternalEntity -> S,R;
    DataFlow -> T,I,D. Attack references connect each category to the
    built-in attacks that exercise it.
    """
    process = ElementKind.PROCESS
    store = ElementKind.DATA_STORE
    entity = ElementKind.EXTERNAL_ENTITY
    flow = ElementKind.DATA_FLOW
    return [
        ThreatTemplate(
            template_id="spoofing",
            category=StrideCategory.SPOOFING,
            applies_to=frozenset({process, entity}),
            title="Identity spoofing against {element}",
            description="An attacker presents a forged identity to or as {element}.",
            attack_pattern_refs=("client_id_spoof",),
        ),
        ThreatTemplate(
            template_id="tampering",
            category=StrideCategory.TAMPERING,
            applies_to=frozenset({process, store, flow}),
            title="Tampering with {element}",
            description="Data handled by {element} is modified or malformed in transit.",
            attack_pattern_refs=("malformed_frame",),
        ),
        ThreatTemplate(
            template_id="repudiation",
            category=StrideCategory.REPUDIATION,
            applies_to=frozenset({process, store, entity}),
            title="Repudiation of actions involving {element}",
            description="Interactions with {element} cannot be attributed afterwards.",
        ),
        ThreatTemplate(
            template_id="info-disclosure",
            category=StrideCategory.INFORMATION_DISCLOSURE,
            applies_to=frozenset({process, store, flow}),
            title="Information disclosure at {element}",
            description="Data visible to {element} leaks to unauthorized parties.",
        ),
        ThreatTemplate(
            template_id="denial-of-service",
            category=StrideCategory.DENIAL_OF_SERVICE,
            applies_to=frozenset({process, store, flow}),
            title="Denial of service against {element}",
            description="{element} is overwhelmed or starved of resources.",
            attack_pattern_refs=("flood_publish", "flood_connect", "oversized_payload"),
        ),
        ThreatTemplate(
            template_id="elevation-of-privilege",
            category=StrideCategory.ELEVATION_OF_PRIVILEGE,
            applies_to=frozenset({process}),
            title="Privilege elevation through {element}",
            description="{element} grants capabilities beyond the caller's authorization.",
            attack_pattern_refs=("auth_bypass_probe",),
        ),
    ]


def applicable(template: ThreatTemplate, model: DfdModel, element) -> bool:
    if element.kind not in template.applies_to:
        return False
    if template.requires_boundary_crossing and not crosses_boundary(model, element):
        return False
    return True


def derive_threats(model: DfdModel, templates: list[ThreatTemplate]) -> list[Threat]:
    """All (template, element) pairs passing the applicability predicate.

    Output is sorted by (element_id, template_id) and free of duplicates;
    permuting the inputs cannot change it. Rejects invalid models.
    """
    violations = validate(model)
    if violations:
        summary = "; ".join(str(v) for v in violations)
        raise InvalidModelError(f"model has {len(violations)} violation(s): {summary}")
    found: dict[str, Threat] = {}
    for element in model.elements:
        for template in templates:
            if not applicable(template, model, element):
                continue
            tid = threat_id_for(template.template_id, element.id)
            found[tid] = Threat(
                threat_id=tid,
                template_id=template.template_id,
                element_id=element.id,
                category=template.category,
                title=template.title.replace("{element}", element.name),
            )
    return sorted(found.values(), key=lambda t: (t.element_id, t.template_id))


def load_templates(data: bytes) -> list[ThreatTemplate]:
    """Parse the versioned threat-template XML document."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position
        raise TemplateError(f"malformed XML at line {line}, column {column}: {exc.msg}") from exc
    if root.tag != "templates" or root.get("version") != "1":
        raise TemplateError("expected <templates version=\"1\"> root")
    categories = {c.value: c for c in StrideCategory}
    kinds = {k.value: k for k in ElementKind}
    templates: list[ThreatTemplate] = []
    for node in root:
        if node.tag != "template":
            raise TemplateError(f"unexpected <{node.tag}> in <templates>")
        template_id = node.get("id")
        category = node.get("category")
        title = node.get("title")
        if template_id is None or category is None or title is None:
            raise TemplateError("<template> requires id, category, and title attributes")
        if category not in categories:
            raise TemplateError(f"template {template_id!r}: {category!r} is not a STRIDE category")
        applies: set[ElementKind] = set()
        refs: list[str] = []
        description = ""
        for child in node:
            if child.tag == "applies-to":
                kind = child.get("kind")
                if kind not in kinds:
                    raise TemplateError(f"template {template_id!r}: unknown kind {kind!r}")
                applies.add(kinds[kind])
            elif child.tag == "attack":
                ref = child.get("ref")
                if not ref:
                    raise TemplateError(f"template {template_id!r}: <attack> requires ref")
                refs.append(ref)
            elif child.tag == "description":
                description = child.text or ""
            else:
                raise TemplateError(f"template {template_id!r}: unexpected <{child.tag}>")
        templates.append(
            ThreatTemplate(
                template_id=template_id,
                category=categories[category],
                applies_to=frozenset(applies),
                title=title,
                description=description,
                requires_boundary_crossing=node.get("requires-boundary-crossing") == "true",
                attack_pattern_refs=tuple(refs),
            )
        )
    return templates


def load_templates_file(path) -> list[ThreatTemplate]:
    with open(path, "rb") as fh:
        return load_templates(fh.read())
