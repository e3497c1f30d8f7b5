"""Data-flow-diagram model of the system under test.

A model is a flat list of elements (processes, data stores, external
entities, data flows, trust boundaries) plus an optional membership map
assigning elements to trust boundaries. ``validate`` reports every
structural violation as data; a model is well-formed iff the list is
empty.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum

from .errors import StridetestError


class ElementKind(Enum):
    PROCESS = "Process"
    DATA_STORE = "DataStore"
    EXTERNAL_ENTITY = "ExternalEntity"
    DATA_FLOW = "DataFlow"
    TRUST_BOUNDARY = "TrustBoundary"


NODE_KINDS = (ElementKind.PROCESS, ElementKind.DATA_STORE, ElementKind.EXTERNAL_ENTITY)


class DfdXmlError(StridetestError):
    """Unreadable or schema-violating DFD document."""


@dataclass(frozen=True)
class DfdElement:
    id: str
    name: str
    kind: ElementKind
    source_id: str | None = None  # data flows only
    target_id: str | None = None
    properties: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class DfdModel:
    elements: tuple[DfdElement, ...]
    boundary_membership: dict[str, str] = field(default_factory=dict)

    def element(self, element_id: str) -> DfdElement:
        for e in self.elements:
            if e.id == element_id:
                return e
        raise KeyError(element_id)

    def kinds(self) -> dict[str, ElementKind]:
        return {e.id: e.kind for e in self.elements}


@dataclass(frozen=True)
class Violation:
    element_id: str
    reason: str

    def __str__(self) -> str:
        return f"{self.element_id}: {self.reason}"


def validate(model: DfdModel) -> list[Violation]:
    """Every structural invariant violation; empty iff well-formed."""
    violations: list[Violation] = []
    seen: dict[str, DfdElement] = {}
    for e in model.elements:
        if e.id in seen:
            violations.append(Violation(e.id, f"duplicate id {e.id!r}"))
        else:
            seen[e.id] = e

    for e in model.elements:
        if e.kind is ElementKind.DATA_FLOW:
            for label, ref in (("source", e.source_id), ("target", e.target_id)):
                if ref is None:
                    violations.append(Violation(e.id, f"flow is missing a {label}"))
                elif ref not in seen:
                    violations.append(
                        Violation(e.id, f"dangling {label} endpoint {ref!r}")
                    )
                elif seen[ref].kind not in NODE_KINDS:
                    violations.append(
                        Violation(
                            e.id,
                            f"{label} endpoint {ref!r} is a {seen[ref].kind.value}, "
                            "not a process, data store, or external entity",
                        )
                    )
            if e.source_id is not None and e.source_id == e.target_id:
                violations.append(Violation(e.id, "flow endpoints must be distinct"))
        elif e.source_id is not None or e.target_id is not None:
            violations.append(Violation(e.id, "only data flows carry endpoints"))

    for element_id, boundary_id in sorted(model.boundary_membership.items()):
        if element_id not in seen:
            violations.append(
                Violation(element_id, f"membership references unknown element {element_id!r}")
            )
        if boundary_id not in seen:
            violations.append(
                Violation(element_id, f"membership references unknown boundary {boundary_id!r}")
            )
        elif seen[boundary_id].kind is not ElementKind.TRUST_BOUNDARY:
            violations.append(
                Violation(
                    element_id,
                    f"membership target {boundary_id!r} is not a trust boundary",
                )
            )
    return violations


def crosses_boundary(model: DfdModel, element: DfdElement) -> bool:
    """A flow crosses iff its endpoints sit in different trust zones.

    Elements without a membership entry share the implicit outside zone;
    non-flow elements never cross.
    """
    if element.kind is not ElementKind.DATA_FLOW:
        return False
    source_zone = model.boundary_membership.get(element.source_id or "")
    target_zone = model.boundary_membership.get(element.target_id or "")
    return source_zone != target_zone


def load_model(data: bytes) -> DfdModel:
    """Parse the versioned DFD XML document."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position
        raise DfdXmlError(f"malformed XML at line {line}, column {column}: {exc.msg}") from exc
    if root.tag != "dfd":
        raise DfdXmlError(f"expected <dfd> root, found <{root.tag}>")
    if root.get("version") != "1":
        raise DfdXmlError(f"unsupported dfd version {root.get('version')!r}")

    elements: list[DfdElement] = []
    membership: dict[str, str] = {}
    node_kinds = {k.value: k for k in NODE_KINDS}
    for child in root:
        if child.tag == "element":
            element_id, kind, name = child.get("id"), child.get("kind"), child.get("name")
            if element_id is None or kind is None or name is None:
                raise DfdXmlError("<element> requires id, kind, and name attributes")
            if kind not in node_kinds:
                raise DfdXmlError(f"element {element_id!r}: unknown kind {kind!r}")
            properties = {}
            for prop in child:
                if prop.tag != "property" or prop.get("key") is None or prop.get("value") is None:
                    raise DfdXmlError(f"element {element_id!r}: bad <property> child")
                properties[prop.get("key")] = prop.get("value")
            elements.append(
                DfdElement(id=element_id, name=name, kind=node_kinds[kind], properties=properties)
            )
        elif child.tag == "flow":
            flow_id = child.get("id")
            if flow_id is None or child.get("source") is None or child.get("target") is None:
                raise DfdXmlError("<flow> requires id, source, and target attributes")
            properties = {}
            for prop in child:
                if prop.tag != "property" or prop.get("key") is None or prop.get("value") is None:
                    raise DfdXmlError(f"flow {flow_id!r}: bad <property> child")
                properties[prop.get("key")] = prop.get("value")
            elements.append(
                DfdElement(
                    id=flow_id,
                    name=child.get("name", flow_id),
                    kind=ElementKind.DATA_FLOW,
                    source_id=child.get("source"),
                    target_id=child.get("target"),
                    properties=properties,
                )
            )
        elif child.tag == "boundary":
            boundary_id = child.get("id")
            if boundary_id is None:
                raise DfdXmlError("<boundary> requires an id attribute")
            elements.append(
                DfdElement(
                    id=boundary_id,
                    name=child.get("name", boundary_id),
                    kind=ElementKind.TRUST_BOUNDARY,
                )
            )
        elif child.tag == "membership":
            element_ref, boundary_ref = child.get("element"), child.get("boundary")
            if element_ref is None or boundary_ref is None:
                raise DfdXmlError("<membership> requires element and boundary attributes")
            membership[element_ref] = boundary_ref
        else:
            raise DfdXmlError(f"unexpected <{child.tag}> in <dfd>")
    return DfdModel(elements=tuple(elements), boundary_membership=membership)


def load_model_file(path) -> DfdModel:
    with open(path, "rb") as fh:
        return load_model(fh.read())
