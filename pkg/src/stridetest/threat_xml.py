"""Byte-stable XML serialization of scored threat lists.

The document is the contract between threat derivation and test
generation: root ``<threats version="1">`` with one ``<threat>`` per
finding carrying, in this fixed order, the attributes id, template,
element, category, likelihood, impact, score, selected. Export is
byte-identical for identical input; import is its inverse.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from xml.sax.saxutils import quoteattr

from .errors import StridetestError
from .risk import ScoredThreat
from .threats import StrideCategory, Threat

_HEADER = b'<?xml version="1.0" encoding="UTF-8"?>\n'


class ThreatXmlParseError(StridetestError):
    """Not well-formed XML; message carries line and column."""


class ThreatXmlSchemaError(StridetestError):
    """Well-formed XML that violates the threat-list schema."""


def export_threats(threats: list[ScoredThreat]) -> bytes:
    """Serialize a threat list sorted by threat id. UTF-8, LF endings."""
    ids = [t.threat.threat_id for t in threats]
    if ids != sorted(ids):
        raise ValueError("export_threats requires input sorted by threat_id")
    if not threats:
        return _HEADER + b'<threats version="1"/>\n'
    lines = ['<threats version="1">']
    for item in threats:
        t = item.threat
        attrs = " ".join(
            f"{key}={quoteattr(value)}"
            for key, value in (
                ("id", t.threat_id),
                ("template", t.template_id),
                ("element", t.element_id),
                ("category", t.category.value),
                ("likelihood", str(item.likelihood)),
                ("impact", str(item.impact)),
                ("score", str(item.score)),
                ("selected", "true" if item.selected else "false"),
            )
        )
        lines.append(f"  <threat {attrs}/>")
    lines.append("</threats>")
    return _HEADER + "\n".join(lines).encode("utf-8") + b"\n"


def _require(node: ET.Element, attr: str) -> str:
    value = node.get(attr)
    if value is None:
        raise ThreatXmlSchemaError(
            f"<threat id={node.get('id', '?')!r}> is missing the {attr!r} attribute"
        )
    return value


def _scale(node: ET.Element, attr: str) -> int:
    raw = _require(node, attr)
    try:
        value = int(raw)
    except ValueError:
        raise ThreatXmlSchemaError(
            f"<threat id={node.get('id', '?')!r}>: {attr}={raw!r} is not an integer"
        ) from None
    if not 1 <= value <= 5:
        raise ThreatXmlSchemaError(
            f"<threat id={node.get('id', '?')!r}>: {attr}={value} out of range 1..5"
        )
    return value


def import_threats(data: bytes) -> list[ScoredThreat]:
    """Parse a threat-list document; inverse of export_threats."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position
        raise ThreatXmlParseError(
            f"malformed XML at line {line}, column {column}: {exc.msg}"
        ) from exc
    if root.tag != "threats":
        raise ThreatXmlSchemaError(f"expected <threats> root, found <{root.tag}>")
    if root.get("version") != "1":
        raise ThreatXmlSchemaError(f"unsupported threats version {root.get('version')!r}")
    categories = {c.value: c for c in StrideCategory}
    result: list[ScoredThreat] = []
    for node in root:
        if node.tag != "threat":
            raise ThreatXmlSchemaError(f"unexpected <{node.tag}> in <threats>")
        category_name = _require(node, "category")
        if category_name not in categories:
            raise ThreatXmlSchemaError(
                f"<threat id={node.get('id', '?')!r}>: "
                f"{category_name!r} is not a STRIDE category"
            )
        likelihood = _scale(node, "likelihood")
        impact = _scale(node, "impact")
        score_raw = _require(node, "score")
        try:
            score = int(score_raw)
        except ValueError:
            raise ThreatXmlSchemaError(
                f"<threat id={node.get('id', '?')!r}>: score={score_raw!r} is not an integer"
            ) from None
        if score != likelihood * impact:
            raise ThreatXmlSchemaError(
                f"<threat id={node.get('id', '?')!r}>: score {score} != "
                f"likelihood {likelihood} x impact {impact}"
            )
        selected_raw = _require(node, "selected")
        if selected_raw not in ("true", "false"):
            raise ThreatXmlSchemaError(
                f"<threat id={node.get('id', '?')!r}>: selected={selected_raw!r} "
                "must be 'true' or 'false'"
            )
        threat_id = _require(node, "id")
        template_id = _require(node, "template")
        element_id = _require(node, "element")
        result.append(
            ScoredThreat(
                threat=Threat(
                    threat_id=threat_id,
                    template_id=template_id,
                    element_id=element_id,
                    category=categories[category_name],
                    title=node.get("title", ""),
                ),
                likelihood=likelihood,
                impact=impact,
                selected=selected_raw == "true",
            )
        )
    return result
