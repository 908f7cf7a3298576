"""Report synthesis: structured findings to a deterministic draft.

Sentences are filled from a fixed template table in a fixed order
(optic disc, macula, vessels) with numbers rendered to two decimals, so
equal findings always produce byte-equal text. Drafts are immutable;
approval returns a new value and is terminal. An edited text never
overwrites the machine text - both are kept for audit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum

from .classifier import MaculaFindings, OnhFindings, VesselFindings
from .errors import EmptyReportError, StateError, ValidationError

DEFAULT_TEMPLATES = {
    "onh": "Optic disc: {shape} shape (eccentricity {eccentricity:.2f}).",
    "onh_absent": "Optic disc: not assessed.",
    "macula": "Macula: foveal reflex {reflex}.",
    "macula_absent": "Macula: not assessed.",
    "vessels": "Vessels: artery caliber {caliber}; artery-to-vein ratio {avr:.2f}.",
    "vessels_indeterminate": (
        "Vessels: caliber not normalized (optic disc unavailable); "
        "artery-to-vein ratio {avr:.2f}."
    ),
    "vessels_absent": "Vessels: not assessed.",
}

_SHAPE_PHRASES = {
    "round": "round",
    "oval_vertical": "vertically oval",
    "oval_horizontal": "horizontally oval",
}


class ReportStatus(str, Enum):
    DRAFT = "draft"
    APPROVED = "approved"


@dataclass(frozen=True)
class SectionProvenance:
    backend: str
    timestamp: str

    def to_json(self) -> dict:
        return {"backend": self.backend, "timestamp": self.timestamp}


@dataclass(frozen=True)
class ReportDraft:
    report_id: str
    image_id: str
    onh: OnhFindings | None
    macula: MaculaFindings | None
    vessels: VesselFindings | None
    text: str
    status: ReportStatus = ReportStatus.DRAFT
    provenance: dict = field(default_factory=dict)
    edited_text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "status", ReportStatus(self.status))
        for name in ("onh", "macula", "vessels"):
            if getattr(self, name) is not None and name not in self.provenance:
                raise ValidationError(f"populated section {name} lacks provenance")

    @property
    def final_text(self) -> str:
        if self.status == ReportStatus.APPROVED and self.edited_text is not None:
            return self.edited_text
        return self.text

    def to_json(self) -> dict:
        return {
            "report_id": self.report_id,
            "image_id": self.image_id,
            "sections": {
                "onh": self.onh.to_json() if self.onh else None,
                "macula": self.macula.to_json() if self.macula else None,
                "vessels": self.vessels.to_json() if self.vessels else None,
            },
            "text": self.text,
            "status": self.status.value,
            "provenance": {k: v.to_json() for k, v in self.provenance.items()},
            "edited_text": self.edited_text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReportDraft":
        sections = obj.get("sections", {})
        return cls(
            report_id=obj["report_id"],
            image_id=obj["image_id"],
            onh=OnhFindings.from_json(sections["onh"]) if sections.get("onh") else None,
            macula=MaculaFindings.from_json(sections["macula"]) if sections.get("macula") else None,
            vessels=VesselFindings.from_json(sections["vessels"]) if sections.get("vessels") else None,
            text=obj["text"],
            status=ReportStatus(obj["status"]),
            provenance={
                k: SectionProvenance(backend=v["backend"], timestamp=v["timestamp"])
                for k, v in obj.get("provenance", {}).items()
            },
            edited_text=obj.get("edited_text"),
        )


def _sentences(onh, macula, vessels, templates) -> list[str]:
    parts = []
    if onh is None:
        parts.append(templates["onh_absent"])
    else:
        parts.append(
            templates["onh"].format(
                shape=_SHAPE_PHRASES.get(onh.shape, onh.shape), eccentricity=onh.eccentricity
            )
        )
    if macula is None:
        parts.append(templates["macula_absent"])
    else:
        parts.append(templates["macula"].format(reflex=macula.reflex))
    if vessels is None:
        parts.append(templates["vessels_absent"])
    elif vessels.caliber == "indeterminate":
        parts.append(templates["vessels_indeterminate"].format(avr=vessels.avr))
    else:
        parts.append(templates["vessels"].format(caliber=vessels.caliber, avr=vessels.avr))
    return parts


def synthesize(
    onh: OnhFindings | None = None,
    macula: MaculaFindings | None = None,
    vessels: VesselFindings | None = None,
    image_id: str = "",
    templates: dict | None = None,
    timestamp: str | None = None,
) -> ReportDraft:
    """Fill the template table; at least one section must be present."""
    if onh is None and macula is None and vessels is None:
        raise EmptyReportError("no findings to report")
    templates = templates or DEFAULT_TEMPLATES
    text = " ".join(_sentences(onh, macula, vessels, templates))
    ts = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    provenance = {}
    for name, findings in (("onh", onh), ("macula", macula), ("vessels", vessels)):
        if findings is not None:
            provenance[name] = SectionProvenance(backend=findings.source_backend, timestamp=ts)
    report_id = hashlib.sha256(f"{image_id}:{text}".encode("utf-8")).hexdigest()[:16]
    return ReportDraft(
        report_id=report_id,
        image_id=image_id,
        onh=onh,
        macula=macula,
        vessels=vessels,
        text=text,
        provenance=provenance,
    )


def approve(report: ReportDraft, edited_text: str | None = None) -> ReportDraft:
    """Terminal transition; the original machine text is retained for audit."""
    if report.status != ReportStatus.DRAFT:
        raise StateError(f"report {report.report_id} is already {report.status.value}")
    return replace(report, status=ReportStatus.APPROVED, edited_text=edited_text)


def render_export(report: ReportDraft, format: str = "json") -> bytes:
    if format == "json":
        return (json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n").encode("utf-8")
    if format == "txt":
        return (report.final_text + "\n").encode("utf-8")
    raise ValidationError(f"unknown export format {format!r}")


def load_templates(path) -> dict:
    """Load an alternative template table (e.g. for localization)."""
    from pathlib import Path

    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    missing = set(DEFAULT_TEMPLATES) - set(obj)
    if missing:
        raise ValidationError(f"template table missing keys: {sorted(missing)}")
    return obj
