"""Per-structure analysis runners shared by the CLI and the service graph.

Each structure is analyzable independently from the raw image (the macula
runner re-derives the ONH location itself), which is what lets the services
fan out without ordering constraints. Only the vessels caliber step takes
optional disc findings, the one cross-analysis edge.

`artifact_files` is the single serialization point for per-image outputs;
because every deployment mode goes through it, masks and report text are
byte-identical across CLI, single-process and multi-process runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .classifier import (
    MaculaFindings,
    OnhFindings,
    VesselFindings,
    classify_artery_caliber,
    classify_macular_reflex,
    classify_onh_shape,
    make_input,
)
from .config import EyasConfig
from .core import io as core_io
from .core.types import BinaryMask, EllipseFit, FundusImage, RoiBox, VesselMask
from .errors import EyasError
from .localizer import locate_macula, locate_onh
from .reporter import ReportDraft, synthesize
from .segmenter import BackendRegistry, default_registry, fit_ellipse, segment_macula, segment_onh, segment_vessels


@dataclass(frozen=True)
class OnhResult:
    roi: RoiBox
    mask: BinaryMask
    ellipse: EllipseFit
    findings: OnhFindings

    @property
    def disc_center(self) -> tuple[float, float]:
        return (self.ellipse.cx, self.ellipse.cy)


@dataclass(frozen=True)
class MaculaResult:
    roi: RoiBox
    mask: BinaryMask
    findings: MaculaFindings


@dataclass(frozen=True)
class VesselsResult:
    mask: VesselMask
    findings: VesselFindings


def _backend_spec(config: EyasConfig, structure: str, override=None) -> str:
    return override or config.backends.get(structure, "builtin@1.0.0")


def run_onh(
    img: FundusImage,
    config: EyasConfig = EyasConfig(),
    registry: BackendRegistry | None = None,
    backend: str | None = None,
) -> OnhResult:
    spec = _backend_spec(config, "onh", backend)
    roi = locate_onh(img, config)
    mask = segment_onh(img, roi, backend=spec, config=config, registry=registry)
    ellipse = fit_ellipse(mask)
    findings = classify_onh_shape(
        make_input(img, roi=roi, mask=mask, format="mask"), config, source_backend=spec
    )
    return OnhResult(roi=roi, mask=mask, ellipse=ellipse, findings=findings)


def run_macula(
    img: FundusImage,
    config: EyasConfig = EyasConfig(),
    registry: BackendRegistry | None = None,
    backend: str | None = None,
) -> MaculaResult:
    spec = _backend_spec(config, "macula", backend)
    onh_roi = locate_onh(img, config)  # independent of the ONH service
    roi = locate_macula(img, onh_roi, config)
    mask = segment_macula(img, roi, backend=spec, config=config, registry=registry)
    findings = classify_macular_reflex(img, roi, config, source_backend=spec)
    return MaculaResult(roi=roi, mask=mask, findings=findings)


def run_vessels(
    img: FundusImage,
    config: EyasConfig = EyasConfig(),
    registry: BackendRegistry | None = None,
    backend: str | None = None,
    disc: OnhFindings | None = None,
    disc_center: tuple[float, float] | None = None,
) -> VesselsResult:
    spec = _backend_spec(config, "vessels", backend)
    mask = segment_vessels(img, backend=spec, config=config, registry=registry)
    findings = classify_artery_caliber(
        mask, disc=disc, disc_center=disc_center, config=config, source_backend=spec
    )
    return VesselsResult(mask=mask, findings=findings)


@dataclass(frozen=True)
class StructureOutcome:
    status: str  # "ok" | "failed"
    result: object | None = None
    error: str | None = None


@dataclass(frozen=True)
class AnalysisOutcome:
    image: FundusImage
    onh: StructureOutcome
    macula: StructureOutcome
    vessels: StructureOutcome
    report: ReportDraft | None

    @property
    def all_failed(self) -> bool:
        return all(s.status == "failed" for s in (self.onh, self.macula, self.vessels))


def analyze_image(
    img: FundusImage,
    config: EyasConfig = EyasConfig(),
    registry: BackendRegistry | None = None,
    backends: dict | None = None,
) -> AnalysisOutcome:
    """Full offline pipeline, mirroring the service orchestration order."""
    registry = registry or default_registry
    backends = backends or {}

    def attempt(fn, *args, **kwargs) -> StructureOutcome:
        try:
            return StructureOutcome(status="ok", result=fn(*args, **kwargs))
        except EyasError as exc:
            return StructureOutcome(status="failed", error=f"{exc.code}: {exc}")

    onh = attempt(run_onh, img, config, registry, backends.get("onh"))
    macula = attempt(run_macula, img, config, registry, backends.get("macula"))
    disc = onh.result.findings if onh.status == "ok" else None
    center = onh.result.disc_center if onh.status == "ok" else None
    vessels = attempt(
        run_vessels, img, config, registry, backends.get("vessels"), disc, center
    )

    report = None
    if not (onh.status == "failed" and macula.status == "failed" and vessels.status == "failed"):
        report = synthesize(
            onh=onh.result.findings if onh.status == "ok" else None,
            macula=macula.result.findings if macula.status == "ok" else None,
            vessels=vessels.result.findings if vessels.status == "ok" else None,
            image_id=img.image_id,
        )
    return AnalysisOutcome(image=img, onh=onh, macula=macula, vessels=vessels, report=report)


def artifact_files(outcome: AnalysisOutcome) -> dict[str, bytes]:
    """Serialize an analysis to {relative name: bytes}."""
    from .reporter import render_export

    files: dict[str, bytes] = {}
    rois = {}
    findings = {}
    if outcome.onh.status == "ok":
        r: OnhResult = outcome.onh.result
        rois["onh"] = r.roi.to_json()
        findings["onh"] = r.findings.to_json()
        files["onh_mask.png"] = core_io.encode_mask_png(r.mask)
    else:
        rois["onh"] = None
        findings["onh"] = None
    if outcome.macula.status == "ok":
        m: MaculaResult = outcome.macula.result
        rois["macula"] = m.roi.to_json()
        findings["macula"] = m.findings.to_json()
        files["macula_mask.png"] = core_io.encode_mask_png(m.mask)
    else:
        rois["macula"] = None
        findings["macula"] = None
    if outcome.vessels.status == "ok":
        v: VesselsResult = outcome.vessels.result
        findings["vessels"] = v.findings.to_json()
        files["vessel_mask.png"] = core_io.encode_mask_png(v.mask.vessel)
        files["av_map.png"] = core_io.encode_avmap_png(v.mask)
    else:
        findings["vessels"] = None

    files["rois.json"] = (json.dumps(rois, indent=2, sort_keys=True) + "\n").encode()
    files["findings.json"] = (json.dumps(findings, indent=2, sort_keys=True) + "\n").encode()
    if outcome.report is not None:
        files["report.txt"] = render_export(outcome.report, "txt")
        files["report.json"] = render_export(outcome.report, "json")
    return files
