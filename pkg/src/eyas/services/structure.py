"""Structure microservices and the report service.

Each service is a stateless core object with a thin FastAPI wrapper; the
same cores back both the in-process (single-process mode) and HTTP
(multi-process mode) deployments, so analysis results are identical across
modes by construction.
"""

from __future__ import annotations

import base64
import json

from fastapi import FastAPI, Request, Response

from ..classifier import MaculaFindings, OnhFindings, VesselFindings
from ..config import EyasConfig
from ..core import io as core_io
from ..core.types import Laterality
from ..errors import EyasError, ValidationError
from ..pipeline import run_macula, run_onh, run_vessels
from ..reporter import synthesize
from ..segmenter import BackendDescriptor, BackendRegistry, registry_from_config


class FaultInjectedError(EyasError):
    code = "fault_injected"


class StructureRunner:
    """Executes one structure analysis per request; no state between calls."""

    def __init__(self, config: EyasConfig, registry: BackendRegistry | None = None):
        self.config = config
        self.registry = registry or registry_from_config(config)

    def analyze(
        self,
        structure: str,
        image_bytes: bytes,
        laterality: str = "unknown",
        disc: dict | None = None,
        backend: dict | None = None,
    ) -> dict:
        if structure in self.config.fault_inject:
            raise FaultInjectedError(f"{structure} analysis failed (injected fault)")
        img = core_io.decode_image(image_bytes, Laterality(laterality))

        backend_spec = None
        if backend:
            desc = BackendDescriptor.from_json(backend)
            if desc.kind == "remote":
                self.registry.register(desc)  # idempotent
            backend_spec = desc.spec

        if structure == "onh":
            r = run_onh(img, self.config, self.registry, backend_spec)
            return {
                "structure": "onh",
                "roi": r.roi.to_json(),
                "findings": r.findings.to_json(),
                "ellipse": r.ellipse.to_json(),
                "artifacts": {"onh_mask.png": _b64(core_io.encode_mask_png(r.mask))},
            }
        if structure == "macula":
            r = run_macula(img, self.config, self.registry, backend_spec)
            return {
                "structure": "macula",
                "roi": r.roi.to_json(),
                "findings": r.findings.to_json(),
                "ellipse": None,
                "artifacts": {"macula_mask.png": _b64(core_io.encode_mask_png(r.mask))},
            }
        if structure == "vessels":
            findings = center = None
            if disc:
                findings = OnhFindings.from_json(disc["findings"])
                center = tuple(disc["center"])
            r = run_vessels(img, self.config, self.registry, backend_spec, findings, center)
            return {
                "structure": "vessels",
                "roi": None,
                "findings": r.findings.to_json(),
                "ellipse": None,
                "artifacts": {
                    "vessel_mask.png": _b64(core_io.encode_mask_png(r.mask.vessel)),
                    "av_map.png": _b64(core_io.encode_avmap_png(r.mask)),
                },
            }
        raise ValidationError(f"unknown structure {structure!r}")


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def synthesize_report(sections: dict, image_id: str) -> dict:
    """Report service core: findings JSON in, report JSON out."""
    onh = OnhFindings.from_json(sections["onh"]) if sections.get("onh") else None
    macula = MaculaFindings.from_json(sections["macula"]) if sections.get("macula") else None
    vessels = VesselFindings.from_json(sections["vessels"]) if sections.get("vessels") else None
    report = synthesize(onh=onh, macula=macula, vessels=vessels, image_id=image_id)
    return report.to_json()


def error_response(exc: EyasError, status: int = 422) -> Response:
    body = {"error": {"code": exc.code, "message": str(exc)}}
    return Response(content=json.dumps(body), status_code=status, media_type="application/json")


def structure_app(structure: str, runner: StructureRunner) -> FastAPI:
    app = FastAPI(title=f"eyas-{structure}")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "service": structure}

    @app.post("/analyze")
    async def analyze(request: Request):
        body = await request.body()
        laterality = request.headers.get("X-Laterality", "unknown")
        disc = request.headers.get("X-Disc")
        backend = request.headers.get("X-Backend")
        try:
            payload = runner.analyze(
                structure,
                body,
                laterality,
                disc=json.loads(disc) if disc else None,
                backend=json.loads(backend) if backend else None,
            )
        except EyasError as exc:
            return error_response(exc)
        return payload

    return app


def report_app() -> FastAPI:
    app = FastAPI(title="eyas-report")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "service": "report"}

    @app.post("/synthesize")
    async def synth(request: Request):
        obj = await request.json()
        try:
            return synthesize_report(obj.get("sections", {}), obj.get("image_id", ""))
        except EyasError as exc:
            return error_response(exc)

    return app
