"""Client API gateway: public REST surface, job store and orchestration.

Orchestration fans ONH and macula out immediately and independently; the
vessels call is issued once ONH findings arrive (or its wait times out /
fails, in which case vessels proceed without a disc and report an
indeterminate caliber). A job fails only when all three structures fail.
"""

from __future__ import annotations

import base64
import concurrent.futures as cf
import dataclasses
import json
import threading
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.staticfiles import StaticFiles

from ..config import EyasConfig
from ..core import io as core_io
from ..core.types import Laterality
from ..errors import DecodeError, EyasError, StateError, ValidationError
from ..reporter import ReportDraft, approve as approve_report
from .jobstore import JobStore, STRUCTURES
from .structure import error_response

MASK_ARTIFACTS = {
    "onh": ("onh_mask.png",),
    "macula": ("macula_mask.png",),
    "vessels": ("vessel_mask.png", "av_map.png"),
}


class PayloadTooLargeError(EyasError):
    code = "payload_too_large"


class NotFoundError(EyasError):
    code = "not_found"


class PendingError(EyasError):
    code = "pending"


class GatewayCore:
    def __init__(self, config: EyasConfig, internal, store: JobStore | None = None):
        self.config = config
        self.internal = internal
        self.store = store or JobStore(Path(config.data_dir))
        workers = max(2, config.job_workers)
        self._jobs_pool = cf.ThreadPoolExecutor(max_workers=workers, thread_name_prefix="job")
        self._structure_pool = cf.ThreadPoolExecutor(max_workers=workers * 2, thread_name_prefix="structure")
        self._inflight: dict[str, cf.Future] = {}
        self._lock = threading.Lock()

    # --- public operations --------------------------------------------------

    def submit_analysis(self, image_bytes: bytes, laterality: str = "unknown") -> str:
        if len(image_bytes) > self.config.max_upload_bytes:
            raise PayloadTooLargeError(f"payload exceeds {self.config.max_upload_bytes} bytes")
        try:
            lat = Laterality(laterality)
        except ValueError:
            raise ValidationError(f"unknown laterality {laterality!r}")
        img = core_io.decode_image(image_bytes, lat)  # reject undecodable before persisting
        record = self.store.create_job(img.image_id, lat.value)
        name = "input.png" if image_bytes[:8] == core_io.PNG_SIGNATURE else "input.ppm"
        self.store.save_artifact(record.job_id, name, image_bytes)
        future = self._jobs_pool.submit(self._run_job, record.job_id, image_bytes, lat.value)
        with self._lock:
            self._inflight[record.job_id] = future
        return record.job_id

    def get_analysis(self, job_id: str) -> dict:
        record = self.store.get_job(job_id)
        if record is None:
            raise NotFoundError(f"unknown job {job_id}")
        return {"job": record.to_json(), "report": self.store.get_report(job_id)}

    def get_structure(self, job_id: str, structure: str) -> dict:
        record = self.store.get_job(job_id)
        if record is None:
            raise NotFoundError(f"unknown job {job_id}")
        if structure not in STRUCTURES:
            raise NotFoundError(f"unknown structure {structure!r}")
        status = record.structures[structure]
        if status == "pending":
            raise PendingError(f"{structure} analysis still pending")
        if status != "ok":
            raise PendingError(f"{structure} analysis {status}: {record.errors.get(structure, '')}")
        payload = self.store.get_structure(job_id, structure) or {}
        base = f"/api/v1/analyses/{job_id}/structures/{structure}"
        out = {
            "structure": structure,
            "roi": payload.get("roi"),
            "findings": payload.get("findings"),
            "mask": f"{base}/{MASK_ARTIFACTS[structure][0]}",
        }
        if structure == "vessels":
            out["av_map"] = f"{base}/av_map.png"
        return out

    def get_artifact(self, job_id: str, structure: str, name: str) -> bytes:
        self.get_structure(job_id, structure)  # enforces existence and readiness
        if name not in MASK_ARTIFACTS.get(structure, ()):
            raise NotFoundError(f"unknown artifact {name!r}")
        data = self.store.load_artifact(job_id, name)
        if data is None:
            raise NotFoundError(f"artifact {name} missing")
        return data

    def finalize_report(self, job_id: str, edited_text: str | None, approve: bool) -> dict:
        record = self.store.get_job(job_id)
        if record is None:
            raise NotFoundError(f"unknown job {job_id}")
        if record.state != "done":
            raise StateError(f"job {job_id} is {record.state}, not done")
        report_json = self.store.get_report(job_id)
        if report_json is None:
            raise NotFoundError(f"job {job_id} has no report")
        report = ReportDraft.from_json(report_json)
        if approve:
            report = approve_report(report, edited_text)
        elif edited_text is not None:
            if report.status.value != "draft":
                raise StateError("cannot edit an approved report")
            report = dataclasses.replace(report, edited_text=edited_text)
        self.store.save_report(job_id, report.to_json())
        return report.to_json()

    def get_input_image(self, job_id: str) -> tuple[bytes, str]:
        record = self.store.get_job(job_id)
        if record is None:
            raise NotFoundError(f"unknown job {job_id}")
        for name, media in (("input.png", "image/png"), ("input.ppm", "image/x-portable-pixmap")):
            data = self.store.load_artifact(job_id, name)
            if data is not None:
                return data, media
        raise NotFoundError(f"job {job_id} input image missing")

    def list_backends(self) -> list:
        return self.internal.list_backends()

    def health(self) -> dict:
        return self.internal.health()

    def wait_all(self, timeout: float | None = None) -> None:
        """Block until every submitted job settles (test support)."""
        with self._lock:
            futures = list(self._inflight.values())
        for f in futures:
            f.result(timeout=timeout)

    def shutdown(self) -> None:
        self._jobs_pool.shutdown(wait=False, cancel_futures=True)
        self._structure_pool.shutdown(wait=False, cancel_futures=True)

    # --- orchestration --------------------------------------------------------

    def _run_job(self, job_id: str, image_bytes: bytes, laterality: str) -> None:
        try:
            self.store.mutate_job(job_id, lambda r: r.transition("running"))
            f_onh = self._structure_pool.submit(self._run_structure, job_id, "onh", image_bytes, laterality, None)
            f_macula = self._structure_pool.submit(self._run_structure, job_id, "macula", image_bytes, laterality, None)

            disc = None
            try:
                onh_payload = f_onh.result(timeout=self.config.onh_wait_timeout_s)
                if onh_payload and onh_payload.get("ellipse"):
                    ellipse = onh_payload["ellipse"]
                    disc = {"findings": onh_payload["findings"], "center": [ellipse["cx"], ellipse["cy"]]}
            except cf.TimeoutError:
                pass  # vessels proceed without a disc; caliber comes back indeterminate
            except Exception:
                pass  # structure failure already recorded by _run_structure

            vessels_payload = None
            try:
                vessels_payload = self._run_structure(job_id, "vessels", image_bytes, laterality, disc)
            except Exception:
                pass

            macula_payload = None
            try:
                macula_payload = f_macula.result()
            except Exception:
                pass
            onh_payload = None
            if disc is None:
                try:
                    onh_payload = f_onh.result()
                except Exception:
                    onh_payload = None
            else:
                onh_payload = f_onh.result()

            sections = {
                "onh": onh_payload["findings"] if onh_payload else None,
                "macula": macula_payload["findings"] if macula_payload else None,
                "vessels": vessels_payload["findings"] if vessels_payload else None,
            }
            record = self.store.get_job(job_id)
            if all(v is None for v in sections.values()):
                causes = "; ".join(f"{s}: {record.errors.get(s, 'failed')}" for s in STRUCTURES)
                self.store.mutate_job(job_id, lambda r: (r.transition("failed"), setattr(r, "error", causes)))
                return
            report = self.internal.synthesize(sections, record.image_id)
            self.store.save_report(job_id, report)
            self.store.mutate_job(job_id, lambda r: r.transition("done"))
        except Exception as exc:  # orchestration bug or store failure: fail the job, never lose it
            def fail(r):
                if r.state in ("queued", "running"):
                    r.transition("failed")
                r.error = r.error or f"orchestration: {exc}"
            try:
                self.store.mutate_job(job_id, fail)
            except Exception:
                pass
        finally:
            with self._lock:
                self._inflight.pop(job_id, None)

    def _run_structure(self, job_id, structure, image_bytes, laterality, disc) -> dict:
        try:
            payload = self.internal.analyze(structure, image_bytes, laterality, disc)
        except EyasError as exc:
            self.store.mutate_job(job_id, lambda r: r.set_structure(structure, "failed", f"{exc.code}: {exc}"))
            raise
        for name, b64 in payload.get("artifacts", {}).items():
            self.store.save_artifact(job_id, name, base64.b64decode(b64))
        stored = {k: v for k, v in payload.items() if k != "artifacts"}
        self.store.save_structure(job_id, structure, stored)
        self.store.mutate_job(job_id, lambda r: r.set_structure(structure, "ok"))
        return payload


def gateway_app(core: GatewayCore) -> FastAPI:
    app = FastAPI(title="eyas-gateway")

    def handle(fn, *args, ok_status=200, **kwargs):
        try:
            result = fn(*args, **kwargs)
        except NotFoundError as exc:
            return error_response(exc, 404)
        except PendingError as exc:
            return error_response(exc, 409)
        except StateError as exc:
            return error_response(exc, 409)
        except PayloadTooLargeError as exc:
            return error_response(exc, 413)
        except (DecodeError, ValidationError) as exc:
            return error_response(exc, 400)
        except EyasError as exc:
            return error_response(exc, 422)
        if isinstance(result, Response):
            return result
        return Response(
            content=json.dumps(result), status_code=ok_status, media_type="application/json"
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "service": "gateway"}

    @app.post("/api/v1/analyses")
    async def submit(request: Request, laterality: str = "unknown"):
        body = await request.body()
        return handle(
            lambda: {"job_id": core.submit_analysis(body, laterality)}, ok_status=202
        )

    @app.get("/api/v1/analyses/{job_id}")
    def get_analysis(job_id: str):
        return handle(core.get_analysis, job_id)

    @app.get("/api/v1/analyses/{job_id}/image")
    def get_image(job_id: str):
        def fetch():
            data, media = core.get_input_image(job_id)
            return Response(content=data, media_type=media)
        return handle(fetch)

    @app.get("/api/v1/backends")
    def backends():
        return handle(lambda: {"backends": core.list_backends()})

    @app.get("/api/v1/analyses/{job_id}/structures/{structure}")
    def get_structure(job_id: str, structure: str):
        return handle(core.get_structure, job_id, structure)

    @app.get("/api/v1/analyses/{job_id}/structures/{structure}/{artifact}")
    def get_artifact(job_id: str, structure: str, artifact: str):
        def fetch():
            data = core.get_artifact(job_id, structure, artifact)
            return Response(content=data, media_type="image/png")
        return handle(fetch)

    @app.put("/api/v1/analyses/{job_id}/report")
    async def finalize(job_id: str, request: Request):
        obj = await request.json()
        return handle(
            core.finalize_report, job_id, obj.get("edited_text"), bool(obj.get("approve", False))
        )

    @app.get("/internal/v1/health")
    def health():
        return core.health()

    if core.config.frontend_dir and Path(core.config.frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=core.config.frontend_dir, html=True), name="ui")

    return app
