"""Internal gateway: routes analysis traffic to the structure services and
owns the runtime backend registry (the plug-and-play surface).

The core is deployment-agnostic: it talks to services through either
in-process objects or HTTP clients, and the client gateway talks to it the
same two ways.
"""

from __future__ import annotations

import json

import httpx
from fastapi import FastAPI, Request

from ..config import EyasConfig
from ..errors import EyasError, ValidationError
from ..segmenter import BackendDescriptor, registry_from_config
from .structure import StructureRunner, error_response, synthesize_report

STRUCTURES = ("onh", "macula", "vessels")


class LocalServices:
    """In-process service objects (single-process deployment)."""

    def __init__(self, config: EyasConfig):
        self.runner = StructureRunner(config)

    def analyze(self, structure, image_bytes, laterality, disc, backend) -> dict:
        return self.runner.analyze(structure, image_bytes, laterality, disc, backend)

    def synthesize(self, sections, image_id) -> dict:
        return synthesize_report(sections, image_id)

    def ping(self) -> dict:
        return {s: "up" for s in (*STRUCTURES, "report")}


class HttpServices:
    """HTTP clients for the per-structure processes (multi-process deployment)."""

    def __init__(self, config: EyasConfig, timeout: float = 120.0):
        self.config = config
        host = config.host
        self.urls = {
            "onh": f"http://{host}:{config.onh_port}",
            "macula": f"http://{host}:{config.macula_port}",
            "vessels": f"http://{host}:{config.vessels_port}",
            "report": f"http://{host}:{config.report_port}",
        }
        self.client = httpx.Client(timeout=timeout)

    def analyze(self, structure, image_bytes, laterality, disc, backend) -> dict:
        headers = {"Content-Type": "image/png", "X-Laterality": laterality}
        if disc:
            headers["X-Disc"] = json.dumps(disc)
        if backend:
            headers["X-Backend"] = json.dumps(backend)
        resp = self.client.post(f"{self.urls[structure]}/analyze", content=image_bytes, headers=headers)
        return _unwrap(resp, f"{structure} service")

    def synthesize(self, sections, image_id) -> dict:
        resp = self.client.post(
            f"{self.urls['report']}/synthesize",
            json={"sections": sections, "image_id": image_id},
        )
        return _unwrap(resp, "report service")

    def ping(self) -> dict:
        out = {}
        for name, url in self.urls.items():
            try:
                out[name] = "up" if self.client.get(f"{url}/healthz", timeout=3.0).status_code == 200 else "down"
            except httpx.HTTPError:
                out[name] = "down"
        return out


def _unwrap(resp: httpx.Response, who: str) -> dict:
    if resp.status_code == 200:
        return resp.json()
    try:
        err = resp.json()["error"]
        raise ServiceCallError(f"{who}: {err['code']}: {err['message']}", code=err["code"])
    except (KeyError, ValueError):
        raise ServiceCallError(f"{who} returned status {resp.status_code}")


class ServiceCallError(EyasError):
    def __init__(self, message: str, code: str = "service_call"):
        super().__init__(message)
        self.code = code


class InternalGatewayCore:
    """Routing plus the backend registry; selects the active backend per structure."""

    def __init__(self, config: EyasConfig, services):
        self.config = config
        self.services = services
        self.registry = registry_from_config(config)
        self._active: dict[str, str] = dict(config.backends)

    def analyze(self, structure: str, image_bytes: bytes, laterality: str, disc: dict | None) -> dict:
        if structure not in STRUCTURES:
            raise ValidationError(f"unknown structure {structure!r}")
        spec = self._active.get(structure, "builtin@1.0.0")
        desc, _ = self.registry.resolve(structure, spec)
        return self.services.analyze(structure, image_bytes, laterality, disc, desc.to_json())

    def synthesize(self, sections: dict, image_id: str) -> dict:
        return self.services.synthesize(sections, image_id)

    def register_backend(self, obj: dict) -> dict:
        desc = BackendDescriptor.from_json(obj)
        if desc.kind != "remote":
            raise ValidationError("only remote backends can be registered at runtime")
        self.registry.register(desc)
        if obj.get("activate"):
            self._active[desc.structure.value] = desc.spec
        return desc.to_json()

    def list_backends(self) -> list[dict]:
        return [d.to_json() for d in self.registry.list()]

    def health(self) -> dict:
        services = self.services.ping()
        degraded = [name for name, state in services.items() if state != "up"]
        return {
            "status": "degraded" if degraded else "ok",
            "services": services,
            "active_backends": dict(self._active),
        }


class HttpInternal:
    """Client-gateway-side HTTP client for the internal gateway."""

    def __init__(self, config: EyasConfig, timeout: float = 120.0):
        self.base = f"http://{config.host}:{config.internal_port}"
        self.client = httpx.Client(timeout=timeout)

    def analyze(self, structure, image_bytes, laterality, disc) -> dict:
        headers = {"Content-Type": "image/png", "X-Laterality": laterality}
        if disc:
            headers["X-Disc"] = json.dumps(disc)
        resp = self.client.post(
            f"{self.base}/internal/v1/analyze/{structure}", content=image_bytes, headers=headers
        )
        return _unwrap(resp, "internal gateway")

    def synthesize(self, sections, image_id) -> dict:
        resp = self.client.post(
            f"{self.base}/internal/v1/report", json={"sections": sections, "image_id": image_id}
        )
        return _unwrap(resp, "internal gateway")

    def health(self) -> dict:
        return self.client.get(f"{self.base}/internal/v1/health").json()

    def list_backends(self) -> list:
        return self.client.get(f"{self.base}/internal/v1/backends").json()["backends"]


def internal_gateway_app(core: InternalGatewayCore) -> FastAPI:
    app = FastAPI(title="eyas-internal-gateway")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "service": "internal-gateway"}

    @app.get("/internal/v1/health")
    def health():
        return core.health()

    @app.post("/internal/v1/analyze/{structure}")
    async def analyze(structure: str, request: Request):
        body = await request.body()
        laterality = request.headers.get("X-Laterality", "unknown")
        disc = request.headers.get("X-Disc")
        try:
            return core.analyze(structure, body, laterality, json.loads(disc) if disc else None)
        except EyasError as exc:
            return error_response(exc)

    @app.post("/internal/v1/report")
    async def report(request: Request):
        obj = await request.json()
        try:
            return core.synthesize(obj.get("sections", {}), obj.get("image_id", ""))
        except EyasError as exc:
            return error_response(exc)

    @app.post("/internal/v1/backends")
    async def register(request: Request):
        try:
            return core.register_backend(await request.json())
        except EyasError as exc:
            status = 409 if exc.code == "registry_conflict" else 400
            return error_response(exc, status)

    @app.get("/internal/v1/backends")
    def list_backends():
        return {"backends": core.list_backends()}

    return app
