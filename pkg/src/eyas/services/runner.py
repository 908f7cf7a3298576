"""Deployment runner for the service graph.

Single-process mode runs both gateways in one process (two uvicorn servers
on their configured ports) with in-memory dispatch to the service cores.
Multi-process mode spawns one child process per component - client gateway,
internal gateway, three structure services and the report service - wired
over HTTP. Both modes expose identical interfaces and run identical
analysis code.
"""

from __future__ import annotations

import json
import signal
import subprocess
import sys
import threading
import time
from pathlib import Path

import httpx
import uvicorn

from ..config import EyasConfig
from .gateway import GatewayCore, gateway_app
from .internal_gateway import (
    HttpInternal,
    HttpServices,
    InternalGatewayCore,
    LocalServices,
    internal_gateway_app,
)
from .structure import StructureRunner, report_app, structure_app

ROLES = ("gateway", "internal", "onh", "macula", "vessels", "report")


def _server(app, host: str, port: int) -> uvicorn.Server:
    cfg = uvicorn.Config(app, host=host, port=port, log_level="warning", access_log=False)
    return uvicorn.Server(cfg)


def _run_servers(servers: list[uvicorn.Server]) -> None:
    threads = []
    for server in servers[1:]:
        t = threading.Thread(target=server.run, daemon=True)
        t.start()
        threads.append(t)

    def stop(*_):
        for s in servers:
            s.should_exit = True

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    servers[0].run()
    for s in servers[1:]:
        s.should_exit = True
    for t in threads:
        t.join(timeout=5)


def serve_single_process(config: EyasConfig) -> None:
    services = LocalServices(config)
    internal_core = InternalGatewayCore(config, services)
    gateway_core = GatewayCore(config, internal=internal_core)
    _run_servers(
        [
            _server(gateway_app(gateway_core), config.host, config.client_port),
            _server(internal_gateway_app(internal_core), config.host, config.internal_port),
        ]
    )


def serve_role(config: EyasConfig, role: str) -> None:
    if role == "gateway":
        core = GatewayCore(config, internal=HttpInternal(config))
        _run_servers([_server(gateway_app(core), config.host, config.client_port)])
    elif role == "internal":
        core = InternalGatewayCore(config, HttpServices(config))
        _run_servers([_server(internal_gateway_app(core), config.host, config.internal_port)])
    elif role == "report":
        _run_servers([_server(report_app(), config.host, config.report_port)])
    elif role in ("onh", "macula", "vessels"):
        runner = StructureRunner(config)
        port = getattr(config, f"{role}_port")
        _run_servers([_server(structure_app(role, runner), config.host, port)])
    else:
        raise ValueError(f"unknown role {role!r}")


def serve_multi_process(config: EyasConfig) -> None:
    """Spawn one child per component and supervise until interrupted."""
    data_dir = Path(config.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = data_dir / "runtime_config.json"
    cfg_path.write_text(json.dumps(config.to_json(), indent=2), encoding="utf-8")

    children: list[subprocess.Popen] = []
    try:
        for role in ROLES:
            children.append(
                subprocess.Popen(
                    [sys.executable, "-m", "eyas.cli", "serve", "--config", str(cfg_path), "--role", role]
                )
            )
        stop = threading.Event()
        signal.signal(signal.SIGTERM, lambda *_: stop.set())
        signal.signal(signal.SIGINT, lambda *_: stop.set())
        while not stop.is_set():
            for child in children:
                if child.poll() is not None:
                    raise RuntimeError(f"service process {child.args} exited with {child.returncode}")
            stop.wait(0.5)
    finally:
        for child in children:
            if child.poll() is None:
                child.terminate()
        for child in children:
            try:
                child.wait(timeout=10)
            except subprocess.TimeoutExpired:
                child.kill()


def wait_until_healthy(config: EyasConfig, timeout: float = 60.0) -> None:
    """Poll the client gateway until it (and its internals) respond."""
    deadline = time.monotonic() + timeout
    url = f"http://{config.host}:{config.client_port}/internal/v1/health"
    last_error = None
    while time.monotonic() < deadline:
        try:
            resp = httpx.get(url, timeout=2.0)
            if resp.status_code == 200 and resp.json().get("status") in ("ok", "degraded"):
                if resp.json().get("status") == "ok":
                    return
        except httpx.HTTPError as exc:
            last_error = exc
        time.sleep(0.25)
    raise TimeoutError(f"services not healthy after {timeout}s: {last_error}")
