import json
import os
import socket
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import httpx
import pytest

from eyas.classifier import classify_artery_caliber, classify_onh_shape, make_input
from eyas.cli import _analysis_worker
from eyas.config import EyasConfig
from eyas.segmenter import fit_ellipse
from eyas.synthgen import GenParams, gen_corpus, gen_scene, render, scene_seeds

CORPUS_SIZE = 200
CORPUS_SEED = 42
CORPUS_NOISE = 8.0
JOBS = max(1, min(4, os.cpu_count() or 1))


@pytest.fixture(scope="session")
def standard_corpus(tmp_path_factory):
    """The fixed acceptance fixture: 200 images, 512x512, sigma 8, seed 42."""
    out = tmp_path_factory.mktemp("corpus")
    manifest = gen_corpus(
        CORPUS_SIZE, GenParams(noise_sigma=CORPUS_NOISE), CORPUS_SEED, out, jobs=JOBS
    )
    return out, manifest


@pytest.fixture(scope="session")
def corpus_predictions(standard_corpus, tmp_path_factory):
    """Offline pipeline outputs for every corpus image, keyed by image id."""
    corpus_dir, manifest = standard_corpus
    out = tmp_path_factory.mktemp("predictions")
    cfg = EyasConfig().to_json()
    work = [(str(corpus_dir / e.image), e.laterality, str(out), cfg, None) for e in manifest.entries]
    with ProcessPoolExecutor(max_workers=JOBS) as pool:
        list(pool.map(_analysis_worker, work, chunksize=2))
    return out


@pytest.fixture(scope="session")
def noise_free_scenes():
    params = GenParams(noise_sigma=0.0)
    scenes = []
    for s in scene_seeds(20, 777):
        scene = gen_scene(params, int(s))
        img, truth = render(scene)
        scenes.append((scene, img, truth))
    return scenes


def truth_route_findings(truth):
    """Disc findings and center derived from ground-truth masks only."""
    fit = fit_ellipse(truth["onh_mask"])
    findings = classify_onh_shape(make_input(None, mask=truth["onh_mask"], format="mask"))
    return findings, (fit.cx, fit.cy)


def truth_caliber(truth):
    findings, center = truth_route_findings(truth)
    return classify_artery_caliber(truth["vessel_truth"], disc=findings, disc_center=center)


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


class ServiceHarness:
    """Spawns `eyas serve` (single- or multi-process) on free ports."""

    def __init__(self, tmp: Path, single_process: bool, overrides: dict | None = None):
        tmp.mkdir(parents=True, exist_ok=True)
        cfg = {
            "client_port": free_port(),
            "internal_port": free_port(),
            "onh_port": free_port(),
            "macula_port": free_port(),
            "vessels_port": free_port(),
            "report_port": free_port(),
            "data_dir": str(tmp / "data"),
        }
        cfg.update(overrides or {})
        self.config = cfg
        self.config_path = tmp / "config.json"
        self.config_path.write_text(json.dumps(cfg))
        args = [sys.executable, "-m", "eyas.cli", "serve", "--config", str(self.config_path)]
        if single_process:
            args.append("--single-process")
        self.proc = subprocess.Popen(args)
        self.base = f"http://127.0.0.1:{cfg['client_port']}"
        self._wait_healthy()

    def _wait_healthy(self, timeout: float = 90.0):
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.proc.poll() is not None:
                raise RuntimeError(f"server exited early with {self.proc.returncode}")
            try:
                r = httpx.get(self.base + "/internal/v1/health", timeout=2.0)
                if r.status_code == 200 and r.json().get("status") == "ok":
                    return
            except httpx.HTTPError:
                pass
            time.sleep(0.25)
        raise TimeoutError("service graph did not become healthy")

    def submit(self, image_bytes: bytes, laterality: str = "unknown") -> str:
        r = httpx.post(
            self.base + "/api/v1/analyses",
            content=image_bytes,
            params={"laterality": laterality},
            headers={"Content-Type": "image/png"},
            timeout=30.0,
        )
        assert r.status_code == 202, r.text
        return r.json()["job_id"]

    def wait_job(self, job_id: str, timeout: float = 180.0) -> dict:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            j = httpx.get(f"{self.base}/api/v1/analyses/{job_id}", timeout=10.0).json()
            if j["job"]["state"] in ("done", "failed"):
                return j
            time.sleep(0.3)
        raise TimeoutError(f"job {job_id} did not settle")

    def get(self, path: str) -> httpx.Response:
        return httpx.get(self.base + path, timeout=30.0)

    def put(self, path: str, body: dict) -> httpx.Response:
        return httpx.put(self.base + path, json=body, timeout=30.0)

    def stop(self):
        self.proc.terminate()
        try:
            self.proc.wait(timeout=20)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait(timeout=10)
