import math
import threading

import numpy as np
import pytest
import uvicorn
from fastapi import FastAPI, Request, Response

from conftest import free_port
from eyas import metrics
from eyas.core import io as core_io
from eyas.core.types import BinaryMask, FundusImage, RoiBox, Structure
from eyas.errors import (
    BackendFailureError,
    DegenerateMaskError,
    RegistryConflictError,
    SegmentationEmptyError,
    ValidationError,
)
from eyas.localizer import locate_macula, locate_onh
from eyas.segmenter import (
    BackendDescriptor,
    BackendRegistry,
    fit_ellipse,
    segment_macula,
    segment_onh,
    segment_vessels,
)
from eyas.synthgen import GenParams, gen_scene, render


def solid_ellipse_mask(h, w, cx, cy, a, b, theta):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    c, s = math.cos(theta), math.sin(theta)
    lx = (xx - cx) * c + (yy - cy) * s
    ly = -(xx - cx) * s + (yy - cy) * c
    return BinaryMask(np.hypot(lx / a, ly / b) <= 1.0)


class TestFitEllipse:
    def test_circle(self):
        mask = solid_ellipse_mask(120, 120, 60, 60, 40, 40, 0.0)
        fit = fit_ellipse(mask)
        assert fit.a == pytest.approx(40, rel=0.02)
        assert fit.b == pytest.approx(40, rel=0.02)
        assert fit.eccentricity <= 0.15
        assert fit.cx == pytest.approx(60, abs=0.5)

    def test_axis_aligned_ellipse(self):
        mask = solid_ellipse_mask(120, 120, 60, 60, 40, 20, 0.0)
        fit = fit_ellipse(mask)
        assert fit.a == pytest.approx(40, rel=0.02)
        assert fit.b == pytest.approx(20, rel=0.02)
        d = min(fit.theta, math.pi - fit.theta)
        assert d <= 0.05

    def test_degenerate(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[0, 0] = bits[1, 1] = bits[2, 2] = True
        with pytest.raises(DegenerateMaskError):
            fit_ellipse(BinaryMask(bits))

    def test_collinear(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[5, 1:8] = True
        with pytest.raises(DegenerateMaskError):
            fit_ellipse(BinaryMask(bits))

    def test_rotation_consistency(self):
        mask = solid_ellipse_mask(140, 140, 70, 70, 45, 25, 0.3)
        rotated = BinaryMask(np.rot90(np.array(mask.bits)).copy())
        f0, f1 = fit_ellipse(mask), fit_ellipse(rotated)
        assert f1.a == pytest.approx(f0.a, rel=0.02)
        assert f1.b == pytest.approx(f0.b, rel=0.02)
        d = abs((f0.theta - f1.theta) % math.pi)
        assert min(d, math.pi - d) == pytest.approx(math.pi / 2, abs=0.05)


@pytest.fixture(scope="module")
def noise_free():
    scene = gen_scene(GenParams(noise_sigma=0.0), 55)
    img, truth = render(scene)
    return scene, img, truth


class TestBuiltinBackends:
    def test_onh_noise_free_iou(self, noise_free):
        scene, img, truth = noise_free
        mask = segment_onh(img, locate_onh(img))
        assert mask.bits.shape == truth["onh_mask"].bits.shape
        assert metrics.iou(mask, truth["onh_mask"]) >= 0.85

    def test_macula_centroid(self, noise_free):
        scene, img, truth = noise_free
        roi = locate_macula(img, locate_onh(img))
        mask = segment_macula(img, roi)
        ys, xs = np.nonzero(mask.bits)
        err = math.hypot(xs.mean() - scene.fovea[0], ys.mean() - scene.fovea[1])
        assert err <= 0.25 * scene.disc_diameter

    def test_uniform_roi_empty_error(self):
        img = FundusImage(np.full((128, 128, 3), 100, dtype=np.uint8))
        roi = RoiBox(10, 10, 64, 64, Structure.ONH, 0.5)
        with pytest.raises(SegmentationEmptyError):
            segment_onh(img, roi)
        with pytest.raises(SegmentationEmptyError):
            segment_macula(img, RoiBox(10, 10, 64, 64, Structure.MACULA, 0.5))

    def test_roi_structure_checked(self, noise_free):
        _, img, _ = noise_free
        with pytest.raises(ValidationError):
            segment_onh(img, RoiBox(0, 0, 64, 64, Structure.MACULA, 0.5))

    def test_vessels_blank_image(self):
        img = FundusImage(np.full((128, 128, 3), 100, dtype=np.uint8))
        vm = segment_vessels(img)
        assert vm.vessel.foreground_count == 0
        assert (vm.av_label == 0).all()

    def test_vessels_av_on_noise_free(self, noise_free):
        scene, img, truth = noise_free
        vm = segment_vessels(img)
        assert metrics.precision(vm.vessel, truth["vessel_truth"].vessel) >= 0.6
        assert metrics.recall(vm.vessel, truth["vessel_truth"].vessel) >= 0.6
        acc = metrics.av_component_accuracy(vm, truth["vessel_truth"])
        assert acc is not None and acc >= 0.9

    def test_mask_confined_to_dilated_roi(self, noise_free):
        _, img, _ = noise_free
        roi = locate_onh(img)
        mask = segment_onh(img, roi)
        mx = int(round(roi.w * 0.10 / 2))
        ys, xs = np.nonzero(mask.bits)
        assert xs.min() >= roi.x - mx and xs.max() < roi.x + roi.w + mx
        assert ys.min() >= roi.y - mx and ys.max() < roi.y + roi.h + mx


class TestRegistry:
    def test_register_list_idempotent(self):
        reg = BackendRegistry()
        desc = BackendDescriptor(name="unet", version="2.0.0", structure=Structure.ONH,
                                 kind="remote", endpoint="http://example/seg")
        reg.register(desc)
        reg.register(desc)  # idempotent
        listed = reg.list(Structure.ONH)
        assert desc in listed
        assert sum(d == desc for d in listed) == 1
        assert [d.name for d in listed] == sorted(d.name for d in listed)

    def test_conflict(self):
        reg = BackendRegistry()
        a = BackendDescriptor(name="unet", version="2.0.0", structure=Structure.ONH,
                              kind="remote", endpoint="http://one")
        b = BackendDescriptor(name="unet", version="2.0.0", structure=Structure.ONH,
                              kind="remote", endpoint="http://two")
        reg.register(a)
        with pytest.raises(RegistryConflictError):
            reg.register(b)

    def test_remote_requires_endpoint(self):
        with pytest.raises(ValidationError):
            BackendDescriptor(name="x", version="1", structure=Structure.ONH, kind="remote")

    def test_unknown_backend(self, noise_free):
        _, img, _ = noise_free
        with pytest.raises(ValidationError):
            segment_onh(img, locate_onh(img), backend="nope@9.9.9")


class TestBackendSubstitution:
    def test_truth_oracle_backend(self, noise_free):
        """Swapping in a truth-returning backend changes only mask content."""
        scene, img, truth = noise_free
        reg = BackendRegistry()
        desc = BackendDescriptor(name="truth-oracle", version="1.0.0", structure=Structure.ONH)
        reg.register(desc, impl=lambda image, roi, config: truth["onh_mask"])
        roi = locate_onh(img)
        mask = segment_onh(img, roi, backend="truth-oracle@1.0.0", registry=reg)
        assert mask.bits.shape == truth["onh_mask"].bits.shape
        # downstream consumption unchanged
        fit = fit_ellipse(mask)
        assert fit.a == pytest.approx(scene.disc.a, rel=0.05)
        assert metrics.iou(mask, truth["onh_mask"]) >= 0.95


class TestRemoteBackend:
    @pytest.fixture()
    def remote_server(self, noise_free):
        _, img, truth = noise_free
        app = FastAPI()
        seen = {}

        @app.post("/segment")
        async def segment(request: Request):
            seen["structure"] = request.headers.get("X-Structure")
            seen["image_id"] = request.headers.get("X-Image-Id")
            if request.headers.get("X-Structure") == "macula":
                return Response(status_code=503)
            return Response(content=core_io.encode_mask_png(truth["onh_mask"]),
                            media_type="image/png")

        port = free_port()
        server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error"))
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        import time
        while not server.started:
            time.sleep(0.02)
        yield f"http://127.0.0.1:{port}", seen
        server.should_exit = True
        thread.join(timeout=5)

    def test_remote_roundtrip_and_failure(self, noise_free, remote_server):
        scene, img, truth = noise_free
        endpoint, seen = remote_server
        reg = BackendRegistry()
        reg.register(BackendDescriptor(name="neural", version="0.1.0", structure=Structure.ONH,
                                       kind="remote", endpoint=endpoint))
        roi = locate_onh(img)
        mask = segment_onh(img, roi, backend="neural@0.1.0", registry=reg)
        assert seen["structure"] == "onh"
        assert seen["image_id"] == img.image_id
        assert metrics.iou(mask, truth["onh_mask"]) >= 0.95

        reg.register(BackendDescriptor(name="neural", version="0.1.0", structure=Structure.MACULA,
                                       kind="remote", endpoint=endpoint))
        with pytest.raises(BackendFailureError, match="503"):
            segment_macula(img, locate_macula(img, roi), backend="neural@0.1.0", registry=reg)
