import math

import numpy as np
import pytest

from eyas.core.ops import to_gray
from eyas.core.types import AV_ARTERY, AV_VEIN
from eyas.errors import ValidationError
from eyas.synthgen import (
    CorpusManifest,
    GenParams,
    gen_corpus,
    gen_scene,
    holdout_indices,
    render,
    scale_scene,
    scene_seeds,
)

from conftest import truth_caliber, truth_route_findings
from eyas.classifier import classify_macular_reflex
from eyas.core.types import RoiBox, Structure


class TestGenScene:
    def test_determinism(self):
        params = GenParams()
        a = gen_scene(params, 99)
        b = gen_scene(params, 99)
        assert a == b
        img_a, truth_a = render(a)
        img_b, truth_b = render(b)
        assert img_a.image_id == img_b.image_id
        assert (truth_a["onh_mask"].bits == truth_b["onh_mask"].bits).all()

    def test_degenerate_mix(self):
        params = GenParams(class_mix={"round": 1.0})
        for seed in range(25):
            assert gen_scene(params, seed).shape_label == "round"

    def test_monte_carlo_mix(self):
        params = GenParams(class_mix={"narrowed": 0.5, "normal": 0.5})
        n = 1000
        count = sum(gen_scene(params, s).caliber_label == "narrowed" for s in range(n))
        assert abs(count / n - 0.5) <= 0.05

    def test_invalid_mix(self):
        with pytest.raises(ValidationError):
            GenParams(class_mix={"round": 0.5, "oval_vertical": 0.2})
        with pytest.raises(ValidationError):
            GenParams(class_mix={"bogus": 1.0})

    def test_anatomical_prior(self):
        params = GenParams()
        for s in scene_seeds(30, 5):
            scene = gen_scene(params, int(s))
            d = math.hypot(scene.fovea[0] - scene.disc.cx, scene.fovea[1] - scene.disc.cy)
            ratio = d / scene.disc_diameter
            assert 2.0 <= ratio <= 3.0
            # temporal side: left eye has the fovea at larger x than the disc
            dx = scene.fovea[0] - scene.disc.cx
            assert (dx > 0) == (scene.laterality.value == "left")
            # within +-30 degrees of horizontal
            angle = math.degrees(math.atan2(abs(scene.fovea[1] - scene.disc.cy), abs(dx)))
            assert angle <= 30.0

    def test_shape_consistent_with_thresholds(self):
        params = GenParams()
        for s in scene_seeds(30, 6):
            scene = gen_scene(params, int(s))
            if scene.shape_label == "round":
                assert scene.disc.eccentricity < 0.45
            else:
                assert scene.disc.eccentricity >= 0.45
                d = abs(scene.disc.theta - math.pi / 2)
                d = min(d, math.pi - d)
                assert (d <= math.pi / 4) == (scene.shape_label == "oval_vertical")


class TestRender:
    def test_disc_mask_area_matches_analytic(self):
        scene = gen_scene(GenParams(noise_sigma=0.0), 21)
        _, truth = render(scene)
        area = truth["onh_mask"].foreground_count
        expected = math.pi * scene.disc.a * scene.disc.b
        assert abs(area - expected) / expected <= 0.02

    def test_disc_brightness_ratio(self):
        scene = gen_scene(GenParams(noise_sigma=0.0), 22)
        img, truth = render(scene)
        luma = to_gray(img, "luma").pixels.astype(float)
        h, w = luma.shape
        yy, xx = np.mgrid[0:h, 0:w]
        aperture = np.hypot(xx - w / 2, yy - h / 2) <= 0.48 * min(w, h)
        disc = truth["onh_mask"].bits
        assert luma[disc].mean() / luma[aperture & ~disc].mean() >= 1.4

    def test_artery_brighter_than_vein(self):
        scene = gen_scene(GenParams(noise_sigma=0.0), 23)
        img, truth = render(scene)
        luma = to_gray(img, "luma").pixels.astype(float)
        av = truth["vessel_truth"].av_label
        ratio = luma[av == AV_ARTERY].mean() / luma[av == AV_VEIN].mean()
        assert 1.1 <= ratio <= 1.45

    def test_truth_labels_reproducible_at_noise_zero(self):
        """Classifying the ground-truth masks must reproduce the sampled labels."""
        params = GenParams(noise_sigma=0.0)
        for s in scene_seeds(10, 31):
            scene = gen_scene(params, int(s))
            img, truth = render(scene)
            disc_findings, _ = truth_route_findings(truth)
            assert disc_findings.shape == scene.shape_label
            assert truth_caliber(truth).caliber == scene.caliber_label
            side = int(round(scene.disc_diameter))
            roi = RoiBox(
                x=int(scene.fovea[0] - side // 2), y=int(scene.fovea[1] - side // 2),
                w=side, h=side, structure=Structure.MACULA, confidence=1.0,
            )
            reflex = classify_macular_reflex(img, roi)
            assert (reflex.reflex == "present") == scene.reflex_present

    def test_scale_scene(self):
        scene = gen_scene(GenParams(noise_sigma=0.0), 33)
        scaled = scale_scene(scene, 1.5)
        assert scaled.img_w == round(scene.img_w * 1.5)
        assert scaled.disc.a == pytest.approx(scene.disc.a * 1.5)
        assert scaled.vessels[0].width == pytest.approx(scene.vessels[0].width * 1.5)
        assert scaled.shape_label == scene.shape_label
        render(scaled)  # must rasterize cleanly


class TestGenCorpus:
    def test_manifest_and_split(self, tmp_path):
        manifest = gen_corpus(10, GenParams(img_w=128, img_h=128), 7, tmp_path / "c")
        assert len(manifest.entries) == 10
        holdout = [e for e in manifest.entries if e.split == "holdout"]
        assert len(holdout) == 2
        for entry in manifest.entries:
            for key in ("image", "onh_mask", "macula_mask", "vessel_mask", "av_map"):
                assert (tmp_path / "c" / getattr(entry, key)).exists()
            assert set(entry.labels) == {"shape", "caliber", "reflex"}
        loaded = CorpusManifest.load(tmp_path / "c" / "manifest.json")
        assert loaded == manifest

    def test_single_entry_split(self, tmp_path):
        manifest = gen_corpus(1, GenParams(img_w=128, img_h=128), 7, tmp_path / "one")
        assert len(manifest.entries) == 1
        assert manifest.entries[0].split in ("train", "holdout")
        again = holdout_indices(1, 7)
        assert ({0} if manifest.entries[0].split == "holdout" else set()) == again

    def test_regeneration_byte_identical(self, tmp_path):
        params = GenParams(img_w=128, img_h=128, noise_sigma=4.0)
        gen_corpus(4, params, 11, tmp_path / "a")
        gen_corpus(4, params, 11, tmp_path / "b", jobs=2)
        files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
        files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unwritable_dir(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises((OSError, NotADirectoryError)):
            gen_corpus(1, GenParams(img_w=128, img_h=128), 1, blocker / "sub")
