"""Deterministic synthetic fundus generator with exact ground truth.

Every scene is a pure function of (params, seed). Geometry is sampled with
margins away from the classifier decision boundaries so that classifying
the rendered ground-truth masks reproduces the sampled labels exactly at
noise zero.

Scene layout (fractions of image height unless stated):
  - circular fundus aperture of radius 0.48 x min(w, h) on a dark surround;
  - radial orange background gradient, brightest at the aperture center;
  - bright elliptical disc, diameter 0.125-0.175, offset nasally;
  - fovea 2.2-2.8 disc diameters temporal of the disc center, within a
    +-22 degree elevation band, carrying a flat darkened macula disk;
  - 4 artery + 4 vein quadratic Bezier arcs leaving the disc rim in
    separate angular sectors, tapering linearly with distance from the
    disc; arteries are 20% brighter than veins and carry a 1 px bright
    central reflex.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import io as core_io
from .core.types import (
    AV_ARTERY,
    AV_NONE,
    AV_VEIN,
    BinaryMask,
    EllipseFit,
    FundusImage,
    Laterality,
    VesselMask,
)
from .errors import ValidationError

APERTURE_FRAC = 0.48
BG_CENTER = (180.0, 125.0, 62.0)
BG_RIM = (140.0, 82.0, 40.0)
EXTERIOR = (8.0, 6.0, 5.0)
DISC_COLOR = (232.0, 186.0, 96.0)
VEIN_COLOR = (118.0, 40.0, 36.0)
ARTERY_BRIGHTNESS = 1.2  # over veins, per channel
REFLEX_BRIGHTNESS = 1.25  # artery central reflex, over the artery body
MACULA_DARKENING = 0.28  # background multiplied by (1 - this) inside the macula
MACULA_RADIUS_DD = 0.45  # macula disk radius / disc diameter
FOVEAL_REFLEX_RATIO = 1.45  # bright dot over its darkened surround
FOVEAL_REFLEX_RADIUS_DD = 0.085

DISC_DD_FRAC = (0.125, 0.175)  # disc diameter / image height
FOVEA_DIST_DD = (2.2, 2.8)
FOVEA_ANGLE_DEG = 22.0
ROUND_ECC = (0.05, 0.32)
OVAL_ECC = (0.58, 0.82)
OVAL_THETA_MARGIN = 0.15  # rad away from the pi/4 vertical/horizontal boundary

# Target normalized artery caliber (mean artery width / disc diameter) per
# label, kept >= 20% clear of the 0.05 / 0.09 decision thresholds.
CALIBER_RANGES = {
    "narrowed": (0.030, 0.040),
    "normal": (0.064, 0.074),
    "widened": (0.100, 0.120),
}
AVR_RANGE = (0.65, 0.85)
CALIBER_REF_DD = 1.25  # widths are nominal at this distance from the disc center
WIDTH_TAPER_PER_DD = 0.10

VESSEL_EXIT_DEG = (35.0, 75.0, 115.0, 155.0)  # from the temporal axis, both signs
ARTERY_SLOTS = {35.0, 115.0}  # exits at these base angles are arteries

SHAPE_LABELS = ("round", "oval_vertical", "oval_horizontal")
CALIBER_LABELS = ("narrowed", "normal", "widened")
REFLEX_LABELS = ("present", "absent")


@dataclass(frozen=True)
class VesselArc:
    p0: tuple[float, float]
    p1: tuple[float, float]
    p2: tuple[float, float]
    width: float  # px at CALIBER_REF_DD disc diameters from the disc center
    av: str  # "artery" | "vein"


@dataclass(frozen=True)
class SynthScene:
    seed: int
    img_w: int
    img_h: int
    disc: EllipseFit
    fovea: tuple[float, float]
    laterality: Laterality
    vessels: tuple[VesselArc, ...]
    reflex_present: bool
    shape_label: str
    caliber_label: str
    noise_sigma: float

    @property
    def disc_diameter(self) -> float:
        return self.disc.diameter

    @property
    def macula_radius(self) -> float:
        return MACULA_RADIUS_DD * self.disc_diameter


@dataclass(frozen=True)
class GenParams:
    img_w: int = 512
    img_h: int = 512
    class_mix: dict = field(default_factory=dict)
    noise_sigma: float = 8.0

    def __post_init__(self):
        if self.img_w < 64 or self.img_h < 64:
            raise ValidationError("scene dimensions must be at least 64 px")
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must be >= 0")
        _family_probs(self.class_mix)  # validate eagerly


_FAMILIES = {
    "shape": SHAPE_LABELS,
    "caliber": CALIBER_LABELS,
    "reflex": REFLEX_LABELS,
}


def _family_probs(class_mix: dict) -> dict:
    """Expand a flat {label: p} mix into per-family probability vectors."""
    known = {label: fam for fam, labels in _FAMILIES.items() for label in labels}
    for label, p in class_mix.items():
        if label not in known:
            raise ValidationError(f"unknown class label {label!r}")
        if not 0.0 <= float(p) <= 1.0:
            raise ValidationError(f"probability for {label!r} outside [0, 1]")
    out = {}
    for fam, labels in _FAMILIES.items():
        given = {l: float(class_mix[l]) for l in labels if l in class_mix}
        if not given:
            out[fam] = np.full(len(labels), 1.0 / len(labels))
            continue
        total = sum(given.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"{fam} probabilities sum to {total}, expected 1")
        out[fam] = np.array([given.get(l, 0.0) for l in labels])
    return out


def _ellipse_boundary_radius(disc: EllipseFit, direction: tuple[float, float]) -> float:
    """Distance from the ellipse center to its boundary along `direction`."""
    ux, uy = direction
    c, s = math.cos(disc.theta), math.sin(disc.theta)
    lx = ux * c + uy * s
    ly = -ux * s + uy * c
    return 1.0 / math.sqrt((lx / disc.a) ** 2 + (ly / disc.b) ** 2)


def gen_scene(params: GenParams, seed: int) -> SynthScene:
    """Sample a scene; deterministic for (params, seed)."""
    probs = _family_probs(params.class_mix)
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0]))

    shape_label = str(rng.choice(SHAPE_LABELS, p=probs["shape"]))
    caliber_label = str(rng.choice(CALIBER_LABELS, p=probs["caliber"]))
    reflex_present = str(rng.choice(REFLEX_LABELS, p=probs["reflex"])) == "present"
    laterality = Laterality.LEFT if rng.random() < 0.5 else Laterality.RIGHT

    h, w = params.img_h, params.img_w
    if shape_label == "round":
        ecc = rng.uniform(*ROUND_ECC)
        theta = rng.uniform(0.0, math.pi)
    else:
        ecc = rng.uniform(*OVAL_ECC)
        span = math.pi / 4 - OVAL_THETA_MARGIN
        offset = rng.uniform(-span, span)
        theta = (math.pi / 2 + offset) if shape_label == "oval_vertical" else (offset % math.pi)
    b_over_a = math.sqrt(1.0 - ecc * ecc)
    # A round matching template tracks the geometric-mean diameter
    # dd*sqrt(b/a); keep that inside the middle template-scale cell so the
    # localization roi (1.5x the winning scale) always contains the disc.
    lo = min(DISC_DD_FRAC[0] / math.sqrt(b_over_a), DISC_DD_FRAC[1])
    dd = rng.uniform(lo, DISC_DD_FRAC[1]) * h
    a = dd / 2.0
    b = a * b_over_a

    # Disc-to-fovea geometry: t_hat points temporally (+x for a left eye).
    k = rng.uniform(*FOVEA_DIST_DD)
    phi = math.radians(rng.uniform(-FOVEA_ANGLE_DEG, FOVEA_ANGLE_DEG))
    sign = 1.0 if laterality == Laterality.LEFT else -1.0
    offset_vec = (sign * k * dd * math.cos(phi), k * dd * math.sin(phi))
    mid_jitter = (rng.uniform(-0.03, 0.03) * h, rng.uniform(-0.03, 0.03) * h)
    cx = w / 2.0 - offset_vec[0] / 2.0 + mid_jitter[0]
    cy = h / 2.0 - offset_vec[1] / 2.0 + mid_jitter[1]
    disc = EllipseFit(cx=cx, cy=cy, a=a, b=b, theta=theta)
    fovea = (cx + offset_vec[0], cy + offset_vec[1])

    artery_c = rng.uniform(*CALIBER_RANGES[caliber_label])
    avr = rng.uniform(*AVR_RANGE)
    artery_width = artery_c * dd
    vein_width = artery_width / avr

    aperture_r = APERTURE_FRAC * min(w, h)
    center = (w / 2.0, h / 2.0)
    temporal_angle = math.atan2(offset_vec[1], offset_vec[0])
    vessels = []
    for base in VESSEL_EXIT_DEG:
        for s in (1.0, -1.0):
            jitter = rng.uniform(-6.0, 6.0)
            drift = s * rng.uniform(8.0, 16.0)
            exit_ang = temporal_angle + math.radians(s * base + jitter)
            end_ang = exit_ang + math.radians(drift)
            av = "artery" if base in ARTERY_SLOTS else "vein"
            width = (artery_width if av == "artery" else vein_width) * rng.uniform(0.96, 1.04)

            u0 = (math.cos(exit_ang), math.sin(exit_ang))
            # root sits just clear of the rim so the stroke cap never paints
            # over disc interior (the truth ellipse stays renderable)
            rim = _ellipse_boundary_radius(disc, u0) + 0.65 * width + 1.5
            p0 = (cx + rim * u0[0], cy + rim * u0[1])

            r_end = rng.uniform(2.6, 3.2) * dd
            for _ in range(40):  # shrink until the endpoint stays inside the aperture
                ex = cx + r_end * math.cos(end_ang)
                ey = cy + r_end * math.sin(end_ang)
                if math.hypot(ex - center[0], ey - center[1]) <= aperture_r - 12:
                    break
                r_end *= 0.95
            p2 = (ex, ey)

            mid_ang = exit_ang + math.radians(0.55 * drift)
            r_mid = 0.55 * (rim + r_end)
            p1 = (cx + r_mid * math.cos(mid_ang), cy + r_mid * math.sin(mid_ang))
            vessels.append(VesselArc(p0=p0, p1=p1, p2=p2, width=width, av=av))

    return SynthScene(
        seed=int(seed),
        img_w=w,
        img_h=h,
        disc=disc,
        fovea=fovea,
        laterality=laterality,
        vessels=tuple(vessels),
        reflex_present=reflex_present,
        shape_label=shape_label,
        caliber_label=caliber_label,
        noise_sigma=float(params.noise_sigma),
    )


def scale_scene(scene: SynthScene, factor: float) -> SynthScene:
    """Uniformly scale geometry (dims, disc, fovea, vessels and widths)."""
    f = float(factor)

    def pt(p):
        return (p[0] * f, p[1] * f)

    disc = EllipseFit(
        cx=scene.disc.cx * f,
        cy=scene.disc.cy * f,
        a=scene.disc.a * f,
        b=scene.disc.b * f,
        theta=scene.disc.theta,
    )
    vessels = tuple(
        VesselArc(p0=pt(v.p0), p1=pt(v.p1), p2=pt(v.p2), width=v.width * f, av=v.av)
        for v in scene.vessels
    )
    return SynthScene(
        seed=scene.seed,
        img_w=int(round(scene.img_w * f)),
        img_h=int(round(scene.img_h * f)),
        disc=disc,
        fovea=pt(scene.fovea),
        laterality=scene.laterality,
        vessels=vessels,
        reflex_present=scene.reflex_present,
        shape_label=scene.shape_label,
        caliber_label=scene.caliber_label,
        noise_sigma=scene.noise_sigma,
    )


def _sample_bezier(arc: VesselArc, step: float = 0.35) -> np.ndarray:
    """Dense (n, 2) sample of the quadratic Bezier, roughly `step` px apart."""
    p0 = np.asarray(arc.p0)
    p1 = np.asarray(arc.p1)
    p2 = np.asarray(arc.p2)
    approx_len = np.linalg.norm(p1 - p0) + np.linalg.norm(p2 - p1)
    n = max(8, int(approx_len / step))
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2


def _stroke_sdf(canvas: np.ndarray, pts: np.ndarray, radii: np.ndarray) -> None:
    """Update a signed-distance canvas with a varying-radius polyline stroke."""
    h, w = canvas.shape
    for (px, py), r in zip(pts, radii):
        half = int(math.ceil(r + 1.5))
        x0, x1 = max(int(px) - half, 0), min(int(px) + half + 1, w)
        y0, y1 = max(int(py) - half, 0), min(int(py) + half + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d = np.hypot(xx - px, yy - py) - r
        np.minimum(canvas[y0:y1, x0:x1], d, out=canvas[y0:y1, x0:x1])


def _vessel_radii(scene: SynthScene, pts: np.ndarray, width: float) -> np.ndarray:
    r = np.hypot(pts[:, 0] - scene.disc.cx, pts[:, 1] - scene.disc.cy)
    taper = 1.0 + WIDTH_TAPER_PER_DD * (CALIBER_REF_DD - r / scene.disc_diameter)
    return np.maximum(width * taper, 0.8) / 2.0


def render(scene: SynthScene) -> tuple[FundusImage, dict]:
    """Rasterize the scene; truth masks come from the geometry before noise."""
    h, w = scene.img_h, scene.img_w
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    center = (w / 2.0, h / 2.0)
    aperture_r = APERTURE_FRAC * min(w, h)

    r_center = np.hypot(xx - center[0], yy - center[1])
    t = np.clip(r_center / aperture_r, 0.0, 1.0)[..., None]
    canvas = np.asarray(BG_CENTER) * (1 - t) + np.asarray(BG_RIM) * t
    aperture_cov = np.clip((aperture_r - r_center) / 1.5 + 0.5, 0.0, 1.0)[..., None]
    canvas = canvas * aperture_cov + np.asarray(EXTERIOR) * (1 - aperture_cov)

    # Macula: flat dark disk with a 4 px soft rim, then the optional reflex
    # dot. The disk blends toward one constant color (the darkened background
    # at the fovea) so its interior is exactly flat, not gradient-following.
    fx, fy = scene.fovea
    r_fovea = np.hypot(xx - fx, yy - fy)
    r_m = scene.macula_radius
    mac_cov = np.clip((r_m - r_fovea) / 4.0 + 0.5, 0.0, 1.0)
    t_fovea = min(math.hypot(fx - center[0], fy - center[1]) / aperture_r, 1.0)
    fovea_bg = np.asarray(BG_CENTER) * (1 - t_fovea) + np.asarray(BG_RIM) * t_fovea
    macula_color = (1.0 - MACULA_DARKENING) * fovea_bg
    canvas = canvas * (1 - mac_cov)[..., None] + macula_color * mac_cov[..., None]
    if scene.reflex_present:
        r_d = FOVEAL_REFLEX_RADIUS_DD * scene.disc_diameter
        dot_cov = np.clip(r_d - r_fovea + 0.5, 0.0, 1.0)
        canvas = canvas * (1.0 + (FOVEAL_REFLEX_RATIO - 1.0) * dot_cov)[..., None]

    # Disc: bright ellipse with ~1 px anti-aliased edge.
    disc = scene.disc
    c, s = math.cos(disc.theta), math.sin(disc.theta)
    lx = (xx - disc.cx) * c + (yy - disc.cy) * s
    ly = -(xx - disc.cx) * s + (yy - disc.cy) * c
    q = np.hypot(lx / disc.a, ly / disc.b)
    disc_cov = np.clip((1.0 - q) * disc.b + 0.5, 0.0, 1.0)[..., None]
    canvas = canvas * (1 - disc_cov) + np.asarray(DISC_COLOR) * disc_cov

    # Vessels: veins first, then arteries (with the bright central reflex).
    vessel_bits = np.zeros((h, w), dtype=bool)
    av_label = np.zeros((h, w), dtype=np.uint8)
    artery_color = np.asarray(VEIN_COLOR) * ARTERY_BRIGHTNESS
    for av, color in (("vein", np.asarray(VEIN_COLOR)), ("artery", artery_color)):
        for arc in scene.vessels:
            if arc.av != av:
                continue
            pts = _sample_bezier(arc)
            radii = _vessel_radii(scene, pts, arc.width)
            sdf = np.full((h, w), np.inf)
            _stroke_sdf(sdf, pts, radii)
            cov = np.clip(0.5 - sdf, 0.0, 1.0)
            canvas = canvas * (1 - cov)[..., None] + color * cov[..., None]
            inside = sdf <= 0.0
            vessel_bits |= inside
            av_label[inside] = AV_ARTERY if av == "artery" else AV_VEIN
            if av == "artery":
                sdf_r = np.full((h, w), np.inf)
                _stroke_sdf(sdf_r, pts, np.full(len(pts), 0.5))
                cov_r = np.clip(0.5 - sdf_r, 0.0, 1.0)
                canvas = canvas * (1 - cov_r)[..., None] + color * REFLEX_BRIGHTNESS * cov_r[..., None]

    if scene.noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence([scene.seed & 0xFFFFFFFFFFFFFFFF, 1]))
        canvas = canvas + rng.normal(0.0, scene.noise_sigma, size=canvas.shape)

    pixels = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)
    img = FundusImage(pixels, laterality=scene.laterality)

    onh_mask = BinaryMask(q <= 1.0)
    macula_mask = BinaryMask(r_fovea <= r_m)
    av_label[~vessel_bits] = AV_NONE
    vessel_truth = VesselMask(vessel=BinaryMask(vessel_bits), av_label=av_label)
    truth = {"onh_mask": onh_mask, "macula_mask": macula_mask, "vessel_truth": vessel_truth}
    return img, truth


# --- corpus generation ---------------------------------------------------


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    image: str
    onh_mask: str
    macula_mask: str
    vessel_mask: str
    av_map: str
    labels: dict
    split: str
    laterality: str

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "onh_mask": self.onh_mask,
            "macula_mask": self.macula_mask,
            "vessel_mask": self.vessel_mask,
            "av_map": self.av_map,
            "labels": dict(self.labels),
            "split": self.split,
            "laterality": self.laterality,
        }


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[CorpusEntry, ...]
    version: int = 1

    def to_json(self) -> dict:
        return {"version": self.version, "entries": [e.to_json() for e in self.entries]}

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusManifest":
        entries = tuple(CorpusEntry(**e) for e in obj["entries"])
        return cls(entries=entries, version=int(obj.get("version", 1)))

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        text = json.dumps(self.to_json(), indent=2, sort_keys=True)
        Path(path).write_text(text + "\n", encoding="utf-8")


def scene_seeds(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2**62, size=n)


def holdout_indices(n: int, seed: int) -> set:
    """Deterministic 20% holdout: rank indices by a seeded hash, take the top fifth."""
    count = round(0.2 * n)
    ranked = sorted(
        range(n),
        key=lambda i: (hashlib.sha256(f"{seed}:{i}".encode()).hexdigest(), i),
    )
    return set(ranked[:count])


def _render_entry(args) -> tuple[int, dict, dict]:
    params, scene_seed, index = args
    scene = gen_scene(params, int(scene_seed))
    img, truth = render(scene)
    stem = img.image_id[:16]
    files = {
        f"{stem}.png": core_io.encode_png(img),
        f"{stem}_onh.png": core_io.encode_mask_png(truth["onh_mask"]),
        f"{stem}_macula.png": core_io.encode_mask_png(truth["macula_mask"]),
        f"{stem}_vessel.png": core_io.encode_mask_png(truth["vessel_truth"].vessel),
        f"{stem}_av.png": core_io.encode_avmap_png(truth["vessel_truth"]),
    }
    entry = {
        "id": img.image_id,
        "image": f"{stem}.png",
        "onh_mask": f"{stem}_onh.png",
        "macula_mask": f"{stem}_macula.png",
        "vessel_mask": f"{stem}_vessel.png",
        "av_map": f"{stem}_av.png",
        "labels": {
            "shape": scene.shape_label,
            "caliber": scene.caliber_label,
            "reflex": "present" if scene.reflex_present else "absent",
        },
        "laterality": scene.laterality.value,
    }
    return index, files, entry


def gen_corpus(n: int, params: GenParams, seed: int, out_dir, jobs: int = 1) -> CorpusManifest:
    """Write n image+truth sets plus a manifest with an 80/20 split."""
    if n < 1:
        raise ValidationError("corpus size must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    seeds = scene_seeds(n, seed)
    holdout = holdout_indices(n, seed)
    work = [(params, seeds[i], i) for i in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_render_entry, work, chunksize=4))
    else:
        results = [_render_entry(item) for item in work]

    entries = []
    seen = set()
    for index, files, entry in sorted(results):
        if entry["id"] in seen:
            raise ValidationError(f"image id collision at index {index}")
        seen.add(entry["id"])
        for name, data in files.items():
            (out / name).write_bytes(data)
        entry["split"] = "holdout" if index in holdout else "train"
        entries.append(CorpusEntry(**entry))

    manifest = CorpusManifest(entries=tuple(entries))
    manifest.save(out / "manifest.json")
    return manifest
