"""Stage 1: ensemble localization of the optic nerve head and macula.

Three normalized candidate maps (smoothed red-channel brightness, multi-scale
normalized cross-correlation against a synthetic bright-disk template, and
local edge density) are combined as a weighted sum. All argmax/argmin
operations break ties toward the lowest y, then lowest x, so outputs are
reproducible across runs and deployments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .config import EyasConfig
from .core.ops import to_gray
from .core.types import FundusImage, GrayImage, Laterality, RoiBox, Structure
from .errors import DegenerateTemplateError, OutOfViewError, ValidationError


@dataclass(frozen=True)
class ScoreMap:
    scores: np.ndarray  # (h, w) float64

    def __post_init__(self):
        s = self.scores
        if s.ndim != 2 or not np.all(np.isfinite(s)):
            raise ValidationError("score map must be a finite 2-d array")
        s = np.ascontiguousarray(s.astype(np.float64))
        s.flags.writeable = False
        object.__setattr__(self, "scores", s)

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    @property
    def height(self) -> int:
        return self.scores.shape[0]


def enhance_contrast(g: GrayImage, tiles: int = 8, clip: float = 4.0) -> GrayImage:
    """Tile-wise histogram equalization with clipped histograms.

    Counts above ``clip`` times the uniform bin height are clipped and the
    excess is redistributed uniformly over all bins; tile mappings are
    blended bilinearly. A single-valued tile maps to itself (its histogram
    carries no contrast to stretch).
    """
    if tiles < 1:
        raise ValidationError("tiles must be >= 1")
    if clip < 1:
        raise ValidationError("clip must be >= 1")
    h, w = g.pixels.shape
    if h < tiles or w < tiles:
        raise ValidationError("image dimensions must be >= tile count")

    px = g.pixels
    y_edges = np.linspace(0, h, tiles + 1).round().astype(int)
    x_edges = np.linspace(0, w, tiles + 1).round().astype(int)
    luts = np.empty((tiles, tiles, 256), dtype=np.float64)
    identity = np.arange(256, dtype=np.float64)
    for ti in range(tiles):
        for tj in range(tiles):
            tile = px[y_edges[ti] : y_edges[ti + 1], x_edges[tj] : x_edges[tj + 1]]
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            n = tile.size
            if np.count_nonzero(hist) <= 1:
                luts[ti, tj] = identity
                continue
            if math.isfinite(clip):
                limit = clip * n / 256.0
                excess = np.maximum(hist - limit, 0.0).sum()
                hist = np.minimum(hist, limit) + excess / 256.0
            cdf = np.cumsum(hist)
            luts[ti, tj] = np.floor(255.0 * cdf / n + 0.5)

    if tiles == 1:
        mapped = luts[0, 0][px]
        return GrayImage(mapped.astype(np.uint8))

    # Bilinear blend between the four surrounding tile mappings.
    tile_h, tile_w = h / tiles, w / tiles
    gy = (np.arange(h) + 0.5) / tile_h - 0.5
    gx = (np.arange(w) + 0.5) / tile_w - 0.5
    iy0 = np.clip(np.floor(gy).astype(int), 0, tiles - 1)
    ix0 = np.clip(np.floor(gx).astype(int), 0, tiles - 1)
    iy1 = np.minimum(iy0 + 1, tiles - 1)
    ix1 = np.minimum(ix0 + 1, tiles - 1)
    wy = np.clip(gy - np.floor(gy), 0.0, 1.0)
    wx = np.clip(gx - np.floor(gx), 0.0, 1.0)
    wy[gy < 0] = 0.0
    wx[gx < 0] = 0.0

    iy0g, ix0g = np.meshgrid(iy0, ix0, indexing="ij")
    iy1g, ix1g = np.meshgrid(iy1, ix1, indexing="ij")
    wyg, wxg = np.meshgrid(wy, wx, indexing="ij")
    v = px.astype(int)
    m00 = luts[iy0g, ix0g, v]
    m01 = luts[iy0g, ix1g, v]
    m10 = luts[iy1g, ix0g, v]
    m11 = luts[iy1g, ix1g, v]
    top = m00 * (1 - wxg) + m01 * wxg
    bot = m10 * (1 - wxg) + m11 * wxg
    mapped = np.floor(top * (1 - wyg) + bot * wyg + 0.5)
    return GrayImage(np.clip(mapped, 0, 255).astype(np.uint8))


def gradient_magnitude(g: GrayImage) -> ScoreMap:
    """3x3 Sobel magnitude with edge replication at borders."""
    if g.height < 3 or g.width < 3:
        raise ValidationError("gradient needs at least a 3x3 image")
    f = g.pixels.astype(np.float64)
    gx = ndimage.sobel(f, axis=1, mode="nearest")
    gy = ndimage.sobel(f, axis=0, mode="nearest")
    return ScoreMap(np.hypot(gx, gy))


# Windows whose summed squared deviation falls below this are treated as
# flat: their correlation is reported as 0 instead of dividing by ~0.
_FLAT_WINDOW_VAR = 1e-2


def match_template_ncc(g: GrayImage, t: GrayImage) -> tuple[ScoreMap, tuple[int, int, float]]:
    """Normalized cross-correlation at every valid placement.

    Returns the score map (indexed by window origin) and the peak as
    (x, y, score); ties break toward the smallest y, then x.
    """
    if not (t.width < g.width and t.height < g.height):
        raise ValidationError("template must be strictly smaller than the image")
    tpl = t.pixels.astype(np.float64)
    tpl_centered = tpl - tpl.mean()
    tpl_ss = float((tpl_centered**2).sum())
    if tpl_ss <= 0.0:
        raise DegenerateTemplateError("template has zero variance")

    img = g.pixels.astype(np.float64)
    n = tpl.size
    ones = np.ones_like(tpl)
    num = fftconvolve(img, tpl_centered[::-1, ::-1], mode="valid")
    s1 = fftconvolve(img, ones, mode="valid")
    s2 = fftconvolve(img**2, ones, mode="valid")
    win_var = np.maximum(s2 - s1**2 / n, 0.0)

    denom = np.sqrt(win_var * tpl_ss)
    flat = win_var < _FLAT_WINDOW_VAR
    denom[flat] = 1.0
    scores = np.clip(num / denom, -1.0, 1.0)
    scores[flat] = 0.0

    idx = int(np.argmax(scores))  # row-major scan: smallest y, then x, wins ties
    py, px = divmod(idx, scores.shape[1])
    return ScoreMap(scores), (px, py, float(scores[py, px]))


def _box_blur(arr: np.ndarray, width: int) -> np.ndarray:
    width = max(3, int(width) | 1)
    return ndimage.uniform_filter(arr.astype(np.float64), size=width, mode="nearest")


def _despeckle(arr: np.ndarray, width: int) -> np.ndarray:
    """Separable grey closing: removes dark structures thinner than `width`.

    Vessels crossing the disc rim skew both the brightness plateau and the
    template correlation; closing erases them while leaving the bright disc
    untouched.
    """
    width = max(3, int(width) | 1)
    out = ndimage.maximum_filter1d(arr, width, axis=0, mode="nearest")
    out = ndimage.maximum_filter1d(out, width, axis=1, mode="nearest")
    out = ndimage.minimum_filter1d(out, width, axis=0, mode="nearest")
    return ndimage.minimum_filter1d(out, width, axis=1, mode="nearest")


def _normalize01(arr: np.ndarray) -> np.ndarray:
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo <= 1e-12:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def _disk_template(diameter: int) -> GrayImage:
    """Bright anti-aliased disk on dark ground, the idealized ONH appearance."""
    side = int(round(diameter * 1.3)) | 1
    r = diameter / 2.0
    c = (side - 1) / 2.0
    yy, xx = np.mgrid[0:side, 0:side]
    dist = np.hypot(yy - c, xx - c)
    coverage = np.clip(r - dist + 0.5, 0.0, 1.0)
    return GrayImage(np.floor(coverage * 255.0 + 0.5).astype(np.uint8))


def _argmax_yx(arr: np.ndarray) -> tuple[int, int]:
    idx = int(np.argmax(arr))
    return divmod(idx, arr.shape[1])


def _clip_roi(cx: int, cy: int, side: int, width: int, height: int) -> tuple[int, int, int]:
    side = min(side, width, height)
    x = min(max(cx - side // 2, 0), width - side)
    y = min(max(cy - side // 2, 0), height - side)
    return x, y, side


def locate_onh(img: FundusImage, config: EyasConfig = EyasConfig()) -> RoiBox:
    """Ensemble ONH localization; always returns the best candidate."""
    h, w = img.height, img.width
    scales_px = [max(8, int(round(s * h))) for s in config.onh_template_scales]
    mid_dd = scales_px[len(scales_px) // 2]
    despeckle_width = round(config.despeckle_frac * mid_dd)

    red = GrayImage(_despeckle(to_gray(img, "red").pixels, despeckle_width))
    brightness = _normalize01(_box_blur(red.pixels, round(config.brightness_blur_frac * mid_dd)))

    template_scores = np.zeros((h, w), dtype=np.float64)
    template_scale = np.full((h, w), mid_dd, dtype=np.int32)
    for d in scales_px:
        tpl = _disk_template(d)
        if tpl.height >= h or tpl.width >= w:
            continue
        smap, _ = match_template_ncc(red, tpl)
        sc = np.maximum(smap.scores, 0.0)
        oy, ox = tpl.height // 2, tpl.width // 2
        region = template_scores[oy : oy + sc.shape[0], ox : ox + sc.shape[1]]
        scale_region = template_scale[oy : oy + sc.shape[0], ox : ox + sc.shape[1]]
        better = sc > region
        region[better] = sc[better]
        scale_region[better] = d

    luma = _despeckle(to_gray(img, "luma").pixels, despeckle_width)
    edges = gradient_magnitude(GrayImage(luma))
    edge_density = _normalize01(_box_blur(edges.scores, round(config.edge_blur_frac * mid_dd)))

    wa, wb, wc = config.onh_weights
    total = wa + wb + wc
    combined = (wa * brightness + wb * template_scores + wc * edge_density) / total

    py, px = _argmax_yx(combined)
    best_scale = int(template_scale[py, px])
    side = int(round(config.onh_roi_factor * best_scale))
    x, y, side = _clip_roi(px, py, side, w, h)
    confidence = float(np.clip(combined[py, px], 0.0, 1.0))
    return RoiBox(x=x, y=y, w=side, h=side, structure=Structure.ONH, confidence=confidence)


def _estimate_disc(img: FundusImage, onh: RoiBox, config: EyasConfig) -> tuple[float, float, float]:
    """Refine (cx, cy, diameter) from the bright blob inside the ONH roi.

    The template scale tracks the disc's mean radius, which underestimates
    the major axis for eccentric discs; a quick threshold-and-moments pass
    inside the roi recovers the full diameter for the macula search band.
    """
    window = to_gray(img, "red").pixels[onh.y : onh.y + onh.h, onh.x : onh.x + onh.w]
    level = np.percentile(window, 80.0)
    binary = window >= level
    labels, count = ndimage.label(binary, structure=np.ones((3, 3), dtype=int))
    fallback = (*onh.center(), onh.w / config.onh_roi_factor)
    if count == 0:
        return fallback
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    ys, xs = np.nonzero(labels == sizes.argmax())
    if len(xs) < 5:
        return fallback
    cov = np.cov(np.stack([xs, ys]).astype(np.float64), ddof=0)
    evals = np.linalg.eigvalsh(cov)
    if evals[1] <= 0:
        return fallback
    diameter = 4.0 * math.sqrt(float(evals[1]))
    return (onh.x + float(xs.mean()), onh.y + float(ys.mean()), diameter)


def _darkness_centroid(smoothed: np.ndarray, mx: int, my: int, dd: float) -> tuple[int, int]:
    """Re-center the band minimum on the surrounding dark region.

    The raw argmin rides the background gradient toward the fundus rim; the
    centroid of darkness (relative to the local median) sits on the fovea.
    """
    h, w = smoothed.shape
    half = int(round(0.7 * dd))
    x0, x1 = max(mx - half, 0), min(mx + half + 1, w)
    y0, y1 = max(my - half, 0), min(my + half + 1, h)
    window = smoothed[y0:y1, x0:x1]
    weights = np.maximum(np.median(window) - window, 0.0)
    total = weights.sum()
    if total <= 1e-9:
        return mx, my
    yy, xx = np.mgrid[y0:y1, x0:x1]
    return int(round((weights * xx).sum() / total)), int(round((weights * yy).sum() / total))


def locate_macula(img: FundusImage, onh: RoiBox, config: EyasConfig = EyasConfig()) -> RoiBox:
    """Search the temporal annular band for the darkest smoothed region."""
    if not onh.fits(img.width, img.height):
        raise ValidationError("onh roi does not fit the image")
    h, w = img.height, img.width
    ocx, ocy, dd = _estimate_disc(img, onh, config)

    yy, xx = np.mgrid[0:h, 0:w]
    dx = xx - ocx
    dy = yy - ocy
    r = np.hypot(dx, dy)
    lo, hi = config.macula_band_dd
    in_ring = (r >= lo * dd) & (r <= hi * dd)

    half_angle = math.radians(config.macula_band_half_angle_deg)
    with np.errstate(invalid="ignore"):
        ang_right = np.abs(np.arctan2(np.abs(dy), dx))  # angle from +x axis
        ang_left = np.abs(np.arctan2(np.abs(dy), -dx))  # angle from -x axis
    # Temporal direction: the macula sits on the side away from the nose, so
    # a left eye has its fovea at larger x than the disc, a right eye at
    # smaller x. Unknown laterality searches both sides.
    if img.laterality == Laterality.LEFT:
        in_wedge = ang_right <= half_angle
    elif img.laterality == Laterality.RIGHT:
        in_wedge = ang_left <= half_angle
    else:
        in_wedge = (ang_right <= half_angle) | (ang_left <= half_angle)

    band = in_ring & in_wedge
    if not band.any():
        raise OutOfViewError("macula search band lies outside the image")

    luma = to_gray(img, "luma")
    smoothed = _box_blur(luma.pixels, round(config.brightness_blur_frac * dd))
    masked = np.where(band, smoothed, np.inf)
    my, mx = _argmax_yx(-masked)
    mx, my = _darkness_centroid(smoothed, mx, my, dd)

    band_vals = smoothed[band]
    lo_v, hi_v, mean_v = float(band_vals.min()), float(band_vals.max()), float(band_vals.mean())
    confidence = 0.0 if hi_v - lo_v <= 1e-12 else float(np.clip((mean_v - lo_v) / (hi_v - lo_v), 0.0, 1.0))

    side = int(round(config.macula_roi_factor * dd))
    x, y, side = _clip_roi(mx, my, side, w, h)
    return RoiBox(x=x, y=y, w=side, h=side, structure=Structure.MACULA, confidence=confidence)
