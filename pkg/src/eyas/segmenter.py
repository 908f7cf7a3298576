"""Stage 2: pluggable segmentation backends and mask geometry.

Backends are registered under a unique (name, version, structure) key and
resolved at call time, so a remote (e.g. neural) implementation can replace
the builtin classical one without touching callers. Every backend's output
is constrained to the source image dimensions; ONH and macula output is
additionally confined to the roi dilated by 10%.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import disk as disk_footprint
from skimage.morphology import skeletonize

import httpx

from .config import EyasConfig
from .core import io as core_io
from .core.ops import to_gray
from .core.types import (
    AV_ARTERY,
    AV_VEIN,
    BinaryMask,
    EllipseFit,
    FundusImage,
    GrayImage,
    RoiBox,
    Structure,
    VesselMask,
)
from .errors import (
    BackendFailureError,
    DegenerateMaskError,
    DimensionMismatchError,
    RegistryConflictError,
    SegmentationEmptyError,
    ValidationError,
)
from .localizer import enhance_contrast

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    version: str
    structure: Structure
    kind: str = "builtin"  # "builtin" | "remote"
    endpoint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "structure", Structure(self.structure))
        if self.kind not in ("builtin", "remote"):
            raise ValidationError(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValidationError("remote backend requires an endpoint")

    @property
    def key(self) -> tuple:
        return (self.name, self.version, self.structure.value)

    @property
    def spec(self) -> str:
        return f"{self.name}@{self.version}"

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "structure": self.structure.value,
            "kind": self.kind,
            "endpoint": self.endpoint,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BackendDescriptor":
        return cls(
            name=obj["name"],
            version=obj["version"],
            structure=Structure(obj["structure"]),
            kind=obj.get("kind", "builtin"),
            endpoint=obj.get("endpoint"),
        )


class BackendRegistry:
    """Registry with serialized mutation and snapshot reads."""

    def __init__(self, with_builtins: bool = True):
        self._lock = threading.Lock()
        self._entries: dict[tuple, tuple[BackendDescriptor, object]] = {}
        if with_builtins:
            for structure, impl in (
                (Structure.ONH, _builtin_onh),
                (Structure.MACULA, _builtin_macula),
                (Structure.VESSELS, _builtin_vessels),
            ):
                desc = BackendDescriptor(name="builtin", version="1.0.0", structure=structure)
                self._entries[desc.key] = (desc, impl)

    def register(self, desc: BackendDescriptor, impl=None) -> BackendDescriptor:
        """Idempotent on identical descriptors; conflicting re-use of a key fails."""
        if impl is None:
            if desc.kind != "remote":
                raise ValidationError("builtin-kind registration requires an implementation")
            impl = _RemoteBackend(desc)
        with self._lock:
            existing = self._entries.get(desc.key)
            if existing is not None:
                if existing[0] != desc:
                    raise RegistryConflictError(
                        f"backend {desc.spec} for {desc.structure.value} already "
                        "registered with different fields"
                    )
                return existing[0]
            self._entries[desc.key] = (desc, impl)
            return desc

    def list(self, structure: Structure | None = None) -> list[BackendDescriptor]:
        with self._lock:
            descs = [d for d, _ in self._entries.values()]
        if structure is not None:
            structure = Structure(structure)
            descs = [d for d in descs if d.structure == structure]
        return sorted(descs, key=lambda d: (d.name, d.version))

    def resolve(self, structure: Structure, backend=None) -> tuple[BackendDescriptor, object]:
        """Accept None (builtin), a "name@version" spec, or a descriptor."""
        structure = Structure(structure)
        if backend is None:
            backend = "builtin@1.0.0"
        if isinstance(backend, BackendDescriptor):
            key = backend.key
        else:
            name, _, version = str(backend).partition("@")
            key = (name, version, structure.value)
        with self._lock:
            entry = self._entries.get(key)
        if entry is None:
            raise ValidationError(f"no backend {key[0]}@{key[1]} for {structure.value}")
        return entry


def register_backend(desc: BackendDescriptor, impl=None, registry: BackendRegistry | None = None):
    return (registry or default_registry).register(desc, impl)


def list_backends(structure=None, registry: BackendRegistry | None = None):
    return (registry or default_registry).list(structure)


class _RemoteBackend:
    """HTTP contract: POST {endpoint}/segment, body PNG, reply PNG mask."""

    def __init__(self, desc: BackendDescriptor, timeout: float = 30.0):
        self.desc = desc
        self.timeout = timeout

    def __call__(self, img: FundusImage, roi: RoiBox | None, config: EyasConfig) -> BinaryMask:
        try:
            resp = httpx.post(
                self.desc.endpoint.rstrip("/") + "/segment",
                content=core_io.encode_png(img),
                headers={
                    "Content-Type": "image/png",
                    "X-Structure": self.desc.structure.value,
                    "X-Image-Id": img.image_id,
                },
                timeout=self.timeout,
            )
        except httpx.HTTPError as exc:
            raise BackendFailureError(f"backend {self.desc.spec} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendFailureError(
                f"backend {self.desc.spec} returned status {resp.status_code}"
            )
        mask = core_io.decode_mask_png(resp.content)
        if (mask.height, mask.width) != (img.height, img.width):
            raise BackendFailureError(f"backend {self.desc.spec} returned wrong mask dims")
        return mask


# --- builtin classical backends ------------------------------------------


def _dilated_roi_bounds(roi: RoiBox, width: int, height: int, frac: float) -> tuple[int, int, int, int]:
    mx = int(round(roi.w * frac / 2))
    my = int(round(roi.h * frac / 2))
    x0 = max(roi.x - mx, 0)
    y0 = max(roi.y - my, 0)
    x1 = min(roi.x + roi.w + mx, width)
    y1 = min(roi.y + roi.h + my, height)
    return x0, y0, x1, y1


def _threshold_window(img: FundusImage, roi: RoiBox, config: EyasConfig, bright: bool) -> BinaryMask:
    x0, y0, x1, y1 = _dilated_roi_bounds(roi, img.width, img.height, config.roi_dilate_frac)
    window = to_gray(img, "red").pixels[y0:y1, x0:x1]
    if window.max() == window.min():
        raise SegmentationEmptyError("roi window has no contrast")
    enhanced = enhance_contrast(GrayImage(window), tiles=1, clip=config.enhance_clip).pixels
    if bright:
        level = np.percentile(enhanced, config.onh_bright_percentile)
        binary = enhanced >= level
    else:
        level = np.percentile(enhanced, config.macula_dark_percentile)
        binary = enhanced <= level

    binary = ndimage.binary_closing(binary, structure=disk_footprint(config.close_radius))
    labels, count = ndimage.label(binary, structure=EIGHT_CONNECTED)
    if count == 0:
        raise SegmentationEmptyError("no foreground after thresholding")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    largest = int(sizes.argmax())
    if sizes[largest] < config.min_component_px:
        raise SegmentationEmptyError(
            f"largest component {sizes[largest]} px below {config.min_component_px}"
        )
    component = ndimage.binary_fill_holes(labels == largest)

    full = np.zeros((img.height, img.width), dtype=bool)
    full[y0:y1, x0:x1] = component
    return BinaryMask(full)


def _builtin_onh(img: FundusImage, roi: RoiBox, config: EyasConfig) -> BinaryMask:
    return _threshold_window(img, roi, config, bright=True)


def _builtin_macula(img: FundusImage, roi: RoiBox, config: EyasConfig) -> BinaryMask:
    return _threshold_window(img, roi, config, bright=False)


def _line_footprint(length: int, angle: float) -> np.ndarray:
    """Boolean line of ~`length` px through the center of its bounding box."""
    half = (length - 1) / 2.0
    dx, dy = half * math.cos(angle), half * math.sin(angle)
    n = length * 2
    t = np.linspace(-1.0, 1.0, n)
    cx = np.round(half + t * dx).astype(int)
    cy = np.round(half + t * dy).astype(int)
    size = length
    fp = np.zeros((size, size), dtype=bool)
    valid = (cx >= 0) & (cx < size) & (cy >= 0) & (cy < size)
    fp[cy[valid], cx[valid]] = True
    # trim empty borders so grey_opening touches fewer cells
    ys, xs = np.nonzero(fp)
    return fp[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


def _builtin_vessels(img: FundusImage, _roi, config: EyasConfig) -> BinaryMask:
    """Stage 1: oriented top-hat of the inverted green channel."""
    green = to_gray(img, "green").pixels.astype(np.float64)
    inverted = 255.0 - green
    length = max(5, int(round(config.vessel_line_frac * img.height)) | 1)

    response = np.zeros_like(inverted)
    for k in range(config.vessel_orientations):
        angle = math.pi * k / config.vessel_orientations
        fp = _line_footprint(length, angle)
        opened = ndimage.grey_opening(inverted, footprint=fp, mode="nearest")
        np.maximum(response, inverted - opened, out=response)

    level = response.mean() + config.vessel_thresh_sigmas * response.std()
    binary = response > level

    labels, count = ndimage.label(binary, structure=EIGHT_CONNECTED)
    if count:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        keep = sizes >= config.vessel_min_component_px
        binary = keep[labels]
    return BinaryMask(binary)


def differentiate_av(mask: BinaryMask, img: FundusImage) -> VesselMask:
    """Stage 2: median split of per-component mean centerline intensity.

    Components whose mean green intensity along the skeleton exceeds the
    median across components are arteries (rendered/appearing brighter),
    the rest veins.
    """
    av = np.zeros(mask.bits.shape, dtype=np.uint8)
    labels, count = ndimage.label(mask.bits, structure=EIGHT_CONNECTED)
    if count == 0:
        return VesselMask(vessel=mask, av_label=av)

    green = to_gray(img, "green").pixels.astype(np.float64)
    skeleton = skeletonize(np.array(mask.bits))
    means = np.empty(count)
    for i in range(1, count + 1):
        component = labels == i
        line = skeleton & component
        sample = green[line] if line.any() else green[component]
        means[i - 1] = sample.mean()

    median = float(np.median(means))
    for i in range(1, count + 1):
        value = AV_ARTERY if means[i - 1] > median else AV_VEIN
        av[labels == i] = value
    return VesselMask(vessel=mask, av_label=av)


# --- public operations ----------------------------------------------------


def _confine(mask: BinaryMask, roi: RoiBox, img: FundusImage, config: EyasConfig) -> BinaryMask:
    x0, y0, x1, y1 = _dilated_roi_bounds(roi, img.width, img.height, config.roi_dilate_frac)
    bits = np.zeros_like(mask.bits)
    bits[y0:y1, x0:x1] = mask.bits[y0:y1, x0:x1]
    return BinaryMask(bits)


def segment_onh(
    img: FundusImage,
    roi: RoiBox,
    backend=None,
    config: EyasConfig = EyasConfig(),
    registry: BackendRegistry | None = None,
) -> BinaryMask:
    if roi.structure != Structure.ONH:
        raise ValidationError("roi structure must be onh")
    if not roi.fits(img.width, img.height):
        raise ValidationError("roi does not fit the image")
    desc, impl = (registry or default_registry).resolve(Structure.ONH, backend)
    mask = impl(img, roi, config)
    if (mask.height, mask.width) != (img.height, img.width):
        raise DimensionMismatchError("backend mask dims differ from image")
    return _confine(mask, roi, img, config)


def segment_macula(
    img: FundusImage,
    roi: RoiBox,
    backend=None,
    config: EyasConfig = EyasConfig(),
    registry: BackendRegistry | None = None,
) -> BinaryMask:
    if roi.structure != Structure.MACULA:
        raise ValidationError("roi structure must be macula")
    if not roi.fits(img.width, img.height):
        raise ValidationError("roi does not fit the image")
    desc, impl = (registry or default_registry).resolve(Structure.MACULA, backend)
    mask = impl(img, roi, config)
    if (mask.height, mask.width) != (img.height, img.width):
        raise DimensionMismatchError("backend mask dims differ from image")
    return _confine(mask, roi, img, config)


def segment_vessels(
    img: FundusImage,
    backend=None,
    config: EyasConfig = EyasConfig(),
    registry: BackendRegistry | None = None,
) -> VesselMask:
    desc, impl = (registry or default_registry).resolve(Structure.VESSELS, backend)
    mask = impl(img, None, config)
    if isinstance(mask, VesselMask):  # a backend may label A/V itself
        if (mask.height, mask.width) != (img.height, img.width):
            raise DimensionMismatchError("backend mask dims differ from image")
        return mask
    if (mask.height, mask.width) != (img.height, img.width):
        raise DimensionMismatchError("backend mask dims differ from image")
    return differentiate_av(mask, img)


def fit_ellipse(mask: BinaryMask) -> EllipseFit:
    """Moment-based fit: axes from the covariance eigenvalues (2*sqrt(lambda))."""
    ys, xs = np.nonzero(mask.bits)
    if len(xs) < 5:
        raise DegenerateMaskError(f"mask has {len(xs)} foreground px, need >= 5")
    cx, cy = float(xs.mean()), float(ys.mean())
    cov = np.cov(np.stack([xs, ys]).astype(np.float64), ddof=0)
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 1e-12:
        raise DegenerateMaskError("foreground is collinear; no ellipse")
    a = 2.0 * math.sqrt(float(evals[1]))
    b = min(2.0 * math.sqrt(float(evals[0])), a)
    vx, vy = float(evecs[0, 1]), float(evecs[1, 1])
    theta = math.atan2(vy, vx) % math.pi
    return EllipseFit(cx=cx, cy=cy, a=a, b=b, theta=theta)


def registry_from_config(config: EyasConfig) -> BackendRegistry:
    """Builtins plus any remote backends declared in the config."""
    registry = BackendRegistry()
    for obj in config.remote_backends:
        registry.register(BackendDescriptor.from_json(dict(obj)))
    return registry


default_registry = BackendRegistry()
