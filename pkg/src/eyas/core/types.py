"""Domain types shared by every pipeline stage.

All types are immutable after construction (array buffers are frozen) and
safe to share across threads. Raster coordinates are top-left origin with
y increasing downward; arrays are indexed [y, x].
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ValidationError

MIN_DIM = 64
MAX_DIM = 8192

AV_NONE = 0
AV_ARTERY = 1
AV_VEIN = 2


class Laterality(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    UNKNOWN = "unknown"


class Structure(str, Enum):
    ONH = "onh"
    MACULA = "macula"
    VESSELS = "vessels"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FundusImage:
    """8-bit RGB raster. `image_id` depends on pixel content only, so the
    type carries no patient metadata by construction."""

    pixels: np.ndarray  # (h, w, 3) uint8
    laterality: Laterality = Laterality.UNKNOWN
    image_id: str = field(default="")

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValidationError("expected (h, w, 3) uint8 pixel buffer")
        h, w = px.shape[:2]
        if w < 1 or h < 1 or w > MAX_DIM or h > MAX_DIM:
            raise ValidationError(f"image dimensions {w}x{h} outside [1, {MAX_DIM}]")
        object.__setattr__(self, "pixels", _freeze(px))
        if not self.image_id:
            digest = hashlib.sha256(self.pixels.tobytes()).hexdigest()
            object.__setattr__(self, "image_id", digest)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class GrayImage:
    """Single-channel 8-bit raster."""

    pixels: np.ndarray  # (h, w) uint8

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 2 or px.dtype != np.uint8:
            raise ValidationError("expected (h, w) uint8 pixel buffer")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class RoiBox:
    x: int
    y: int
    w: int
    h: int
    structure: Structure
    confidence: float

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w <= 0 or self.h <= 0:
            raise ValidationError("roi must have non-negative origin and positive size")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("roi confidence must lie in [0, 1]")
        object.__setattr__(self, "structure", Structure(self.structure))

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def to_json(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "w": self.w,
            "h": self.h,
            "structure": self.structure.value,
            "confidence": self.confidence,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RoiBox":
        return cls(
            x=int(obj["x"]),
            y=int(obj["y"]),
            w=int(obj["w"]),
            h=int(obj["h"]),
            structure=Structure(obj["structure"]),
            confidence=float(obj["confidence"]),
        )


@dataclass(frozen=True)
class BinaryMask:
    """One bit per pixel; dimensions always equal those of the annotated image."""

    bits: np.ndarray  # (h, w) bool

    def __post_init__(self):
        b = self.bits
        if b.ndim != 2 or b.dtype != np.bool_:
            raise ValidationError("expected (h, w) bool mask")
        object.__setattr__(self, "bits", _freeze(b))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def foreground_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class VesselMask:
    """Vessel bits plus per-pixel artery/vein labels (defined only on vessel pixels)."""

    vessel: BinaryMask
    av_label: np.ndarray  # (h, w) uint8 in {AV_NONE, AV_ARTERY, AV_VEIN}

    def __post_init__(self):
        av = self.av_label
        if av.shape != self.vessel.bits.shape or av.dtype != np.uint8:
            raise ValidationError("av_label must be uint8 with vessel mask dims")
        if av.max(initial=0) > AV_VEIN:
            raise ValidationError("av_label values must be in {0, 1, 2}")
        if np.any((av != AV_NONE) & ~self.vessel.bits):
            raise ValidationError("av_label set outside vessel mask")
        object.__setattr__(self, "av_label", _freeze(av))

    @property
    def width(self) -> int:
        return self.vessel.width

    @property
    def height(self) -> int:
        return self.vessel.height


@dataclass(frozen=True)
class EllipseFit:
    """Geometric reduction of a mask: center, semi-axes (a >= b), major-axis angle."""

    cx: float
    cy: float
    a: float
    b: float
    theta: float  # radians in [0, pi)
    eccentricity: float = field(default=-1.0)

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0 or self.b > self.a + 1e-12:
            raise ValidationError("ellipse axes must satisfy 0 < b <= a")
        if not 0.0 <= self.theta < math.pi:
            raise ValidationError("theta must lie in [0, pi)")
        ecc = math.sqrt(max(0.0, 1.0 - (self.b * self.b) / (self.a * self.a)))
        if self.eccentricity < 0:
            object.__setattr__(self, "eccentricity", ecc)
        elif abs(self.eccentricity - ecc) > 1e-9:
            raise ValidationError("eccentricity inconsistent with axes")

    @property
    def diameter(self) -> float:
        return 2.0 * self.a

    def to_json(self) -> dict:
        return {
            "cx": self.cx,
            "cy": self.cy,
            "a": self.a,
            "b": self.b,
            "theta": self.theta,
            "eccentricity": self.eccentricity,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EllipseFit":
        return cls(
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            a=float(obj["a"]),
            b=float(obj["b"]),
            theta=float(obj["theta"]),
        )
