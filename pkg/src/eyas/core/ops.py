"""Minimal raster operations on the core types. All pure."""

from __future__ import annotations

import numpy as np

from ..errors import BoundsError, DimensionMismatchError, ValidationError
from .types import BinaryMask, FundusImage, GrayImage, RoiBox

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def to_gray(img: FundusImage, channel_mix: str = "luma") -> GrayImage:
    """Collapse RGB to one channel. luma = round(0.299R + 0.587G + 0.114B)."""
    px = img.pixels
    if channel_mix == "luma":
        r, g, b = LUMA_WEIGHTS
        gray = _round_half_up(r * px[:, :, 0] + g * px[:, :, 1] + b * px[:, :, 2])
        return GrayImage(gray.astype(np.uint8))
    if channel_mix == "red":
        return GrayImage(px[:, :, 0].copy())
    if channel_mix == "green":
        return GrayImage(px[:, :, 1].copy())
    raise ValidationError(f"unknown channel mix {channel_mix!r}")


def crop(img: FundusImage, roi: RoiBox) -> FundusImage:
    """Copy the roi window into a new image (new content id, same laterality)."""
    if not roi.fits(img.width, img.height):
        raise BoundsError(
            f"roi ({roi.x},{roi.y},{roi.w},{roi.h}) outside {img.width}x{img.height} image"
        )
    window = img.pixels[roi.y : roi.y + roi.h, roi.x : roi.x + roi.w].copy()
    return FundusImage(window, laterality=img.laterality)


def overlay(img: FundusImage, mask: BinaryMask, color: tuple[int, int, int], alpha: float) -> FundusImage:
    """Blend `color` over the mask foreground: out = round((1-alpha)*src + alpha*color)."""
    if (mask.height, mask.width) != (img.height, img.width):
        raise DimensionMismatchError("mask dimensions differ from image")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    out = img.pixels.astype(np.float64)
    fg = mask.bits
    col = np.asarray(color, dtype=np.float64)
    out[fg] = (1.0 - alpha) * out[fg] + alpha * col
    return FundusImage(_round_half_up(out).astype(np.uint8), laterality=img.laterality)
