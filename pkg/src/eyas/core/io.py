"""External image formats: PNG (via Pillow) and binary PPM (P6).

Decoding strips every non-pixel chunk; only the raster enters the system.
16-bit inputs are rejected rather than converted so the numeric contract
stays exact. Encoding is deterministic: identical pixels yield identical
bytes.
"""

from __future__ import annotations

import io as _io
import re

import numpy as np
from PIL import Image

from ..errors import DecodeError
from .types import AV_VEIN, MAX_DIM, MIN_DIM, BinaryMask, FundusImage, Laterality, VesselMask

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _check_ingest_dims(w: int, h: int) -> None:
    # Size bounds apply at the ingest boundary; internal crops may be smaller.
    if not (MIN_DIM <= w <= MAX_DIM and MIN_DIM <= h <= MAX_DIM):
        raise DecodeError(f"image dimensions {w}x{h} outside [{MIN_DIM}, {MAX_DIM}]")


def _png_header(data: bytes) -> tuple[int, int]:
    """Return (bit_depth, color_type) from the IHDR chunk."""
    if len(data) < 26 or data[12:16] != b"IHDR":
        raise DecodeError("malformed PNG header")
    return data[24], data[25]


def decode_image(data: bytes, laterality: Laterality = Laterality.UNKNOWN) -> FundusImage:
    """Decode PNG (8-bit RGB) or binary PPM (P6, maxval 255) bytes."""
    if data[:8] == PNG_SIGNATURE:
        depth, color_type = _png_header(data)
        if depth != 8:
            raise DecodeError(f"{depth}-bit PNG rejected; 8-bit RGB required")
        if color_type != 2:
            raise DecodeError("PNG color type must be RGB (truecolor)")
        try:
            with Image.open(_io.BytesIO(data)) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except DecodeError:
            raise
        except Exception as exc:
            raise DecodeError(f"PNG decode failed: {exc}") from exc
        _check_ingest_dims(arr.shape[1], arr.shape[0])
        return FundusImage(arr, laterality=laterality)
    if data[:2] == b"P6":
        return _decode_ppm(data, laterality)
    raise DecodeError("unrecognized image format (expected PNG or binary PPM)")


def _decode_ppm(data: bytes, laterality: Laterality) -> FundusImage:
    # Header: "P6" then width, height, maxval as whitespace/comment separated
    # ASCII tokens, then a single whitespace byte before the raster.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\d+)").match(data, pos)
        if not m:
            raise DecodeError("malformed PPM header")
        tokens.append(int(m.group(1)))
        pos = m.end()
    w, h, maxval = tokens
    if maxval != 255:
        raise DecodeError(f"PPM maxval {maxval} rejected; 8-bit required")
    pos += 1  # single whitespace separator
    raster = data[pos : pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise DecodeError("PPM raster truncated")
    _check_ingest_dims(w, h)
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return FundusImage(arr.copy(), laterality=laterality)


def encode_png(img: FundusImage) -> bytes:
    buf = _io.BytesIO()
    Image.fromarray(np.asarray(img.pixels)).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def encode_ppm(img: FundusImage) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def encode_mask_png(mask: BinaryMask) -> bytes:
    """Masks travel as 8-bit grayscale PNG with values {0, 255}."""
    arr = np.where(mask.bits, 255, 0).astype(np.uint8)
    buf = _io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def decode_mask_png(data: bytes) -> BinaryMask:
    try:
        with Image.open(_io.BytesIO(data)) as im:
            if im.mode != "L":
                raise DecodeError(f"mask PNG must be 8-bit grayscale, got {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"mask decode failed: {exc}") from exc
    return BinaryMask(arr >= 128)


_AV_PALETTE = [0, 0, 0, 255, 64, 64, 64, 64, 255] + [0] * (256 * 3 - 9)


def encode_avmap_png(vm: VesselMask) -> bytes:
    """Indexed PNG: 0 none, 1 artery, 2 vein."""
    im = Image.fromarray(np.asarray(vm.av_label), mode="P")
    im.putpalette(_AV_PALETTE)
    buf = _io.BytesIO()
    im.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def decode_avmap_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(_io.BytesIO(data)) as im:
            if im.mode != "P":
                raise DecodeError(f"A/V map PNG must be indexed, got {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"A/V map decode failed: {exc}") from exc
    if arr.max(initial=0) > AV_VEIN:
        raise DecodeError("A/V map contains indices outside {0, 1, 2}")
    return arr
