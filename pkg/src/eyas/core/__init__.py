from .types import (
    BinaryMask,
    EllipseFit,
    FundusImage,
    GrayImage,
    Laterality,
    RoiBox,
    Structure,
    VesselMask,
)
from .ops import crop, overlay, to_gray
from . import io

__all__ = [
    "BinaryMask",
    "EllipseFit",
    "FundusImage",
    "GrayImage",
    "Laterality",
    "RoiBox",
    "Structure",
    "VesselMask",
    "crop",
    "overlay",
    "to_gray",
    "io",
]
