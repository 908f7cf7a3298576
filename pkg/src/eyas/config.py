"""Runtime configuration: calibrated constants, ports, timeouts.

Every threshold the pipeline uses lives here so deployments can retune
without code changes. Values load from a flat JSON file given via
``--config`` or the ``EYAS_CONFIG`` environment variable; unknown keys are
rejected to catch typos early.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

ENV_VAR = "EYAS_CONFIG"


@dataclass(frozen=True)
class EyasConfig:
    # --- localization ---
    onh_weights: tuple[float, float, float] = (0.4, 0.4, 0.2)  # brightness, template, edges
    onh_template_scales: tuple[float, ...] = (0.10, 0.15, 0.20)  # disc diameter / image height
    onh_roi_factor: float = 1.5  # roi side / best template diameter
    brightness_blur_frac: float = 0.25  # box blur width / expected disc diameter
    edge_blur_frac: float = 1.2
    despeckle_frac: float = 0.25  # grey-closing width / mid template scale
    macula_band_dd: tuple[float, float] = (2.0, 3.0)  # search annulus in disc diameters
    macula_band_half_angle_deg: float = 30.0
    macula_roi_factor: float = 1.0  # roi side / disc diameter

    # --- contrast enhancement defaults ---
    enhance_tiles: int = 8
    enhance_clip: float = 4.0

    # --- segmentation (builtin backends) ---
    onh_bright_percentile: float = 80.0
    macula_dark_percentile: float = 20.0
    close_radius: int = 3
    min_component_px: int = 50
    roi_dilate_frac: float = 0.10
    vessel_line_frac: float = 0.03  # structuring-element length / image height
    vessel_orientations: int = 12
    vessel_thresh_sigmas: float = 2.0
    vessel_min_component_px: int = 30

    # --- classification ---
    shape_ecc_threshold: float = 0.45
    shape_conf_band: float = 0.15
    caliber_narrow: float = 0.05
    caliber_wide: float = 0.09
    caliber_annulus_dd: tuple[float, float] = (1.0, 1.5)
    reflex_ratio_threshold: float = 1.15
    reflex_center_frac: float = 0.1  # sampling disk radius / roi side
    reflex_annulus_frac: tuple[float, float] = (0.2, 0.4)
    crude_threshold_frac: float = 0.8  # intensity-range fraction for image-format rethreshold

    # --- services ---
    client_port: int = 8080
    internal_port: int = 8090
    onh_port: int = 8091
    macula_port: int = 8092
    vessels_port: int = 8093
    report_port: int = 8094
    host: str = "127.0.0.1"
    onh_wait_timeout_s: float = 30.0
    job_workers: int = 8
    max_upload_bytes: int = 64 * 1024 * 1024
    data_dir: str = "eyas_data"
    frontend_dir: str | None = None  # static files served at / when set
    backends: dict = field(
        default_factory=lambda: {"onh": "builtin@1.0.0", "macula": "builtin@1.0.0", "vessels": "builtin@1.0.0"}
    )
    # remote backend descriptors registered at startup (name/version/structure/endpoint)
    remote_backends: tuple = ()
    fault_inject: tuple[str, ...] = ()  # structure names forced to fail (testing)

    def replace(self, **kwargs) -> "EyasConfig":
        return dataclasses.replace(self, **kwargs)

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out


_TUPLE_FIELDS = {
    f.name for f in dataclasses.fields(EyasConfig) if "tuple" in str(f.type)
}


def config_from_dict(obj: dict) -> EyasConfig:
    known = {f.name for f in dataclasses.fields(EyasConfig)}
    unknown = set(obj) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in obj.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return EyasConfig(**kwargs)


def load_config(path: str | os.PathLike | None = None) -> EyasConfig:
    """Load config from `path`, else $EYAS_CONFIG, else defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return EyasConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(obj)
