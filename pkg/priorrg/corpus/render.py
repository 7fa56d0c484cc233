"""
Procedural chest-image renderer.

Shapes are drawn with PIL on a 64-unit canvas scaled to the image size, then
converted to float and perturbed with seeded Gaussian noise. The footprint of
a finding depends only on its FindingSpec and the image seed.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Tuple

import numpy as np
from PIL import Image, ImageDraw

from priorrg.corpus.grammar import QUADRANTS, SEVERITIES
from priorrg.errors import ConfigError, DataError

VIEWS = ("AP", "PA", "LATERAL")
NOISE_SIGMA = 0.02
CANVAS = 64.0

# Finding footprint per severity
OPACITY_RADIUS = {"mild": 3.0, "moderate": 5.0, "severe": 7.0}
OPACITY_FILL = {"mild": 140, "moderate": 175, "severe": 210}
CARDIAC_SCALE = {"mild": 1.2, "moderate": 1.4, "severe": 1.6}
EFFUSION_HEIGHT = {"mild": 6.0, "moderate": 10.0, "severe": 14.0}
DEVICE_WIDTH = {"mild": 1, "moderate": 2, "severe": 3}

_QUADRANT_CENTRES = {
    "upper-left": (20.0, 22.0),
    "upper-right": (44.0, 22.0),
    "lower-left": (20.0, 40.0),
    "lower-right": (44.0, 40.0),
}


@dataclass(frozen=True)
class FindingSpec:
    finding: str
    location: str
    # multiplicative jitter on the severity footprint, fixed per finding instance
    size: float
    severity: str


@dataclass(frozen=True)
class Anatomy:
    """Per-patient body geometry, constant across visits"""
    lung_width: float
    lung_height: float
    heart_width: float
    heart_height: float
    body_fill: int


def sample_anatomy(rng: np.random.Generator) -> Anatomy:
    return Anatomy(
        lung_width=float(rng.uniform(11.0, 13.0)),
        lung_height=float(rng.uniform(20.0, 24.0)),
        heart_width=float(rng.uniform(8.0, 10.0)),
        heart_height=float(rng.uniform(7.0, 9.0)),
        body_fill=int(rng.integers(100, 130)),
    )


def view_index(view: str) -> int:
    if view not in VIEWS:
        raise ConfigError(f"Unknown view position '{view}'. Expected one of {', '.join(VIEWS)}")
    return VIEWS.index(view)


def _project(x: float, view: str) -> float:
    # Lateral projections collapse left/right towards the midline
    return CANVAS / 2 + (x - CANVAS / 2) * 0.4 if view == "LATERAL" else x


def _box(cx: float, cy: float, rx: float, ry: float, scale: float) -> Tuple[int, int, int, int]:
    return (round((cx - rx) * scale), round((cy - ry) * scale),
            round((cx + rx) * scale), round((cy + ry) * scale))


def render_image(anatomy: Anatomy, findings: Iterable[FindingSpec], view: str,
                 seed: int, image_size: int = 64) -> np.ndarray:
    """Draw one study image; returns float32 [image_size, image_size] in [0, 1]"""
    view_index(view)
    scale = image_size / CANVAS
    image = Image.new("L", (image_size, image_size), 0)
    draw = ImageDraw.Draw(image)
    findings = sorted(findings, key=lambda f: f.finding)

    draw.ellipse(_box(32, 32, 28 if view != "LATERAL" else 22, 30, scale), fill=anatomy.body_fill)
    if view == "LATERAL":
        draw.ellipse(_box(32, 30, anatomy.lung_width * 1.3, anatomy.lung_height, scale), fill=50)
    else:
        for cx in (20.0, 44.0):
            draw.ellipse(_box(cx, 30, anatomy.lung_width, anatomy.lung_height, scale), fill=50)

    heart_w, heart_h = anatomy.heart_width, anatomy.heart_height
    if view == "AP":
        # AP projection magnifies the heart
        heart_w, heart_h = heart_w * 1.15, heart_h * 1.15
    for spec in findings:
        if spec.finding == "cardiac-ellipse":
            factor = CARDIAC_SCALE[spec.severity] * spec.size
            heart_w, heart_h = heart_w * factor, heart_h * factor
    heart_x = 26.0 if view == "LATERAL" else 34.0
    draw.ellipse(_box(heart_x, 40, heart_w, heart_h, scale), fill=170)

    for spec in findings:
        if spec.severity not in SEVERITIES or spec.location not in QUADRANTS:
            raise DataError(f"Cannot render finding {spec}")
        cx, cy = _QUADRANT_CENTRES[spec.location]
        cx = _project(cx, view)
        if spec.finding == "opacity-blob":
            r = OPACITY_RADIUS[spec.severity] * spec.size
            draw.ellipse(_box(cx, cy, r, r, scale), fill=OPACITY_FILL[spec.severity])
        elif spec.finding == "effusion-wedge":
            height = EFFUSION_HEIGHT[spec.severity] * spec.size
            side = cx - 10 if cx < CANVAS / 2 else cx + 10
            base = 52.0
            wedge = [(cx - 10, base), (cx + 10, base), (side, base - height)]
            draw.polygon([(round(x * scale), round(y * scale)) for x, y in wedge], fill=185)
        elif spec.finding == "device-line":
            top = (round(_project(36.0, view) * scale), round(2 * scale))
            tip = (round(cx * scale), round(cy * scale))
            draw.line([top, tip], fill=240, width=max(1, round(DEVICE_WIDTH[spec.severity] * scale)))

    pixels = np.asarray(image, dtype=np.float32) / 255.0
    noise = np.random.default_rng(seed).normal(0.0, NOISE_SIGMA, size=pixels.shape).astype(np.float32)
    return np.clip(pixels + noise, 0.0, 1.0)


def write_pgm(path: Path, pixels: np.ndarray) -> None:
    """Binary 8-bit PGM (P5)"""
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PPM")


def read_pgm(path: Path) -> np.ndarray:
    """Grayscale image scaled to [0, 1]"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Image not found: {path}")
    with Image.open(path) as image:
        return np.asarray(image.convert("L"), dtype=np.float32) / 255.0
