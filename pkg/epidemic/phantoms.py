"""Letter-shaped coefficient phantoms rasterized onto a spatial grid."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from PIL import Image, ImageDraw

from .exceptions import ConfigurationError
from .grid import GridSpec, ScalarField

logger = logging.getLogger(__name__)

Box = tuple[float, float, float, float]
Polygon = list[tuple[float, float]]

STROKE = 0.16


def _stroke(p0: tuple[float, float], p1: tuple[float, float], width: float = STROKE) -> Polygon:
    """Rectangle around the segment p0-p1 with square caps."""
    direction = np.subtract(p1, p0).astype(float)
    direction /= np.hypot(*direction)
    normal = np.array([-direction[1], direction[0]]) * width / 2
    cap = direction * width / 2
    a = np.asarray(p0) - cap
    b = np.asarray(p1) + cap
    return [tuple(a + normal), tuple(b + normal), tuple(b - normal), tuple(a - normal)]


def _arc(center: tuple[float, float], radius: float, start_deg: float, stop_deg: float,
         width: float = STROKE, segments: int = 32) -> Polygon:
    """Ring sector of the given stroke width, counter-clockwise from start to stop."""
    theta = np.radians(np.linspace(start_deg, stop_deg, segments))
    outer = [(center[0] + (radius + width / 2) * np.cos(t), center[1] + (radius + width / 2) * np.sin(t)) for t in theta]
    inner = [(center[0] + (radius - width / 2) * np.cos(t), center[1] + (radius - width / 2) * np.sin(t)) for t in theta[::-1]]
    return outer + inner


def _glyph_a() -> list[Polygon]:
    return [
        _stroke((0.12, 0.05), (0.5, 0.95)),
        _stroke((0.5, 0.95), (0.88, 0.05)),
        _stroke((0.3, 0.4), (0.7, 0.4)),
    ]


def _glyph_m() -> list[Polygon]:
    return [
        _stroke((0.1, 0.05), (0.1, 0.95)),
        _stroke((0.1, 0.95), (0.5, 0.35)),
        _stroke((0.5, 0.35), (0.9, 0.95)),
        _stroke((0.9, 0.95), (0.9, 0.05)),
    ]


def _glyph_b() -> list[Polygon]:
    return [
        _stroke((0.15, 0.05), (0.15, 0.95)),
        _stroke((0.15, 0.95), (0.55, 0.95)),
        _stroke((0.15, 0.5), (0.55, 0.5)),
        _stroke((0.15, 0.05), (0.55, 0.05)),
        _arc((0.55, 0.725), 0.225, -90.0, 90.0),
        _arc((0.55, 0.275), 0.225, -90.0, 90.0),
    ]


def _glyph_omega() -> list[Polygon]:
    center, radius = (0.5, 0.56), 0.34
    right = (center[0] + radius * np.cos(np.radians(-55.0)), center[1] + radius * np.sin(np.radians(-55.0)))
    left = (center[0] + radius * np.cos(np.radians(235.0)), center[1] + radius * np.sin(np.radians(235.0)))
    return [
        _arc(center, radius, -55.0, 235.0, segments=64),
        _stroke(right, (right[0] - 0.03, 0.08)),
        _stroke(left, (left[0] + 0.03, 0.08)),
        _stroke((right[0] - 0.03, 0.08), (0.92, 0.08)),
        _stroke((0.08, 0.08), (left[0] + 0.03, 0.08)),
    ]


def _rectangle() -> list[Polygon]:
    return [[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]]


GLYPHS = {
    "A": _glyph_a,
    "M": _glyph_m,
    "B": _glyph_b,
    "Omega": _glyph_omega,
    "rect": _rectangle,
}


@dataclass(frozen=True)
class Inclusion:
    """A shape placed in ``box`` (x0, x1, y0, y1) carrying ``value`` for one coefficient."""

    target: str
    shape: str
    box: Box
    value: float

    def __post_init__(self) -> None:
        if self.target not in ("beta", "gamma"):
            raise ConfigurationError(f"inclusion target must be 'beta' or 'gamma', got {self.target!r}")
        if self.shape not in GLYPHS:
            raise ConfigurationError(f"unknown inclusion shape {self.shape!r}; choose from {sorted(GLYPHS)}")
        if not self.value > 0:
            raise ConfigurationError(f"inclusion value must be positive, got {self.value}")
        x0, x1, y0, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ConfigurationError(f"degenerate inclusion box {self.box}")

    def to_dict(self) -> dict:
        return {"target": self.target, "shape": self.shape, "box": list(self.box), "value": self.value}


@dataclass(frozen=True)
class PhantomSpec:
    beta_bg: float
    gamma_bg: float
    omega: Box
    inclusions: tuple[Inclusion, ...] = field(default_factory=tuple)

    def for_target(self, target: str) -> list[Inclusion]:
        return [inc for inc in self.inclusions if inc.target == target]

    def background(self, target: str) -> float:
        return self.beta_bg if target == "beta" else self.gamma_bg

    def to_dict(self) -> dict:
        return {
            "beta_bg": self.beta_bg,
            "gamma_bg": self.gamma_bg,
            "omega": list(self.omega),
            "inclusions": [inc.to_dict() for inc in self.inclusions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PhantomSpec":
        inclusions = tuple(
            Inclusion(inc["target"], inc["shape"], tuple(inc["box"]), inc["value"]) for inc in data.get("inclusions", [])
        )
        return cls(data["beta_bg"], data["gamma_bg"], tuple(data["omega"]), inclusions)


def rasterize(inclusion: Inclusion, grid: GridSpec) -> np.ndarray:
    """Boolean (ny, nx) mask of the grid nodes covered by the inclusion shape."""
    x0, x1, y0, y1 = inclusion.box
    image = Image.new("1", (grid.nx, grid.ny), 0)
    draw = ImageDraw.Draw(image)
    for polygon in GLYPHS[inclusion.shape]():
        # unit box -> physical box -> pixel coordinates (pixel (i, j) is node (x_i, y_j))
        pixels = [
            ((x0 + u * (x1 - x0) - grid.x_min) / grid.hx, (y0 + v * (y1 - y0) - grid.y_min) / grid.hy)
            for u, v in polygon
        ]
        draw.polygon(pixels, fill=1, outline=1)
    mask = np.array(image, dtype=bool)
    X, Y = grid.mesh()
    return mask & (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)


def _check_inside(box: Box, omega: Box) -> None:
    x0, x1, y0, y1 = box
    a, b, c, d = omega
    if x0 < a or x1 > b or y0 < c or y1 > d:
        raise ConfigurationError(f"inclusion box {box} exceeds the measurement domain {omega}")


def inclusion_masks(spec: PhantomSpec, grid: GridSpec, target: str) -> list[tuple[Inclusion, np.ndarray]]:
    masks = []
    for inclusion in spec.for_target(target):
        _check_inside(inclusion.box, spec.omega)
        masks.append((inclusion, rasterize(inclusion, grid)))
    return masks


def _paint(spec: PhantomSpec, grid: GridSpec, target: str) -> ScalarField:
    values = np.full((grid.ny, grid.nx), spec.background(target))
    # later inclusions overwrite earlier ones
    for inclusion, mask in inclusion_masks(spec, grid, target):
        values[mask] = inclusion.value
        logger.debug("painted %s %s over %d nodes", target, inclusion.shape, int(mask.sum()))
    return ScalarField(grid.spatial(), values)


def build_phantom(spec: PhantomSpec, grid: GridSpec) -> tuple[ScalarField, ScalarField]:
    """Return (beta, gamma) on the spatial part of ``grid``."""
    a, b, c, d = spec.omega
    if not (grid.x_min <= a < b <= grid.x_max and grid.y_min <= c < d <= grid.y_max):
        raise ConfigurationError(f"measurement domain {spec.omega} is not inside the simulation grid")
    spatial = grid.spatial()
    return _paint(spec, spatial, "beta"), _paint(spec, spatial, "gamma")


def truth_mask(spec: PhantomSpec, grid: GridSpec, target: str) -> np.ndarray | None:
    """Union of the inclusion masks for ``target``; None when there are none."""
    masks = [mask for _, mask in inclusion_masks(spec, grid.spatial(), target)]
    if not masks:
        return None
    return np.logical_or.reduce(masks)


def inside_value(spec: PhantomSpec, target: str) -> float | None:
    inclusions: Iterable[Inclusion] = spec.for_target(target)
    values = [inc.value for inc in inclusions]
    return values[-1] if values else None
