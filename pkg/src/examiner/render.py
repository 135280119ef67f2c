"""Procedural 2D shape rasterizer: the stand-in for a full rendering pipeline.

Six shape classes are drawn into 32x32 grayscale images under six rendering
factors (rotation, scale, translation, foreground brightness, background
level) with 4x4 supersampled anti-aliasing. Rendering is pure and
deterministic: equal inputs give bit-identical images.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Factor, InvalidConfigError, ScenarioSpace

SHAPE_CLASSES = ("disk", "square", "triangle", "cross", "ring", "bar")
IMAGE_SIZE = 32
SUPERSAMPLE = 4


def render_space(bins: int = 100) -> ScenarioSpace:
    """The canonical 6-factor rendering space."""
    return ScenarioSpace(
        (
            Factor("rotation", 0.0, 2 * np.pi, bins),
            Factor("scale", 0.5, 1.5, bins),
            Factor("translate_x", -0.25, 0.25, bins),
            Factor("translate_y", -0.25, 0.25, bins),
            Factor("foreground_brightness", 0.2, 1.0, bins),
            Factor("background_level", 0.0, 0.5, bins),
        )
    )


@dataclass(frozen=True)
class ShapeInstance:
    """An underlying form: a shape class with a nominal size."""

    shape_class: str
    base_size: float = 0.3  # fraction of image width
    instance_id: str = ""

    def __post_init__(self):
        if self.shape_class not in SHAPE_CLASSES:
            raise InvalidConfigError(f"unknown shape class {self.shape_class!r}")
        if not 0.0 < self.base_size <= 0.5:
            raise InvalidConfigError(f"base_size {self.base_size} outside (0, 0.5]")
        if not self.instance_id:
            object.__setattr__(self, "instance_id", self.shape_class)

    @property
    def label(self) -> int:
        return SHAPE_CLASSES.index(self.shape_class)


def canonical_instances() -> tuple[ShapeInstance, ...]:
    """The examined instances: one per class, mid-range size."""
    return tuple(ShapeInstance(c, 0.33) for c in SHAPE_CLASSES)


def training_instances(per_class: int = 12) -> tuple[ShapeInstance, ...]:
    """A training population: per_class instances per class, sizes spread.

    Plays the role of a dataset with many objects per class; the examined
    canonical instance sits inside the covered size range.
    """
    out = []
    for cls in SHAPE_CLASSES:
        for j in range(per_class):
            size = 0.22 + 0.23 * (j / max(per_class - 1, 1))
            out.append(ShapeInstance(cls, round(size, 4), f"{cls}#{j}"))
    return tuple(out)


# Equilateral triangle with circumradius 1, one vertex pointing up.
_TRI_V = np.array(
    [[np.cos(a), np.sin(a)] for a in (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3)]
)
_TRI_E = np.roll(_TRI_V, -1, axis=0) - _TRI_V


def _inside(shape_class: str, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Membership test for the canonical unit-sized shape."""
    if shape_class == "disk":
        return px**2 + py**2 <= 1.0
    if shape_class == "square":
        return np.maximum(np.abs(px), np.abs(py)) <= 0.82
    if shape_class == "triangle":
        inside = np.ones(px.shape, dtype=bool)
        for (vx, vy), (ex, ey) in zip(_TRI_V, _TRI_E):
            inside &= ex * (py - vy) - ey * (px - vx) <= 0.0
        return inside
    if shape_class == "cross":
        return ((np.abs(px) <= 1.0) & (np.abs(py) <= 0.35)) | (
            (np.abs(py) <= 1.0) & (np.abs(px) <= 0.35)
        )
    if shape_class == "ring":
        r2 = px**2 + py**2
        return (r2 <= 1.0) & (r2 >= 0.55**2)
    if shape_class == "bar":
        return (np.abs(px) <= 1.0) & (np.abs(py) <= 0.3)
    raise InvalidConfigError(f"unknown shape class {shape_class!r}")


_GRID_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _sample_grid(image_size: int, supersample: int) -> tuple[np.ndarray, np.ndarray]:
    key = (image_size, supersample)
    if key not in _GRID_CACHE:
        s = image_size * supersample
        c = (np.arange(s) + 0.5) / s - 0.5  # centered image coords
        gx, gy = np.meshgrid(c, c, indexing="xy")
        _GRID_CACHE[key] = (gx, gy)
    return _GRID_CACHE[key]


def render(
    instance: ShapeInstance,
    values: np.ndarray,
    image_size: int = IMAGE_SIZE,
    supersample: int = SUPERSAMPLE,
) -> np.ndarray:
    """Rasterize the instance under a rendering scenario.

    The shape is scaled to base_size*scale (in image-width units), rotated
    about the image center, translated, and composited as
    background + coverage * (foreground - background).
    """
    theta, scale, tx, ty, fg, bg = np.asarray(values, dtype=float)
    gx, gy = _sample_grid(image_size, supersample)
    qx = gx - tx
    qy = gy - ty
    ct, st = np.cos(theta), np.sin(theta)
    r = instance.base_size * scale
    px = (ct * qx + st * qy) / r
    py = (-st * qx + ct * qy) / r
    mask = _inside(instance.shape_class, px, py)
    k = supersample
    coverage = mask.reshape(image_size, k, image_size, k).mean(axis=(1, 3))
    return bg + coverage * (fg - bg)


def render_batch(
    instance: ShapeInstance, scenarios: np.ndarray, chunk: int = 64
) -> np.ndarray:
    """Render many scenarios for one instance; chunked to bound memory."""
    scenarios = np.atleast_2d(np.asarray(scenarios, dtype=float))
    n = len(scenarios)
    out = np.empty((n, IMAGE_SIZE, IMAGE_SIZE))
    gx, gy = _sample_grid(IMAGE_SIZE, SUPERSAMPLE)
    for start in range(0, n, chunk):
        sl = scenarios[start : start + chunk]
        theta = sl[:, 0][:, None, None]
        r = (instance.base_size * sl[:, 1])[:, None, None]
        qx = gx[None] - sl[:, 2][:, None, None]
        qy = gy[None] - sl[:, 3][:, None, None]
        ct, st = np.cos(theta), np.sin(theta)
        px = (ct * qx + st * qy) / r
        py = (-st * qx + ct * qy) / r
        mask = _inside(instance.shape_class, px, py)
        k = SUPERSAMPLE
        cov = mask.reshape(len(sl), IMAGE_SIZE, k, IMAGE_SIZE, k).mean(axis=(2, 4))
        fg = sl[:, 4][:, None, None]
        bg = sl[:, 5][:, None, None]
        out[start : start + len(sl)] = bg + cov * (fg - bg)
    return out


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    """Write a [0,1] grayscale image as plain (P2) PGM."""
    image = np.asarray(image)
    levels = np.clip(np.rint(image * 255), 0, 255).astype(int)
    lines = [f"P2", f"{image.shape[1]} {image.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    Path(path).write_text("\n".join(lines) + "\n")
