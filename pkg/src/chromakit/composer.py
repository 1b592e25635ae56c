"""Blending stage: geometric transforms, tonal curves, regional blur,
alpha ramps, alpha compositing, and bounding-box derivation.

All pixel math happens in float64 on immutable uint8 rasters; results are
rounded half-up and saturate to the 8-bit range. Effects apply in the
fixed order sigmoid -> blur -> alpha gradient -> composite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .annotations import BoundingBox
from .errors import ComposeError
from .imagecore import RgbaImage


@dataclass(frozen=True)
class Transform:
    """Scale-then-rotate of the foreground plus its paste position.

    rotation is in degrees, counterclockwise about the foreground center;
    translate is the top-left paste position on the background canvas.
    """

    rotation: float = 0.0
    scale: float = 1.0
    translate: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class EffectToggles:
    sigmoid: bool = False
    blur: bool = False
    alpha_gradient: bool = False


@dataclass(frozen=True)
class ComposeConfig:
    """Transform ranges, effect toggles, and the RNG seed for a batch run."""

    rng_seed: int = 0
    scale_range: tuple[float, float] = (1.0, 1.0)
    rotation_range: tuple[float, float] = (0.0, 0.0)
    effects: EffectToggles = field(default_factory=EffectToggles)
    sigmoid_cutoff: float = 0.5
    sigmoid_gain: float = 10.0
    blur_sigma: float = 3.0
    blur_fraction: float = 0.5

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid scale range {self.scale_range}")
        if self.rotation_range[0] > self.rotation_range[1]:
            raise ValueError(f"invalid rotation range {self.rotation_range}")
        if not 0.0 <= self.sigmoid_cutoff <= 1.0:
            raise ValueError("sigmoid_cutoff must be in [0, 1]")
        if self.sigmoid_gain <= 0:
            raise ValueError("sigmoid_gain must be positive")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        if not 0.0 < self.blur_fraction <= 1.0:
            raise ValueError("blur_fraction must be in (0, 1]")


def _round_u8(values: np.ndarray) -> np.ndarray:
    # Half-up rounding, saturating to the 8-bit range.
    return np.clip(np.floor(values + 0.5), 0.0, 255.0).astype(np.uint8)


def _canvas_size(width: int, height: int, scale: float, rotation_deg: float) -> tuple[int, int]:
    """Extent of a width x height raster after scale-then-rotate."""
    theta = math.radians(rotation_deg)
    cos_t, sin_t = abs(math.cos(theta)), abs(math.sin(theta))
    ws, hs = width * scale, height * scale
    # Epsilon keeps float noise (e.g. cos of a full turn) from adding a row.
    w2 = max(1, math.ceil(ws * cos_t + hs * sin_t - 1e-7))
    h2 = max(1, math.ceil(ws * sin_t + hs * cos_t - 1e-7))
    return w2, h2


def _bilinear_rgba(src: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample src at fractional coordinates; outside samples are (0,0,0,0)."""
    h, w = src.shape[:2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    acc = np.zeros(sx.shape + (4,), dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        yy = y0 + dy
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xx = x0 + dx
            valid = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            sample = src[np.where(valid, yy, 0), np.where(valid, xx, 0)].astype(np.float64)
            acc += sample * (wx * wy * valid)[..., None]
    return _round_u8(acc)


def transform_foreground(fg: RgbaImage, t: Transform) -> RgbaImage:
    """Scale then rotate with bilinear interpolation on all four channels.

    The output canvas is the tight extent of the transformed raster;
    samples falling outside the source are fully transparent. Rotation 0
    with scale 1 is the exact identity.
    """
    w, h = fg.width, fg.height
    w2, h2 = _canvas_size(w, h, t.scale, t.rotation)
    theta = math.radians(t.rotation)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    xq = np.arange(w2, dtype=np.float64) + 0.5 - w2 / 2.0
    yq = np.arange(h2, dtype=np.float64) + 0.5 - h2 / 2.0
    xg, yg = np.meshgrid(xq, yq)
    # Inverse rotation back to the scaled raster, then inverse scale.
    ux = xg * cos_t - yg * sin_t + (w * t.scale) / 2.0
    uy = xg * sin_t + yg * cos_t + (h * t.scale) / 2.0
    out = _bilinear_rgba(fg.pixels, ux / t.scale - 0.5, uy / t.scale - 0.5)
    if not out[:, :, 3].any():
        raise ComposeError("transform produced an image with no opaque pixels")
    return RgbaImage(out)


def alpha_composite(fg: RgbaImage, bg: RgbaImage, at: tuple[int, int]) -> RgbaImage:
    """Standard "over" operator: out = fg*a + bg*(1-a), a = fg_alpha/255.

    The foreground rectangle must fit inside the background; the composite
    is fully opaque everywhere.
    """
    x, y = at
    if x < 0 or y < 0 or x + fg.width > bg.width or y + fg.height > bg.height:
        raise ComposeError(
            f"placement ({x},{y}) of {fg.width}x{fg.height} foreground is outside "
            f"{bg.width}x{bg.height} background"
        )
    out = bg.pixels.copy()
    a = fg.pixels[:, :, 3].astype(np.float64)[..., None] / 255.0
    region = out[y:y + fg.height, x:x + fg.width, :3].astype(np.float64)
    blended = fg.pixels[:, :, :3].astype(np.float64) * a + region * (1.0 - a)
    out[y:y + fg.height, x:x + fg.width, :3] = _round_u8(blended)
    out[:, :, 3] = 255
    return RgbaImage(out)


def sigmoid_adjust(
    img: RgbaImage, channels: str = "rgb", cutoff: float = 0.5, gain: float = 10.0
) -> RgbaImage:
    """Remap the selected channels through a centered sigmoid tone curve.

    Each selected channel value v becomes 255 * S(gain * (v/255 - cutoff))
    with S the logistic function, so the curve crosses mid-grey at the
    cutoff. Unselected channels and alpha are untouched.
    """
    if not 0.0 <= cutoff <= 1.0:
        raise ValueError("cutoff must be in [0, 1]")
    if gain <= 0:
        raise ValueError("gain must be positive")
    index = {"r": 0, "g": 1, "b": 2}
    selected = set(channels.lower())
    unknown = selected - set(index)
    if unknown:
        raise ValueError(f"unknown channels {sorted(unknown)}; expected a subset of 'rgb'")
    out = img.pixels.copy()
    for ch in sorted(selected):
        i = index[ch]
        x = out[:, :, i].astype(np.float64) / 255.0
        with np.errstate(over="ignore"):
            curve = 1.0 / (1.0 + np.exp(-gain * (x - cutoff)))
        out[:, :, i] = _round_u8(255.0 * curve)
    return RgbaImage(out)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def blur_left_region(img: RgbaImage, sigma: float, fraction: float = 0.5) -> RgbaImage:
    """Gaussian-blur the leftmost floor(width * fraction) columns.

    Separable convolution with kernel radius ceil(3*sigma) and
    clamp-to-edge handling at the region borders; the rest of the image is
    untouched.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    cols = int(img.width * fraction)
    if cols == 0:
        return img
    kernel = _gaussian_kernel(sigma)
    radius = len(kernel) // 2
    region = img.pixels[:, :cols, :].astype(np.float64)
    padded = np.pad(region, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    rows_pass = np.zeros((padded.shape[0], cols, 4), dtype=np.float64)
    for i, weight in enumerate(kernel):
        rows_pass += weight * padded[:, i:i + cols, :]
    blurred = np.zeros_like(region)
    for i, weight in enumerate(kernel):
        blurred += weight * rows_pass[i:i + region.shape[0], :, :]
    out = img.pixels.copy()
    out[:, :cols, :] = _round_u8(blurred)
    return RgbaImage(out)


def alpha_gradient(img: RgbaImage) -> RgbaImage:
    """Scale alpha by a linear column ramp: 0 at the left edge, 1 at the right."""
    if img.width < 2:
        raise ValueError("alpha_gradient requires width >= 2")
    ramp = np.arange(img.width, dtype=np.float64) / (img.width - 1)
    out = img.pixels.copy()
    out[:, :, 3] = _round_u8(out[:, :, 3].astype(np.float64) * ramp[None, :])
    return RgbaImage(out)


def alpha_extents(img: RgbaImage) -> tuple[int, int, int, int] | None:
    """Inclusive (x_min, y_min, x_max, y_max) of alpha > 0 pixels, or None."""
    ys, xs = np.nonzero(img.pixels[:, :, 3])
    if xs.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def derive_bbox(fg: RgbaImage, t: Transform) -> tuple[int, int, int, int]:
    """Extents of alpha > 0 pixels after the transform, offset by the paste
    position."""
    extents = alpha_extents(transform_foreground(fg, t))
    if extents is None:
        raise ComposeError("foreground has no opaque pixels")
    x, y = t.translate
    return extents[0] + x, extents[1] + y, extents[2] + x, extents[3] + y


def cell_rng(seed: int, fg_index: int, bg_index: int) -> np.random.Generator:
    """Deterministic generator for one (fg, bg) grid cell.

    Keyed by (seed, fg index, bg index) so any cell's output is
    reproducible in isolation and independent of worker scheduling.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, fg_index, bg_index]))


def sample_transform(
    fg: RgbaImage, bg: RgbaImage, cfg: ComposeConfig, rng: np.random.Generator
) -> Transform:
    """Draw scale, rotation, then a uniform placement that keeps the
    transformed foreground fully inside the background."""
    scale = float(rng.uniform(cfg.scale_range[0], cfg.scale_range[1]))
    rotation = float(rng.uniform(cfg.rotation_range[0], cfg.rotation_range[1]))
    w2, h2 = _canvas_size(fg.width, fg.height, scale, rotation)
    if w2 > bg.width or h2 > bg.height:
        raise ComposeError(
            f"placement impossible: transformed foreground {w2}x{h2} exceeds "
            f"background {bg.width}x{bg.height}"
        )
    x = int(rng.integers(0, bg.width - w2 + 1))
    y = int(rng.integers(0, bg.height - h2 + 1))
    return Transform(rotation=rotation, scale=scale, translate=(x, y))


def compose_at(
    fg: RgbaImage,
    bg: RgbaImage,
    t: Transform,
    cfg: ComposeConfig,
    class_name: str = "object",
) -> tuple[RgbaImage, BoundingBox]:
    """Apply the transform and enabled effects, composite, and derive the box.

    The box is the alpha > 0 extent of the foreground raster as composited,
    i.e. after any effects that change alpha.
    """
    raster = transform_foreground(fg, t)
    if cfg.effects.sigmoid:
        raster = sigmoid_adjust(raster, "rgb", cfg.sigmoid_cutoff, cfg.sigmoid_gain)
    if cfg.effects.blur:
        raster = blur_left_region(raster, cfg.blur_sigma, cfg.blur_fraction)
    if cfg.effects.alpha_gradient:
        raster = alpha_gradient(raster)
    extents = alpha_extents(raster)
    if extents is None:
        raise ComposeError("foreground fully transparent after effects")
    composite = alpha_composite(raster, bg, t.translate)
    x, y = t.translate
    box = BoundingBox(class_name, extents[0] + x, extents[1] + y, extents[2] + x, extents[3] + y)
    return composite, box


def compose_pair(
    fg: RgbaImage,
    bg: RgbaImage,
    cfg: ComposeConfig,
    rng: np.random.Generator,
    class_name: str = "object",
) -> tuple[RgbaImage, BoundingBox]:
    """Sample a transform from cfg ranges and compose one (fg, bg) pair."""
    t = sample_transform(fg, bg, cfg, rng)
    return compose_at(fg, bg, t, cfg, class_name)
