"""Green-screen substitution and green-background removal.

The keying rule turns color similarity to green into transparency. Per
pixel, each channel is normalized by the norm factor, the red and blue
ratios are compared against the green ratio with a small offset that keeps
dark pixels opaque, negative terms clamp to zero, and the combined term is
scaled back to an 8-bit alpha. Alphas above the threshold saturate to 255,
so the output alpha is either a soft fringe value in [0, threshold] or
fully opaque.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import MaskImage, RgbaImage

DEFAULT_KEY_COLOR = (0, 100, 0)


@dataclass(frozen=True)
class ChromaParams:
    """Constants of the keying rule.

    norm_factor: channel normalization divisor (and re-scale factor).
    dark_offset: added to the red-vs-green and blue-vs-green terms so dark
        pixels do not key out; tunable, in [0, 1].
    alpha_threshold: raw alphas strictly above this saturate to 255.
    key_color: RGB painted over background pixels by apply_greenscreen.
    """

    norm_factor: float = 255.0
    dark_offset: float = 0.2
    alpha_threshold: float = 50.0
    key_color: tuple[int, int, int] = DEFAULT_KEY_COLOR

    def __post_init__(self):
        if self.norm_factor <= 0:
            raise ValueError("norm_factor must be positive")
        if not 0.0 <= self.dark_offset <= 1.0:
            raise ValueError("dark_offset must be in [0, 1]")
        if not 0.0 <= self.alpha_threshold <= 255.0:
            raise ValueError("alpha_threshold must be in [0, 255]")
        if len(self.key_color) != 3 or any(not 0 <= c <= 255 for c in self.key_color):
            raise ValueError("key_color must be an RGB triple of 8-bit values")


def alpha_map(r, g, b, params: ChromaParams = ChromaParams()) -> np.ndarray:
    """Vectorized keying rule: alpha for arrays of R, G, B channel values."""
    norm = params.norm_factor
    r_ratio = np.asarray(r, dtype=np.float64) / norm
    g_ratio = np.asarray(g, dtype=np.float64) / norm
    b_ratio = np.asarray(b, dtype=np.float64) / norm
    red_vs_green = np.maximum(r_ratio - g_ratio + params.dark_offset, 0.0)
    blue_vs_green = np.maximum(b_ratio - g_ratio + params.dark_offset, 0.0)
    raw = (red_vs_green + blue_vs_green) * norm
    # Round half-up; the threshold comparison is strict ("above").
    rounded = np.clip(np.floor(raw + 0.5), 0.0, 255.0)
    return np.where(raw > params.alpha_threshold, 255.0, rounded).astype(np.uint8)


def pixel_alpha(r: int, g: int, b: int, params: ChromaParams = ChromaParams()) -> int:
    """Keying rule for a single pixel; channels in [0, 255]."""
    for name, v in (("r", r), ("g", g), ("b", b)):
        if not 0 <= v <= 255:
            raise ValueError(f"channel {name}={v} outside [0, 255]")
    return int(alpha_map(np.float64(r), np.float64(g), np.float64(b), params))


def remove_green(img: RgbaImage, params: ChromaParams = ChromaParams()) -> RgbaImage:
    """Replace each pixel's alpha with the keyed alpha; RGB is untouched."""
    px = img.pixels
    out = px.copy()
    out[:, :, 3] = alpha_map(px[:, :, 0], px[:, :, 1], px[:, :, 2], params)
    return RgbaImage(out)


def apply_greenscreen(
    photo: RgbaImage, mask: MaskImage, params: ChromaParams = ChromaParams()
) -> RgbaImage:
    """Paint key_color over background pixels, keep object pixels verbatim.

    Output is fully opaque: object pixels copy the photo's RGB with alpha
    255, background pixels become the key color with alpha 255.
    """
    if (photo.width, photo.height) != (mask.width, mask.height):
        raise ValueError(
            f"photo is {photo.width}x{photo.height} but mask is "
            f"{mask.width}x{mask.height}"
        )
    out = np.empty_like(photo.pixels)
    out[:, :, :3] = photo.pixels[:, :, :3]
    out[:, :, 3] = 255
    background = ~mask.object_pixels()
    out[background, 0] = params.key_color[0]
    out[background, 1] = params.key_color[1]
    out[background, 2] = params.key_color[2]
    return RgbaImage(out)
