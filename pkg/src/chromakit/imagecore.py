"""Pixel-buffer types and PNG file IO shared by all pipeline stages.

Images are 8-bit RGBA rasters, row-major, top-left origin with y growing
downward. PNG is the only supported file format: lossless alpha is required
for the keying math, so JPEG inputs must be pre-converted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageIoError

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# PNG color types we decode: truecolor and truecolor+alpha for photos,
# plus greyscale for masks.
_COLOR_TYPE_GREY = 0
_COLOR_TYPE_RGB = 2
_COLOR_TYPE_RGBA = 6


class RgbaImage:
    """Immutable width x height raster of 8-bit (r, g, b, alpha) pixels."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels)
        if pixels.dtype != np.uint8:
            raise ValueError(f"RgbaImage requires uint8 pixels, got {pixels.dtype}")
        if pixels.ndim != 3 or pixels.shape[2] != 4:
            raise ValueError(f"RgbaImage requires shape (h, w, 4), got {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError("RgbaImage must be at least 1x1")
        pixels = np.ascontiguousarray(pixels)
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    def __setattr__(self, name, value):
        raise AttributeError("RgbaImage is immutable")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RgbaImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None

    def __repr__(self) -> str:
        return f"RgbaImage({self.width}x{self.height})"

    @classmethod
    def filled(cls, width: int, height: int, color: tuple[int, int, int, int]) -> "RgbaImage":
        """Uniform image of the given RGBA color."""
        arr = np.empty((height, width, 4), dtype=np.uint8)
        arr[:, :] = color
        return cls(arr)


class MaskImage:
    """8-bit segmentation mask; nonzero bytes mark object pixels."""

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        values = np.asarray(values)
        if values.dtype != np.uint8:
            raise ValueError(f"MaskImage requires uint8 values, got {values.dtype}")
        if values.ndim != 2:
            raise ValueError(f"MaskImage requires shape (h, w), got {values.shape}")
        values = np.ascontiguousarray(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("MaskImage is immutable")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def object_pixels(self) -> np.ndarray:
        """Boolean (h, w) array, True where the mask marks the object."""
        return self.values != 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskImage):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    def __repr__(self) -> str:
        return f"MaskImage({self.width}x{self.height})"


def _read_png_header(path: Path) -> tuple[int, int]:
    """Validate the PNG signature and return (bit_depth, color_type)."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(26)
    except FileNotFoundError:
        raise ImageIoError(f"no such image file: {path}") from None
    except OSError as exc:
        raise ImageIoError(f"cannot read image file {path}: {exc}") from exc
    if len(head) < 26 or not head.startswith(_PNG_SIGNATURE):
        raise ImageIoError(f"corrupt or non-PNG stream: {path}")
    if head[12:16] != b"IHDR":
        raise ImageIoError(f"corrupt PNG header: {path}")
    return head[24], head[25]


def _decode(path: Path, allowed_types: tuple[int, ...]) -> np.ndarray:
    bit_depth, color_type = _read_png_header(path)
    if bit_depth != 8:
        raise ImageIoError(f"unsupported bit depth {bit_depth} (only 8-bit PNG): {path}")
    if color_type not in allowed_types:
        raise ImageIoError(f"unsupported PNG color type {color_type}: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            return np.asarray(im)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageIoError(f"corrupt PNG stream {path}: {exc}") from exc


def load_image(path: str | Path) -> RgbaImage:
    """Decode an 8-bit RGB or RGBA PNG; RGB is promoted to alpha=255."""
    arr = _decode(Path(path), (_COLOR_TYPE_RGB, _COLOR_TYPE_RGBA))
    if arr.ndim == 3 and arr.shape[2] == 3:
        alpha = np.full(arr.shape[:2] + (1,), 255, dtype=np.uint8)
        arr = np.concatenate([arr, alpha], axis=2)
    return RgbaImage(arr)


def load_mask(path: str | Path) -> MaskImage:
    """Decode an 8-bit PNG as a mask.

    Greyscale values are used directly; RGB/RGBA masks are reduced with a
    per-pixel max over the color channels, so any nonzero channel marks the
    pixel as object. This tolerates both binary and class-indexed masks.
    """
    arr = _decode(Path(path), (_COLOR_TYPE_GREY, _COLOR_TYPE_RGB, _COLOR_TYPE_RGBA))
    if arr.ndim == 3:
        arr = arr[:, :, :3].max(axis=2)
    return MaskImage(arr)


def save_image(img: RgbaImage, path: str | Path) -> None:
    """Encode as RGBA PNG. Round-trips channel-for-channel with load_image."""
    path = Path(path)
    try:
        Image.fromarray(np.asarray(img.pixels), mode="RGBA").save(path, format="PNG")
    except FileNotFoundError:
        raise ImageIoError(f"cannot write image (missing directory?): {path}") from None
    except OSError as exc:
        raise ImageIoError(f"cannot write image {path}: {exc}") from exc
