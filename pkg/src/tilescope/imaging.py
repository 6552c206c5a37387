"""Raster image type and the pixel operations shared by the whole pipeline.

Images are immutable single-channel rasters (uint8 or uint16) carrying the
physical pixel size and the imaging mode they were captured with.  All
registration and correction math runs on float64 intermediates; values are
quantized back to integer levels only when an ``Image`` is constructed or
persisted.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import ParameterError


class Channel(str, Enum):
    """Imaging modality: bright field, phase contrast, fluorescence."""

    BF = "BF"
    PC = "PC"
    FL = "FL"


class Translation(NamedTuple):
    """Signed sub-pixel shift in pixels (+dx right, +dy down)."""

    dx: float
    dy: float


@dataclass(frozen=True, eq=False)
class Image:
    """Single-channel raster with bit depth, pixel size, and modality.

    ``pixels`` is a row-major (height, width) array of dtype uint8 or uint16;
    the dtype fixes the bit depth.  The array is made read-only so instances
    can be shared freely between threads.
    """

    pixels: np.ndarray
    pixel_size: float  # micrometers per pixel
    channel: Channel = Channel.BF

    def __post_init__(self):
        pix = np.ascontiguousarray(self.pixels)
        if pix.ndim != 2:
            raise ParameterError(f"pixels must be 2-D (height, width), got shape {pix.shape}")
        if pix.dtype not in (np.uint8, np.uint16):
            raise ParameterError(f"pixels dtype must be uint8 or uint16, got {pix.dtype}")
        if not self.pixel_size > 0:
            raise ParameterError(f"pixel_size must be > 0, got {self.pixel_size}")
        pix.flags.writeable = False
        object.__setattr__(self, "pixels", pix)
        object.__setattr__(self, "channel", Channel(self.channel))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def bit_depth(self) -> int:
        return 8 if self.pixels.dtype == np.uint8 else 16

    @property
    def max_level(self) -> int:
        return (1 << self.bit_depth) - 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return (
            self.pixels.dtype == other.pixels.dtype
            and np.array_equal(self.pixels, other.pixels)
            and self.pixel_size == other.pixel_size
            and self.channel == other.channel
        )

    def astype_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    def with_pixels(self, pixels: np.ndarray) -> "Image":
        return Image(pixels, self.pixel_size, self.channel)


@dataclass(frozen=True)
class TileAddress:
    """Identity of one captured tile within an acquisition."""

    roi_id: int
    row: int
    col: int
    timestep: int
    channel: Channel
    z_index: int = 0

    def __post_init__(self):
        for name in ("roi_id", "row", "col", "timestep", "z_index"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        object.__setattr__(self, "channel", Channel(self.channel))


def quantize(values: np.ndarray, bit_depth: int) -> np.ndarray:
    """Clamp float intensities to the bit-depth range and round half away from zero."""
    if bit_depth == 8:
        dtype, top = np.uint8, 255.0
    elif bit_depth == 16:
        dtype, top = np.uint16, 65535.0
    else:
        raise ParameterError(f"bit_depth must be 8 or 16, got {bit_depth}")
    clipped = np.clip(values, 0.0, top)
    # np.round rounds half to even; the pipeline's golden values assume
    # half-away-from-zero, which for non-negative input is floor(x + 0.5).
    return np.floor(clipped + 0.5).astype(dtype)


def translate_array(arr: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Shift a float array by (dx, dy) with bilinear interpolation, zero fill.

    Output pixel (y, x) takes the value of input position (y - dy, x - dx);
    positions outside the input contribute zero.
    """
    if not (np.isfinite(dx) and np.isfinite(dy)):
        raise ParameterError(f"translation must be finite, got ({dx}, {dy})")
    out = np.zeros_like(arr, dtype=np.float64)
    ix, fx = int(np.floor(dx)), dx - np.floor(dx)
    iy, fy = int(np.floor(dy)), dy - np.floor(dy)
    weights = (
        (ix, iy, (1 - fx) * (1 - fy)),
        (ix + 1, iy, fx * (1 - fy)),
        (ix, iy + 1, (1 - fx) * fy),
        (ix + 1, iy + 1, fx * fy),
    )
    h, w = arr.shape
    for sx, sy, wgt in weights:
        if wgt == 0.0:
            continue
        ys = slice(max(sy, 0), min(h + sy, h))
        xs = slice(max(sx, 0), min(w + sx, w))
        ys_src = slice(max(-sy, 0), min(h - sy, h))
        xs_src = slice(max(-sx, 0), min(w - sx, w))
        out[ys, xs] += wgt * arr[ys_src, xs_src]
    return out


def warp_translate(img: Image, t: Translation) -> Image:
    """Shift an image by a sub-pixel translation; uncovered borders become 0."""
    shifted = translate_array(img.astype_float(), float(t[0]), float(t[1]))
    return img.with_pixels(quantize(shifted, img.bit_depth))


def adjust_contrast(img: Image, lo: float, hi: float) -> Image:
    """Linear window/level map: values <= lo go to 0, >= hi to full scale."""
    top = float(img.max_level)
    if not (0 <= lo < hi <= top):
        raise ParameterError(f"require 0 <= lo < hi <= {top:.0f}, got lo={lo}, hi={hi}")
    scaled = (img.astype_float() - lo) * (top / (hi - lo))
    return img.with_pixels(quantize(scaled, img.bit_depth))
