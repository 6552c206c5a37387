"""Illumination flattening: build a background reference and subtract it.

The background is the pixelwise mean of reference tiles snapped on a blank
sample.  Correction subtracts the background and adds its mean back, so the
vignette profile is removed while overall brightness is preserved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .imaging import Channel, Image, quantize
from .tiffio import read_tiff, write_tiff

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlatField:
    """Averaged background plus the acquisition parameters it is valid for."""

    background: np.ndarray  # float64, sensor-sized
    channel: Channel
    objective: str
    exposure_ms: float
    illumination: float
    n_source_tiles: int
    pixel_size_um: float
    source_bit_depth: int

    def __post_init__(self):
        if self.n_source_tiles < 1:
            raise ParameterError("flat field needs at least one source tile")
        bg = np.asarray(self.background, dtype=np.float64)
        bg.flags.writeable = False
        object.__setattr__(self, "background", bg)

    @property
    def mean_level(self) -> float:
        return float(self.background.mean())

    def mismatches(self, objective: str, exposure_ms: float, illumination: float) -> list[str]:
        """Acquisition-parameter differences that make this reference suspect."""
        found = []
        if objective != self.objective:
            found.append(f"objective {objective} != reference {self.objective}")
        if exposure_ms != self.exposure_ms:
            found.append(f"exposure {exposure_ms} ms != reference {self.exposure_ms} ms")
        if illumination != self.illumination:
            found.append(f"illumination {illumination} != reference {self.illumination}")
        return found


def create_flattening(
    tiles: list[Image],
    objective: str,
    exposure_ms: float,
    illumination: float = 1.0,
    smoothing_sigma: float = 0.0,
) -> FlatField:
    """Pixelwise mean of reference tiles, optionally Gaussian-smoothed."""
    if not tiles:
        raise ParameterError("flattening needs at least one reference tile")
    first = tiles[0]
    for t in tiles[1:]:
        if t.pixels.shape != first.pixels.shape:
            raise ParameterError(
                f"mixed tile dimensions {t.pixels.shape} vs {first.pixels.shape}"
            )
        if t.channel != first.channel:
            raise ParameterError(f"mixed channels {t.channel} vs {first.channel}")
        if t.bit_depth != first.bit_depth:
            raise ParameterError("mixed bit depths in reference tiles")
    background = np.mean([t.astype_float() for t in tiles], axis=0)
    if smoothing_sigma > 0:
        background = ndimage.gaussian_filter(background, smoothing_sigma, mode="nearest")
    return FlatField(
        background=background,
        channel=first.channel,
        objective=objective,
        exposure_ms=float(exposure_ms),
        illumination=float(illumination),
        n_source_tiles=len(tiles),
        pixel_size_um=first.pixel_size,
        source_bit_depth=first.bit_depth,
    )


def apply_flattening(img: Image, ff: FlatField) -> Image:
    """corrected = clamp(img - background + mean(background)), same bit depth."""
    if img.pixels.shape != ff.background.shape:
        raise ParameterError(
            f"image {img.pixels.shape} does not match background {ff.background.shape}"
        )
    if img.channel != ff.channel:
        log.warning("flattening %s image with a %s reference", img.channel.value, ff.channel.value)
    corrected = img.astype_float() - ff.background + ff.mean_level
    return img.with_pixels(quantize(corrected, img.bit_depth))


# persistence under resume/ -------------------------------------------------

def _basename(channel: Channel, objective: str) -> str:
    return f"flattening_{channel.value}_{objective}"


def save_flatfield(ff: FlatField, resume_dir: str | Path) -> Path:
    """Store the background as a scaled 16-bit TIFF plus a key: value sidecar."""
    resume_dir = Path(resume_dir)
    resume_dir.mkdir(parents=True, exist_ok=True)
    peak = float(ff.background.max())
    scale = 65535.0 / peak if peak > 0 else 1.0
    stored = Image(
        quantize(ff.background * scale, 16), ff.pixel_size_um, ff.channel
    )
    base = resume_dir / _basename(ff.channel, ff.objective)
    write_tiff(base.with_suffix(".tif"), stored)
    sidecar = "".join(
        f"{k}: {v}\n"
        for k, v in (
            ("channel", ff.channel.value),
            ("objective", ff.objective),
            ("exposure_ms", repr(ff.exposure_ms)),
            ("illumination", repr(ff.illumination)),
            ("n_source_tiles", ff.n_source_tiles),
            ("pixel_size_um", repr(ff.pixel_size_um)),
            ("source_bit_depth", ff.source_bit_depth),
            ("scale", repr(scale)),
        )
    )
    base.with_suffix(".txt").write_text(sidecar)
    return base.with_suffix(".tif")


def load_flatfield(resume_dir: str | Path, channel: Channel, objective: str) -> FlatField:
    base = Path(resume_dir) / _basename(Channel(channel), objective)
    tif, txt = base.with_suffix(".tif"), base.with_suffix(".txt")
    if not tif.exists() or not txt.exists():
        raise FileNotFoundError(f"no stored flattening for {channel} / {objective} in {base.parent}")
    meta: dict[str, str] = {}
    for line in txt.read_text().splitlines():
        if ": " in line:
            k, v = line.split(": ", 1)
            meta[k] = v
    stored = read_tiff(tif)
    scale = float(meta["scale"])
    return FlatField(
        background=stored.astype_float() / scale,
        channel=Channel(meta["channel"]),
        objective=meta["objective"],
        exposure_ms=float(meta["exposure_ms"]),
        illumination=float(meta["illumination"]),
        n_source_tiles=int(meta["n_source_tiles"]),
        pixel_size_um=float(meta["pixel_size_um"]),
        source_bit_depth=int(meta["source_bit_depth"]),
    )
