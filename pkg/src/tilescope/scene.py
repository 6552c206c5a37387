"""Synthetic specimen world for the virtual microscope.

The scene is a large texture (one per imaging channel, derived from a shared
geometry of maze-like channel walls and cell-like blobs) sampled on a fixed
micrometer grid, plus a ground-truth focus surface and a stage-drift process.
Everything is generated from a seeded RNG, so a scene is fully reproducible
and its drift trajectory can serve as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .imaging import Channel


@dataclass(frozen=True)
class DriftSpec:
    """Stage/sample drift: linear rate plus a Gaussian random walk.

    The walk advances by one N(0, walk_sigma_um) step per axis each time the
    clock crosses a multiple of walk_interval_s.
    """

    rate_um_per_h: tuple[float, float] = (0.0, 0.0)
    walk_sigma_um: float = 0.0
    walk_interval_s: float = 600.0

    def __post_init__(self):
        if self.walk_sigma_um < 0:
            raise ParameterError("walk_sigma_um must be >= 0")
        if self.walk_interval_s <= 0:
            raise ParameterError("walk_interval_s must be > 0")


class DriftProcess:
    """Evaluates cumulative drift (µm) at any sim time, lazily and repeatably.

    Walk increments are drawn in epoch order and cached, so queries at any
    times, in any order, see one consistent trajectory for a given seed.
    """

    def __init__(self, spec: DriftSpec, rng: np.random.Generator):
        self.spec = spec
        self._rng = rng
        self._steps: list[np.ndarray] = []

    def at(self, t_s: float) -> np.ndarray:
        if t_s < 0:
            raise ParameterError("drift queried at negative time")
        drift = np.array(self.spec.rate_um_per_h, dtype=np.float64) * (t_s / 3600.0)
        n_epochs = int(np.floor(t_s / self.spec.walk_interval_s))
        if n_epochs > 0 and self.spec.walk_sigma_um > 0:
            while len(self._steps) < n_epochs:
                self._steps.append(self._rng.normal(0.0, self.spec.walk_sigma_um, size=2))
            drift += np.sum(self._steps[:n_epochs], axis=0)
        return drift


@dataclass
class SceneConfig:
    size_px: int = 4096
    pixel_size_um: float = 5.3125
    maze_cell_px: int = 64
    wall_px: int = 5
    blob_per_cell: float = 0.8
    uniform_level: float | None = None  # blank reference sample when set
    focal_plane: tuple[float, float, float] = (0.0, 0.0, 25.0)  # z = a x + b y + c, µm
    drift: DriftSpec = field(default_factory=DriftSpec)

    def __post_init__(self):
        if self.size_px < 64:
            raise ParameterError("scene size_px must be >= 64")
        if self.pixel_size_um <= 0:
            raise ParameterError("scene pixel_size_um must be > 0")

    @property
    def extent_um(self) -> float:
        return self.size_px * self.pixel_size_um


class SpecimenScene:
    """World the simulator images: per-channel textures in [0, 1] on a µm grid."""

    def __init__(self, config: SceneConfig, seed_seq: np.random.SeedSequence):
        self.config = config
        geom_seq, drift_seq = seed_seq.spawn(2)
        self._geom_rng = np.random.default_rng(geom_seq)
        self.drift = DriftProcess(config.drift, np.random.default_rng(drift_seq))
        self._geometry: dict[str, np.ndarray] | None = None
        self._textures: dict[Channel, np.ndarray] = {}

    # texture synthesis ---------------------------------------------------

    def _build_geometry(self) -> dict[str, np.ndarray]:
        if self._geometry is not None:
            return self._geometry
        n = self.config.size_px
        rng = self._geom_rng

        coarse = rng.standard_normal((max(n // 8, 8),) * 2)
        coarse = ndimage.gaussian_filter(coarse, 1.2)
        noise = ndimage.zoom(coarse, n / coarse.shape[0], order=1, grid_mode=True, mode="nearest")
        if noise.shape != (n, n):  # zoom rounds the output shape
            pad_y, pad_x = max(n - noise.shape[0], 0), max(n - noise.shape[1], 0)
            noise = np.pad(noise, ((0, pad_y), (0, pad_x)), mode="edge")[:n, :n]
        noise = (noise / (np.abs(noise).max() + 1e-12)).astype(np.float32)

        cell, wall = self.config.maze_cell_px, self.config.wall_px
        line = (np.arange(n) % cell) < wall
        walls = np.logical_or.outer(line, line)
        # punch door openings so the lattice reads as a maze, not a grid
        n_cells = n // cell
        for cy in range(n_cells):
            for cx in range(n_cells):
                if rng.random() < 0.45:
                    continue
                if rng.random() < 0.5:  # horizontal wall segment of this cell
                    y0 = cy * cell
                    x0 = cx * cell + wall + int(rng.integers(0, max(cell - 3 * wall, 1)))
                    walls[y0 : y0 + wall, x0 : x0 + 2 * wall] = False
                else:
                    x0 = cx * cell
                    y0 = cy * cell + wall + int(rng.integers(0, max(cell - 3 * wall, 1)))
                    walls[y0 : y0 + 2 * wall, x0 : x0 + wall] = False
        walls_f = ndimage.gaussian_filter(walls.astype(np.float32), 1.2)

        blobs = np.zeros((n, n), dtype=np.float32)
        n_blobs = int(self.config.blob_per_cell * n_cells * n_cells)
        for _ in range(n_blobs):
            sigma = float(rng.uniform(2.5, 7.0))
            amp = float(rng.uniform(0.45, 1.0))
            r = int(np.ceil(3 * sigma))
            cyx = rng.integers(r, n - r, size=2)
            ax = np.arange(-r, r + 1, dtype=np.float32)
            kern = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
            y, x = int(cyx[0]), int(cyx[1])
            blobs[y - r : y + r + 1, x - r : x + r + 1] += amp * kern
        np.clip(blobs, 0.0, 1.0, out=blobs)

        halo = ndimage.gaussian_filter(walls_f + blobs, 1.0) - ndimage.gaussian_filter(
            walls_f + blobs, 3.0
        )
        halo = np.abs(halo, out=halo)
        halo /= halo.max() + 1e-12

        self._geometry = {"noise": noise, "walls": walls_f, "blobs": blobs, "halo": halo}
        return self._geometry

    def texture(self, channel: Channel) -> np.ndarray:
        channel = Channel(channel)
        if channel not in self._textures:
            if self.config.uniform_level is not None:
                level = float(np.clip(self.config.uniform_level, 0.0, 1.0))
                n = self.config.size_px
                self._textures[channel] = np.full((n, n), level, dtype=np.float32)
                return self._textures[channel]
            g = self._build_geometry()
            if channel == Channel.BF:
                tex = 0.80 + 0.08 * g["noise"] - 0.45 * g["walls"] - 0.30 * g["blobs"]
            elif channel == Channel.PC:
                tex = 0.42 + 0.10 * g["noise"] - 0.15 * g["walls"] + 0.55 * g["halo"] + 0.25 * g["blobs"]
            else:  # FL: dark field, bright labeled cells
                tex = 0.03 + 0.015 * (g["noise"] + 1.0) + 0.9 * g["blobs"] + 0.04 * g["walls"]
            self._textures[channel] = np.clip(tex, 0.0, 1.0).astype(np.float32)
        return self._textures[channel]

    # sampling ------------------------------------------------------------

    def sample(self, channel: Channel, y0_px: float, x0_px: float, step: float, size: int) -> np.ndarray:
        """Bilinear-sample a size×size window whose top-left texture pixel is
        (y0_px, x0_px), advancing `step` texture pixels per output pixel.

        Sampling exactly on the integer grid (step 1, integer origin) is an
        exact crop.  Reads outside the texture are a contract violation.
        """
        n = self.config.size_px
        ys = y0_px + np.arange(size, dtype=np.float64) * step
        xs = x0_px + np.arange(size, dtype=np.float64) * step
        if ys[0] < 0 or xs[0] < 0 or ys[-1] > n - 1 or xs[-1] > n - 1:
            raise ParameterError(
                f"sample window [{ys[0]:.1f}..{ys[-1]:.1f}]x[{xs[0]:.1f}..{xs[-1]:.1f}] px "
                f"leaves the {n}x{n} scene (drift headroom exhausted)"
            )
        tex = self.texture(channel)
        iy = np.floor(ys).astype(np.intp)
        ix = np.floor(xs).astype(np.intp)
        fy = (ys - iy)[:, None]
        fx = (xs - ix)[None, :]
        iy1 = np.minimum(iy + 1, n - 1)
        ix1 = np.minimum(ix + 1, n - 1)
        out = (
            tex[np.ix_(iy, ix)] * (1 - fy) * (1 - fx)
            + tex[np.ix_(iy, ix1)] * (1 - fy) * fx
            + tex[np.ix_(iy1, ix)] * fy * (1 - fx)
            + tex[np.ix_(iy1, ix1)] * fy * fx
        )
        return out.astype(np.float64)

    def focal_z(self, x_um: float, y_um: float) -> float:
        a, b, c = self.config.focal_plane
        return a * x_um + b * y_um + c
