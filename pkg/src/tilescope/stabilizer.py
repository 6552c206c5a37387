"""Tile-based video stabilization.

The stitched frame sequence is cut into a fixed grid of tile regions.  For
each consecutive frame pair, every tile's translation is estimated from
feature matches under sample consensus.  Tiles whose horizontal-drift time
series correlate strongly form a group presumed to follow the true global
drift; the group's per-timestep mean drift is accumulated and each frame is
warped by the negated cumulative drift.  Only two timesteps of tile pixels
are ever resident during estimation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GroupNotFoundError, ParameterError
from .features import FrameFeatures, extract_features, match_descriptors
from .imaging import Channel, Image, Translation, warp_translate
from .naming import stabilized_filename
from .tiffio import read_tiff, read_tiff_dimensions, write_tiff

log = logging.getLogger(__name__)

MAX_MATCH_DISPLACEMENT_PX = 50.0
CONSENSUS_ITERATIONS = 100
CONSENSUS_INLIER_TOL_PX = 2.0
MIN_MATCHES = 5
THRESHOLD_LADDER = tuple(round(0.95 - 0.05 * k, 2) for k in range(20))  # 0.95 .. 0.0


class TileDriftStore:
    """Per-timestep, per-tile translation estimates.

    Timestep 0 has no estimates (nothing earlier to compare against); entries
    where estimation failed stay invalid.
    """

    def __init__(self, n_timesteps: int, n_tiles: int):
        if n_timesteps < 2:
            raise ParameterError("drift store needs at least two timesteps")
        self.n_timesteps = n_timesteps
        self.n_tiles = n_tiles
        self.drift = np.zeros((n_timesteps, n_tiles, 2), dtype=np.float64)
        self.valid = np.zeros((n_timesteps, n_tiles), dtype=bool)

    def set(self, timestep: int, tile: int, t: Translation | None) -> None:
        if timestep < 1:
            raise ParameterError("timestep 0 has no previous frame to drift from")
        if t is None:
            self.valid[timestep, tile] = False
            return
        self.drift[timestep, tile] = (t.dx, t.dy)
        self.valid[timestep, tile] = True

    def dx_series(self, tile: int) -> tuple[np.ndarray, np.ndarray]:
        """(values, validity) of the tile's horizontal drift for timesteps >= 1."""
        return self.drift[1:, tile, 0], self.valid[1:, tile]


@dataclass(frozen=True)
class CorrelationMatrix:
    c: np.ndarray  # (n, n), symmetric, unit diagonal
    zero_variance_tiles: frozenset[int] = frozenset()

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class CorrelatedGroup:
    tiles: frozenset[int]
    threshold_used: float


@dataclass
class FrameDrift:
    """Group-averaged drift per timestep; row 0 is identically zero."""

    d: np.ndarray  # (n_timesteps, 2)
    undefined_steps: list[int] = field(default_factory=list)


def consensus_translation(
    displacements: np.ndarray,
    rng: np.random.Generator,
    iterations: int = CONSENSUS_ITERATIONS,
    inlier_tol: float = CONSENSUS_INLIER_TOL_PX,
    min_inliers: int = MIN_MATCHES,
) -> Translation | None:
    """Robust translation: best random single-match hypothesis by inlier count,
    returned as the mean of its inliers."""
    n = len(displacements)
    if n < min_inliers:
        return None
    best_count, best_mask = 0, None
    for _ in range(iterations):
        hyp = displacements[rng.integers(0, n)]
        err = np.hypot(*(displacements - hyp).T)
        mask = err <= inlier_tol
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None or best_count < min_inliers:
        return None
    mean = displacements[best_mask].mean(axis=0)
    return Translation(float(mean[0]), float(mean[1]))


def estimate_drift_from_features(
    prev: FrameFeatures,
    curr: FrameFeatures,
    rng: np.random.Generator | None = None,
) -> Translation | None:
    rng = rng or np.random.default_rng(0)
    matches = match_descriptors(prev.descriptors, curr.descriptors)
    if len(matches) < MIN_MATCHES:
        return None
    disp = np.array(
        [
            (curr.points[j].x - prev.points[i].x, curr.points[j].y - prev.points[i].y)
            for i, j in matches
        ]
    )
    # matches jumping implausibly far are mismatches, not drift
    keep = np.hypot(disp[:, 0], disp[:, 1]) <= MAX_MATCH_DISPLACEMENT_PX
    disp = disp[keep]
    if len(disp) < MIN_MATCHES:
        return None
    return consensus_translation(disp, rng)


def estimate_tile_drift(
    prev: Image | np.ndarray,
    curr: Image | np.ndarray,
    rng: np.random.Generator | None = None,
) -> Translation | None:
    """Translation moving `prev` content onto `curr`, or None when no
    consistent match set exists."""
    prev_a = prev.astype_float() if isinstance(prev, Image) else np.asarray(prev, float)
    curr_a = curr.astype_float() if isinstance(curr, Image) else np.asarray(curr, float)
    if prev_a.shape != curr_a.shape:
        raise ParameterError("drift estimation needs same-sized images")
    return estimate_drift_from_features(
        extract_features(prev_a), extract_features(curr_a), rng
    )


def build_correlation_matrix(store: TileDriftStore) -> CorrelationMatrix:
    """Pearson correlation of horizontal drift between every tile pair, over
    the timesteps where both estimates are valid."""
    n = store.n_tiles
    c = np.zeros((n, n), dtype=np.float64)
    flagged: set[int] = set()
    series = [store.dx_series(i) for i in range(n)]
    for i in range(n):
        c[i, i] = 1.0
        xi, vi = series[i]
        for j in range(i + 1, n):
            xj, vj = series[j]
            both = vi & vj
            if both.sum() < 2:
                flagged.update((i, j))
                continue
            a, b = xi[both], xj[both]
            am, bm = a - a.mean(), b - b.mean()
            var_a, var_b = float(am @ am), float(bm @ bm)
            if var_a <= 0 or var_b <= 0:
                # a perfectly static series carries no drift signature
                if var_a <= 0:
                    flagged.add(i)
                if var_b <= 0:
                    flagged.add(j)
                continue
            c[i, j] = c[j, i] = float(am @ bm) / np.sqrt(var_a * var_b)
    return CorrelationMatrix(c=c, zero_variance_tiles=frozenset(flagged))


def _components(adjacency: np.ndarray) -> list[set[int]]:
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        comp, frontier = {start}, [start]
        seen[start] = True
        while frontier:
            node = frontier.pop()
            for nbr in np.nonzero(adjacency[node])[0]:
                if not seen[nbr]:
                    seen[nbr] = True
                    comp.add(int(nbr))
                    frontier.append(int(nbr))
        components.append(comp)
    return components


def find_correlated_group(
    matrix: CorrelationMatrix,
    min_size: int = 3,
    ladder: Sequence[float] = THRESHOLD_LADDER,
) -> CorrelatedGroup:
    """Largest connected component of the thresholded correlation graph, at
    the first (highest) threshold where any component reaches min_size."""
    if matrix.n < min_size:
        raise ParameterError(f"need at least {min_size} tiles, have {matrix.n}")
    for theta in ladder:
        adjacency = matrix.c >= theta
        np.fill_diagonal(adjacency, False)
        comps = [c for c in _components(adjacency) if len(c) >= min_size]
        if comps:
            best = max(comps, key=lambda c: (len(c), -min(c)))
            return CorrelatedGroup(tiles=frozenset(best), threshold_used=theta)
    raise GroupNotFoundError(
        f"no component of {min_size}+ correlated tiles at any threshold"
    )


def average_group_drift(store: TileDriftStore, group: CorrelatedGroup) -> FrameDrift:
    """Per-timestep mean drift over the group's valid tiles."""
    tiles = sorted(group.tiles)
    d = np.zeros((store.n_timesteps, 2), dtype=np.float64)
    undefined = []
    for t in range(1, store.n_timesteps):
        valid = [i for i in tiles if store.valid[t, i]]
        if not valid:
            undefined.append(t)
            log.warning("timestep %d: no valid drift in the group; using (0, 0)", t)
            continue
        d[t] = store.drift[t, valid].mean(axis=0)
    return FrameDrift(d=d, undefined_steps=undefined)


def cumulative_correction(frame_drift: FrameDrift) -> np.ndarray:
    """S[t] = S[t-1] + D[t], S[0] = 0: total content displacement per frame."""
    return np.cumsum(frame_drift.d, axis=0)


def stabilize_sequence(frames: Sequence[Image], frame_drift: FrameDrift) -> list[Image]:
    """Warp each frame by the negated cumulative drift; frame 0 is untouched."""
    s = cumulative_correction(frame_drift)
    if len(frames) != len(s):
        raise ParameterError("one drift row per frame required")
    out = [frames[0]]
    for t in range(1, len(frames)):
        out.append(warp_translate(frames[t], Translation(-s[t, 0], -s[t, 1])))
    return out


class ResidencyMeter:
    """Counts tile images resident during estimation; tests read the peak."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def acquire(self, n_tiles: int) -> None:
        self.current += n_tiles
        self.peak = max(self.peak, self.current)

    def release(self, n_tiles: int) -> None:
        self.current -= n_tiles


def _frame_pixels(frame: Image | str | Path) -> np.ndarray:
    if isinstance(frame, Image):
        return frame.astype_float()
    return read_tiff(frame).astype_float()


def _frame_image(frame: Image | str | Path) -> Image:
    return frame if isinstance(frame, Image) else read_tiff(frame)


def _cut_grid(pixels: np.ndarray, rows: int, cols: int, th: int, tw: int) -> list[np.ndarray]:
    # views into the frame buffer, not copies: the frame is the storage
    return [
        pixels[r * th : (r + 1) * th, c * tw : (c + 1) * tw]
        for r in range(rows)
        for c in range(cols)
    ]


def compute_tile_drift_store(
    frames: Sequence[Image | str | Path],
    grid: tuple[int, int],
    rng: np.random.Generator | None = None,
    meter: ResidencyMeter | None = None,
) -> TileDriftStore:
    """Estimate per-tile drift for each consecutive frame pair, holding at
    most two frames' tile pixels at a time."""
    if len(frames) < 2:
        raise ParameterError("stabilization needs at least two timesteps")
    rows, cols = grid
    n_tiles = rows * cols
    rng = rng or np.random.default_rng(0)
    meter = meter or ResidencyMeter()

    # frames can differ by a few px after registration; cut on the common size
    shapes = [
        f.pixels.shape if isinstance(f, Image) else read_tiff_dimensions(f) for f in frames
    ]
    min_h = min(s[0] for s in shapes)
    min_w = min(s[1] for s in shapes)
    th, tw = min_h // rows, min_w // cols
    if th < 32 or tw < 32:
        raise ParameterError(f"grid {rows}x{cols} leaves tiles of {th}x{tw} px, too small")

    store = TileDriftStore(len(frames), n_tiles)
    prev_feats: list[FrameFeatures] | None = None
    for t, frame in enumerate(frames):
        pixels = _frame_pixels(frame)
        meter.acquire(n_tiles)
        tiles = _cut_grid(pixels, rows, cols, th, tw)
        feats = [extract_features(tile) for tile in tiles]
        if prev_feats is not None:
            for i in range(n_tiles):
                store.set(t, i, estimate_drift_from_features(prev_feats[i], feats[i], rng))
        if t > 0:
            meter.release(n_tiles)  # timestep t-1 pixels are no longer needed
        prev_feats = feats
        del pixels, tiles
    meter.release(n_tiles)
    return store


def run_stabilization(
    frames: Sequence[Image | str | Path],
    grid: tuple[int, int],
    out_dir: str | Path | None = None,
    name: str = "sequence",
    channel: Channel | None = None,
    rng: np.random.Generator | None = None,
    meter: ResidencyMeter | None = None,
) -> tuple[list[Image], FrameDrift, CorrelatedGroup]:
    """Full chain: per-tile drift, correlation, grouping, averaging, warping.

    When out_dir is given, stabilized frames are written there (a Stabilized/
    folder is the conventional location, created by the caller or here).
    """
    store = compute_tile_drift_store(frames, grid, rng=rng, meter=meter)
    matrix = build_correlation_matrix(store)
    try:
        group = find_correlated_group(matrix)
    except GroupNotFoundError:
        all_valid = frozenset(
            i for i in range(store.n_tiles) if store.valid[1:, i].any()
        )
        log.warning(
            "no correlated group found; averaging all %d tiles with any valid drift",
            len(all_valid),
        )
        group = CorrelatedGroup(tiles=all_valid, threshold_used=float("nan"))
    frame_drift = average_group_drift(store, group)

    stabilized: list[Image] = []
    s = cumulative_correction(frame_drift)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        img = _frame_image(frame)
        result = img if t == 0 else warp_translate(img, Translation(-s[t, 0], -s[t, 1]))
        if out_path is not None:
            ch = channel or img.channel
            write_tiff(out_path / stabilized_filename(name, t, ch), result)
        stabilized.append(result)
    return stabilized, frame_drift, group
