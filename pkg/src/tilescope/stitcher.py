"""Panorama assembly from tile grids.

Two modes: naive abutting placement, and grid stitching that registers the
nominal overlap strips of adjacent tiles by normalized cross-correlation,
solves a confidence-weighted least-squares placement over the 4-neighbor
constraint graph, and composites with linear-feather blending.  Registration
runs on one designated channel; the solved positions are reused verbatim for
every other channel of the same grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ParameterError
from .imaging import Channel, Image, TileAddress, Translation, quantize, translate_array

log = logging.getLogger(__name__)

RIGHT_OF = "right-of"
BELOW = "below"


@dataclass(frozen=True)
class PairOffset:
    """Measured residual displacement between two grid-adjacent tiles.

    `offset` is the deviation of the true tile-to-tile displacement from the
    nominal (overlap-derived) displacement; `confidence` is the correlation
    peak value.
    """

    src: TileAddress
    dst: TileAddress
    relation: str
    offset: Translation
    confidence: float

    def __post_init__(self):
        if self.relation not in (RIGHT_OF, BELOW):
            raise ParameterError(f"unknown pair relation {self.relation!r}")
        if not math.isfinite(self.confidence):
            raise ParameterError("pair confidence must be finite")


@dataclass
class Panorama:
    image: Image
    tile_positions: np.ndarray  # (n, 2) float canvas px, x then y, row-major tiles
    rows: int
    cols: int
    tile_shape: tuple[int, int]  # (height, width)
    roi_id: int = 0
    timestep: int = 0

    @property
    def channel(self) -> Channel:
        return self.image.channel


def nominal_overlap_px(tile_shape: tuple[int, int], overlap: float) -> tuple[int, int]:
    """Integer overlap in pixels per axis: (vertical rows, horizontal cols)."""
    h, w = tile_shape
    return int(round(h * overlap)), int(round(w * overlap))


def place_no_overlap(tiles: list[list[Image | None]]) -> Panorama:
    """Abut tiles edge to edge in grid order; missing tiles become zero blocks."""
    rows, cols = len(tiles), len(tiles[0])
    if any(len(r) != cols for r in tiles):
        raise ParameterError("tile grid rows have unequal lengths")
    ref = next((t for row in tiles for t in row if t is not None), None)
    if ref is None:
        raise ParameterError("tile grid is entirely empty")
    h, w = ref.pixels.shape
    canvas = np.zeros((rows * h, cols * w), dtype=ref.pixels.dtype)
    positions = np.zeros((rows * cols, 2), dtype=np.float64)
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            positions[r * cols + c] = (c * w, r * h)
            if tile is None:
                log.warning("missing tile (%d, %d); leaving a zero block", r, c)
                continue
            if tile.pixels.shape != (h, w):
                raise ParameterError(f"tile ({r}, {c}) has shape {tile.pixels.shape}, expected {(h, w)}")
            canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = tile.pixels
    return Panorama(
        image=Image(canvas, ref.pixel_size, ref.channel),
        tile_positions=positions,
        rows=rows,
        cols=cols,
        tile_shape=(h, w),
    )


def _ncc_surface(region: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation of `template` against every placement in `region`."""
    th, tw = template.shape
    t = template - template.mean()
    t_energy = float(np.sum(t * t))
    # numerator: sum over window of w * (t - t_mean) == sum (w - w_mean)(t - t_mean)
    num = fftconvolve(region, t[::-1, ::-1], mode="valid")
    ones = np.ones((th, tw))
    win_sum = fftconvolve(region, ones, mode="valid")
    win_sq = fftconvolve(region * region, ones, mode="valid")
    n = th * tw
    win_var = win_sq - win_sum * win_sum / n
    denom = np.sqrt(np.maximum(win_var, 0.0) * t_energy)
    with np.errstate(invalid="ignore", divide="ignore"):
        ncc = np.where(denom > 1e-9, num / np.maximum(denom, 1e-30), 0.0)
    return np.clip(ncc, -1.0, 1.0)


def _parabolic_peak(surface: np.ndarray, py: int, px: int) -> tuple[float, float]:
    """Sub-pixel refinement of an interior peak by 1-D parabola fits per axis."""
    dy = dx = 0.0
    if 0 < py < surface.shape[0] - 1:
        a, b, c = surface[py - 1, px], surface[py, px], surface[py + 1, px]
        denom = a - 2 * b + c
        if denom < -1e-12:
            dy = float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))
    if 0 < px < surface.shape[1] - 1:
        a, b, c = surface[py, px - 1], surface[py, px], surface[py, px + 1]
        denom = a - 2 * b + c
        if denom < -1e-12:
            dx = float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))
    return dy, dx


def register_pair(
    a: Image,
    b: Image,
    relation: str,
    overlap: float,
    max_search: int = 30,
    src: TileAddress | None = None,
    dst: TileAddress | None = None,
) -> PairOffset:
    """Measure the residual shift of tile `b` relative to its nominal placement
    next to tile `a` (`b` right of / below `a`), searching ±max_search px.
    """
    if a.pixels.shape != b.pixels.shape:
        raise ParameterError("registration pair tiles must have identical shape")
    if not (0 < overlap <= 0.5):
        raise ParameterError(f"overlap must be in (0, 0.5], got {overlap}")
    h, w = a.pixels.shape
    ov_rows, ov_cols = nominal_overlap_px((h, w), overlap)
    s = max_search
    af, bf = a.astype_float(), b.astype_float()

    if relation == RIGHT_OF:
        if ov_cols - s < 3 or h - 2 * s < 3:
            raise ParameterError(
                f"overlap strip {ov_cols} px cannot support a ±{s} px search"
            )
        template = bf[s : h - s, 0 : ov_cols - s]
        region = af[:, w - ov_cols - s : w]
    elif relation == BELOW:
        if ov_rows - s < 3 or w - 2 * s < 3:
            raise ParameterError(
                f"overlap strip {ov_rows} px cannot support a ±{s} px search"
            )
        template = bf[0 : ov_rows - s, s : w - s]
        region = af[h - ov_rows - s : h, :]
    else:
        raise ParameterError(f"unknown pair relation {relation!r}")

    surface = _ncc_surface(region, template)  # (2s+1) × (2s+1)
    py, px = np.unravel_index(int(np.argmax(surface)), surface.shape)
    confidence = float(surface[py, px])
    sub_y, sub_x = _parabolic_peak(surface, int(py), int(px))
    residual_y = (py + sub_y) - s
    residual_x = (px + sub_x) - s

    default_addr = TileAddress(0, 0, 0, 0, a.channel)
    return PairOffset(
        src=src or default_addr,
        dst=dst or default_addr,
        relation=relation,
        offset=Translation(float(residual_x), float(residual_y)),
        confidence=confidence,
    )


def solve_global_positions(
    offsets: list[PairOffset],
    rows: int,
    cols: int,
    tile_shape: tuple[int, int],
    overlap: float,
    confidence_threshold: float = 0.3,
) -> np.ndarray:
    """Tile origin positions (n, 2 float px; x then y), tile (0,0) anchored at
    the origin, minimizing confidence-weighted disagreement with the pairwise
    constraints.  Low-confidence measurements fall back to the nominal
    displacement; tiles disconnected from the anchor get nominal positions.
    """
    n = rows * cols
    h, w = tile_shape
    ov_rows, ov_cols = nominal_overlap_px(tile_shape, overlap)
    nominal_step = {RIGHT_OF: np.array([w - ov_cols, 0.0]), BELOW: np.array([0.0, h - ov_rows])}
    nominal_pos = np.array(
        [[c * (w - ov_cols), r * (h - ov_rows)] for r in range(rows) for c in range(cols)],
        dtype=np.float64,
    )

    def index(addr: TileAddress) -> int:
        if not (0 <= addr.row < rows and 0 <= addr.col < cols):
            raise ParameterError(f"tile address {addr} outside {rows}x{cols} grid")
        return addr.row * cols + addr.col

    constraints: list[tuple[int, int, np.ndarray, float]] = []
    for po in offsets:
        i, j = index(po.src), index(po.dst)
        if po.confidence >= confidence_threshold:
            disp = nominal_step[po.relation] + np.array([po.offset.dx, po.offset.dy])
            weight = po.confidence
        else:
            disp = nominal_step[po.relation].copy()
            weight = confidence_threshold
        constraints.append((i, j, disp, weight))

    # connected components over the constraint graph; only the anchor's
    # component is solvable, the rest keep nominal placement
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j, _, _ in constraints:
        parent[find(i)] = find(j)
    anchored = {t for t in range(n) if find(t) == find(0)}
    if len(anchored) < n:
        log.warning(
            "%d tiles disconnected from the anchor; using nominal positions", n - len(anchored)
        )

    order = sorted(anchored)
    col_of = {t: k for k, t in enumerate(order)}
    positions = nominal_pos.copy()
    if len(order) > 1:
        rows_a: list[np.ndarray] = []
        rhs: list[np.ndarray] = []
        for i, j, disp, weight in constraints:
            if i not in anchored:
                continue
            ro = np.zeros(len(order))
            ro[col_of[j]] += 1.0
            ro[col_of[i]] -= 1.0
            sw = math.sqrt(weight)
            rows_a.append(ro * sw)
            rhs.append(disp * sw)
        # anchor: tile 0 pinned to the origin
        pin = np.zeros(len(order))
        pin[col_of[0]] = 1.0
        rows_a.append(pin)
        rhs.append(np.zeros(2))
        a_mat = np.vstack(rows_a)
        b_mat = np.vstack(rhs)
        sol, *_ = np.linalg.lstsq(a_mat, b_mat, rcond=None)
        for t in order:
            positions[t] = sol[col_of[t]]
    return positions


def blend(tiles: list[Image], positions: np.ndarray, rows: int, cols: int) -> Panorama:
    """Composite tiles at sub-pixel positions with linear-feather weighting."""
    if len(tiles) != len(positions):
        raise ParameterError("one position per tile required")
    ref = tiles[0]
    h, w = ref.pixels.shape
    positions = np.asarray(positions, dtype=np.float64)
    origin = np.floor(positions.min(axis=0))
    canvas_positions = positions - origin
    out_w = int(np.ceil((canvas_positions[:, 0] + w).max()))
    out_h = int(np.ceil((canvas_positions[:, 1] + h).max()))

    # linear feather: weight ramps from the tile border toward the interior
    wy = np.minimum(np.arange(h) + 0.5, h - np.arange(h) - 0.5)
    wx = np.minimum(np.arange(w) + 0.5, w - np.arange(w) - 0.5)
    feather = wy[:, None] * wx[None, :]

    acc = np.zeros((out_h, out_w), dtype=np.float64)
    weight = np.zeros((out_h, out_w), dtype=np.float64)
    for tile, pos in zip(tiles, canvas_positions):
        if tile.pixels.shape != (h, w):
            raise ParameterError("blend requires uniform tile shapes")
        ix, iy = int(np.floor(pos[0])), int(np.floor(pos[1]))
        fx, fy = pos[0] - ix, pos[1] - iy
        if fx > 1e-12 or fy > 1e-12:
            pix = translate_array(np.pad(tile.astype_float() * feather, ((0, 1), (0, 1))), fx, fy)
            wgt = translate_array(np.pad(feather, ((0, 1), (0, 1))), fx, fy)
        else:
            pix = tile.astype_float() * feather
            wgt = feather
        y2, x2 = min(iy + pix.shape[0], out_h), min(ix + pix.shape[1], out_w)
        acc[iy:y2, ix:x2] += pix[: y2 - iy, : x2 - ix]
        weight[iy:y2, ix:x2] += wgt[: y2 - iy, : x2 - ix]

    covered = weight > 1e-9
    blended = np.zeros_like(acc)
    blended[covered] = acc[covered] / weight[covered]
    return Panorama(
        image=Image(quantize(blended, ref.bit_depth), ref.pixel_size, ref.channel),
        tile_positions=canvas_positions,
        rows=rows,
        cols=cols,
        tile_shape=(h, w),
    )


def _adjacent_pairs(rows: int, cols: int) -> list[tuple[int, int, int, int, str]]:
    pairs = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                pairs.append((r, c, r, c + 1, RIGHT_OF))
            if r + 1 < rows:
                pairs.append((r, c, r + 1, c, BELOW))
    return pairs


def register_grid(
    tiles: list[list[Image]],
    overlap: float,
    max_search: int = 30,
    roi_id: int = 0,
    timestep: int = 0,
) -> list[PairOffset]:
    """Register every 4-neighbor pair of a complete tile grid."""
    rows, cols = len(tiles), len(tiles[0])
    channel = tiles[0][0].channel
    offsets = []
    for r0, c0, r1, c1, relation in _adjacent_pairs(rows, cols):
        offsets.append(
            register_pair(
                tiles[r0][c0],
                tiles[r1][c1],
                relation,
                overlap,
                max_search=max_search,
                src=TileAddress(roi_id, r0, c0, timestep, channel),
                dst=TileAddress(roi_id, r1, c1, timestep, channel),
            )
        )
    return offsets


def stitch(
    tiles_by_channel: dict[Channel, list[list[Image]]],
    mode,
    overlap: float,
    max_search: int = 30,
    roi_id: int = 0,
    timestep: int = 0,
) -> dict[Channel, Panorama]:
    """Assemble one panorama per channel.

    Grid modes register on the designated channel only and reuse its solved
    positions for all other channels, so co-acquired channels stay aligned.
    """
    from .planner import StitchMode

    mode = StitchMode(mode)
    if not tiles_by_channel:
        raise ParameterError("no tiles supplied")
    panoramas: dict[Channel, Panorama] = {}
    if mode == StitchMode.NO_OVERLAP:
        for ch, grid in tiles_by_channel.items():
            pano = place_no_overlap(grid)
            pano.roi_id, pano.timestep = roi_id, timestep
            panoramas[ch] = pano
        return panoramas

    reg_channel = mode.registration_channel
    if reg_channel not in tiles_by_channel:
        raise ParameterError(
            f"stitch mode {mode.value} requires the {reg_channel.value} channel"
        )
    reg_grid = tiles_by_channel[reg_channel]
    rows, cols = len(reg_grid), len(reg_grid[0])
    tile_shape = reg_grid[0][0].pixels.shape
    offsets = register_grid(reg_grid, overlap, max_search, roi_id, timestep)
    positions = solve_global_positions(offsets, rows, cols, tile_shape, overlap)
    for ch, grid in tiles_by_channel.items():
        flat = [grid[r][c] for r in range(rows) for c in range(cols)]
        pano = blend(flat, positions, rows, cols)
        pano.roi_id, pano.timestep = roi_id, timestep
        panoramas[ch] = pano
    return panoramas


def seam_metric(pano: Panorama) -> float:
    """Mean absolute intensity jump across the boundary lines between
    adjacent placed tiles; lower is smoother."""
    img = pano.image.astype_float()
    h, w = pano.tile_shape
    total, count = 0.0, 0
    pos = pano.tile_positions
    for r0, c0, r1, c1, relation in _adjacent_pairs(pano.rows, pano.cols):
        p0, p1 = pos[r0 * pano.cols + c0], pos[r1 * pano.cols + c1]
        if relation == RIGHT_OF:
            x = int(round((p1[0] + p0[0] + w) / 2.0))
            y0 = int(round(max(p0[1], p1[1])))
            y1 = int(round(min(p0[1], p1[1]) + h))
            if 1 <= x < img.shape[1] and y1 > y0:
                seg = np.abs(img[y0:y1, x] - img[y0:y1, x - 1])
                total += float(seg.sum())
                count += seg.size
        else:
            y = int(round((p1[1] + p0[1] + h) / 2.0))
            x0 = int(round(max(p0[0], p1[0])))
            x1 = int(round(min(p0[0], p1[0]) + w))
            if 1 <= y < img.shape[0] and x1 > x0:
                seg = np.abs(img[y, x0:x1] - img[y - 1, x0:x1])
                total += float(seg.sum())
                count += seg.size
    return total / count if count else 0.0
