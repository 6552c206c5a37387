"""Acquisition planning: tile grids, stage routes, focus planes, schedules.

Pure geometry and parameter logic; the time-lapse loop that executes a plan
lives in :mod:`tilescope.engine`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FitDegenerateError, ParameterError
from .imaging import Channel


class StitchMode(str, Enum):
    NO_OVERLAP = "NoOverlap"
    GRID_BF = "GridBF"
    GRID_PC = "GridPC"

    @property
    def registration_channel(self) -> Channel | None:
        if self == StitchMode.GRID_BF:
            return Channel.BF
        if self == StitchMode.GRID_PC:
            return Channel.PC
        return None


class TravelMode(str, Enum):
    USER_DEFINED = "UserDefined"
    TSP = "TravelingSalesman"


@dataclass(frozen=True)
class OverviewRegion:
    """Rectangle the operator marked with the upper-left / lower-right corners."""

    upper_left: tuple[float, float]
    lower_right: tuple[float, float]
    retained: bool = False

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.upper_left, self.lower_right
        if not (x0 < x1 and y0 < y1):
            raise ParameterError(
                f"upper_left {self.upper_left} must be strictly above-left of "
                f"lower_right {self.lower_right}"
            )

    def contains(self, rect: tuple[float, float, float, float]) -> bool:
        x0, y0, x1, y1 = rect
        return (
            self.upper_left[0] <= x0 <= x1 <= self.lower_right[0]
            and self.upper_left[1] <= y0 <= y1 <= self.lower_right[1]
        )


@dataclass(frozen=True)
class ROI:
    """Region of interest in overview stage coordinates (µm)."""

    id: int
    rect: tuple[float, float, float, float]  # x0, y0, x1, y1

    def __post_init__(self):
        x0, y0, x1, y1 = self.rect
        if not (x0 < x1 and y0 < y1):
            raise ParameterError(f"ROI rect {self.rect} is degenerate")

    @property
    def extent(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.rect
        return x1 - x0, y1 - y0


@dataclass(frozen=True)
class FocusPlane:
    """z = a·x + b·y + c fitted to autofocus measurements."""

    a: float
    b: float
    c: float
    fitted_at: int = 0
    n_points: int = 3
    residual_rms: float = 0.0

    def __post_init__(self):
        if not all(map(math.isfinite, (self.a, self.b, self.c))):
            raise ParameterError("focus plane coefficients must be finite")


@dataclass
class AcquisitionParams:
    duration_h: float = 18.0
    interval_min: float = 10.0
    z_step_um: float = 0.0
    z_min_um: float = 0.0
    z_max_um: float = 0.0
    channels: dict[Channel, float] = field(default_factory=lambda: {Channel.PC: 33.0})
    bit_depth: int = 8
    stitch_mode: StitchMode = StitchMode.GRID_PC
    overlap: float = 0.20
    apply_flattening: bool = False
    execute_stabilization: bool = False
    af_update_every: int | None = None  # None: only at the beginning; k: every k steps
    travel_mode: TravelMode = TravelMode.TSP
    stage_speed: float = 1000.0
    objective: str = "10X"

    def __post_init__(self):
        self.channels = {Channel(ch): float(ms) for ch, ms in self.channels.items()}
        self.stitch_mode = StitchMode(self.stitch_mode)
        self.travel_mode = TravelMode(self.travel_mode)

    def field_errors(self) -> dict[str, str]:
        """Per-field violations, empty when the parameters are valid."""
        errors: dict[str, str] = {}
        if not self.duration_h > 0:
            errors["duration_h"] = "duration must be > 0 hours"
        if not self.interval_min > 0:
            errors["interval_min"] = "interval must be > 0 minutes"
        if self.z_step_um < 0:
            errors["z_step_um"] = "z step must be >= 0"
        if self.z_min_um > self.z_max_um:
            errors["z_min_um"] = "z_min must be <= z_max"
        if self.z_step_um == 0 and self.z_min_um != self.z_max_um:
            errors["z_step_um"] = "z step 0 requires z_min == z_max"
        if not self.channels:
            errors["channels"] = "at least one channel must be enabled"
        for ch, ms in self.channels.items():
            if not ms > 0:
                errors["channels"] = f"exposure for {ch.value} must be > 0 ms"
        if self.bit_depth not in (8, 16):
            errors["bit_depth"] = "bit depth must be 8 or 16"
        if not (0 <= self.overlap < 1):
            errors["overlap"] = "overlap must be in [0, 1)"
        if self.af_update_every is not None and self.af_update_every < 1:
            errors["af_update_every"] = "update period must be >= 1 step (or null)"
        if not self.stage_speed > 0:
            errors["stage_speed"] = "stage speed must be > 0"
        return errors

    def validate(self) -> None:
        errors = self.field_errors()
        if errors:
            raise ParameterError("; ".join(f"{k}: {v}" for k, v in errors.items()))

    def is_autofocus_step(self, timestep: int) -> bool:
        if self.af_update_every is None:
            return timestep == 0
        return timestep % self.af_update_every == 0


@dataclass
class TilePlan:
    """Grid of stage positions plus visit order for one ROI."""

    roi_id: int
    rows: int
    cols: int
    centers: np.ndarray  # (rows, cols, 2) stage µm, [..., 0]=x, [..., 1]=y
    overlap: float
    fov_um: tuple[float, float]
    route: list[int]  # row-major cell indices in visit order
    z_stack: list[float] = field(default_factory=lambda: [0.0])

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    def cell(self, index: int) -> tuple[int, int]:
        row, col = divmod(index, self.cols)
        return row, col


def compute_tile_grid(roi: ROI, fov_um: tuple[float, float], overlap: float) -> TilePlan:
    """Cover the ROI with a row-major grid of FOVs overlapping by `overlap`.

    Per axis: stride = fov (1 - overlap), count = ceil(extent / stride) + 1.
    The extra tile guarantees coverage of the far edge under drift.
    """
    if not (0 <= overlap < 1):
        raise ParameterError(f"overlap must be in [0, 1), got {overlap}")
    if fov_um[0] <= 0 or fov_um[1] <= 0:
        raise ParameterError(f"fov must be positive, got {fov_um}")
    ext_x, ext_y = roi.extent
    stride_x = fov_um[0] * (1 - overlap)
    stride_y = fov_um[1] * (1 - overlap)
    cols = math.ceil(ext_x / stride_x) + 1
    rows = math.ceil(ext_y / stride_y) + 1
    x0, y0 = roi.rect[0], roi.rect[1]
    cx = x0 + fov_um[0] / 2 + np.arange(cols) * stride_x
    cy = y0 + fov_um[1] / 2 + np.arange(rows) * stride_y
    centers = np.stack(np.meshgrid(cx, cy, indexing="xy"), axis=-1)  # (rows, cols, 2)
    return TilePlan(
        roi_id=roi.id,
        rows=rows,
        cols=cols,
        centers=centers,
        overlap=overlap,
        fov_um=(float(fov_um[0]), float(fov_um[1])),
        route=list(range(rows * cols)),
    )


def route_length(points: np.ndarray, route: list[int]) -> float:
    """Total open-path length of visiting `points` in `route` order."""
    p = points[np.asarray(route)]
    return float(np.sum(np.hypot(*(p[1:] - p[:-1]).T)))


_EXACT_ROUTE_LIMIT = 10


def _exact_route(points: np.ndarray) -> list[int]:
    """Held-Karp dynamic program over open paths with free endpoints."""
    n = len(points)
    d = [[math.hypot(*(points[a] - points[b])) for b in range(n)] for a in range(n)]
    size = 1 << n
    best = [[math.inf] * n for _ in range(size)]
    parent = [[-1] * n for _ in range(size)]
    for i in range(n):
        best[1 << i][i] = 0.0
    for mask in range(size):
        row = best[mask]
        for i in range(n):
            cur = row[i]
            if cur == math.inf or not (mask >> i) & 1:
                continue
            for j in range(n):
                if (mask >> j) & 1:
                    continue
                nxt = mask | (1 << j)
                cand = cur + d[i][j]
                if cand < best[nxt][j]:
                    best[nxt][j] = cand
                    parent[nxt][j] = i
    full = size - 1
    end = min(range(n), key=lambda i: best[full][i])
    route, mask = [end], full
    while parent[mask][route[-1]] != -1:
        prev = parent[mask][route[-1]]
        mask ^= 1 << route[-1]
        route.append(prev)
    route.reverse()
    return route


def _nearest_neighbor(points: np.ndarray) -> list[int]:
    n = len(points)
    unvisited = list(range(1, n))
    route = [0]
    while unvisited:
        last = points[route[-1]]
        dists = np.hypot(*(points[unvisited] - last).T)
        route.append(unvisited.pop(int(np.argmin(dists))))
    return route


def _two_opt(points: np.ndarray, route: list[int]) -> list[int]:
    # open path with free endpoints: reversing route[i:j+1] touches only the
    # boundary edges that exist at the cut points, so prefix/suffix reversals
    # (which relocate an endpoint) are legal moves too
    n = len(route)
    d = lambda a, b: math.hypot(*(points[a] - points[b]))
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                if i == 0 and j == n - 1:
                    continue  # whole-path reversal never changes the length
                before = after = 0.0
                if i > 0:
                    before += d(route[i - 1], route[i])
                    after += d(route[i - 1], route[j])
                if j + 1 < n:
                    before += d(route[j], route[j + 1])
                    after += d(route[i], route[j + 1])
                if after < before - 1e-12:
                    route[i : j + 1] = reversed(route[i : j + 1])
                    improved = True
    return route


def plan_route(
    points: np.ndarray, mode: TravelMode, user_order: list[int] | None = None
) -> list[int]:
    """Visit order over `points` (N×2 stage µm)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise ParameterError("route planning needs at least one point")
    mode = TravelMode(mode)
    if mode == TravelMode.USER_DEFINED:
        if user_order is None or sorted(user_order) != list(range(len(points))):
            raise ParameterError("UserDefined travel requires a full visit-order permutation")
        return list(user_order)
    if user_order is not None:
        raise ParameterError("user_order is only valid with UserDefined travel")
    if len(points) == 1:
        return [0]
    if len(points) <= _EXACT_ROUTE_LIMIT:
        return _exact_route(points)
    return _two_opt(points, _nearest_neighbor(points))


def fit_focus_plane(
    measurements: list[tuple[float, float, float]], fitted_at: int = 0
) -> FocusPlane:
    """Least-squares z = a·x + b·y + c; exact with 3 non-collinear points."""
    if len(measurements) < 3:
        raise FitDegenerateError(f"plane fit needs >= 3 points, got {len(measurements)}")
    pts = np.asarray(measurements, dtype=np.float64)
    a_mat = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    coef, _, rank, _ = np.linalg.lstsq(a_mat, pts[:, 2], rcond=None)
    if rank < 3:
        raise FitDegenerateError("plane fit points are collinear")
    resid = a_mat @ coef - pts[:, 2]
    return FocusPlane(
        a=float(coef[0]),
        b=float(coef[1]),
        c=float(coef[2]),
        fitted_at=fitted_at,
        n_points=len(pts),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def interpolate_z(plane: FocusPlane, xy: tuple[float, float]) -> float:
    return plane.a * xy[0] + plane.b * xy[1] + plane.c


def schedule(params: AcquisitionParams) -> list[float]:
    """Timestep times in minutes: 0, interval, ..., <= duration (inclusive)."""
    params.validate()
    duration_min = params.duration_h * 60.0
    count = int(math.floor(duration_min / params.interval_min + 1e-9)) + 1
    return [i * params.interval_min for i in range(count)]


def z_stack_offsets(params: AcquisitionParams) -> list[float]:
    """Z offsets relative to the focus surface, centered on the stack midpoint."""
    if params.z_step_um == 0:
        return [0.0]
    n = int(math.floor((params.z_max_um - params.z_min_um) / params.z_step_um + 1e-9)) + 1
    mid = (params.z_min_um + params.z_max_um) / 2.0
    return [params.z_min_um + i * params.z_step_um - mid for i in range(n)]
