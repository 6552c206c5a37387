"""Acquisition engine: executes the time-lapse workflow against a microscope.

The engine owns one acquisition: parameters, the overview region, ROIs,
flattening references, the output directory, and the time-lapse loop itself
(autofocus plane refits, tile routes, per-channel snaps, flattening,
stitching, and post-run stabilization).  It is deliberately free of HTTP
concerns; the control service wraps it with a phase machine.
"""

from __future__ import annotations

import logging
import shlex
import threading
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    CapabilityError,
    FitDegenerateError,
    ParameterError,
    TravelLimitError,
    WorkflowError,
)
from .flatfield import FlatField, apply_flattening, create_flattening, save_flatfield
from .imaging import Channel, Image, Translation, warp_translate
from .microscope import SimulatorConfig, VirtualMicroscope
from .naming import roi_name, stitched_filename, tile_filename
from .planner import (
    ROI,
    AcquisitionParams,
    FocusPlane,
    OverviewRegion,
    TilePlan,
    TravelMode,
    compute_tile_grid,
    fit_focus_plane,
    interpolate_z,
    plan_route,
    schedule,
    z_stack_offsets,
)
from .stitcher import Panorama, place_no_overlap, stitch
from .stabilizer import cumulative_correction, run_stabilization
from .tiffio import read_tiff, write_tiff

log = logging.getLogger(__name__)

SIM_EPOCH = datetime(2000, 1, 1)
CHANNEL_ORDER = (Channel.BF, Channel.PC, Channel.FL)
DEFAULT_EXPOSURE_MS = 33.0
FLATTENING_REFERENCE_TILES = 25


def sim_time_iso(t_s: float) -> str:
    return (SIM_EPOCH + timedelta(seconds=float(t_s))).isoformat(timespec="milliseconds")


class AcquisitionLog:
    """Append-only event log with simulated timestamps (never wall clock)."""

    def __init__(self, path: Path):
        self.path = path
        self.path.write_text("")

    def write(self, sim_t: float, kind: str, **fields) -> None:
        parts = [sim_time_iso(sim_t), kind]
        for k, v in fields.items():
            text = f"{v!r}" if isinstance(v, float) else f"{v}"
            # keep lines splittable on whitespace: quote values that contain any
            parts.append(f"{k}={shlex.quote(text) if any(c.isspace() for c in text) else text}")
        with self.path.open("a") as fh:
            fh.write(" ".join(parts) + "\n")


class ControlFlags:
    """Pause/stop switches the engine polls between tile operations."""

    def __init__(self):
        self._pause = threading.Event()
        self._stop = threading.Event()

    def pause(self) -> None:
        self._pause.set()

    def resume(self) -> None:
        self._pause.clear()

    def stop(self) -> None:
        self._stop.set()
        self._pause.clear()

    @property
    def stopped(self) -> bool:
        return self._stop.is_set()

    @property
    def paused(self) -> bool:
        return self._pause.is_set()

    def checkpoint(self) -> bool:
        """Block while paused; True means continue, False means stop."""
        while self._pause.is_set() and not self._stop.is_set():
            time.sleep(0.005)
        return not self._stop.is_set()


class _StopRequested(Exception):
    pass


@dataclass
class Progress:
    timestep: int = 0
    n_timesteps: int = 0
    tiles_done: int = 0
    total: int = 0


@dataclass
class AcquisitionRecord:
    """What a finished (or stopped) run produced."""

    timesteps_completed: int = 0
    stitched: dict = field(default_factory=dict)  # (roi_id, channel) -> [paths]
    stabilized: dict = field(default_factory=dict)
    tile_count: int = 0
    stopped_early: bool = False


class AcquisitionEngine:
    def __init__(
        self,
        microscope: VirtualMicroscope,
        out_dir: str | Path,
        name: str = "acq",
        event_cb: Callable[[str, dict], None] | None = None,
        control: ControlFlags | None = None,
    ):
        self.mic = microscope
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.name = name
        self.params = AcquisitionParams()
        self.overview: OverviewRegion | None = None
        self.overview_panorama: Panorama | None = None
        self.rois: list[ROI] = []
        self.flatfields: dict[Channel, FlatField] = {}
        self.control = control or ControlFlags()
        self.progress = Progress()
        self.record = AcquisitionRecord()
        self._event_cb = event_cb
        self._corners: dict[str, tuple[float, float]] = {}

    # ------------------------------------------------------------------ setup

    def _emit(self, kind: str, **payload) -> None:
        if self._event_cb is not None:
            payload.setdefault("sim_time", self.mic.sim_clock)
            self._event_cb(kind, payload)

    def set_params(self, params: AcquisitionParams) -> None:
        params.validate()
        self.mic.config.objective_index(params.objective)  # label must exist
        self.params = params

    def register_corner(self, which: str) -> tuple[float, float]:
        if which not in ("UL", "LR"):
            raise ParameterError(f"corner must be UL or LR, got {which!r}")
        pos = self.mic.state().stage_xy
        self._corners[which] = pos
        return pos

    def store_overview(self) -> OverviewRegion:
        if "UL" not in self._corners or "LR" not in self._corners:
            raise ParameterError("overview corners UL and LR must both be registered")
        self.overview = OverviewRegion(self._corners["UL"], self._corners["LR"])
        return self.overview

    def use_retained_overview(self, region: OverviewRegion) -> None:
        self.overview = replace(region, retained=True)

    def overview_channel(self) -> Channel:
        reg = self.params.stitch_mode.registration_channel
        if reg is not None and reg in self.params.channels:
            return reg
        return next(iter(self.params.channels)) if self.params.channels else Channel.BF

    def acquire_overview(self) -> Panorama:
        """Tile the overview region at the lowest magnification and abut the
        tiles into one panorama for ROI selection."""
        if self.overview is None:
            raise WorkflowError("no overview region stored")
        ov_index = self.mic.config.lowest_magnification_index()
        spec = self.mic.config.objectives[ov_index]
        fov = self.mic.config.sensor_px * spec.pixel_ratio
        lo, hi = self.mic.travel_bounds_um(ov_index)

        roi = ROI(id=-1, rect=self.overview.upper_left + self.overview.lower_right)
        plan = compute_tile_grid(roi, (fov, fov), overlap=0.0)
        for center in plan.centers.reshape(-1, 2):
            if not (lo <= center[0] <= hi and lo <= center[1] <= hi):
                raise TravelLimitError(
                    f"overview tile center {tuple(center)} outside travel range "
                    f"[{lo:.0f}, {hi:.0f}] µm at {spec.label}"
                )

        prev_objective = self.mic.state().objective
        channel = self.overview_channel()
        self.mic.set_objective(ov_index)
        self.mic.set_channel(channel)
        grid: list[list[Image | None]] = [[None] * plan.cols for _ in range(plan.rows)]
        for idx in plan.route:
            r, c = plan.cell(idx)
            self.mic.set_stage_xy(*plan.centers[r, c])
            grid[r][c] = self.mic.snap_image()
            self._emit("TileCaptured", roi=-1, row=r, col=c, channel=channel.value)
        self.mic.set_objective(prev_objective)

        pano = place_no_overlap(grid)
        pano.roi_id = -1
        self.overview_panorama = pano
        write_tiff(self.out_dir / f"{self.name}_overview_{channel.value}.tif", pano.image)
        self._emit("PanoramaReady", roi=-1, channel=channel.value)
        return pano

    def set_rois(self, rects: list[tuple[float, float, float, float]]) -> list[ROI]:
        if self.overview is None:
            raise WorkflowError("define the overview before selecting ROIs")
        rois = []
        for i, rect in enumerate(rects):
            roi = ROI(id=i, rect=tuple(float(v) for v in rect))
            if not self.overview.contains(roi.rect):
                raise ParameterError(f"ROI {i} {roi.rect} lies outside the overview region")
            rois.append(roi)
        self.rois = rois
        return rois

    def register_focus(self, which: str) -> float:
        z = self.mic.state().z
        if which == "min":
            self.params.z_min_um = z
            if self.params.z_step_um == 0:
                self.params.z_max_um = z
        elif which == "max":
            self.params.z_max_um = z
            if self.params.z_step_um == 0:
                self.params.z_min_um = z
        else:
            raise ParameterError(f"focus register must be min or max, got {which!r}")
        return z

    # ------------------------------------------------------------- flattening

    def _reference_microscope(self) -> VirtualMicroscope:
        """A blank-sample twin: same camera and optics, featureless specimen."""
        from .scene import DriftSpec

        cfg = self.mic.config
        ref_scene = replace(cfg.scene, uniform_level=0.55, drift=DriftSpec())
        ref_cfg = replace(cfg, scene=ref_scene, seed=cfg.seed + 1, vibration_um_per_speed=0.0)
        return VirtualMicroscope(ref_cfg)

    def create_flattening(self, n_tiles: int = FLATTENING_REFERENCE_TILES) -> dict[Channel, FlatField]:
        """Acquire averaged blank-field references for every enabled channel
        under the acquisition optics, and persist them under resume/."""
        self.params.validate()
        ref = self._reference_microscope()
        obj_index = ref.config.objective_index(self.params.objective)
        ref.set_objective(obj_index)
        ref.set_bit_depth(self.params.bit_depth)
        lo, hi = ref.travel_bounds_um()
        side = int(np.ceil(np.sqrt(n_tiles)))
        xs = np.linspace(lo, hi, side + 2)[1:-1]
        positions = [(x, y) for y in xs for x in xs][:n_tiles]
        focus_mid = (self.params.z_min_um + self.params.z_max_um) / 2.0

        made: dict[Channel, FlatField] = {}
        for ch in self._ordered_channels():
            exposure = self.params.channels.get(ch, DEFAULT_EXPOSURE_MS)
            ref.set_channel(ch)
            ref.set_exposure(ch, exposure)
            tiles = []
            for x, y in positions:
                ref.set_stage_xy(x, y)
                ref.set_z(focus_mid if focus_mid else ref.scene.focal_z(x, y))
                if ch == Channel.FL:
                    ref.set_fl_shutter(True)
                tiles.append(ref.snap_image())
                if ch == Channel.FL:
                    ref.set_fl_shutter(False)
            ff = create_flattening(
                tiles,
                objective=self.params.objective,
                exposure_ms=exposure,
                illumination=ref.state().illumination,
            )
            save_flatfield(ff, self.out_dir / "resume")
            made[ch] = ff
        self.flatfields.update(made)
        return made

    # ---------------------------------------------------------------- running

    def _ordered_channels(self) -> list[Channel]:
        channels = dict(self.params.channels)
        reg = self.params.stitch_mode.registration_channel
        if reg is not None and reg not in channels:
            log.warning(
                "stitch mode %s needs %s tiles; enabling it at %s ms",
                self.params.stitch_mode.value, reg.value, DEFAULT_EXPOSURE_MS,
            )
            self._emit("Warning", message=f"registration channel {reg.value} force-enabled")
            channels[reg] = DEFAULT_EXPOSURE_MS
            self.params.channels = channels
        return [ch for ch in CHANNEL_ORDER if ch in channels]

    def plan_grids(self) -> list[TilePlan]:
        if not self.rois:
            raise WorkflowError("no ROIs selected")
        obj_index = self.mic.config.objective_index(self.params.objective)
        spec = self.mic.config.objectives[obj_index]
        fov = self.mic.config.sensor_px * spec.pixel_ratio
        lo, hi = self.mic.travel_bounds_um(obj_index)
        plans = []
        for roi in self.rois:
            plan = compute_tile_grid(roi, (fov, fov), self._grid_overlap())
            for center in plan.centers.reshape(-1, 2):
                if not (lo <= center[0] <= hi and lo <= center[1] <= hi):
                    raise TravelLimitError(
                        f"ROI {roi.id} tile center ({center[0]:.0f}, {center[1]:.0f}) "
                        f"outside travel range [{lo:.0f}, {hi:.0f}] µm at {spec.label}"
                    )
            flat = plan.centers.reshape(-1, 2)
            if self.params.travel_mode == TravelMode.TSP:
                plan.route = plan_route(flat, TravelMode.TSP)
            else:
                plan.route = plan_route(flat, TravelMode.USER_DEFINED, list(range(len(flat))))
            plan.z_stack = z_stack_offsets(self.params)
            plans.append(plan)
        return plans

    def _grid_overlap(self) -> float:
        from .planner import StitchMode

        return 0.0 if self.params.stitch_mode == StitchMode.NO_OVERLAP else self.params.overlap

    def _overview_corners(self) -> list[tuple[float, float]]:
        (x0, y0), (x1, y1) = self.overview.upper_left, self.overview.lower_right
        return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]

    def _refit_plane(self, timestep: int, current: FocusPlane, acq_objective: int) -> FocusPlane:
        af_index = len(self.mic.config.objectives) - 1
        alog = self._alog
        self.mic.set_objective(af_index)
        points = []
        for cx, cy in self._overview_corners():
            self.mic.set_stage_xy(cx, cy)
            alog.write(self.mic.sim_clock, "MOVE", x=float(cx), y=float(cy), purpose="autofocus")
            z = self.mic.autofocus()
            if z is None:
                alog.write(self.mic.sim_clock, "AF_FAIL", x=float(cx), y=float(cy))
                self._emit("AutofocusResult", ok=False, x=cx, y=cy)
            else:
                alog.write(self.mic.sim_clock, "AF_OK", x=float(cx), y=float(cy), z=float(z))
                self._emit("AutofocusResult", ok=True, x=cx, y=cy, z=z)
                points.append((cx, cy, z))
        self.mic.set_objective(acq_objective)

        if len(points) < 3:
            alog.write(
                self.mic.sim_clock, "PLANE_FALLBACK",
                t=timestep, n_ok=len(points), reusing=current.fitted_at,
            )
            self._emit("PlaneFallback", timestep=timestep, n_ok=len(points))
            return current
        try:
            plane = fit_focus_plane(points, fitted_at=timestep)
        except FitDegenerateError as exc:
            alog.write(self.mic.sim_clock, "PLANE_FALLBACK", t=timestep, reason=str(exc))
            self._emit("PlaneFallback", timestep=timestep, n_ok=len(points))
            return current
        alog.write(
            self.mic.sim_clock, "PLANE_FIT",
            t=timestep, a=plane.a, b=plane.b, c=plane.c, n=plane.n_points,
        )
        self._emit("PlaneRefit", timestep=timestep, a=plane.a, b=plane.b, c=plane.c)
        zdir = self.out_dir / "ZFlattening"
        zdir.mkdir(exist_ok=True)
        lines = [f"corner: x={x!r} y={y!r} z={z!r}" for x, y, z in points]
        lines.append(f"plane: a={plane.a!r} b={plane.b!r} c={plane.c!r}")
        (zdir / f"plane_t{timestep}.txt").write_text("\n".join(lines) + "\n")
        return plane

    def _checkpoint(self) -> None:
        if not self.control.checkpoint():
            raise _StopRequested()

    def run_timelapse(self) -> AcquisitionRecord:
        """Execute the scheduled acquisition; see the module docstring."""
        self.params.validate()
        if self.overview is None:
            raise WorkflowError("no overview region stored")
        plans = self.plan_grids()
        channels = self._ordered_channels()
        times_min = schedule(self.params)
        obj_index = self.mic.config.objective_index(self.params.objective)
        z_offsets = z_stack_offsets(self.params)
        focus_slice = int(np.argmin(np.abs(z_offsets)))

        self._alog = AcquisitionLog(self.out_dir / "AcquisitionLog.txt")
        self.record = AcquisitionRecord()
        self.progress = Progress(
            n_timesteps=len(times_min),
            total=len(times_min) * sum(p.n_tiles for p in plans) * len(channels) * len(z_offsets),
        )

        self.mic.set_stage_speed(self.params.stage_speed)
        self.mic.set_bit_depth(self.params.bit_depth)
        self.mic.set_objective(obj_index)
        for ch in channels:
            self.mic.set_exposure(ch, self.params.channels[ch])

        if self.params.apply_flattening:
            for ch in channels:
                if ch not in self.flatfields:
                    log.warning("flattening enabled but no reference for %s", ch.value)
                    self._emit("Warning", message=f"no flattening reference for {ch.value}")

        plane = FocusPlane(
            0.0, 0.0, (self.params.z_min_um + self.params.z_max_um) / 2.0,
            fitted_at=-1, n_points=0,
        )

        try:
            for t_idx, t_min in enumerate(times_min):
                self._checkpoint()
                self.mic.wait_until(t_min * 60.0)
                self.mic.mark_timestep()
                self.progress.timestep = t_idx
                try:
                    if self.params.is_autofocus_step(t_idx):
                        plane = self._refit_plane(t_idx, plane, obj_index)
                    for plan in plans:
                        self._acquire_roi_timestep(plan, t_idx, channels, z_offsets, focus_slice, plane)
                    self._alog.write(self.mic.sim_clock, "STEP_DONE", t=t_idx)
                    self._emit("TimestepDone", timestep=t_idx)
                    self.record.timesteps_completed = t_idx + 1
                except (TravelLimitError, CapabilityError, ParameterError) as exc:
                    self._alog.write(self.mic.sim_clock, "ERROR", t=t_idx, message=str(exc))
                    self._emit("Error", timestep=t_idx, message=str(exc))
                    log.error("timestep %d aborted: %s", t_idx, exc)
        except _StopRequested:
            self.record.stopped_early = True
            self._alog.write(self.mic.sim_clock, "ERROR", message="stopped by operator")

        if self.params.execute_stabilization and not self.record.stopped_early:
            self._stabilize_rois(plans, channels)
        return self.record

    def _acquire_roi_timestep(
        self,
        plan: TilePlan,
        t_idx: int,
        channels: list[Channel],
        z_offsets: list[float],
        focus_slice: int,
        plane: FocusPlane,
    ) -> None:
        name = roi_name(self.name, plan.roi_id)
        stitch_grid: dict[Channel, list[list[Image | None]]] = {
            ch: [[None] * plan.cols for _ in range(plan.rows)] for ch in channels
        }
        for idx in plan.route:
            self._checkpoint()
            r, c = plan.cell(idx)
            cx, cy = plan.centers[r, c]
            self.mic.set_stage_xy(cx, cy)
            self._alog.write(self.mic.sim_clock, "MOVE", x=float(cx), y=float(cy), roi=plan.roi_id)
            z_base = interpolate_z(plane, (cx, cy))
            for zi, dz in enumerate(z_offsets):
                self.mic.set_z(z_base + dz)
                for ch in channels:
                    self.mic.set_channel(ch)
                    if ch == Channel.FL:
                        self.mic.set_fl_shutter(True)
                    img = self.mic.snap_image()
                    if ch == Channel.FL:
                        self.mic.set_fl_shutter(False)
                    if self.params.apply_flattening and ch in self.flatfields:
                        img = apply_flattening(img, self.flatfields[ch])
                    fname = tile_filename(name, t_idx, zi, r, c, ch)
                    write_tiff(self.out_dir / fname, img)
                    self._alog.write(
                        self.mic.sim_clock, "SNAP",
                        roi=plan.roi_id, t=t_idx, z=zi, r=r, c=c, ch=ch.value, file=fname,
                    )
                    self._emit(
                        "TileCaptured",
                        roi=plan.roi_id, timestep=t_idx, row=r, col=c,
                        z=zi, channel=ch.value, file=fname,
                    )
                    if zi == focus_slice:
                        stitch_grid[ch][r][c] = img
                    self.progress.tiles_done += 1
                    self.record.tile_count += 1

        panoramas = stitch(
            stitch_grid,
            self.params.stitch_mode,
            self._grid_overlap(),
            roi_id=plan.roi_id,
            timestep=t_idx,
        )
        for ch, pano in panoramas.items():
            out = self.out_dir / stitched_filename(name, t_idx, ch)
            write_tiff(out, pano.image)
            self.record.stitched.setdefault((plan.roi_id, ch), []).append(out)
            self._emit("PanoramaReady", roi=plan.roi_id, timestep=t_idx, channel=ch.value,
                       file=out.name)

    def _stabilize_rois(self, plans: list[TilePlan], channels: list[Channel]) -> None:
        reg = self.params.stitch_mode.registration_channel or channels[0]
        stab_dir = self.out_dir / "Stabilized"
        for plan in plans:
            frames = self.record.stitched.get((plan.roi_id, reg), [])
            if len(frames) < 2:
                log.warning("ROI %d: fewer than 2 stitched frames; skipping stabilization",
                            plan.roi_id)
                continue
            name = roi_name(self.name, plan.roi_id)
            stabilized, frame_drift, group = run_stabilization(
                frames, (plan.rows, plan.cols), out_dir=stab_dir, name=name, channel=reg,
            )
            self.record.stabilized[(plan.roi_id, reg)] = [
                stab_dir / f.name.replace("_stitched", "_stabilized") for f in frames
            ]
            corrections = cumulative_correction(frame_drift)
            for ch in channels:
                if ch == reg:
                    continue
                ch_frames = self.record.stitched.get((plan.roi_id, ch), [])
                outs = []
                for t, path in enumerate(ch_frames):
                    img = read_tiff(path)
                    if t > 0 and t < len(corrections):
                        img = warp_translate(
                            img, Translation(-corrections[t, 0], -corrections[t, 1])
                        )
                    out = stab_dir / path.name.replace("_stitched", "_stabilized")
                    write_tiff(out, img)
                    outs.append(out)
                self.record.stabilized[(plan.roi_id, ch)] = outs
            self._emit(
                "StabilizationDone",
                roi=plan.roi_id,
                group_size=len(group.tiles),
                threshold=group.threshold_used,
            )
