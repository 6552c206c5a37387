"""HTTP control service: phase machine + event stream over the engine.

One writer (the acquisition thread) mutates engine state; HTTP handlers
read snapshots and flip control flags.  Every state mutation emits exactly
one event; PhaseChanged events alone reconstruct the phase history.
"""

from __future__ import annotations

import io
import json
import threading
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from fastapi import Body, FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
import PIL.Image

from .config import RunConfig, _parse_acquisition
from .engine import AcquisitionEngine, ControlFlags
from .errors import (
    CapabilityError,
    ConfigError,
    ParameterError,
    TravelLimitError,
    WorkflowError,
)
from .imaging import Channel, Image, adjust_contrast
from .microscope import VirtualMicroscope
from .planner import AcquisitionParams, OverviewRegion
from .tiffio import encode_tiff, read_tiff

EVENT_BUFFER_CAPACITY = 4096
LONG_POLL_MAX_S = 25.0


class Phase(str, Enum):
    IDLE = "Idle"
    OVERVIEW_SETUP = "OverviewSetup"
    OVERVIEW_ACQUIRING = "OverviewAcquiring"
    ROI_SELECTION = "RoiSelection"
    FOCUS_SETUP = "FocusSetup"
    RUNNING = "Running"
    PAUSED = "Paused"
    DONE = "Done"
    ERROR = "Error"


SETUP_PHASES = (Phase.IDLE, Phase.OVERVIEW_SETUP, Phase.ROI_SELECTION, Phase.FOCUS_SETUP)


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    payload: dict
    sim_time: float | None

    def as_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "payload": self.payload,
                "sim_time": self.sim_time}


class EventBus:
    """Bounded drop-oldest buffer; consumers resume by sequence number."""

    def __init__(self, capacity: int = EVENT_BUFFER_CAPACITY):
        self._events: deque[Event] = deque(maxlen=capacity)
        self._seq = 0
        self._cond = threading.Condition()

    @property
    def last_seq(self) -> int:
        with self._cond:
            return self._seq

    def emit(self, kind: str, payload: dict | None = None) -> Event:
        payload = dict(payload or {})
        sim_time = payload.pop("sim_time", None)
        with self._cond:
            self._seq += 1
            event = Event(self._seq, kind, payload, sim_time)
            self._events.append(event)
            self._cond.notify_all()
        return event

    def since(self, seq: int, wait_s: float = 0.0) -> tuple[list[Event], bool]:
        """Events with .seq > seq, blocking up to wait_s for the first one.

        The second element reports a gap: the buffer no longer holds every
        event after `seq`, so the consumer should refetch full state.
        """
        with self._cond:
            if wait_s > 0:
                self._cond.wait_for(lambda: self._seq > seq, timeout=wait_s)
            events = [e for e in self._events if e.seq > seq]
            if events:
                gap = events[0].seq > seq + 1
            else:
                gap = self._seq > seq  # everything after seq was already dropped
            return events, gap


def _render_png(img: Image, lo: float | None = None, hi: float | None = None) -> bytes:
    if lo is not None and hi is not None:
        img = adjust_contrast(img, lo, hi)
    arr = img.pixels
    if arr.dtype == np.uint16:
        arr = (arr // 257).astype(np.uint8)
    buf = io.BytesIO()
    PIL.Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


class ServiceState:
    """Everything the HTTP layer owns: engine, phase, bus, render settings."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.mic = VirtualMicroscope(cfg.simulator)
        out_dir = Path(cfg.data_root) / cfg.name
        self.bus = EventBus()
        self.control = ControlFlags()
        self.engine = AcquisitionEngine(
            self.mic, out_dir, name=cfg.name,
            event_cb=lambda kind, payload: self.bus.emit(kind, payload),
            control=self.control,
        )
        self.engine.set_params(cfg.params)
        self.phase = Phase.IDLE
        self.last_error: str | None = None
        self.contrast: dict[tuple[int, str], tuple[float, float]] = {}
        self.overview_meta: dict | None = None
        self.lock = threading.RLock()
        self._worker: threading.Thread | None = None

    # -- phase machine ------------------------------------------------------

    def set_phase(self, phase: Phase) -> None:
        with self.lock:
            if phase == self.phase:
                return
            self.phase = phase
            self.bus.emit("PhaseChanged", {"phase": phase.value,
                                           "sim_time": self.mic.sim_clock})

    def require_phase(self, *allowed: Phase) -> None:
        with self.lock:
            if self.phase not in allowed:
                raise WorkflowError(f"phase={self.phase.value}", phase=self.phase.value)

    # -- snapshots ----------------------------------------------------------

    def params_dict(self) -> dict:
        p = self.engine.params
        return {
            "duration_h": p.duration_h,
            "interval_min": p.interval_min,
            "z_step_um": p.z_step_um,
            "z_min_um": p.z_min_um,
            "z_max_um": p.z_max_um,
            "channels": {ch.value: ms for ch, ms in p.channels.items()},
            "bit_depth": p.bit_depth,
            "stitch_mode": p.stitch_mode.value,
            "overlap": p.overlap,
            "apply_flattening": p.apply_flattening,
            "execute_stabilization": p.execute_stabilization,
            "af_update_every": p.af_update_every,
            "travel_mode": p.travel_mode.value,
            "stage_speed": p.stage_speed,
            "objective": p.objective,
        }

    def snapshot(self) -> dict:
        with self.lock:
            mstate = self.mic.state()
            ov = self.engine.overview
            prog = self.engine.progress
            return {
                "phase": self.phase.value,
                "last_seq": self.bus.last_seq,
                "params": self.params_dict(),
                "overview": None if ov is None else {
                    "upper_left": list(ov.upper_left),
                    "lower_right": list(ov.lower_right),
                    "retained": ov.retained,
                },
                "overview_image": self.overview_meta,
                "rois": [list(r.rect) for r in self.engine.rois],
                "progress": {
                    "timestep": prog.timestep,
                    "n_timesteps": prog.n_timesteps,
                    "tiles_done": prog.tiles_done,
                    "total": prog.total,
                },
                "stage": {
                    "x": mstate.stage_xy[0],
                    "y": mstate.stage_xy[1],
                    "z": mstate.z,
                    "objective": self.mic.current_objective().label,
                    "channel": mstate.channel.value,
                },
                "sim_time": mstate.sim_clock,
                "flattening": {
                    "apply": self.engine.params.apply_flattening,
                    "channels": [ch.value for ch in self.engine.flatfields],
                },
                "last_error": self.last_error,
            }

    # -- background work ----------------------------------------------------

    def start_overview(self) -> None:
        self.set_phase(Phase.OVERVIEW_ACQUIRING)

        def work():
            try:
                pano = self.engine.acquire_overview()
                spec = self.mic.config.objectives[self.mic.config.lowest_magnification_index()]
                with self.lock:
                    self.overview_meta = {
                        "width": pano.image.width,
                        "height": pano.image.height,
                        "pixel_size_um": spec.pixel_ratio,
                        "origin_um": list(self.engine.overview.upper_left),
                    }
                self.set_phase(Phase.ROI_SELECTION)
            except Exception as exc:  # noqa: BLE001 — workflow boundary
                with self.lock:
                    self.last_error = str(exc)
                self.bus.emit("Error", {"message": str(exc)})
                self.set_phase(Phase.ERROR)

        self._worker = threading.Thread(target=work, name="overview", daemon=True)
        self._worker.start()

    def start_acquisition(self) -> None:
        self.set_phase(Phase.RUNNING)

        def work():
            try:
                record = self.engine.run_timelapse()
                self.set_phase(Phase.DONE)
                if record.stopped_early:
                    self.bus.emit("Warning", {"message": "acquisition stopped by operator"})
            except Exception as exc:  # noqa: BLE001 — workflow boundary
                with self.lock:
                    self.last_error = str(exc)
                self.bus.emit("Error", {"message": str(exc)})
                self.set_phase(Phase.ERROR)

        self._worker = threading.Thread(target=work, name="acquisition", daemon=True)
        self._worker.start()

    def frame_path(self, roi: int, t: int, channel: Channel) -> Path | None:
        rec = self.engine.record
        for source in (rec.stabilized, rec.stitched):
            paths = source.get((roi, channel))
            if paths and 0 <= t < len(paths):
                return Path(paths[t])
        return None


def create_app(cfg: RunConfig) -> FastAPI:
    state = ServiceState(cfg)
    app = FastAPI(title="tilescope control service")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    @app.exception_handler(WorkflowError)
    def on_workflow_error(_req: Request, exc: WorkflowError):
        return JSONResponse(status_code=409, content={
            "error": str(exc), "phase": exc.phase or state.phase.value,
        })

    @app.exception_handler(ConfigError)
    def on_config_error(_req: Request, exc: ConfigError):
        return JSONResponse(status_code=422, content={"errors": exc.errors})

    @app.exception_handler(ParameterError)
    def on_parameter_error(_req: Request, exc: ParameterError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(TravelLimitError)
    def on_travel_error(_req: Request, exc: TravelLimitError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(CapabilityError)
    def on_capability_error(_req: Request, exc: CapabilityError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    # -- state & events ------------------------------------------------------

    @app.get("/state")
    def get_state():
        return state.snapshot()

    @app.get("/events")
    def get_events(request: Request, since: int = 0, wait: float = LONG_POLL_MAX_S):
        if "text/event-stream" in request.headers.get("accept", ""):
            def sse():
                cursor = since
                first, gap = state.bus.since(cursor, wait_s=0)
                if gap:
                    yield "event: gap\ndata: {}\n\n"
                while True:
                    for event in first:
                        cursor = event.seq
                        yield f"id: {event.seq}\ndata: {json.dumps(event.as_dict())}\n\n"
                    first, _ = state.bus.since(cursor, wait_s=LONG_POLL_MAX_S)
                    if not first:
                        yield ": keepalive\n\n"

            return StreamingResponse(sse(), media_type="text/event-stream")
        wait = max(0.0, min(wait, LONG_POLL_MAX_S))
        events, gap = state.bus.since(since, wait_s=wait)
        return {"events": [e.as_dict() for e in events], "gap": gap,
                "last_seq": state.bus.last_seq}

    # -- setup ----------------------------------------------------------------

    @app.put("/params")
    def put_params(body: dict = Body(...)):
        state.require_phase(*SETUP_PHASES)
        errors: dict[str, str] = {}
        params = _parse_acquisition(body, errors)
        if errors:
            stripped = {k.removeprefix("acquisition."): v for k, v in errors.items()}
            return JSONResponse(status_code=422, content={"errors": stripped})
        with state.lock:
            state.engine.set_params(params)
        state.bus.emit("ParamsChanged", {"params": state.params_dict()})
        if state.phase == Phase.IDLE:
            state.set_phase(Phase.OVERVIEW_SETUP)
        return {"ok": True, "params": state.params_dict()}

    def _number(body: dict, key: str, default: float = 0.0) -> float:
        value = body.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParameterError(f"{key} must be a number, got {value!r}")
        return float(value)

    @app.post("/stage/move")
    def stage_move(body: dict = Body(...)):
        state.require_phase(Phase.OVERVIEW_SETUP, Phase.ROI_SELECTION, Phase.FOCUS_SETUP)
        dx = _number(body, "dx")
        dy = _number(body, "dy")
        x, y = state.mic.state().stage_xy
        state.mic.set_stage_xy(x + dx, y + dy)
        nx, ny = state.mic.state().stage_xy
        state.bus.emit("StageMoved", {"x": nx, "y": ny, "sim_time": state.mic.sim_clock})
        return {"x": nx, "y": ny}

    @app.post("/z/move")
    def z_move(body: dict = Body(...)):
        state.require_phase(Phase.OVERVIEW_SETUP, Phase.ROI_SELECTION, Phase.FOCUS_SETUP)
        dz = _number(body, "dz")
        state.mic.set_z(state.mic.state().z + dz)
        z = state.mic.state().z
        state.bus.emit("StageMoved", {"z": z, "sim_time": state.mic.sim_clock})
        return {"z": z}

    @app.post("/overview/corner")
    def overview_corner(body: dict = Body(...)):
        state.require_phase(Phase.OVERVIEW_SETUP)
        which = str(body.get("which", ""))
        pos = state.engine.register_corner(which)
        state.bus.emit("CornerRegistered", {"which": which, "x": pos[0], "y": pos[1]})
        return {"which": which, "x": pos[0], "y": pos[1]}

    @app.post("/overview/store")
    def overview_store():
        state.require_phase(Phase.OVERVIEW_SETUP)
        region = state.engine.store_overview()
        resume = state.engine.out_dir / "resume"
        resume.mkdir(parents=True, exist_ok=True)
        (resume / "overview_corners.json").write_text(json.dumps({
            "upper_left": list(region.upper_left),
            "lower_right": list(region.lower_right),
        }))
        state.bus.emit("OverviewStored", {
            "upper_left": list(region.upper_left),
            "lower_right": list(region.lower_right),
        })
        return {"upper_left": list(region.upper_left),
                "lower_right": list(region.lower_right)}

    @app.post("/overview/use-retained")
    def overview_use_retained():
        state.require_phase(Phase.OVERVIEW_SETUP)
        path = state.engine.out_dir / "resume" / "overview_corners.json"
        if not path.exists():
            raise ParameterError("no retained overview corners on disk")
        data = json.loads(path.read_text())
        region = OverviewRegion(tuple(data["upper_left"]), tuple(data["lower_right"]))
        state.engine.use_retained_overview(region)
        state.bus.emit("OverviewStored", {
            "upper_left": list(region.upper_left),
            "lower_right": list(region.lower_right),
            "retained": True,
        })
        return {"upper_left": list(region.upper_left),
                "lower_right": list(region.lower_right), "retained": True}

    @app.post("/overview/acquire")
    def overview_acquire():
        state.require_phase(Phase.OVERVIEW_SETUP)
        if state.engine.overview is None:
            raise WorkflowError("store the overview corners first",
                                phase=state.phase.value)
        state.start_overview()
        return {"ok": True}

    @app.get("/overview/image")
    def overview_image(format: str = "png"):
        pano = state.engine.overview_panorama
        if pano is None:
            return JSONResponse(status_code=404, content={"error": "no overview acquired"})
        if format == "tiff":
            return Response(encode_tiff(pano.image), media_type="image/tiff")
        lo_hi = state.contrast.get((-1, pano.image.channel.value))
        png = _render_png(pano.image, *(lo_hi or (None, None)))
        return Response(png, media_type="image/png")

    @app.post("/rois")
    def post_rois(body: list = Body(...)):
        state.require_phase(Phase.ROI_SELECTION)
        rects = []
        for i, rect in enumerate(body):
            if (
                not isinstance(rect, (list, tuple))
                or len(rect) != 4
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in rect)
            ):
                raise ParameterError(f"rois[{i}]: expected four numbers [x0, y0, x1, y1]")
            rects.append(tuple(float(v) for v in rect))
        rois = state.engine.set_rois(rects)
        state.bus.emit("RoisChanged", {"rois": [list(r.rect) for r in rois]})
        state.set_phase(Phase.FOCUS_SETUP)
        return {"rois": [list(r.rect) for r in rois]}

    @app.post("/focus/register")
    def focus_register(body: dict = Body(...)):
        state.require_phase(Phase.FOCUS_SETUP)
        which = str(body.get("which", ""))
        z = state.engine.register_focus(which)
        state.bus.emit("FocusChanged", {"which": which, "z": z})
        return {"which": which, "z": z}

    @app.post("/contrast")
    def post_contrast(body: dict = Body(...)):
        roi = int(body.get("roi", -1))
        try:
            channel = Channel(str(body.get("channel", "BF")))
        except ValueError:
            raise ParameterError(f"unknown channel {body.get('channel')!r}")
        if "lo" not in body or "hi" not in body:
            raise ParameterError("contrast requires lo and hi levels")
        lo = _number(body, "lo")
        hi = _number(body, "hi")
        if not lo < hi:
            raise ParameterError(f"contrast window requires lo < hi, got [{lo}, {hi}]")
        state.contrast[(roi, channel.value)] = (lo, hi)
        state.bus.emit("ContrastChanged",
                       {"roi": roi, "channel": channel.value, "lo": lo, "hi": hi})
        return {"ok": True}

    # -- flattening ------------------------------------------------------------

    @app.post("/flattening/create")
    def flattening_create():
        state.require_phase(*SETUP_PHASES)
        made = state.engine.create_flattening()
        state.bus.emit("FlatteningChanged",
                       {"created": [ch.value for ch in made], "apply":
                        state.engine.params.apply_flattening})
        return {"created": [ch.value for ch in made]}

    @app.post("/flattening/apply-toggle")
    def flattening_toggle():
        state.require_phase(*SETUP_PHASES)
        with state.lock:
            state.engine.params.apply_flattening = not state.engine.params.apply_flattening
            value = state.engine.params.apply_flattening
        state.bus.emit("FlatteningChanged", {"apply": value})
        return {"apply": value}

    # -- lifecycle --------------------------------------------------------------

    @app.post("/acquisition/start")
    def acquisition_start():
        state.require_phase(Phase.FOCUS_SETUP)
        if not state.engine.rois:
            raise WorkflowError("no ROIs selected", phase=state.phase.value)
        state.engine.params.validate()
        state.engine.plan_grids()  # surfaces travel-range problems before starting
        state.start_acquisition()
        return {"ok": True}

    @app.post("/acquisition/pause")
    def acquisition_pause():
        state.require_phase(Phase.RUNNING)
        state.control.pause()
        state.set_phase(Phase.PAUSED)
        return {"ok": True}

    @app.post("/acquisition/resume")
    def acquisition_resume():
        state.require_phase(Phase.PAUSED)
        state.control.resume()
        state.set_phase(Phase.RUNNING)
        return {"ok": True}

    @app.post("/acquisition/stop")
    def acquisition_stop():
        state.require_phase(Phase.RUNNING, Phase.PAUSED)
        state.control.stop()
        return {"ok": True}

    # -- frames ------------------------------------------------------------------

    @app.get("/frames/{roi}/{t}/{channel}")
    def get_frame(roi: int, t: int, channel: str, format: str = "png"):
        try:
            ch = Channel(channel)
        except ValueError:
            raise ParameterError(
                f"unknown channel {channel!r} (expected one of {[c.value for c in Channel]})"
            )
        path = state.frame_path(roi, t, ch)
        if path is None or not path.exists():
            return JSONResponse(status_code=404, content={
                "error": f"no frame for roi={roi} t={t} channel={ch.value}"})
        img = read_tiff(path)
        if format == "tiff":
            return Response(encode_tiff(img), media_type="image/tiff")
        lo_hi = state.contrast.get((roi, ch.value))
        return Response(_render_png(img, *(lo_hi or (None, None))),
                        media_type="image/png")

    return app


def run_server(cfg: RunConfig, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(cfg), host=host, port=cfg.port, log_level="warning")
