"""HTTP control service: phase machine, event stream, and rendering.

The service wraps one engine + one simulated microscope.  Tests drive the
workflow exactly as a browser client would — JSON requests against a
TestClient — and verify that the phase machine rejects out-of-order calls,
that every state change emits exactly one event, and that the event buffer
supports resume-by-sequence with explicit gap signalling.
"""

import asyncio
import json
import threading
import time

import numpy as np
import pytest
from fastapi import Request
from fastapi.testclient import TestClient

from tilescope.config import RunConfig
from tilescope.imaging import Channel
from tilescope.microscope import ObjectiveSpec, SimulatorConfig
from tilescope.planner import AcquisitionParams, StitchMode
from tilescope.scene import DriftSpec, SceneConfig
from tilescope.service import EventBus, create_app
from tilescope.tiffio import decode_tiff, read_tiff

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

UL = (1000.0, 1000.0)
LR = (3000.0, 3000.0)
ROI_A = [1200.0, 1200.0, 2200.0, 2200.0]  # 2x2 tiles at 10X, 20 % overlap
ROI_B = [1800.0, 1800.0, 2600.0, 2600.0]  # 2x2 tiles

PARAMS_BODY = {
    "duration_h": 10.0 / 60.0,   # two timesteps at a 10 min interval
    "interval_min": 10.0,
    "channels": {"PC": 20.0},
    "stitch_mode": "GridPC",
    "overlap": 0.2,
    "objective": "10X",
}


def make_client(tmp_path, **acq):
    sim = SimulatorConfig(
        seed=99,
        objectives=(
            ObjectiveSpec("10X", 10.0, 5.3125),
            ObjectiveSpec("60X", 60.0, 0.8854166666666666),
        ),
        scene=SceneConfig(size_px=1024, drift=DriftSpec()),
        read_noise_sigma=0.0,
        vibration_um_per_speed=0.0,
        autofocus_sigma_um=0.0,
        autofocus_p_fail=0.0,
    )
    params = dict(
        duration_h=10.0 / 60.0, interval_min=10.0, channels={Channel.PC: 20.0},
        stitch_mode=StitchMode.GRID_PC, overlap=0.2, objective="10X",
    )
    params.update(acq)
    cfg = RunConfig(name="svc", seed=99, data_root=tmp_path,
                    simulator=sim, params=AcquisitionParams(**params))
    app = create_app(cfg)
    return TestClient(app), app.state.service


def get_state(client):
    resp = client.get("/state")
    assert resp.status_code == 200
    return resp.json()


def wait_phase(client, want, timeout=60.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        snap = get_state(client)
        if snap["phase"] == want:
            return snap
        if snap["phase"] == "Error" and want != "Error":
            pytest.fail(f"service entered Error: {snap['last_error']}")
        time.sleep(0.02)
    pytest.fail(f"timed out waiting for phase {want}")


def move_to(client, x, y):
    stage = get_state(client)["stage"]
    resp = client.post("/stage/move", json={"dx": x - stage["x"], "dy": y - stage["y"]})
    assert resp.status_code == 200
    return resp.json()


def to_roi_selection(client):
    assert client.put("/params", json=PARAMS_BODY).status_code == 200
    move_to(client, *UL)
    assert client.post("/overview/corner", json={"which": "UL"}).status_code == 200
    move_to(client, *LR)
    assert client.post("/overview/corner", json={"which": "LR"}).status_code == 200
    assert client.post("/overview/store").status_code == 200
    assert client.post("/overview/acquire").status_code == 200
    return wait_phase(client, "RoiSelection")


def to_focus_setup(client, rois=(ROI_A,)):
    to_roi_selection(client)
    resp = client.post("/rois", json=list(rois))
    assert resp.status_code == 200
    return wait_phase(client, "FocusSetup")


def run_to_done(client, rois=(ROI_A,)):
    to_focus_setup(client, rois)
    assert client.post("/acquisition/start").status_code == 200
    return wait_phase(client, "Done")


def events_of(client, kind=None, since=0):
    resp = client.get("/events", params={"since": since, "wait": 0})
    assert resp.status_code == 200
    body = resp.json()
    if kind is None:
        return body
    return [e for e in body["events"] if e["kind"] == kind]


class TestPhaseGuards:
    def test_everything_but_setup_rejected_while_idle(self, tmp_path):
        client, _ = make_client(tmp_path)
        for method, path, body in (
            ("post", "/acquisition/start", None),
            ("post", "/acquisition/pause", None),
            ("post", "/acquisition/resume", None),
            ("post", "/acquisition/stop", None),
            ("post", "/overview/corner", {"which": "UL"}),
            ("post", "/overview/store", None),
            ("post", "/rois", [ROI_A]),
            ("post", "/stage/move", {"dx": 1.0, "dy": 0.0}),
            ("post", "/focus/register", {"which": "min"}),
        ):
            resp = getattr(client, method)(path, json=body)
            assert resp.status_code == 409, path
            assert resp.json()["phase"] == "Idle"
            assert resp.json()["error"] == "phase=Idle"

    def test_acquire_requires_stored_corners(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        resp = client.post("/overview/acquire")
        assert resp.status_code == 409
        assert "corners" in resp.json()["error"]

    def test_rois_rejected_before_overview_acquired(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        resp = client.post("/rois", json=[ROI_A])
        assert resp.status_code == 409
        assert resp.json()["phase"] == "OverviewSetup"


class TestParamsEndpoint:
    def test_invalid_values_name_their_fields(self, tmp_path):
        client, _ = make_client(tmp_path)
        resp = client.put("/params", json={"overlap": 1.5, "duration_h": -1.0})
        assert resp.status_code == 422
        errors = resp.json()["errors"]
        assert "overlap" in errors
        assert "duration_h" in errors
        assert get_state(client)["phase"] == "Idle"  # rejected, no transition

    def test_unknown_keys_and_channels_rejected(self, tmp_path):
        client, _ = make_client(tmp_path)
        resp = client.put("/params", json={"frobnicate": 1, "channels": {"XX": 5.0}})
        assert resp.status_code == 422
        errors = resp.json()["errors"]
        assert errors["frobnicate"] == "unknown key"
        assert "channels.XX" in errors

    def test_valid_update_applies_and_advances_once(self, tmp_path):
        client, _ = make_client(tmp_path)
        resp = client.put("/params", json=PARAMS_BODY)
        assert resp.status_code == 200
        body = resp.json()
        assert body["ok"] is True
        assert body["params"]["interval_min"] == 10.0
        assert body["params"]["channels"] == {"PC": 20.0}
        assert get_state(client)["phase"] == "OverviewSetup"
        # a second update in setup tweaks values without another transition
        second = dict(PARAMS_BODY, interval_min=5.0)
        assert client.put("/params", json=second).status_code == 200
        assert get_state(client)["params"]["interval_min"] == 5.0
        phase_events = events_of(client, "PhaseChanged")
        assert [e["payload"]["phase"] for e in phase_events] == ["OverviewSetup"]
        assert len(events_of(client, "ParamsChanged")) == 2

    def test_initial_state_snapshot(self, tmp_path):
        client, _ = make_client(tmp_path)
        snap = get_state(client)
        assert snap["phase"] == "Idle"
        assert snap["overview"] is None
        assert snap["overview_image"] is None
        assert snap["rois"] == []
        assert snap["progress"] == {"timestep": 0, "n_timesteps": 0,
                                    "tiles_done": 0, "total": 0}
        assert snap["stage"]["channel"] == "BF"
        assert snap["stage"]["objective"] == "10X"
        assert snap["last_error"] is None
        assert snap["last_seq"] == 0


class TestEventBus:
    def test_sequences_start_at_one_and_replay(self):
        bus = EventBus(capacity=100)
        for i in range(5):
            bus.emit("E", {"i": i})
        events, gap = bus.since(0)
        assert [e.seq for e in events] == [1, 2, 3, 4, 5]
        assert gap is False
        tail, gap = bus.since(3)
        assert [e.seq for e in tail] == [4, 5]
        assert gap is False
        assert bus.since(5) == ([], False)
        assert bus.last_seq == 5

    def test_overflow_reports_gap(self):
        bus = EventBus(capacity=4)
        for i in range(10):
            bus.emit("E", {"i": i})
        events, gap = bus.since(0)
        assert [e.seq for e in events] == [7, 8, 9, 10]
        assert gap is True  # seqs 1..6 were dropped
        _, gap = bus.since(6)
        assert gap is False  # everything after 6 is still buffered
        _, gap = bus.since(5)
        assert gap is True  # seq 6 is gone

    def test_wait_wakes_on_emit(self):
        bus = EventBus()
        threading.Timer(0.15, lambda: bus.emit("Ping", {})).start()
        t0 = time.monotonic()
        events, gap = bus.since(0, wait_s=10.0)
        assert time.monotonic() - t0 < 5.0
        assert [e.kind for e in events] == ["Ping"]
        assert gap is False

    def test_wait_times_out_quietly(self):
        bus = EventBus()
        events, gap = bus.since(0, wait_s=0.05)
        assert events == [] and gap is False

    def test_sim_time_lifted_out_of_payload(self):
        bus = EventBus()
        event = bus.emit("X", {"sim_time": 12.5, "a": 1})
        assert event.sim_time == 12.5
        assert event.payload == {"a": 1}
        assert event.as_dict() == {"seq": 1, "kind": "X",
                                   "payload": {"a": 1}, "sim_time": 12.5}
        bare = bus.emit("Y", {"b": 2})
        assert bare.sim_time is None


class TestSetupFlow:
    def test_corner_capture_store_and_resume_file(self, tmp_path):
        client, state = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        move_to(client, *UL)
        resp = client.post("/overview/corner", json={"which": "UL"})
        assert resp.json() == {"which": "UL", "x": UL[0], "y": UL[1]}
        move_to(client, *LR)
        assert client.post("/overview/corner", json={"which": "LR"}).status_code == 200
        stored = client.post("/overview/store").json()
        assert stored == {"upper_left": list(UL), "lower_right": list(LR)}
        retained = json.loads(
            (tmp_path / "svc" / "resume" / "overview_corners.json").read_text())
        assert retained == stored
        snap = get_state(client)
        assert snap["overview"] == {"upper_left": list(UL),
                                    "lower_right": list(LR), "retained": False}

    def test_corner_validation(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        resp = client.post("/overview/corner", json={"which": "UR"})
        assert resp.status_code == 422
        assert "UL or LR" in resp.json()["error"]
        move_to(client, *UL)
        client.post("/overview/corner", json={"which": "UL"})
        resp = client.post("/overview/store")
        assert resp.status_code == 422
        assert "both" in resp.json()["error"]

    def test_stage_move_validation(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        resp = client.post("/stage/move", json={"dx": "nope", "dy": 0})
        assert resp.status_code == 422
        assert "number" in resp.json()["error"]
        resp = client.post("/stage/move", json={"dx": 1e9, "dy": 0})
        assert resp.status_code == 422
        assert "travel range" in resp.json()["error"]

    def test_overview_acquisition_meta_and_image(self, tmp_path):
        client, state = make_client(tmp_path)
        snap = to_roi_selection(client)
        # 2000 um square at the 10X field of view (1360 um), no overlap -> 3x3
        meta = snap["overview_image"]
        assert meta["width"] == 768 and meta["height"] == 768
        assert meta["pixel_size_um"] == pytest.approx(5.3125)
        assert meta["origin_um"] == list(UL)
        png = client.get("/overview/image")
        assert png.status_code == 200
        assert png.headers["content-type"] == "image/png"
        assert png.content.startswith(PNG_MAGIC)
        tif = client.get("/overview/image", params={"format": "tiff"})
        assert tif.headers["content-type"] == "image/tiff"
        img = decode_tiff(tif.content)
        assert img.pixels.shape == (768, 768)
        assert img.channel == Channel.PC  # registration channel of GridPC
        assert (tmp_path / "svc" / "svc_overview_PC.tif").exists()

    def test_overview_image_missing(self, tmp_path):
        client, _ = make_client(tmp_path)
        resp = client.get("/overview/image")
        assert resp.status_code == 404
        assert "no overview" in resp.json()["error"]

    def test_roi_selection_validation_and_roundtrip(self, tmp_path):
        client, _ = make_client(tmp_path)
        to_roi_selection(client)
        resp = client.post("/rois", json=[[1.0, 2.0, 3.0]])
        assert resp.status_code == 422
        assert "four numbers" in resp.json()["error"]
        resp = client.post("/rois", json=[[0.0, 0.0, 800.0, 800.0]])
        assert resp.status_code == 422
        assert "outside the overview" in resp.json()["error"]
        resp = client.post("/rois", json=[ROI_A, ROI_B])
        assert resp.status_code == 200
        assert resp.json()["rois"] == [ROI_A, ROI_B]
        snap = get_state(client)
        assert snap["phase"] == "FocusSetup"
        assert snap["rois"] == [ROI_A, ROI_B]

    def test_focus_registration_updates_z_window(self, tmp_path):
        client, _ = make_client(tmp_path)
        to_focus_setup(client)
        z0 = get_state(client)["stage"]["z"]
        moved = client.post("/z/move", json={"dz": 3.0}).json()
        assert moved["z"] == pytest.approx(z0 + 3.0)
        resp = client.post("/focus/register", json={"which": "min"})
        assert resp.status_code == 200
        z = resp.json()["z"]
        params = get_state(client)["params"]
        assert params["z_min_um"] == pytest.approx(z)
        assert params["z_max_um"] == pytest.approx(z)  # z_step 0 pins both ends
        resp = client.post("/focus/register", json={"which": "middle"})
        assert resp.status_code == 422
        assert "min or max" in resp.json()["error"]

    def test_use_retained_overview_roundtrip(self, tmp_path):
        client1, _ = make_client(tmp_path)
        assert client1.put("/params", json=PARAMS_BODY).status_code == 200
        move_to(client1, *UL)
        client1.post("/overview/corner", json={"which": "UL"})
        move_to(client1, *LR)
        client1.post("/overview/corner", json={"which": "LR"})
        client1.post("/overview/store")
        # a fresh service over the same data directory picks the corners up
        client2, _ = make_client(tmp_path)
        assert client2.put("/params", json=PARAMS_BODY).status_code == 200
        resp = client2.post("/overview/use-retained")
        assert resp.status_code == 200
        assert resp.json() == {"upper_left": list(UL), "lower_right": list(LR),
                               "retained": True}
        assert get_state(client2)["overview"]["retained"] is True
        assert client2.post("/overview/acquire").status_code == 200
        wait_phase(client2, "RoiSelection")

    def test_use_retained_requires_saved_corners(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        resp = client.post("/overview/use-retained")
        assert resp.status_code == 422
        assert "no retained" in resp.json()["error"]


class TestLifecycle:
    def test_full_run_reaches_done_with_complete_progress(self, tmp_path):
        client, state = make_client(tmp_path)
        snap = run_to_done(client, rois=(ROI_A, ROI_B))
        progress = snap["progress"]
        # 2 timesteps x (4 + 4) tiles x 1 channel x 1 z-slice
        assert progress["total"] == 16
        assert progress["tiles_done"] == 16
        assert progress["n_timesteps"] == 2
        assert state.engine.record.stopped_early is False
        for roi in (0, 1):
            for t in (0, 1):
                resp = client.get(f"/frames/{roi}/{t}/PC")
                assert resp.status_code == 200
                assert resp.content.startswith(PNG_MAGIC)

    def test_phase_history_reconstructs_from_events(self, tmp_path):
        client, _ = make_client(tmp_path)
        run_to_done(client)
        body = events_of(client)
        assert body["gap"] is False
        seqs = [e["seq"] for e in body["events"]]
        assert seqs == list(range(1, len(seqs) + 1))
        assert body["last_seq"] == seqs[-1]
        assert get_state(client)["last_seq"] == seqs[-1]
        phases = [e["payload"]["phase"] for e in body["events"]
                  if e["kind"] == "PhaseChanged"]
        assert phases == ["OverviewSetup", "OverviewAcquiring", "RoiSelection",
                          "FocusSetup", "Running", "Done"]
        for event in body["events"]:
            assert set(event) == {"seq", "kind", "payload", "sim_time"}
            if event["kind"] == "PhaseChanged":
                assert set(event["payload"]) == {"phase"}
                assert event["sim_time"] is not None
        kinds = {}
        for event in body["events"]:
            kinds[event["kind"]] = kinds.get(event["kind"], 0) + 1
        assert kinds["CornerRegistered"] == 2
        assert kinds["OverviewStored"] == 1
        assert kinds["TileCaptured"] == 9 + 8  # 3x3 overview + 2x(2x2) roi tiles
        assert kinds["TimestepDone"] == 2
        assert kinds["PanoramaReady"] == 1 + 2  # overview + one stitched per step

    def test_long_poll_wakes_on_new_event(self, tmp_path):
        client, state = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        last = state.bus.last_seq
        body = client.get("/events", params={"since": last, "wait": 0.1}).json()
        assert body["events"] == [] and body["gap"] is False
        threading.Timer(0.15, lambda: state.bus.emit("Ping", {})).start()
        t0 = time.monotonic()
        body = client.get("/events", params={"since": last, "wait": 10}).json()
        assert time.monotonic() - t0 < 5.0
        assert [e["kind"] for e in body["events"]] == ["Ping"]

    def test_pause_blocks_progress_and_resume_finishes(self, tmp_path):
        client, state = make_client(tmp_path)
        to_focus_setup(client)
        state.control.pause()  # arm before starting so the worker parks at once
        assert client.post("/acquisition/start").status_code == 200
        assert get_state(client)["phase"] == "Running"
        assert client.post("/acquisition/pause").status_code == 200
        assert get_state(client)["phase"] == "Paused"
        first = get_state(client)["progress"]["tiles_done"]
        time.sleep(0.25)
        assert get_state(client)["progress"]["tiles_done"] == first
        resp = client.put("/params", json=PARAMS_BODY)
        assert resp.status_code == 409  # settings are frozen mid-run
        assert client.post("/acquisition/resume").status_code == 200
        snap = wait_phase(client, "Done")
        assert snap["progress"]["tiles_done"] == snap["progress"]["total"] == 8
        phases = [e["payload"]["phase"]
                  for e in events_of(client, "PhaseChanged")]
        assert phases[-4:] == ["Running", "Paused", "Running", "Done"]

    def test_stop_ends_run_early(self, tmp_path):
        client, state = make_client(tmp_path)
        to_focus_setup(client)
        state.control.pause()
        assert client.post("/acquisition/start").status_code == 200
        assert client.post("/acquisition/pause").status_code == 200
        assert client.post("/acquisition/stop").status_code == 200
        snap = wait_phase(client, "Done")
        assert state.engine.record.stopped_early is True
        assert snap["progress"]["tiles_done"] < snap["progress"]["total"]
        warnings = events_of(client, "Warning")
        assert any("stopped by operator" in e["payload"]["message"] for e in warnings)
        resp = client.post("/acquisition/stop")
        assert resp.status_code == 409  # nothing left to stop
        assert resp.json()["phase"] == "Done"

    def test_start_requires_rois(self, tmp_path):
        client, _ = make_client(tmp_path)
        to_roi_selection(client)
        assert client.post("/rois", json=[]).status_code == 200
        assert get_state(client)["phase"] == "FocusSetup"
        resp = client.post("/acquisition/start")
        assert resp.status_code == 409
        assert "no ROIs" in resp.json()["error"]


class TestFrames:
    def test_frame_lookup_and_formats(self, tmp_path):
        client, state = make_client(tmp_path)
        run_to_done(client)
        resp = client.get("/frames/0/0/PC", params={"format": "tiff"})
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/tiff"
        served = decode_tiff(resp.content)
        on_disk = read_tiff(state.engine.record.stitched[(0, Channel.PC)][0])
        assert np.array_equal(served.pixels, on_disk.pixels)

    def test_missing_frames_and_bad_channel(self, tmp_path):
        client, _ = make_client(tmp_path)
        run_to_done(client)
        assert client.get("/frames/0/2/PC").status_code == 404   # past the run
        assert client.get("/frames/9/0/PC").status_code == 404   # unknown roi
        assert client.get("/frames/0/0/FL").status_code == 404   # channel not acquired
        resp = client.get("/frames/0/0/QQ")
        assert resp.status_code == 422
        assert "unknown channel" in resp.json()["error"]

    def test_frames_404_before_any_run(self, tmp_path):
        client, _ = make_client(tmp_path)
        resp = client.get("/frames/0/0/PC")
        assert resp.status_code == 404
        assert "no frame" in resp.json()["error"]


class TestContrast:
    def test_validation(self, tmp_path):
        client, _ = make_client(tmp_path)
        resp = client.post("/contrast", json={"roi": 0, "channel": "PC",
                                              "lo": 50.0, "hi": 50.0})
        assert resp.status_code == 422
        assert "lo < hi" in resp.json()["error"]
        resp = client.post("/contrast", json={"roi": 0, "channel": "zz",
                                              "lo": 0.0, "hi": 1.0})
        assert resp.status_code == 422
        assert "unknown channel" in resp.json()["error"]
        resp = client.post("/contrast", json={"roi": 0, "channel": "PC", "lo": 0.0})
        assert resp.status_code == 422
        assert "lo and hi" in resp.json()["error"]

    def test_contrast_window_changes_served_frame(self, tmp_path):
        client, _ = make_client(tmp_path)
        run_to_done(client)
        plain = client.get("/frames/0/0/PC").content
        resp = client.post("/contrast", json={"roi": 0, "channel": "PC",
                                              "lo": 5.0, "hi": 60.0})
        assert resp.status_code == 200
        stretched = client.get("/frames/0/0/PC").content
        assert stretched.startswith(PNG_MAGIC)
        assert stretched != plain
        changed = events_of(client, "ContrastChanged")
        assert changed[-1]["payload"] == {"roi": 0, "channel": "PC",
                                          "lo": 5.0, "hi": 60.0}
        # raw pixel data is unaffected: tiff export ignores display contrast
        tif = client.get("/frames/0/0/PC", params={"format": "tiff"}).content
        assert decode_tiff(tif).pixels.dtype == np.uint8

    def test_overview_contrast_uses_sentinel_roi(self, tmp_path):
        client, _ = make_client(tmp_path)
        to_roi_selection(client)
        plain = client.get("/overview/image").content
        assert client.post("/contrast", json={"roi": -1, "channel": "PC",
                                              "lo": 5.0, "hi": 60.0}).status_code == 200
        assert client.get("/overview/image").content != plain


class TestFlattening:
    def test_create_and_toggle(self, tmp_path):
        client, _ = make_client(tmp_path)
        to_focus_setup(client)
        resp = client.post("/flattening/create")
        assert resp.status_code == 200
        assert resp.json()["created"] == ["PC"]
        snap = get_state(client)
        assert snap["flattening"] == {"apply": False, "channels": ["PC"]}
        assert client.post("/flattening/apply-toggle").json() == {"apply": True}
        assert get_state(client)["flattening"]["apply"] is True
        assert client.post("/flattening/apply-toggle").json() == {"apply": False}
        kinds = [e["kind"] for e in events_of(client)["events"]]
        assert kinds.count("FlatteningChanged") == 3


class TestServerSentEvents:
    """The stream is unbounded, so pull frames straight off the response
    generator instead of going through the buffering test transport."""

    @staticmethod
    def read_frames(client, since, done, cap=100):
        app = client.app
        endpoint = next(r.endpoint for r in app.routes
                        if getattr(r, "path", None) == "/events")
        request = Request({
            "type": "http", "method": "GET", "path": "/events",
            "headers": [(b"accept", b"text/event-stream")], "query_string": b"",
        })
        resp = endpoint(request, since=since)
        assert resp.media_type == "text/event-stream"

        async def pull():
            frames = []
            stream = resp.body_iterator
            try:
                while len(frames) < cap and not done(frames):
                    frames.append(await stream.__anext__())
            finally:
                await stream.aclose()
            return frames

        return asyncio.run(pull())

    def test_stream_replays_then_keeps_alive(self, tmp_path, monkeypatch):
        monkeypatch.setattr("tilescope.service.LONG_POLL_MAX_S", 0.05)
        client, state = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        expected = state.bus.last_seq
        assert expected >= 2  # ParamsChanged + PhaseChanged
        frames = self.read_frames(client, 0,
                                  lambda fs: len(fs) >= expected + 2)
        event_frames = [f for f in frames if f.startswith("id: ")]
        assert len(event_frames) == expected
        for i, frame in enumerate(event_frames, start=1):
            id_line, data_line, blank = frame.split("\n", 2)
            assert id_line == f"id: {i}"
            event = json.loads(data_line[len("data: "):])
            assert event["seq"] == i
            assert blank == "\n"
        assert json.loads(event_frames[0].split("\n")[1][len("data: "):])[
            "kind"] == "ParamsChanged"
        assert all(f.startswith(": keepalive") for f in frames[expected:])

    def test_stream_wakes_on_live_event(self, tmp_path, monkeypatch):
        monkeypatch.setattr("tilescope.service.LONG_POLL_MAX_S", 0.05)
        client, state = make_client(tmp_path)
        assert client.put("/params", json=PARAMS_BODY).status_code == 200
        last = state.bus.last_seq
        threading.Timer(0.1, lambda: state.bus.emit("Ping", {})).start()
        frames = self.read_frames(  # no replay: subscribed past the buffer
            client, last, lambda fs: any(f.startswith("id: ") for f in fs))
        event_frames = [f for f in frames if f.startswith("id: ")]
        assert event_frames, "stream never delivered the live event"
        event = json.loads(event_frames[0].split("\n")[1][len("data: "):])
        assert event["kind"] == "Ping"
        assert event["seq"] == last + 1
