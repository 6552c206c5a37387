"""JSON run configuration shared by the CLI and the control service.

Top-level keys: name, seed, data_root, port, simulator, acquisition,
overview, rois.  Environment variables TILESCOPE_PORT and
TILESCOPE_DATA_ROOT override the corresponding file values.  Validation
collects every problem into ConfigError.errors keyed by a dotted field
path, so callers can report all mistakes at once.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, ParameterError
from .imaging import Channel
from .microscope import SimulatorConfig
from .planner import AcquisitionParams, OverviewRegion, StitchMode, TravelMode
from .scene import DriftSpec, SceneConfig

ENV_PORT = "TILESCOPE_PORT"
ENV_DATA_ROOT = "TILESCOPE_DATA_ROOT"
DEFAULT_PORT = 8077

_SCENE_KEYS = {f.name for f in fields(SceneConfig)}
_DRIFT_KEYS = {f.name for f in fields(DriftSpec)}
_SIM_KEYS = {f.name for f in fields(SimulatorConfig)} - {"objectives", "scene", "seed"}
_ACQ_KEYS = {f.name for f in fields(AcquisitionParams)}


@dataclass
class RunConfig:
    name: str = "acq"
    seed: int = 1234
    data_root: Path = Path("data")
    port: int = DEFAULT_PORT
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    params: AcquisitionParams = field(default_factory=AcquisitionParams)
    overview: OverviewRegion | None = None
    rois: list[tuple[float, float, float, float]] = field(default_factory=list)


def _want(raw: Mapping[str, Any], key: str, kinds, errors: dict[str, str], prefix: str = ""):
    """Type-checked lookup; records a diagnostic and returns None on mismatch."""
    if key not in raw:
        return None
    value = raw[key]
    if isinstance(value, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
        errors[prefix + key] = f"expected {_kind_name(kinds)}, got a boolean"
        return None
    if not isinstance(value, kinds):
        errors[prefix + key] = f"expected {_kind_name(kinds)}, got {type(value).__name__}"
        return None
    return value


def _kind_name(kinds) -> str:
    if isinstance(kinds, tuple):
        return " or ".join(k.__name__ for k in kinds)
    return kinds.__name__


def _reject_unknown(raw: Mapping[str, Any], allowed: set[str], errors: dict[str, str], prefix: str):
    for key in raw:
        if key not in allowed:
            errors[prefix + key] = "unknown key"


def _parse_pair(value, label: str, errors: dict[str, str]) -> tuple[float, float] | None:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        errors[label] = "expected a pair of numbers [x, y]"
        return None
    return float(value[0]), float(value[1])


def _parse_scene(raw: Mapping[str, Any], errors: dict[str, str]) -> SceneConfig:
    prefix = "simulator.scene."
    _reject_unknown(raw, _SCENE_KEYS, errors, prefix)
    kwargs: dict[str, Any] = {}
    for key in ("size_px", "maze_cell_px", "wall_px"):
        v = _want(raw, key, int, errors, prefix)
        if v is not None:
            kwargs[key] = v
    for key in ("pixel_size_um", "blob_per_cell", "uniform_level"):
        v = _want(raw, key, (int, float), errors, prefix)
        if v is not None:
            kwargs[key] = float(v)
    if "focal_plane" in raw:
        fp = raw["focal_plane"]
        if (
            not isinstance(fp, (list, tuple))
            or len(fp) != 3
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in fp)
        ):
            errors[prefix + "focal_plane"] = "expected three numbers [a, b, c]"
        else:
            kwargs["focal_plane"] = tuple(float(v) for v in fp)
    if "drift" in raw:
        draw = raw["drift"]
        if not isinstance(draw, Mapping):
            errors[prefix + "drift"] = "expected an object"
        else:
            dprefix = prefix + "drift."
            _reject_unknown(draw, _DRIFT_KEYS, errors, dprefix)
            dkw: dict[str, Any] = {}
            if "rate_um_per_h" in draw:
                pair = _parse_pair(draw["rate_um_per_h"], dprefix + "rate_um_per_h", errors)
                if pair is not None:
                    dkw["rate_um_per_h"] = pair
            for key in ("walk_sigma_um", "walk_interval_s"):
                v = _want(draw, key, (int, float), errors, dprefix)
                if v is not None:
                    dkw[key] = float(v)
            try:
                kwargs["drift"] = DriftSpec(**dkw)
            except ParameterError as exc:
                errors[prefix + "drift"] = str(exc)
    try:
        return SceneConfig(**kwargs)
    except ParameterError as exc:
        errors["simulator.scene"] = str(exc)
        return SceneConfig()


def _parse_simulator(raw: Mapping[str, Any], seed: int, errors: dict[str, str]) -> SimulatorConfig:
    prefix = "simulator."
    _reject_unknown(raw, _SIM_KEYS | {"scene"}, errors, prefix)
    kwargs: dict[str, Any] = {"seed": seed}
    for key in ("sensor_px", "bit_depth"):
        v = _want(raw, key, int, errors, prefix)
        if v is not None:
            kwargs[key] = v
    float_keys = (
        "photon_scale", "vignette_k", "read_noise_sigma", "defocus_px_per_um",
        "vibration_um_per_speed", "objective_switch_s", "channel_switch_s",
        "autofocus_time_s", "autofocus_sigma_um", "autofocus_p_fail",
        "drift_headroom_um",
    )
    for key in float_keys:
        v = _want(raw, key, (int, float), errors, prefix)
        if v is not None:
            kwargs[key] = float(v)
    scene_raw = raw.get("scene")
    if scene_raw is not None:
        if not isinstance(scene_raw, Mapping):
            errors[prefix + "scene"] = "expected an object"
        else:
            kwargs["scene"] = _parse_scene(scene_raw, errors)
    try:
        return SimulatorConfig(**kwargs)
    except ParameterError as exc:
        errors["simulator"] = str(exc)
        return SimulatorConfig(seed=seed)


def _parse_acquisition(raw: Mapping[str, Any], errors: dict[str, str]) -> AcquisitionParams:
    prefix = "acquisition."
    _reject_unknown(raw, _ACQ_KEYS, errors, prefix)
    kwargs: dict[str, Any] = {}
    for key in ("duration_h", "interval_min", "z_step_um", "z_min_um", "z_max_um",
                "overlap", "stage_speed"):
        v = _want(raw, key, (int, float), errors, prefix)
        if v is not None:
            kwargs[key] = float(v)
    v = _want(raw, "bit_depth", int, errors, prefix)
    if v is not None:
        kwargs["bit_depth"] = v
    for key in ("apply_flattening", "execute_stabilization"):
        v = _want(raw, key, bool, errors, prefix)
        if v is not None:
            kwargs[key] = v
    if "af_update_every" in raw and raw["af_update_every"] is not None:
        v = _want(raw, "af_update_every", int, errors, prefix)
        if v is not None:
            kwargs["af_update_every"] = v
    v = _want(raw, "objective", str, errors, prefix)
    if v is not None:
        kwargs["objective"] = v
    if "channels" in raw:
        chraw = raw["channels"]
        if not isinstance(chraw, Mapping):
            errors[prefix + "channels"] = "expected an object of channel: exposure_ms"
        else:
            channels: dict[Channel, float] = {}
            for name, ms in chraw.items():
                try:
                    ch = Channel(name)
                except ValueError:
                    errors[prefix + f"channels.{name}"] = (
                        f"unknown channel (expected one of {[c.value for c in Channel]})"
                    )
                    continue
                if not isinstance(ms, (int, float)) or isinstance(ms, bool):
                    errors[prefix + f"channels.{name}"] = "exposure must be a number (ms)"
                    continue
                channels[ch] = float(ms)
            if channels or not chraw:
                kwargs["channels"] = channels
    for key, enum_cls in (("stitch_mode", StitchMode), ("travel_mode", TravelMode)):
        v = _want(raw, key, str, errors, prefix)
        if v is not None:
            try:
                kwargs[key] = enum_cls(v)
            except ValueError:
                errors[prefix + key] = f"expected one of {[e.value for e in enum_cls]}"
    try:
        params = AcquisitionParams(**kwargs)
    except (ParameterError, ValueError) as exc:
        errors["acquisition"] = str(exc)
        return AcquisitionParams()
    for fname, message in params.field_errors().items():
        errors[prefix + fname] = message
    return params


def _parse_overview(raw: Any, errors: dict[str, str]) -> OverviewRegion | None:
    if not isinstance(raw, Mapping):
        errors["overview"] = "expected an object with upper_left and lower_right"
        return None
    _reject_unknown(raw, {"upper_left", "lower_right"}, errors, "overview.")
    ul = lr = None
    if "upper_left" in raw:
        ul = _parse_pair(raw["upper_left"], "overview.upper_left", errors)
    else:
        errors["overview.upper_left"] = "missing corner"
    if "lower_right" in raw:
        lr = _parse_pair(raw["lower_right"], "overview.lower_right", errors)
    else:
        errors["overview.lower_right"] = "missing corner"
    if ul is None or lr is None:
        return None
    try:
        return OverviewRegion(ul, lr)
    except ParameterError as exc:
        errors["overview"] = str(exc)
        return None


def _parse_rois(raw: Any, errors: dict[str, str]) -> list[tuple[float, float, float, float]]:
    if not isinstance(raw, list):
        errors["rois"] = "expected a list of [x0, y0, x1, y1] rectangles"
        return []
    rois = []
    for i, rect in enumerate(raw):
        if (
            not isinstance(rect, (list, tuple))
            or len(rect) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in rect)
        ):
            errors[f"rois[{i}]"] = "expected four numbers [x0, y0, x1, y1]"
            continue
        x0, y0, x1, y1 = (float(v) for v in rect)
        if not (x0 < x1 and y0 < y1):
            errors[f"rois[{i}]"] = "rectangle is degenerate (x0 < x1 and y0 < y1 required)"
            continue
        rois.append((x0, y0, x1, y1))
    return rois


def parse_config(raw: Mapping[str, Any], env: Mapping[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    errors: dict[str, str] = {}
    if not isinstance(raw, Mapping):
        raise ConfigError({"": "top level must be a JSON object"})
    allowed = {"name", "seed", "data_root", "port", "simulator", "acquisition", "overview", "rois"}
    _reject_unknown(raw, allowed, errors, "")

    cfg = RunConfig()
    v = _want(raw, "name", str, errors)
    if v is not None:
        cfg.name = v
    v = _want(raw, "seed", int, errors)
    if v is not None:
        cfg.seed = v
    v = _want(raw, "data_root", str, errors)
    if v is not None:
        cfg.data_root = Path(v)
    v = _want(raw, "port", int, errors)
    if v is not None:
        if not (0 < v < 65536):
            errors["port"] = "port must be in 1..65535"
        else:
            cfg.port = v

    sim_raw = raw.get("simulator", {})
    if not isinstance(sim_raw, Mapping):
        errors["simulator"] = "expected an object"
        sim_raw = {}
    cfg.simulator = _parse_simulator(sim_raw, cfg.seed, errors)

    acq_raw = raw.get("acquisition", {})
    if not isinstance(acq_raw, Mapping):
        errors["acquisition"] = "expected an object"
        acq_raw = {}
    cfg.params = _parse_acquisition(acq_raw, errors)

    if "overview" in raw and raw["overview"] is not None:
        cfg.overview = _parse_overview(raw["overview"], errors)
    if "rois" in raw and raw["rois"] is not None:
        cfg.rois = _parse_rois(raw["rois"], errors)

    if ENV_PORT in env:
        try:
            port = int(env[ENV_PORT])
            if not (0 < port < 65536):
                raise ValueError
            cfg.port = port
        except ValueError:
            errors["port"] = f"environment {ENV_PORT}={env[ENV_PORT]!r} is not a valid port"
    if ENV_DATA_ROOT in env:
        cfg.data_root = Path(env[ENV_DATA_ROOT])

    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError({"": f"invalid JSON: {exc}"}) from exc
    return parse_config(raw, env)


def require_acquire_fields(cfg: RunConfig) -> None:
    """acquire needs the full setup declared up front; collect what is missing."""
    errors: dict[str, str] = {}
    if cfg.overview is None:
        errors["overview"] = "overview corners (upper_left, lower_right) are required"
    if not cfg.rois:
        errors["rois"] = "at least one ROI rectangle is required"
    elif cfg.overview is not None:
        for i, rect in enumerate(cfg.rois):
            if not cfg.overview.contains(rect):
                errors[f"rois[{i}]"] = "rectangle lies outside the overview region"
    if errors:
        raise ConfigError(errors)
