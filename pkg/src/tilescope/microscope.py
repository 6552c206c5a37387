"""Virtual microscope: a deterministic stand-in for the stage/camera/focus stack.

Exposes the command surface the acquisition engine drives (move, snap, switch
objective/channel, shutter, autofocus) against a :class:`SpecimenScene` whose
ground truth is queryable, so every acquired pixel can be checked against a
known answer.  All commands are serialized through one lock and advance a
simulated clock; with a fixed seed the whole acquisition is bit-reproducible.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import CapabilityError, ParameterError, TravelLimitError
from .imaging import Channel, Image, Translation, quantize
from .scene import SceneConfig, SpecimenScene


@dataclass(frozen=True)
class ObjectiveSpec:
    label: str
    magnification: float
    pixel_ratio: float  # µm per sensor pixel
    autofocus_capable: bool = False

    def __post_init__(self):
        if self.pixel_ratio <= 0:
            raise ParameterError(f"objective {self.label}: pixel_ratio must be > 0")


def default_turret() -> tuple[ObjectiveSpec, ...]:
    # ratios scale inversely with magnification; the 10X ratio makes the
    # sensor's field of view exactly 1.36 mm at the default sensor size
    return (
        ObjectiveSpec("2.5X", 2.5, 21.25),
        ObjectiveSpec("10X", 10.0, 5.3125),
        ObjectiveSpec("20X", 20.0, 2.65625),
        ObjectiveSpec("60X", 60.0, 0.8854166666666666, autofocus_capable=True),
    )


@dataclass
class SimulatorConfig:
    seed: int = 1234
    sensor_px: int = 256
    bit_depth: int = 8
    objectives: tuple[ObjectiveSpec, ...] = field(default_factory=default_turret)
    scene: SceneConfig = field(default_factory=SceneConfig)
    photon_scale: float = 8.0  # intensity levels per ms of exposure at power 1.0
    vignette_k: float = 0.25  # g(r) = 1 - k (r/r_max)^2
    read_noise_sigma: float = 1.0  # intensity levels
    defocus_px_per_um: float = 0.5  # blur sigma per µm of focus error
    vibration_um_per_speed: float = 0.0  # jitter sigma = coeff × stage speed
    objective_switch_s: float = 2.0
    channel_switch_s: float = 0.5
    autofocus_time_s: float = 0.5
    autofocus_sigma_um: float = 0.2
    autofocus_p_fail: float = 0.05
    drift_headroom_um: float = 150.0

    def __post_init__(self):
        if self.sensor_px < 16:
            raise ParameterError("sensor_px must be >= 16")
        if self.bit_depth not in (8, 16):
            raise ParameterError("bit_depth must be 8 or 16")
        if not self.objectives:
            raise ParameterError("at least one objective is required")
        if not (0.0 <= self.vignette_k <= 0.5):
            raise ParameterError("vignette_k must be in [0, 0.5]")
        if not (0.0 <= self.autofocus_p_fail <= 1.0):
            raise ParameterError("autofocus_p_fail must be in [0, 1]")
        objs = list(self.objectives)
        objs[-1] = replace(objs[-1], autofocus_capable=True)
        self.objectives = tuple(objs)

    def objective_index(self, label: str) -> int:
        for i, spec in enumerate(self.objectives):
            if spec.label == label:
                return i
        raise ParameterError(f"unknown objective label {label!r}")

    def lowest_magnification_index(self) -> int:
        return int(np.argmax([o.pixel_ratio for o in self.objectives]))


@dataclass(frozen=True)
class MicroscopeState:
    """Immutable snapshot of the simulated hardware."""

    stage_xy: tuple[float, float]
    stage_speed: float
    objective: int
    z: float
    channel: Channel
    exposures_ms: dict[Channel, float]
    fl_shutter_open: bool
    illumination: float
    bit_depth: int
    sim_clock: float


@dataclass(frozen=True)
class CommandRecord:
    """One hardware command in the simulator's event log."""

    kind: str
    t_start: float
    t_end: float
    detail: dict


class VirtualMicroscope:
    """Single hardware owner; every command takes the instance lock."""

    def __init__(self, config: SimulatorConfig | None = None):
        self.config = config or SimulatorConfig()
        root = np.random.SeedSequence(self.config.seed)
        scene_seq, noise_seq, af_seq, vib_seq = root.spawn(4)
        self.scene = SpecimenScene(self.config.scene, scene_seq)
        self._noise_rng = np.random.default_rng(noise_seq)
        self._af_rng = np.random.default_rng(af_seq)
        self._vib_rng = np.random.default_rng(vib_seq)
        self._lock = threading.RLock()
        self._clock = 0.0
        center = self.config.scene.extent_um / 2.0
        self._stage = np.array([center, center], dtype=np.float64)
        self._speed = 1000.0
        self._objective = self.config.objective_index("10X") if any(
            o.label == "10X" for o in self.config.objectives
        ) else 0
        self._z = self.scene.focal_z(center, center)
        self._channel = Channel.BF
        self._exposures: dict[Channel, float] = {ch: 33.0 for ch in Channel}
        self._shutter = False
        self._illumination = 1.0
        self._bit_depth = self.config.bit_depth
        self.command_log: list[CommandRecord] = []
        self._trajectory: list[np.ndarray] = []
        self._vignette_cache: np.ndarray | None = None

    # introspection --------------------------------------------------------

    @property
    def sim_clock(self) -> float:
        return self._clock

    def state(self) -> MicroscopeState:
        with self._lock:
            return MicroscopeState(
                stage_xy=(float(self._stage[0]), float(self._stage[1])),
                stage_speed=self._speed,
                objective=self._objective,
                z=self._z,
                channel=self._channel,
                exposures_ms=dict(self._exposures),
                fl_shutter_open=self._shutter,
                illumination=self._illumination,
                bit_depth=self._bit_depth,
                sim_clock=self._clock,
            )

    def current_objective(self) -> ObjectiveSpec:
        return self.config.objectives[self._objective]

    def fov_um(self) -> float:
        return self.config.sensor_px * self.current_objective().pixel_ratio

    def travel_bounds_um(self, objective: int | None = None) -> tuple[float, float]:
        """Stage range keeping the FOV plus drift headroom inside the scene."""
        spec = self.config.objectives[self._objective if objective is None else objective]
        margin = self.config.sensor_px * spec.pixel_ratio / 2.0 + self.config.drift_headroom_um
        return margin, self.config.scene.extent_um - margin

    def _log(self, kind: str, t_start: float, detail: dict | None = None) -> None:
        self.command_log.append(CommandRecord(kind, t_start, self._clock, detail or {}))

    # commands ---------------------------------------------------------------

    def set_stage_xy(self, x_um: float, y_um: float) -> float:
        with self._lock:
            lo, hi = self.travel_bounds_um()
            if not (lo <= x_um <= hi and lo <= y_um <= hi):
                raise TravelLimitError(
                    f"target ({x_um:.1f}, {y_um:.1f}) outside travel range [{lo:.1f}, {hi:.1f}] µm"
                )
            t0 = self._clock
            dist = math.hypot(x_um - self._stage[0], y_um - self._stage[1])
            elapsed = dist / self._speed
            self._stage[:] = (x_um, y_um)
            self._clock += elapsed
            self._log("MOVE", t0, {"x": x_um, "y": y_um, "dist_um": dist})
            return elapsed

    def set_stage_speed(self, um_per_s: float) -> None:
        with self._lock:
            if not um_per_s > 0:
                raise ParameterError(f"stage speed must be > 0, got {um_per_s}")
            self._speed = float(um_per_s)
            self._log("SPEED", self._clock, {"um_per_s": um_per_s})

    def set_objective(self, position: int) -> None:
        with self._lock:
            if not (0 <= position < len(self.config.objectives)):
                raise ParameterError(f"no objective at turret position {position}")
            t0 = self._clock
            if position != self._objective:
                self._objective = position
                self._clock += self.config.objective_switch_s
            self._log("OBJECTIVE", t0, {"position": position,
                                        "label": self.current_objective().label})

    def set_channel(self, mode: Channel | str) -> None:
        with self._lock:
            mode = Channel(mode)
            t0 = self._clock
            if mode != self._channel:
                if self._shutter and mode != Channel.FL:
                    self._shutter = False
                    self._log("SHUTTER", t0, {"open": False, "implicit": True})
                self._channel = mode
                self._clock += self.config.channel_switch_s
            self._log("CHANNEL", t0, {"mode": mode.value})

    def set_exposure(self, channel: Channel | str, ms: float) -> None:
        with self._lock:
            if not ms > 0:
                raise ParameterError(f"exposure must be > 0 ms, got {ms}")
            self._exposures[Channel(channel)] = float(ms)
            self._log("EXPOSURE", self._clock, {"channel": Channel(channel).value, "ms": ms})

    def set_fl_shutter(self, open_: bool) -> None:
        with self._lock:
            if open_ and self._channel != Channel.FL:
                raise ParameterError("FL shutter can only be opened in the FL channel")
            self._shutter = bool(open_)
            self._log("SHUTTER", self._clock, {"open": bool(open_)})

    def set_illumination(self, fraction: float) -> None:
        with self._lock:
            if not (0.0 <= fraction <= 1.0):
                raise ParameterError(f"illumination must be in [0, 1], got {fraction}")
            self._illumination = float(fraction)
            self._log("ILLUMINATION", self._clock, {"fraction": fraction})

    def set_z(self, z_um: float) -> None:
        with self._lock:
            self._z = float(z_um)
            self._log("Z", self._clock, {"z": z_um})

    def wait_until(self, t_s: float) -> None:
        """Idle until the simulated clock reaches t_s (no-op when already past)."""
        with self._lock:
            if t_s > self._clock:
                t0 = self._clock
                self._clock = float(t_s)
                self._log("WAIT", t0, {"until_s": float(t_s)})

    def set_bit_depth(self, depth: int) -> None:
        with self._lock:
            if depth not in (8, 16):
                raise ParameterError(f"bit depth must be 8 or 16, got {depth}")
            self._bit_depth = depth
            self._log("BIT_DEPTH", self._clock, {"depth": depth})

    # imaging ----------------------------------------------------------------

    def _vignette(self) -> np.ndarray:
        if self._vignette_cache is None:
            n = self.config.sensor_px
            c = (n - 1) / 2.0
            yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
            r2 = (yy - c) ** 2 + (xx - c) ** 2
            self._vignette_cache = 1.0 - self.config.vignette_k * r2 / r2.max()
        return self._vignette_cache

    def snap_image(self) -> Image:
        with self._lock:
            t0 = self._clock
            cfg = self.config
            n = cfg.sensor_px
            ratio = self.current_objective().pixel_ratio
            exposure = self._exposures[self._channel]

            jitter = np.zeros(2)
            if cfg.vibration_um_per_speed > 0:
                sigma = cfg.vibration_um_per_speed * self._speed
                jitter = self._vib_rng.normal(0.0, sigma, size=2)
            # the sample drifting +d is the window shifting -d over the scene
            drift = self.scene.drift.at(self._clock)
            center_um = self._stage + jitter - drift
            scene_ps = cfg.scene.pixel_size_um
            step = ratio / scene_ps
            left_um = center_um - (n * ratio) / 2.0
            # pixel centers at left + (j + 0.5) ratio; texel i is centered at (i + 0.5) ps
            origin_px = left_um / scene_ps + 0.5 * step - 0.5

            if self._channel == Channel.FL and not self._shutter:
                field_ = np.zeros((n, n), dtype=np.float64)
            else:
                field_ = self.scene.sample(
                    self._channel, origin_px[1], origin_px[0], step, n
                )
                dz = self._z - self.scene.focal_z(float(self._stage[0]), float(self._stage[1]))
                sigma_blur = cfg.defocus_px_per_um * abs(dz)
                if sigma_blur > 1e-3:
                    field_ = ndimage.gaussian_filter(field_, sigma_blur, mode="nearest")
                field_ = field_ * (cfg.photon_scale * exposure * self._illumination)
                if cfg.vignette_k > 0:
                    field_ = field_ * self._vignette()
            if cfg.read_noise_sigma > 0:
                field_ = field_ + self._noise_rng.normal(0.0, cfg.read_noise_sigma, (n, n))

            self._clock += exposure / 1000.0
            self._log("SNAP", t0, {"channel": self._channel.value, "exposure_ms": exposure,
                                   "x": float(self._stage[0]), "y": float(self._stage[1])})
            return Image(quantize(field_, self._bit_depth), ratio, self._channel)

    def autofocus(self) -> float | None:
        """Measured in-focus z at the current stage position, or None on failure."""
        with self._lock:
            if not self.current_objective().autofocus_capable:
                raise CapabilityError(
                    f"objective {self.current_objective().label} has no autofocus support"
                )
            t0 = self._clock
            self._clock += self.config.autofocus_time_s
            if self._af_rng.random() < self.config.autofocus_p_fail:
                self._log("AF_MEASURE", t0, {"ok": False})
                return None
            z = self.scene.focal_z(float(self._stage[0]), float(self._stage[1]))
            if self.config.autofocus_sigma_um > 0:
                z += self._af_rng.normal(0.0, self.config.autofocus_sigma_um)
            self._log("AF_MEASURE", t0, {"ok": True, "z": z})
            return float(z)

    # ground-truth oracle (test-only surface) ---------------------------------

    def mark_timestep(self) -> None:
        """Record the current drift as the next timestep's ground truth."""
        with self._lock:
            self._trajectory.append(self.scene.drift.at(self._clock).copy())

    def true_drift(self, timestep: int) -> Translation:
        """Cumulative recorded drift at a marked timestep, in current-objective pixels."""
        with self._lock:
            if not (0 <= timestep < len(self._trajectory)):
                raise ParameterError(
                    f"timestep {timestep} not recorded (have {len(self._trajectory)})"
                )
            rel = self._trajectory[timestep] - self._trajectory[0]
            ratio = self.current_objective().pixel_ratio
            return Translation(float(rel[0] / ratio), float(rel[1] / ratio))
