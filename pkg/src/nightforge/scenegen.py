"""Synthetic nighttime capture through a driving-simulator client.

Scenarios cross camera view, traffic direction, vehicle count and headlight
mode. Weather and time of day are locked to a clear night. Capture talks to
the simulator only through ``SimulatorClient``; ``MockSimulator`` renders
simple procedural frames for tests and demos, ``CarlaClient`` binds to CARLA
when the ``carla`` package is installed.
"""

from __future__ import annotations

import enum
import itertools
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError

log = logging.getLogger(__name__)

NIGHT_POOL_TARGET = 413
HOST_ENV, PORT_ENV = "NIGHTFORGE_SIM_HOST", "NIGHTFORGE_SIM_PORT"
SIDECAR = "captures.json"


class View(str, enum.Enum):
    SIDE = "SIDE"
    CENTER = "CENTER"
    TOP = "TOP"


class Direction(str, enum.Enum):
    APPROACHING = "APPROACHING"
    DEPARTING = "DEPARTING"


class Headlight(str, enum.Enum):
    LOW_BEAM = "LOW_BEAM"
    HIGH_BEAM = "HIGH_BEAM"


class Weather(str, enum.Enum):
    CLEAR = "CLEAR"


class TimeOfDay(str, enum.Enum):
    NIGHT = "NIGHT"


@dataclass(frozen=True)
class CameraPose:
    """Camera placement in world units (meters, degrees) relative to the road."""

    x: float
    y: float
    z: float
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0


DEFAULT_POSES = {
    View.SIDE: CameraPose(0.0, 9.0, 1.6, pitch=-5.0, yaw=-90.0),
    View.CENTER: CameraPose(25.0, 0.0, 4.5, pitch=-12.0, yaw=180.0),
    View.TOP: CameraPose(0.0, 0.0, 18.0, pitch=-90.0),
}


class SpawnCollisionError(RuntimeError):
    """The simulator refused a spawn because the point is occupied."""


class SimulatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    view: View
    direction: Direction
    vehicle_count: int
    headlight_mode: Headlight = Headlight.LOW_BEAM
    camera_pose: CameraPose | None = None
    map_id: str = "Town03"
    weather: Weather = Weather.CLEAR
    time_of_day: TimeOfDay = TimeOfDay.NIGHT

    def __post_init__(self) -> None:
        if self.weather is not Weather.CLEAR or self.time_of_day is not TimeOfDay.NIGHT:
            raise ValueError("scenarios are locked to clear weather at night")
        if self.vehicle_count < 1:
            raise ValueError(f"vehicle_count must be positive, got {self.vehicle_count}")
        if self.camera_pose is None:
            object.__setattr__(self, "camera_pose", DEFAULT_POSES[self.view])

    @property
    def scenario_id(self) -> str:
        return (f"{self.view.value.lower()}_{self.direction.value.lower()}_"
                f"{self.vehicle_count}v_{self.headlight_mode.value.lower()}")

    def to_dict(self) -> dict:
        return {"view": self.view.value, "direction": self.direction.value,
                "vehicle_count": self.vehicle_count, "headlight_mode": self.headlight_mode.value,
                "camera_pose": asdict(self.camera_pose), "map_id": self.map_id,
                "weather": self.weather.value, "time_of_day": self.time_of_day.value}


@dataclass(frozen=True)
class ScenegenConfig:
    views: tuple[View, ...] = (View.SIDE, View.CENTER, View.TOP)
    directions: tuple[Direction, ...] = (Direction.APPROACHING, Direction.DEPARTING)
    vehicle_counts: tuple[int, ...] = (1, 3)
    headlight_modes: tuple[Headlight, ...] = (Headlight.LOW_BEAM,)
    map_id: str = "Town03"
    width: int = 256
    height: int = 256
    target_images: int = NIGHT_POOL_TARGET
    seed: int = 0
    host: str = "localhost"
    port: int = 2000
    fixed_delta: float = 0.05
    ticks_per_frame: int = 4
    max_spawn_retries: int = 5
    connect_retries: int = 3
    backoff: float = 1.0

    @classmethod
    def from_dict(cls, data: Mapping) -> ScenegenConfig:
        """Build from flat keys; unknown keys are ignored, env vars override
        the simulator endpoint."""
        kw: dict = {}
        enums = {"views": View, "directions": Direction, "headlight_modes": Headlight}
        for key, value in data.items():
            if key in enums:
                kw[key] = tuple(enums[key](str(v).upper()) for v in value)
            elif key == "vehicle_counts":
                kw[key] = tuple(int(v) for v in value)
            elif key in cls.__dataclass_fields__:
                kw[key] = value
        cfg = cls(**kw)
        return cfg.with_env()

    def with_env(self, env: Mapping[str, str] | None = None) -> ScenegenConfig:
        env = os.environ if env is None else env
        host = env.get(HOST_ENV, self.host)
        port = int(env.get(PORT_ENV, self.port))
        return ScenegenConfig(**{**self.__dict__, "host": host, "port": port})


def scenario_matrix(config: ScenegenConfig) -> list[Scenario]:
    """Full cross product of the configured axes, in axis order.

    Raises:
        ConfigError: an axis is empty.
    """
    axes = {"views": config.views, "directions": config.directions,
            "vehicle_counts": config.vehicle_counts, "headlight_modes": config.headlight_modes}
    for name, values in axes.items():
        if not values:
            raise ConfigError(f"scenario axis {name!r} is empty", key=name)
    return [Scenario(v, d, n, h, map_id=config.map_id)
            for v, d, n, h in itertools.product(*axes.values())]


def frames_per_scenario(target: int, n_scenarios: int) -> int:
    if n_scenarios <= 0:
        raise ConfigError("scenario matrix is empty")
    return math.ceil(target / n_scenarios)


class SimulatorClient(Protocol):
    version: str

    def connect(self, host: str, port: int) -> None: ...

    def load_map(self, map_id: str) -> None: ...

    def configure(self, weather: Weather, time_of_day: TimeOfDay, fixed_delta: float) -> None: ...

    def spawn_points(self) -> int: ...

    def spawn_vehicle(self, spawn_index: int, direction: Direction) -> int: ...

    def set_headlights(self, actor: int, mode: Headlight) -> None: ...

    def attach_camera(self, pose: CameraPose, width: int, height: int) -> None: ...

    def tick(self) -> None: ...

    def read_frame(self) -> np.ndarray: ...

    def reset(self) -> None: ...


@dataclass(frozen=True)
class CaptureRecord:
    image: Path
    scenario: Scenario
    frame_index: int
    simulator_version: str
    seed: int

    def to_dict(self, base: Path) -> dict:
        return {"image": self.image.relative_to(base).as_posix(),
                "scenario_id": self.scenario.scenario_id, "scenario": self.scenario.to_dict(),
                "frame_index": self.frame_index, "simulator_version": self.simulator_version,
                "seed": self.seed}


def connect_with_retry(sim: SimulatorClient, host: str, port: int, retries: int = 3,
                       backoff: float = 1.0, sleep: Callable[[float], None] = time.sleep) -> None:
    """Connect, retrying with exponential backoff (``backoff * 2**k`` s)."""
    for attempt in range(retries + 1):
        try:
            sim.connect(host, port)
            return
        except (ConnectionError, TimeoutError, OSError) as exc:
            if attempt == retries:
                raise SimulatorError(
                    f"cannot reach simulator at {host}:{port} after {retries + 1} attempts: "
                    f"{exc}") from exc
            delay = backoff * 2 ** attempt
            log.warning("connection to %s:%d failed (%s); retrying in %.1fs", host, port, exc,
                        delay)
            sleep(delay)


def _spawn(sim: SimulatorClient, rng: np.random.Generator, direction: Direction,
           max_retries: int, taken: set[int]) -> int:
    n_points = sim.spawn_points()
    for attempt in range(max_retries + 1):
        free = [i for i in range(n_points) if i not in taken]
        if not free:
            break
        point = int(rng.choice(free))
        try:
            actor = sim.spawn_vehicle(point, direction)
            taken.add(point)
            return actor
        except SpawnCollisionError as exc:
            taken.add(point)
            log.warning("spawn at point %d refused (%s); re-sampling (attempt %d/%d)", point, exc,
                        attempt + 1, max_retries)
    raise SimulatorError(f"could not spawn a vehicle after {max_retries + 1} attempts")


def capture(sim: SimulatorClient, scenario: Scenario, n_frames: int, out_dir: str | Path,
            config: ScenegenConfig = ScenegenConfig(), seed: int | None = None,
            ) -> list[CaptureRecord]:
    """Run one scenario on a connected simulator and persist ``n_frames`` frames.

    Frames go to ``out_dir/<scenario_id>_<frame>.png``; their metadata is
    merged into the directory's ``captures.json`` sidecar.
    """
    if n_frames < 0:
        raise ValueError("n_frames must be non-negative")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(_scenario_seed(seed, scenario))
    sim.reset()
    sim.load_map(scenario.map_id)
    sim.configure(scenario.weather, scenario.time_of_day, config.fixed_delta)
    taken: set[int] = set()
    for _ in range(scenario.vehicle_count):
        actor = _spawn(sim, rng, scenario.direction, config.max_spawn_retries, taken)
        sim.set_headlights(actor, scenario.headlight_mode)
    sim.attach_camera(scenario.camera_pose, config.width, config.height)

    records = []
    for frame in range(n_frames):
        for _ in range(config.ticks_per_frame):
            sim.tick()
        arr = sim.read_frame()
        path = out_dir / f"{scenario.scenario_id}_{frame:04d}.png"
        Image.fromarray(arr).save(path)
        records.append(CaptureRecord(path, scenario, frame, sim.version, seed))
    _merge_sidecar(out_dir, scenario.scenario_id, records)
    return records


def _scenario_seed(seed: int, scenario: Scenario) -> list[int]:
    # stable across processes, unlike hash()
    return [seed, *scenario.scenario_id.encode("utf-8")]


def _merge_sidecar(out_dir: Path, scenario_id: str, records: Sequence[CaptureRecord]) -> None:
    path = out_dir / SIDECAR
    existing = json.loads(path.read_text(encoding="utf-8")) if path.exists() else []
    kept = [r for r in existing if r["scenario_id"] != scenario_id]
    kept += [r.to_dict(out_dir) for r in records]
    kept.sort(key=lambda r: r["image"])
    path.write_text(json.dumps(kept, indent=1), encoding="utf-8")


def read_sidecar(out_dir: str | Path) -> list[dict]:
    return json.loads((Path(out_dir) / SIDECAR).read_text(encoding="utf-8"))


@dataclass
class RunSummary:
    scenarios: list[Scenario]
    frames_per_scenario: int
    records: list[CaptureRecord] = field(default_factory=list)


def run_plan(sim: SimulatorClient, config: ScenegenConfig, out_dir: str | Path,
             sleep: Callable[[float], None] = time.sleep) -> RunSummary:
    """Capture the whole matrix, ``ceil(target / |matrix|)`` frames each."""
    scenarios = scenario_matrix(config)
    per = frames_per_scenario(config.target_images, len(scenarios))
    connect_with_retry(sim, config.host, config.port, config.connect_retries, config.backoff,
                       sleep)
    summary = RunSummary(scenarios, per)
    for s in scenarios:
        log.info("capturing %d frames of %s", per, s.scenario_id)
        summary.records += capture(sim, s, per, out_dir, config)
    return summary


class MockSimulator:
    """Scripted stand-in simulator rendering procedural night frames.

    Frames are a dark noisy road with vehicles drawn as dim bodies carrying
    two bright headlights (front, approaching) or red tail lights
    (departing); positions advance every tick, so consecutive frames differ.

    Args:
        seed: seeds the rendering noise.
        fail_connects: number of initial ``connect`` calls that fail.
        refuse_spawns: spawn-point indices that always collide.
        refuse_next: number of upcoming spawn attempts that collide
            whatever the point.
        n_spawn_points: size of the spawn-point list.
    """

    version = "mock-1.0"

    def __init__(self, seed: int = 0, fail_connects: int = 0,
                 refuse_spawns: Sequence[int] = (), refuse_next: int = 0,
                 n_spawn_points: int = 8):
        self.seed = seed
        self.fail_connects = fail_connects
        self.refuse_spawns = set(refuse_spawns)
        self.refuse_next = refuse_next
        self.n_spawn_points = n_spawn_points
        self.connected = False
        self.log: list[tuple] = []
        self.reset()

    def connect(self, host: str, port: int) -> None:
        self.log.append(("connect", host, port))
        if self.fail_connects > 0:
            self.fail_connects -= 1
            raise ConnectionError("scripted connection failure")
        self.connected = True

    def _require(self) -> None:
        if not self.connected:
            raise SimulatorError("not connected")

    def reset(self) -> None:
        self.vehicles: list[dict] = []
        self.camera: tuple[CameraPose, int, int] | None = None
        self.step = 0
        self.map_id = None

    def load_map(self, map_id: str) -> None:
        self._require()
        self.map_id = map_id
        self.log.append(("load_map", map_id))

    def configure(self, weather: Weather, time_of_day: TimeOfDay, fixed_delta: float) -> None:
        if weather is not Weather.CLEAR or time_of_day is not TimeOfDay.NIGHT:
            raise SimulatorError("mock only renders clear nights")
        self.fixed_delta = fixed_delta

    def spawn_points(self) -> int:
        return self.n_spawn_points

    def spawn_vehicle(self, spawn_index: int, direction: Direction) -> int:
        self._require()
        self.log.append(("spawn", spawn_index))
        if self.refuse_next > 0:
            self.refuse_next -= 1
            raise SpawnCollisionError(f"spawn point {spawn_index} occupied (scripted)")
        if spawn_index in self.refuse_spawns:
            raise SpawnCollisionError(f"spawn point {spawn_index} occupied")
        self.vehicles.append({"point": spawn_index, "direction": direction,
                              "lights": Headlight.LOW_BEAM})
        return len(self.vehicles) - 1

    def set_headlights(self, actor: int, mode: Headlight) -> None:
        self.vehicles[actor]["lights"] = mode

    def attach_camera(self, pose: CameraPose, width: int, height: int) -> None:
        self.camera = (pose, width, height)

    def tick(self) -> None:
        self.step += 1

    def read_frame(self) -> np.ndarray:
        if self.camera is None:
            raise SimulatorError("no camera attached")
        pose, w, h = self.camera
        rng = np.random.default_rng([self.seed, self.step])
        img = np.clip(rng.normal(12, 4, (h, w, 3)), 0, 255)
        horizon = h // 3 if pose.pitch > -45 else 0
        img[horizon:] += 10  # faintly brighter road surface
        for k, v in enumerate(self.vehicles):
            self._draw_vehicle(img, v, k, pose, w, h)
        return img.clip(0, 255).astype(np.uint8)

    def _draw_vehicle(self, img, v, k, pose, w, h) -> None:
        approaching = v["direction"] is Direction.APPROACHING
        t = (self.step * 0.01 + v["point"] / max(self.n_spawn_points, 1)) % 1.0
        lane = (k % 3) / 3
        if pose.pitch <= -45:  # top view: vehicles move vertically
            cx = int(w * (0.3 + 0.4 * lane))
            cy = int(h * (t if approaching else 1 - t))
            bw, bh = max(2, w // 12), max(3, h // 7)
        else:  # side/center: vehicles cross horizontally, nearer ones larger
            cx = int(w * (t if approaching else 1 - t))
            cy = int(h * (0.55 + 0.3 * lane))
            scale = 0.5 + lane
            bw, bh = max(3, int(w / 6 * scale)), max(2, int(h / 12 * scale))
        y0, y1 = max(cy - bh // 2, 0), min(cy + bh // 2 + 1, h)
        x0, x1 = max(cx - bw // 2, 0), min(cx + bw // 2 + 1, w)
        img[y0:y1, x0:x1] = 30
        glow = 255 if v["lights"] is Headlight.HIGH_BEAM else 220
        color = (glow, glow, glow * 0.85) if approaching else (200, 20, 20)
        r = max(1, bw // 8)
        for lx in (x0 + r, x1 - r - 1):
            ly = (y0 + y1) // 2
            img[max(ly - r, 0):ly + r + 1, max(lx - r, 0):lx + r + 1] = color


class CarlaClient:
    """``SimulatorClient`` over the CARLA Python API (optional dependency)."""

    def __init__(self, timeout: float = 10.0, blueprint_filter: str = "vehicle.*"):
        try:
            import carla
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise SimulatorError("the 'carla' package is required for CarlaClient") from exc
        self._carla = carla
        self.timeout = timeout
        self.blueprint_filter = blueprint_filter
        self.client = self.world = self.camera = None
        self.actors: list = []
        self._frames: list = []
        self.version = "unknown"

    def connect(self, host: str, port: int) -> None:
        self.client = self._carla.Client(host, port)
        self.client.set_timeout(self.timeout)
        try:
            self.version = self.client.get_server_version()
        except RuntimeError as exc:
            raise ConnectionError(str(exc)) from exc

    def load_map(self, map_id: str) -> None:
        self.world = self.client.load_world(map_id)

    def configure(self, weather: Weather, time_of_day: TimeOfDay, fixed_delta: float) -> None:
        carla = self._carla
        settings = self.world.get_settings()
        settings.synchronous_mode = True
        settings.fixed_delta_seconds = fixed_delta
        self.world.apply_settings(settings)
        params = carla.WeatherParameters.ClearNight
        self.world.set_weather(params)

    def spawn_points(self) -> int:
        return len(self.world.get_map().get_spawn_points())

    def spawn_vehicle(self, spawn_index: int, direction: Direction) -> int:
        bp = self.world.get_blueprint_library().filter(self.blueprint_filter)[0]
        point = self.world.get_map().get_spawn_points()[spawn_index]
        actor = self.world.try_spawn_actor(bp, point)
        if actor is None:
            raise SpawnCollisionError(f"spawn point {spawn_index} occupied")
        actor.set_autopilot(True)
        self.actors.append(actor)
        return len(self.actors) - 1

    def set_headlights(self, actor: int, mode: Headlight) -> None:
        ls = self._carla.VehicleLightState
        state = ls.LowBeam | ls.Position
        if mode is Headlight.HIGH_BEAM:
            state |= ls.HighBeam
        self.actors[actor].set_light_state(ls(state))

    def attach_camera(self, pose: CameraPose, width: int, height: int) -> None:
        carla = self._carla
        bp = self.world.get_blueprint_library().find("sensor.camera.rgb")
        bp.set_attribute("image_size_x", str(width))
        bp.set_attribute("image_size_y", str(height))
        anchor = self.actors[0].get_transform().location if self.actors else carla.Location()
        tf = carla.Transform(carla.Location(anchor.x + pose.x, anchor.y + pose.y, pose.z),
                             carla.Rotation(pitch=pose.pitch, yaw=pose.yaw, roll=pose.roll))
        self.camera = self.world.spawn_actor(bp, tf)
        self.camera.listen(self._frames.append)

    def tick(self) -> None:
        self.world.tick()

    def read_frame(self) -> np.ndarray:
        if not self._frames:
            self.world.tick()
        image = self._frames[-1]
        self._frames.clear()
        bgra = np.frombuffer(image.raw_data, dtype=np.uint8).reshape(image.height, image.width, 4)
        return bgra[:, :, 2::-1].copy()

    def reset(self) -> None:
        for a in [*self.actors, *([self.camera] if self.camera else [])]:
            a.destroy()
        self.actors, self.camera = [], None
        self._frames.clear()


def make_simulator(kind: str, seed: int = 0) -> SimulatorClient:
    if kind == "mock":
        return MockSimulator(seed)
    if kind == "carla":
        return CarlaClient()
    raise ConfigError(f"unknown simulator {kind!r} (expected 'mock' or 'carla')", key="simulator")
