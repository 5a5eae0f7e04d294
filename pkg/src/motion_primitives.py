"""Helix and spinning motion primitives and the seven discrete actions."""
import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from src.errors import ConfigError, PreconditionError

logger = logging.getLogger(__name__)

MAX_THETA_H = 4 * math.pi
SPIN_TIME = 0.5


class Scheme(Enum):
    NONE = "none"
    HELIX = "helix"
    HELIX_SPIN = "helix+spin"


@dataclass(frozen=True)
class ActionSpec:
    """One discrete action: motion scheme, sweep angles, time and complexity."""
    id: str
    scheme: Scheme
    theta_H: float
    theta_S: float
    exec_time: float
    complexity: int
    reference_success: Tuple[int, int]  # picks out of trials

    @property
    def reference_rate(self) -> float:
        s, n = self.reference_success
        return s / n

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "scheme": self.scheme.value,
            "theta_H": self.theta_H,
            "theta_S": self.theta_S,
            "exec_time": self.exec_time,
            "complexity": self.complexity,
        }


_ACTIONS = (
    ActionSpec("a_dl", Scheme.NONE, 0.0, 0.0, 1.2, 0, (31, 80)),
    ActionSpec("a_h", Scheme.HELIX, math.pi, 0.0, 2.3, 1, (47, 80)),
    ActionSpec("a_hs", Scheme.HELIX_SPIN, math.pi, math.pi / 2, 2.8, 2, (60, 80)),
    ActionSpec("a_f", Scheme.HELIX, 2 * math.pi, 0.0, 5.0, 3, (65, 80)),
    ActionSpec("a_fs", Scheme.HELIX_SPIN, 2 * math.pi, math.pi / 2, 5.5, 4, (66, 80)),
    ActionSpec("a_tf", Scheme.HELIX, 4 * math.pi, 0.0, 8.2, 5, (70, 80)),
    ActionSpec("a_tfs", Scheme.HELIX_SPIN, 4 * math.pi, math.pi / 2, 8.7, 6, (72, 80)),
)

ACTION_IDS = tuple(a.id for a in _ACTIONS)


def action_table() -> List[ActionSpec]:
    """The seven actions in complexity order."""
    return list(_ACTIONS)


def get_action(action_id: str) -> ActionSpec:
    for a in _ACTIONS:
        if a.id == action_id:
            return a
    raise ConfigError(f"unknown action {action_id!r}; expected one of {', '.join(ACTION_IDS)}")


@dataclass(frozen=True)
class HelixParams:
    c_H: Tuple[float, float] = (0.525, 0.065)
    r_x: float = 0.1
    r_y: float = 0.225
    h0: float = 0.32
    h: float = 0.14

    def validate(self) -> None:
        if not (0 < self.r_x <= self.r_y):
            raise ConfigError(f"helix radii must satisfy 0 < r_x <= r_y, got {self.r_x}, {self.r_y}")
        if self.h0 <= 0 or self.h <= 0:
            raise ConfigError("helix heights h0 and h must be positive")


@dataclass(frozen=True)
class SpinParams:
    c_S: Tuple[float, float, float]
    theta_S: float


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    z: float
    yaw: float
    t: float
    segment: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"x": self.x, "y": self.y, "z": self.z, "yaw": self.yaw, "t": self.t,
                "segment": self.segment}


@dataclass(frozen=True)
class Trajectory:
    waypoints: Tuple[Waypoint, ...] = ()

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def duration(self) -> float:
        return self.waypoints[-1].t - self.waypoints[0].t if self.waypoints else 0.0

    def segment(self, name: str) -> List[Waypoint]:
        return [w for w in self.waypoints if w.segment == name]

    def segment_duration(self, name: str) -> float:
        """Time spent moving into and through the waypoints of one segment."""
        total = 0.0
        for prev, cur in zip(self.waypoints, self.waypoints[1:]):
            if cur.segment == name:
                total += cur.t - prev.t
        return total

    def as_array(self) -> np.ndarray:
        return np.array([[w.x, w.y, w.z, w.yaw, w.t] for w in self.waypoints])

    def to_list(self) -> List[Dict[str, Any]]:
        return [w.to_dict() for w in self.waypoints]


# A path is a list of (x, y, z, yaw, segment) before timing.
_Point = Tuple[float, float, float, float, str]


def _time_path(points: Sequence[_Point], duration: float, t0: float, angular: bool = False) -> List[Waypoint]:
    """Timestamps at uniform speed; the first point sits at t0."""
    if len(points) == 1:
        x, y, z, yaw, seg = points[0]
        return [Waypoint(x, y, z, yaw, t0, seg)]
    arr = np.array([p[:4] for p in points], dtype=np.float64)
    if angular:
        steps = np.abs(np.diff(arr[:, 3]))
    else:
        steps = np.linalg.norm(np.diff(arr[:, :3], axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    times = t0 + duration * cum / cum[-1]
    return [Waypoint(p[0], p[1], p[2], p[3], float(t), p[4]) for p, t in zip(points, times)]


def _dedupe(points: List[_Point]) -> List[_Point]:
    out = [points[0]]
    for p in points[1:]:
        if p[:4] != out[-1][:4]:
            out.append(p)
    return out


def _path_length(points: Sequence[_Point]) -> float:
    if len(points) < 2:
        return 0.0
    arr = np.array([p[:3] for p in points], dtype=np.float64)
    return float(np.linalg.norm(np.diff(arr, axis=0), axis=1).sum())


def _entry_phase(H: HelixParams, x: float, y: float) -> float:
    """Ellipse phase of the point nearest (x, y)."""
    def dist2(theta: float) -> float:
        return (H.c_H[0] + H.r_x * math.cos(theta) - x) ** 2 + (H.c_H[1] + H.r_y * math.sin(theta) - y) ** 2

    grid = np.linspace(0.0, 2 * math.pi, 360, endpoint=False)
    coarse = float(grid[int(np.argmin([dist2(t) for t in grid]))])
    step = 2 * math.pi / 360
    res = minimize_scalar(dist2, bounds=(coarse - step, coarse + step), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x) % (2 * math.pi)


def _helix_path(
    H: HelixParams, theta_H: float, start: Tuple[float, float, float], n_per_turn: int, yaw: float
) -> List[_Point]:
    H.validate()
    if theta_H < 0:
        raise ConfigError(f"theta_H must be >= 0, got {theta_H}")
    if theta_H > MAX_THETA_H + 1e-12:
        raise ConfigError(f"theta_H {theta_H:.4f} exceeds the 4*pi maximum")
    if n_per_turn < 8:
        raise ConfigError(f"n_per_turn must be >= 8, got {n_per_turn}")
    sx, sy, sz = start
    points: List[_Point] = [(sx, sy, sz, yaw, "lift"), (sx, sy, max(sz, H.h0), yaw, "lift")]
    if theta_H > 0:
        theta0 = _entry_phase(H, sx, sy)
        n_steps = max(1, int(round(theta_H * n_per_turn / (2 * math.pi))))
        for i, theta in enumerate(np.linspace(0.0, theta_H, n_steps + 1)):
            p = (
                H.c_H[0] + H.r_x * math.cos(theta + theta0),
                H.c_H[1] + H.r_y * math.sin(theta + theta0),
                H.h0 + H.h * theta / MAX_THETA_H,
                yaw,
                "entry" if i == 0 else "helix",
            )
            points.append(p)
    return _dedupe(points)


def helix_waypoints(
    H: HelixParams,
    theta_H: float,
    start: Tuple[float, float, float],
    n_per_turn: int = 36,
    speed: float = 0.25,
    yaw: float = 0.0,
) -> Trajectory:
    """Lift to h0, then sweep the elliptical helix for theta_H radians.

    z rises linearly with the sweep and reaches h0 + h at 4*pi.
    """
    points = _helix_path(H, theta_H, start, n_per_turn, yaw)
    if len(points) == 1:
        return Trajectory(tuple(_time_path(points, 0.0, 0.0)))
    return Trajectory(tuple(_time_path(points, _path_length(points) / speed, 0.0)))


def _spin_path(S: SpinParams, n: int, yaw0: float = 0.0) -> List[_Point]:
    if n < 4:
        raise ConfigError(f"spin samples per leg must be >= 4, got {n}")
    x, y, z = S.c_S
    points: List[_Point] = [(x, y, z, yaw0, "spin")]
    if S.theta_S == 0:
        return points
    for a, b in ((0.0, S.theta_S), (S.theta_S, 0.0), (0.0, -S.theta_S), (-S.theta_S, 0.0)):
        for yaw in np.linspace(a, b, n + 1)[1:]:
            points.append((x, y, z, yaw0 + float(yaw), "spin"))
    return points


def spin_waypoints(S: SpinParams, n: int = 8, duration: float = SPIN_TIME) -> Trajectory:
    """Two-way spin about the vertical axis: 0, +theta_S, 0, -theta_S, 0."""
    points = _spin_path(S, n)
    return Trajectory(tuple(_time_path(points, duration if len(points) > 1 else 0.0, 0.0, angular=True)))


@dataclass(frozen=True)
class PlanTiming:
    """Fixed segments around the action body."""
    approach_time: float = 1.0
    transport_time: float = 2.0
    spin_time: float = SPIN_TIME
    helix_speed: float = 0.4  # m/s, shared by every action
    approach_clearance: float = 0.10
    place_pose: Tuple[float, float, float, float] = (0.25, 0.45, 0.40, 0.0)
    n_per_turn: int = 36
    spin_samples: int = 8


def _helix_start(body: Sequence[_Point]) -> int:
    """Index of the first point on the helix curve (the last point when there is none)."""
    for i, p in enumerate(body):
        if p[4] == "entry":
            return i
        if p[4] == "helix":
            return i - 1
    return len(body) - 1


def plan_action(a: ActionSpec, g, H: HelixParams, timing: PlanTiming = PlanTiming()) -> Trajectory:
    """Full pick trajectory: approach, action body, transport to the place pose.

    The helix runs at timing.helix_speed for every action, so its duration is
    proportional to its arc length. Lift and entry share the rest of
    a.exec_time at one uniform speed, so the body lasts exactly a.exec_time.
    """
    if g.robot_frame is None:
        raise PreconditionError("grasp has no robot-frame pose; call pixel_to_robot first")
    if timing.helix_speed <= 0:
        raise ConfigError(f"helix_speed must be positive, got {timing.helix_speed}")
    rf = g.robot_frame
    yaw = rf.phi

    approach = [
        (rf.x, rf.y, rf.z + timing.approach_clearance, yaw, "approach"),
        (rf.x, rf.y, rf.z, yaw, "approach"),
    ]
    waypoints = _time_path(approach, timing.approach_time, 0.0)
    t = waypoints[-1].t

    spin_time = timing.spin_time if a.theta_S > 0 else 0.0
    body = _helix_path(H, a.theta_H, (rf.x, rf.y, rf.z), timing.n_per_turn, yaw)
    s = _helix_start(body)
    helix = body[s:]
    helix_time = _path_length(helix) / timing.helix_speed
    lift_time = a.exec_time - spin_time - helix_time
    if lift_time <= 0:
        raise ConfigError(
            f"{a.id}: helix takes {helix_time:.2f} s at {timing.helix_speed} m/s, "
            f"more than the {a.exec_time - spin_time:.2f} s available"
        )
    timed = _time_path(body[:s + 1], lift_time, t)
    waypoints.extend(timed[1:])
    t = waypoints[-1].t
    if len(helix) > 1:
        timed = _time_path(helix, helix_time, t)
        waypoints.extend(timed[1:])
        t = waypoints[-1].t

    if a.theta_S > 0:
        end = waypoints[-1]
        spin = _spin_path(SpinParams((end.x, end.y, end.z), a.theta_S), timing.spin_samples, yaw)
        timed = _time_path(spin, spin_time, t, angular=True)
        waypoints.extend(timed[1:])
        t = waypoints[-1].t

    end = waypoints[-1]
    px, py, pz, pyaw = timing.place_pose
    transport = [(end.x, end.y, end.z, end.yaw, "transport"), (px, py, pz, pyaw, "transport")]
    timed = _time_path(transport, timing.transport_time, t)
    waypoints.extend(timed[1:])
    return Trajectory(tuple(waypoints))
