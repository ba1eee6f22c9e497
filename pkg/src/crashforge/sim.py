"""Kinematic bicycle agents with pure-pursuit steering and end-of-path braking.

Waypoint paths are guidelines only: they shape the steering command through
pure pursuit, while speed follows a proportional controller until the agent
approaches its path end, at which point braking latches on and stays on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import FootprintOBB

MAX_STEER_RAD = math.radians(30.0)
WHEELBASE_M = 2.7
VEHICLE_HALF_LENGTH_M = 2.25
VEHICLE_HALF_WIDTH_M = 0.95
SPEED_GAIN = 0.8  # proportional speed-tracking gain, 1/s
MIN_LOOKAHEAD_M = 5.0
LOOKAHEAD_PER_SPEED = 0.8  # lookahead = max(MIN, speed * this)


class NonFiniteError(Exception):
    """A kinematic update produced a non-finite value (upstream control bug)."""


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float  # radians CCW from +x
    speed: float  # m/s, >= 0
    steer: float = 0.0  # front-wheel angle, radians, left positive

    def footprint(self) -> FootprintOBB:
        return FootprintOBB(
            self.x, self.y, VEHICLE_HALF_LENGTH_M, VEHICLE_HALF_WIDTH_M, self.heading
        )


class WaypointPath:
    """An ordered guideline polyline plus the agent's speed/braking targets."""

    def __init__(self, points: np.ndarray, target_speed: float, brake_decel: float):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 2 or points.shape[1] != 2:
            raise ValueError("path needs at least 2 two-dimensional points")
        seg = np.diff(points, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len == 0.0):
            raise ValueError("consecutive waypoints must be distinct")
        self.points = points
        self.target_speed = float(target_speed)
        self.brake_decel = float(brake_decel)
        self._seg = seg
        self._seg_len = seg_len
        self._cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.total_length = float(self._cum[-1])

    def arc_position(self, x: float, y: float) -> float:
        """Arc length of the closest point on the polyline to (x, y)."""
        rel = np.array([x, y]) - self.points[:-1]
        t = np.clip(
            (rel * self._seg).sum(axis=1) / (self._seg_len**2), 0.0, 1.0
        )
        nearest = self.points[:-1] + t[:, None] * self._seg
        d2 = ((np.array([x, y]) - nearest) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
        return float(self._cum[i] + t[i] * self._seg_len[i])

    def point_at_arc(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.total_length)
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(i, len(self._seg_len) - 1)
        frac = (s - self._cum[i]) / self._seg_len[i]
        return self.points[i] + frac * self._seg[i]


def step_kinematic(
    state: VehicleState,
    accel: float,
    steer_cmd: float,
    dt: float,
    wheelbase: float = WHEELBASE_M,
) -> VehicleState:
    """Forward-Euler kinematic bicycle update with a non-negative speed floor."""
    if dt <= 0 or wheelbase <= 0:
        raise ValueError("dt and wheelbase must be positive")
    steer = min(max(steer_cmd, -MAX_STEER_RAD), MAX_STEER_RAD)
    new_speed = max(0.0, state.speed + accel * dt)
    new_heading = state.heading + (state.speed / wheelbase) * math.tan(steer) * dt
    new_x = state.x + state.speed * math.cos(state.heading) * dt
    new_y = state.y + state.speed * math.sin(state.heading) * dt
    out = VehicleState(new_x, new_y, new_heading, new_speed, steer)
    if not (
        math.isfinite(new_x)
        and math.isfinite(new_y)
        and math.isfinite(new_heading)
        and math.isfinite(new_speed)
    ):
        raise NonFiniteError(f"non-finite state after step: {out}")
    return out


def pure_pursuit_steer(
    state: VehicleState,
    path: WaypointPath,
    lookahead: float,
    wheelbase: float = WHEELBASE_M,
) -> float:
    """Steer toward the first path point one lookahead beyond the closest point."""
    if lookahead <= 0:
        raise ValueError("lookahead must be positive")
    s = path.arc_position(state.x, state.y)
    goal = path.point_at_arc(s + lookahead)
    alpha = math.atan2(goal[1] - state.y, goal[0] - state.x) - state.heading
    steer = math.atan(2.0 * wheelbase * math.sin(alpha) / lookahead)
    return min(max(steer, -MAX_STEER_RAD), MAX_STEER_RAD)


def stopping_margin(speed: float, brake_decel: float) -> float:
    """Distance a constant-decel stop needs from the current speed."""
    return speed * speed / (2.0 * brake_decel)


def max_accel_for_mass(mass_kg: float) -> float:
    """Heavier cars accelerate more slowly; clamped to a plausible band."""
    return min(max(4.0 * (1500.0 / mass_kg), 1.5), 6.0)


def longitudinal_accel(
    state: VehicleState,
    path: WaypointPath,
    dist_to_path_end: float,
    a_max: float = 4.0,
    latched: bool = False,
) -> tuple[float, bool]:
    """Speed-tracking acceleration, or latched braking near the path end.

    Returns (accel, latched'). Once the braking latch engages it never
    releases for the current path.
    """
    if dist_to_path_end < 0:
        raise ValueError("dist_to_path_end must be >= 0")
    if latched or dist_to_path_end <= stopping_margin(state.speed, path.brake_decel):
        return -path.brake_decel, True
    accel = SPEED_GAIN * (path.target_speed - state.speed)
    return min(max(accel, -path.brake_decel), a_max), False


@dataclass(frozen=True)
class PathSegment:
    """One leg of an agent plan; `dwell_s` holds the agent after it stops here."""

    path: WaypointPath
    dwell_s: float = 0.0


class Agent:
    """Steps one vehicle along its plan of path segments."""

    def __init__(
        self,
        state: VehicleState,
        plan: list[PathSegment],
        mass_kg: float = 1500.0,
        wheelbase: float = WHEELBASE_M,
    ):
        if not plan:
            raise ValueError("agent needs at least one path segment")
        self.state = state
        self.plan = list(plan)
        self.wheelbase = wheelbase
        self.a_max = max_accel_for_mass(mass_kg)
        self._seg_idx = 0
        self._latched = False
        self._dwell_left = 0.0

    @property
    def current_path(self) -> WaypointPath:
        return self.plan[self._seg_idx].path

    def step(self, dt: float) -> None:
        if self._dwell_left > 0.0:
            self._dwell_left -= dt
            self.state = replace(self.state, speed=0.0, steer=0.0)
            if self._dwell_left <= 0.0 and self._seg_idx + 1 < len(self.plan):
                self._seg_idx += 1
                self._latched = False
            return

        path = self.current_path
        s = path.arc_position(self.state.x, self.state.y)
        dist_to_end = max(0.0, path.total_length - s)
        lookahead = max(MIN_LOOKAHEAD_M, LOOKAHEAD_PER_SPEED * self.state.speed)
        steer = pure_pursuit_steer(self.state, path, lookahead, self.wheelbase)
        accel, self._latched = longitudinal_accel(
            self.state, path, dist_to_end, self.a_max, self._latched
        )
        self.state = step_kinematic(self.state, accel, steer, dt, self.wheelbase)

        if self._latched and self.state.speed == 0.0:
            if self._seg_idx + 1 < len(self.plan):
                dwell = self.plan[self._seg_idx].dwell_s
                if dwell > 0.0:
                    self._dwell_left = dwell
                else:
                    self._seg_idx += 1
                    self._latched = False
