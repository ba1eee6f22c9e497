"""Catalog of the 15 pre-crash scenario templates and their episode geometry.

Each template pairs a properly-driving ego with a dangerously-driving
adversary. Instantiation turns a template plus one parameter sample into
concrete initial states and waypoint plans; all randomness comes from the
caller's stream, so setups are reproducible field for field.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import RngStream
from .sampling import ParameterSample
from .sim import Agent, PathSegment, VehicleState, WaypointPath

HIGHWAY_LENGTH_M = 300.0
LANE_WIDTH_M = 3.5
ARM_LENGTH_M = 100.0
START_FROM_CENTER_M = 60.0
TURN_RADIUS_M = LANE_WIDTH_M + 2.0
STOP_LINE_FROM_CENTER_M = 6.0
STOP_DWELL_S = 1.0
EPISODE_DURATION_S = 10.0

_WAYPOINT_SPACING_M = 1.0
_SPEED_JITTER_FRAC = 0.05
_EGO_LATERAL_JITTER_STD_M = 0.25
_EGO_LATERAL_JITTER_MAX_M = 0.6


class UnknownBehaviorRuleError(Exception):
    """A template references a behavior rule that is not registered."""


class Environment(enum.Enum):
    HIGHWAY = "H"
    INTERSECTION = "I"


class TrafficControl(enum.Enum):
    NONE = "none"
    SIGNAL = "signal"
    STOP_SIGN = "stop_sign"


@dataclass(frozen=True)
class ScenarioTemplate:
    id: str
    name: str
    environment: Environment
    ego_behavior: str
    adversary_behavior: str
    uses_lane_change_params: bool
    in_default_dataset: bool
    traffic_control: TrafficControl


@dataclass(frozen=True)
class HighwayGeometry:
    lane_width_m: float = LANE_WIDTH_M
    road_length_m: float = HIGHWAY_LENGTH_M
    same_direction: bool = True

    kind = "highway"


@dataclass(frozen=True)
class IntersectionGeometry:
    arm_length_m: float = ARM_LENGTH_M
    lane_width_m: float = LANE_WIDTH_M

    kind = "intersection"


RoadGeometry = HighwayGeometry | IntersectionGeometry


@dataclass(frozen=True)
class EpisodeSetup:
    scenario_id: str
    ego_initial: VehicleState
    adversary_initial: VehicleState
    ego_plan: tuple[PathSegment, ...]
    adversary_plan: tuple[PathSegment, ...]
    road_geometry: RoadGeometry
    signal_state: str
    duration_s: float = EPISODE_DURATION_S

    @property
    def ego_path(self) -> WaypointPath:
        return _merged_path(self.ego_plan)

    @property
    def adversary_path(self) -> WaypointPath:
        return _merged_path(self.adversary_plan)

    def make_agents(self, mass_kg: float) -> tuple[Agent, Agent]:
        ego = Agent(self.ego_initial, list(self.ego_plan), mass_kg=mass_kg)
        adversary = Agent(self.adversary_initial, list(self.adversary_plan), mass_kg=mass_kg)
        return ego, adversary


def _merged_path(plan: tuple[PathSegment, ...]) -> WaypointPath:
    points = [plan[0].path.points]
    for seg in plan[1:]:
        pts = seg.path.points
        if np.array_equal(pts[0], points[-1][-1]):
            pts = pts[1:]
        points.append(pts)
    first = plan[0].path
    return WaypointPath(np.vstack(points), first.target_speed, first.brake_decel)


# ---------------------------------------------------------------------------
# Path construction helpers
# ---------------------------------------------------------------------------


def _resample(a: np.ndarray, b: np.ndarray, spacing: float = _WAYPOINT_SPACING_M) -> np.ndarray:
    """Points from a to b inclusive at roughly `spacing` intervals."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(1, int(math.ceil(np.hypot(*(b - a)) / spacing)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return a + t * (b - a)


def _straight(a, b, target_speed, brake) -> WaypointPath:
    return WaypointPath(_resample(np.array(a), np.array(b)), target_speed, brake)


def _arc_points(center, radius, theta0, theta1, spacing: float = 0.5) -> np.ndarray:
    n = max(2, int(math.ceil(abs(theta1 - theta0) * radius / spacing)))
    theta = np.linspace(theta0, theta1, n + 1)
    return np.stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)], axis=1
    )


def _dedupe(points: np.ndarray) -> np.ndarray:
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.any(np.diff(points, axis=0) != 0.0, axis=1)
    return points[keep]


def _lane_shift_points(
    start_xy: tuple[float, float],
    direction: float,
    total_length: float,
    ramp_start: float,
    ramp_length: float,
    lateral_shift: float,
    return_after: float | None = None,
) -> np.ndarray:
    """Longitudinal path with a cosine lateral ramp; endpoints are exact.

    `direction` is +1 for +x travel, -1 for -x. When `return_after` is given
    the ramp reverses after that much additional straight travel (out-and-back
    overtake shape).
    """
    x0, y0 = start_xy
    s_ramp_end = ramp_start + ramp_length
    breakpoints = [0.0, ramp_start, s_ramp_end]
    if return_after is not None:
        s_back = s_ramp_end + return_after
        breakpoints += [s_back, s_back + ramp_length]
    breakpoints.append(total_length)

    s_parts = []
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        if hi <= lo:
            continue
        n = max(1, int(math.ceil((hi - lo) / _WAYPOINT_SPACING_M)))
        s_parts.append(np.linspace(lo, hi, n + 1))
    s = np.unique(np.concatenate(s_parts))

    y = np.full_like(s, y0)
    in_ramp = (s >= ramp_start) & (s <= s_ramp_end)
    y[in_ramp] = y0 + lateral_shift * (
        1.0 - np.cos(np.pi * (s[in_ramp] - ramp_start) / ramp_length)
    ) / 2.0
    after = s > s_ramp_end
    y[after] = y0 + lateral_shift
    if return_after is not None:
        s_back = s_ramp_end + return_after
        back_ramp = (s >= s_back) & (s <= s_back + ramp_length)
        y[back_ramp] = y0 + lateral_shift * (
            1.0 + np.cos(np.pi * (s[back_ramp] - s_back) / ramp_length)
        ) / 2.0
        y[s > s_back + ramp_length] = y0

    x = x0 + direction * s
    return _dedupe(np.stack([x, y], axis=1))


# ---------------------------------------------------------------------------
# Behavior rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _BuildContext:
    params: ParameterSample
    ego_speed: float
    adversary_speed: float
    ego_lateral_offset: float
    template: ScenarioTemplate


_Builder = Callable[[_BuildContext], tuple[VehicleState, tuple[PathSegment, ...]]]

_EGO_LANE_Y = -LANE_WIDTH_M / 2.0  # eastbound right lane
_ADJ_LANE_Y = LANE_WIDTH_M / 2.0  # adjacent / oncoming lane
_HIGHWAY_EGO_X0 = 20.0
_LEAD_GAP_M = 20.0
_INTERSECTION_START = math.hypot(START_FROM_CENTER_M, LANE_WIDTH_M / 2.0)


_MERGE_LENGTH_M = 30.0


def _merge_then_straight(start, merge, end) -> np.ndarray:
    """Guideline from the jittered start back onto the lane-center line."""
    pts = np.vstack([_resample(start, merge), _resample(merge, end)[1:]])
    return _dedupe(pts)


def _ego_highway_straight(ctx: _BuildContext):
    y = _EGO_LANE_Y + ctx.ego_lateral_offset
    state = VehicleState(_HIGHWAY_EGO_X0, y, 0.0, ctx.ego_speed)
    pts = _merge_then_straight(
        (_HIGHWAY_EGO_X0, y),
        (_HIGHWAY_EGO_X0 + _MERGE_LENGTH_M, _EGO_LANE_Y),
        (HIGHWAY_LENGTH_M, _EGO_LANE_Y),
    )
    path = WaypointPath(pts, ctx.ego_speed, ctx.params.brake_decel_mps2)
    return state, (PathSegment(path),)


def _ego_intersection_start(ctx: _BuildContext) -> VehicleState:
    # Lateral jitter with the longitudinal coordinate adjusted so the
    # straight-line distance to the intersection center stays exactly equal
    # to the adversary's.
    y = _EGO_LANE_Y + ctx.ego_lateral_offset
    x = -math.sqrt(_INTERSECTION_START**2 - y**2)
    return VehicleState(x, y, 0.0, ctx.ego_speed)


def _ego_intersection_straight(ctx: _BuildContext):
    state = _ego_intersection_start(ctx)
    pts = _merge_then_straight(
        (state.x, state.y),
        (state.x + _MERGE_LENGTH_M, _EGO_LANE_Y),
        (ARM_LENGTH_M, _EGO_LANE_Y),
    )
    path = WaypointPath(pts, ctx.ego_speed, ctx.params.brake_decel_mps2)
    return state, (PathSegment(path),)


def _ego_intersection_stop(ctx: _BuildContext):
    state = _ego_intersection_start(ctx)
    brake = ctx.params.brake_decel_mps2
    approach_pts = _merge_then_straight(
        (state.x, state.y),
        (state.x + _MERGE_LENGTH_M, _EGO_LANE_Y),
        (-STOP_LINE_FROM_CENTER_M, _EGO_LANE_Y),
    )
    approach = WaypointPath(approach_pts, ctx.ego_speed, brake)
    through = _straight(
        (-STOP_LINE_FROM_CENTER_M, _EGO_LANE_Y),
        (ARM_LENGTH_M, _EGO_LANE_Y),
        ctx.ego_speed,
        brake,
    )
    return state, (PathSegment(approach, dwell_s=STOP_DWELL_S), PathSegment(through))


def _adv_cross_straight(ctx: _BuildContext):
    # From the south arm, northbound right lane, straight through.
    x = LANE_WIDTH_M / 2.0
    state = VehicleState(x, -START_FROM_CENTER_M, math.pi / 2.0, ctx.adversary_speed)
    path = _straight(
        (x, -START_FROM_CENTER_M), (x, ARM_LENGTH_M), ctx.adversary_speed, ctx.params.brake_decel_mps2
    )
    return state, (PathSegment(path),)


def _adv_right_turn_into_lane(ctx: _BuildContext):
    # Northbound from the south arm, right turn into the ego's eastbound lane.
    x_in = LANE_WIDTH_M / 2.0
    r = TURN_RADIUS_M
    center = (x_in + r, _EGO_LANE_Y - r)
    pts = np.vstack(
        [
            _resample((x_in, -START_FROM_CENTER_M), (x_in, _EGO_LANE_Y - r)),
            _arc_points(center, r, math.pi, math.pi / 2.0)[1:],
            _resample((x_in + r, _EGO_LANE_Y), (ARM_LENGTH_M, _EGO_LANE_Y))[1:],
        ]
    )
    state = VehicleState(x_in, -START_FROM_CENTER_M, math.pi / 2.0, ctx.adversary_speed)
    path = WaypointPath(_dedupe(pts), ctx.adversary_speed, ctx.params.brake_decel_mps2)
    return state, (PathSegment(path),)


def _adv_left_turn_across(ctx: _BuildContext):
    # Westbound from the east arm, left turn across the ego's path onto the
    # south arm.
    y_in = _ADJ_LANE_Y
    r = TURN_RADIUS_M
    x_out = -LANE_WIDTH_M / 2.0
    center = (x_out + r, y_in - r)
    pts = np.vstack(
        [
            _resample((START_FROM_CENTER_M, y_in), (x_out + r, y_in)),
            _arc_points(center, r, math.pi / 2.0, math.pi)[1:],
            _resample((x_out, y_in - r), (x_out, -ARM_LENGTH_M))[1:],
        ]
    )
    state = VehicleState(START_FROM_CENTER_M, y_in, math.pi, ctx.adversary_speed)
    path = WaypointPath(_dedupe(pts), ctx.adversary_speed, ctx.params.brake_decel_mps2)
    return state, (PathSegment(path),)


def _adv_lane_change(ctx: _BuildContext):
    x0 = _HIGHWAY_EGO_X0 + 12.0
    pts = _lane_shift_points(
        (x0, _ADJ_LANE_Y),
        direction=1.0,
        total_length=HIGHWAY_LENGTH_M - x0,
        ramp_start=13.0,
        ramp_length=ctx.params.lane_change_distance_m,
        lateral_shift=-ctx.params.vertical_offset_m,
    )
    state = VehicleState(x0, _ADJ_LANE_Y, 0.0, ctx.adversary_speed)
    path = WaypointPath(pts, ctx.adversary_speed, ctx.params.brake_decel_mps2)
    return state, (PathSegment(path),)


def _adv_drift(ctx: _BuildContext):
    # Gradual drift: same shape as a lane change but 3x as long.
    x0 = _HIGHWAY_EGO_X0 + 12.0
    pts = _lane_shift_points(
        (x0, _ADJ_LANE_Y),
        direction=1.0,
        total_length=HIGHWAY_LENGTH_M - x0,
        ramp_start=8.0,
        ramp_length=3.0 * ctx.params.lane_change_distance_m,
        lateral_shift=-ctx.params.vertical_offset_m,
    )
    state = VehicleState(x0, _ADJ_LANE_Y, 0.0, ctx.adversary_speed)
    path = WaypointPath(pts, ctx.adversary_speed, ctx.params.brake_decel_mps2)
    return state, (PathSegment(path),)


def _adv_opposite_maneuver(ctx: _BuildContext):
    # Oncoming vehicle swings across the centerline and back (overtake shape).
    x0 = HIGHWAY_LENGTH_M - 20.0
    ramp = ctx.params.lane_change_distance_m
    pts = _lane_shift_points(
        (x0, _ADJ_LANE_Y),
        direction=-1.0,
        total_length=x0 - 20.0,
        ramp_start=30.0,
        ramp_length=ramp,
        lateral_shift=-ctx.params.vertical_offset_m,
        return_after=max(10.0, 130.0 - ramp),
    )
    state = VehicleState(x0, _ADJ_LANE_Y, math.pi, ctx.adversary_speed)
    path = WaypointPath(pts, ctx.adversary_speed, ctx.params.brake_decel_mps2)
    return state, (PathSegment(path),)


def _adv_opposite_drift(ctx: _BuildContext):
    # Oncoming vehicle drifts one-way across the centerline and stays there.
    x0 = HIGHWAY_LENGTH_M - 20.0
    pts = _lane_shift_points(
        (x0, _ADJ_LANE_Y),
        direction=-1.0,
        total_length=x0 - 20.0,
        ramp_start=50.0,
        ramp_length=ctx.params.lane_change_distance_m,
        lateral_shift=-ctx.params.vertical_offset_m,
    )
    state = VehicleState(x0, _ADJ_LANE_Y, math.pi, ctx.adversary_speed)
    path = WaypointPath(pts, ctx.adversary_speed, ctx.params.brake_decel_mps2)
    return state, (PathSegment(path),)


def _lead_path(ctx: _BuildContext, target_speed: float, end_x: float = HIGHWAY_LENGTH_M):
    x0 = _HIGHWAY_EGO_X0 + _LEAD_GAP_M
    return x0, _straight(
        (x0, _EGO_LANE_Y), (end_x, _EGO_LANE_Y), target_speed, ctx.params.brake_decel_mps2
    )


def _adv_lead_accelerating(ctx: _BuildContext):
    x0, path = _lead_path(ctx, ctx.adversary_speed)
    state = VehicleState(x0, _EGO_LANE_Y, 0.0, 0.3 * ctx.adversary_speed)
    return state, (PathSegment(path),)


def _adv_lead_slower(ctx: _BuildContext):
    slow = 0.5 * ctx.ego_speed
    x0, path = _lead_path(ctx, slow)
    state = VehicleState(x0, _EGO_LANE_Y, 0.0, slow)
    return state, (PathSegment(path),)


def _adv_lead_decelerating(ctx: _BuildContext):
    # Short path end forces the braking latch in front of the ego.
    x0, path = _lead_path(ctx, ctx.adversary_speed, end_x=130.0)
    state = VehicleState(x0, _EGO_LANE_Y, 0.0, ctx.adversary_speed)
    return state, (PathSegment(path),)


_EGO_RULES: dict[str, _Builder] = {
    "ego_highway_straight": _ego_highway_straight,
    "ego_intersection_straight": _ego_intersection_straight,
    "ego_intersection_stop": _ego_intersection_stop,
}

_ADVERSARY_RULES: dict[str, _Builder] = {
    "adv_cross_straight": _adv_cross_straight,
    "adv_right_turn_into_lane": _adv_right_turn_into_lane,
    "adv_left_turn_across": _adv_left_turn_across,
    "adv_lane_change": _adv_lane_change,
    "adv_drift": _adv_drift,
    "adv_opposite_maneuver": _adv_opposite_maneuver,
    "adv_opposite_drift": _adv_opposite_drift,
    "adv_lead_accelerating": _adv_lead_accelerating,
    "adv_lead_slower": _adv_lead_slower,
    "adv_lead_decelerating": _adv_lead_decelerating,
}


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------


def _t(id_, name, env, ego, adv, lane_params, default, control) -> ScenarioTemplate:
    return ScenarioTemplate(
        id=id_,
        name=name,
        environment=env,
        ego_behavior=ego,
        adversary_behavior=adv,
        uses_lane_change_params=lane_params,
        in_default_dataset=default,
        traffic_control=control,
    )


_H = Environment.HIGHWAY
_I = Environment.INTERSECTION
_SIG = TrafficControl.SIGNAL
_STOP = TrafficControl.STOP_SIGN
_NONE = TrafficControl.NONE

_CATALOG: tuple[ScenarioTemplate, ...] = (
    _t("running-red-light", "Running Red Light", _I,
       "ego_intersection_straight", "adv_cross_straight", False, True, _SIG),
    _t("running-stop-sign", "Running Stop Sign", _I,
       "ego_intersection_stop", "adv_cross_straight", False, True, _STOP),
    _t("turning-same-direction", "Turning/Same Direction", _I,
       "ego_intersection_straight", "adv_right_turn_into_lane", False, True, _SIG),
    _t("changing-lanes-same-direction", "Changing Lanes/Same Direction", _H,
       "ego_highway_straight", "adv_lane_change", True, True, _NONE),
    _t("drifting-same-direction", "Drifting/Same Direction", _H,
       "ego_highway_straight", "adv_drift", True, True, _NONE),
    _t("opposite-direction-maneuver", "Opposite Direction/Maneuver", _H,
       "ego_highway_straight", "adv_opposite_maneuver", True, True, _NONE),
    _t("opposite-direction-no-maneuver", "Opposite Direction/No Maneuver", _H,
       "ego_highway_straight", "adv_opposite_drift", True, True, _NONE),
    _t("rear-end-lead-accelerating", "Rear-End/Lead Vehicle Accelerating", _H,
       "ego_highway_straight", "adv_lead_accelerating", False, False, _NONE),
    _t("rear-end-lead-slower", "Rear-End/Lead Vehicle Moving Slower", _H,
       "ego_highway_straight", "adv_lead_slower", False, False, _NONE),
    _t("rear-end-lead-decelerating", "Rear-End/Lead Vehicle Decelerating", _H,
       "ego_highway_straight", "adv_lead_decelerating", False, False, _NONE),
    _t("ltap-od-at-signal", "LTAP/OD at Signal", _I,
       "ego_intersection_straight", "adv_left_turn_across", False, True, _SIG),
    _t("turn-right-at-signal", "Turn Right at Signal", _I,
       "ego_intersection_straight", "adv_right_turn_into_lane", False, True, _SIG),
    _t("ltap-od-at-non-signal", "LTAP/OD at Non-Signal", _I,
       "ego_intersection_straight", "adv_left_turn_across", False, True, _NONE),
    _t("straight-crossing-path-non-signal", "Straight Crossing Path at Non-Signal", _I,
       "ego_intersection_stop", "adv_cross_straight", False, True, _STOP),
    _t("turn-at-non-signal", "Turn at Non-Signal", _I,
       "ego_intersection_straight", "adv_right_turn_into_lane", False, True, _NONE),
)


def list_scenarios() -> list[ScenarioTemplate]:
    """All 15 templates in catalog order; returns a fresh list each call."""
    return list(_CATALOG)


def get_scenario(scenario_id: str) -> ScenarioTemplate:
    for template in _CATALOG:
        if template.id == scenario_id:
            return template
    raise KeyError(scenario_id)


def default_templates(include_rear_end: bool = False) -> list[ScenarioTemplate]:
    return [t for t in _CATALOG if t.in_default_dataset or include_rear_end]


def _signal_state(template: ScenarioTemplate) -> str:
    if template.traffic_control is TrafficControl.SIGNAL:
        return "ego_green_adversary_red"
    if template.traffic_control is TrafficControl.STOP_SIGN:
        return "all_way_stop"
    return "none"


def instantiate(
    template: ScenarioTemplate, params: ParameterSample, rng: RngStream
) -> EpisodeSetup:
    """Build a concrete episode setup from a template and one parameter draw.

    Consumes from `rng`, in order: ego speed jitter, adversary speed jitter,
    ego lateral lane-position jitter. The lateral jitter is what gives the
    dash-cam dataset non-degenerate steering labels.
    """
    params.validate()
    try:
        ego_builder = _EGO_RULES[template.ego_behavior]
    except KeyError:
        raise UnknownBehaviorRuleError(template.ego_behavior) from None
    try:
        adv_builder = _ADVERSARY_RULES[template.adversary_behavior]
    except KeyError:
        raise UnknownBehaviorRuleError(template.adversary_behavior) from None

    def jitter_factor() -> float:
        g = rng.gaussian()
        return min(max(1.0 + _SPEED_JITTER_FRAC * g, 0.8), 1.2)

    ego_speed = params.speed_mps * jitter_factor()
    adversary_speed = params.speed_mps * jitter_factor()
    lateral = rng.gaussian(0.0, _EGO_LATERAL_JITTER_STD_M)
    lateral = min(max(lateral, -_EGO_LATERAL_JITTER_MAX_M), _EGO_LATERAL_JITTER_MAX_M)

    ctx = _BuildContext(params, ego_speed, adversary_speed, lateral, template)
    ego_initial, ego_plan = ego_builder(ctx)
    adversary_initial, adversary_plan = adv_builder(ctx)

    geometry: RoadGeometry
    if template.environment is Environment.HIGHWAY:
        same_direction = template.adversary_behavior not in (
            "adv_opposite_maneuver",
            "adv_opposite_drift",
        )
        geometry = HighwayGeometry(same_direction=same_direction)
    else:
        geometry = IntersectionGeometry()

    return EpisodeSetup(
        scenario_id=template.id,
        ego_initial=ego_initial,
        adversary_initial=adversary_initial,
        ego_plan=ego_plan,
        adversary_plan=adversary_plan,
        road_geometry=geometry,
        signal_state=_signal_state(template),
    )
