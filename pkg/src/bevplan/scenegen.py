"""Procedural scene and expert-trajectory generation.

Each scene is built from one of four road families (straight, left
curve, right curve, T-intersection), a two-lane road of sampled width,
lane-following agents, an optional traffic light, and an expert that
tracks the route with a comfort-bounded speed profile.  Generated
scenes are validated against the metric oracle (the expert must pass
every rule) and re-drawn on failure, so corpus statistics are clean by
construction.  Everything is deterministic per (config, index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    GREEN,
    RED,
    AgentBox,
    BevGridSpec,
    EgoState,
    Lane,
    Route,
    Scene,
    TrafficLight,
    TRAJ_DT,
    TRAJ_LEN,
    Trajectory,
    agent_corners,
    cell_centers,
    wrap_angle,
)
from .geom import (
    min_distance_to_polyline,
    points_to_polyline,
    polyline_point_at,
    polyline_tangent_at,
    rects_overlap,
)
from .oracle import MetricThresholds, eval_dac, eval_hc, eval_lk, eval_nc, eval_tlc, eval_ttc

FAMILIES = ("straight", "curve_left", "curve_right", "t_intersection")


class GenerationError(RuntimeError):
    """Raised when no valid scene could be produced within the retry budget."""


@dataclass(frozen=True)
class SceneConfig:
    """Sampling ranges of the procedural generator."""

    seed: int = 0
    agents_min: int = 0
    agents_max: int = 8
    families: tuple[str, ...] = FAMILIES
    ego_speed_min: float = 0.0
    ego_speed_max: float = 15.0
    light_prob: float = 0.3
    width_min: float = 6.0
    width_max: float = 14.0

    def __post_init__(self):
        if not 0 <= self.agents_min <= self.agents_max:
            raise ValueError("agent count range is degenerate")
        if not 0.0 <= self.ego_speed_min < self.ego_speed_max:
            raise ValueError("ego speed range is degenerate")
        if not 0.0 < self.width_min < self.width_max:
            raise ValueError("drivable width range is degenerate")
        if not 0.0 <= self.light_prob <= 1.0:
            raise ValueError("light probability must lie in [0, 1]")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ValueError(f"unknown road family {fam!r}")


@dataclass(frozen=True)
class AdversarialConfig:
    """Perturbation magnitudes for hard-negative candidates."""

    max_lateral: float = 4.0
    speed_lo: float = 0.3
    speed_hi: float = 1.8
    heading_sigma: float = 0.2


# Expert speed-profile limits; tighter than the comfort bounds so the
# oracle validation rarely rejects.
_GEN_ACCEL_MAX = 1.5
_GEN_ACCEL_MIN = -1.8
_GEN_JERK = 3.5
_LAT_BUDGET = 3.0  # m/s^2 target in curves, well under the 4.89 bound
_STOP_DECEL = 1.4
_STOP_MARGIN = 3.5  # m before a red stop line


def _sample_arc(start: np.ndarray, heading: float, radius: float, sweep: float, step: float = 1.25):
    """Polyline of a circular arc: returns (points, end_heading).

    Positive sweep turns left.  The start point itself is included.
    """
    n = max(2, int(math.ceil(abs(sweep) * radius / step)) + 1)
    side = 1.0 if sweep >= 0 else -1.0
    center = start + radius * np.array([-math.sin(heading), math.cos(heading)]) * side
    a0 = math.atan2(start[1] - center[1], start[0] - center[0])
    angles = a0 + side * np.linspace(0.0, abs(sweep), n)
    pts = center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return pts, wrap_angle(heading + sweep)


def _offset_polyline(points: np.ndarray, offset: float) -> np.ndarray:
    """Shift a polyline along its left normal by ``offset`` meters."""
    pts = np.asarray(points, dtype=float)
    tangents = np.gradient(pts, axis=0)
    norms = np.linalg.norm(tangents, axis=1, keepdims=True)
    tangents = tangents / np.maximum(norms, 1e-12)
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    return pts + offset * normals


@dataclass
class _RoadPlan:
    route: np.ndarray  # ego-lane centerline, origin at arc index of s=0
    route_start_arc: float  # arc position of the ego origin along ``route``
    curvature_spans: list[tuple[float, float, float]]  # (s_from, s_to, curvature) relative to origin
    road_centerlines: list[np.ndarray]  # strips rasterized into the drivable mask
    lanes: list[Lane]
    junction_arc: float | None  # arc of the turn start, when the family has one


def _plan_road(family: str, width: float, rng: np.random.Generator) -> _RoadPlan:
    lane_half = width / 4.0  # route sits this far right of the road center
    back = np.array([[-18.0, 0.0]])

    if family == "straight":
        fwd = np.array([[x, 0.0] for x in np.arange(-16.0, 62.0, 2.0)])
        route = np.vstack([back, fwd, [[64.0, 0.0]]])
        spans = [(0.0, 90.0, 0.0)]
        junction = None
    elif family in ("curve_left", "curve_right"):
        radius = float(rng.uniform(15.0, 60.0))
        lead = float(rng.uniform(4.0, 14.0))
        side = 1.0 if family == "curve_left" else -1.0
        sweep = side * min(80.0 / radius, 1.9)
        straight = np.array([[x, 0.0] for x in np.arange(-18.0, lead, 2.0)])
        arc, _ = _sample_arc(np.array([lead, 0.0]), 0.0, radius, sweep)
        route = np.vstack([straight, arc])
        spans = [(0.0, lead, 0.0), (lead, lead + abs(sweep) * radius, side / radius)]
        junction = None
    else:  # t_intersection
        fillet = float(rng.uniform(6.0, 10.0))
        turn_x = float(rng.uniform(10.0, 22.0))
        side = 1.0 if rng.random() < 0.5 else -1.0
        straight = np.array([[x, 0.0] for x in np.arange(-18.0, turn_x - fillet, 2.0)])
        arc, end_heading = _sample_arc(np.array([turn_x - fillet, 0.0]), 0.0, fillet, side * math.pi / 2.0)
        branch_dir = np.array([math.cos(end_heading), math.sin(end_heading)])
        branch = arc[-1] + branch_dir * np.arange(2.0, 48.0, 2.0)[:, None]
        route = np.vstack([straight, arc, branch])
        turn_start = turn_x - fillet
        spans = [
            (0.0, turn_start, 0.0),
            (turn_start, turn_start + fillet * math.pi / 2.0, side / fillet),
            (turn_start + fillet * math.pi / 2.0, 1e9, 0.0),
        ]
        junction = turn_start

    _, origin_arc = points_to_polyline(np.zeros((1, 2)), route)
    road_centers = [_offset_polyline(route, lane_half)]
    lanes = [Lane(route.copy(), forward=True), Lane(_offset_polyline(route, 2.0 * lane_half), forward=False)]

    if family == "t_intersection":
        # The main road continues a little past the junction mouth.
        main = np.array([[x, 0.0] for x in np.arange(-18.0, turn_x + width, 2.0)])
        road_centers = [
            _offset_polyline(main, lane_half),
            _offset_polyline(np.vstack([arc, branch]), lane_half),
        ]
    return _RoadPlan(
        route=route,
        route_start_arc=float(origin_arc[0]),
        curvature_spans=spans,
        road_centerlines=road_centers,
        lanes=lanes,
        junction_arc=junction,
    )


def rasterize_drivable(road_centerlines: list[np.ndarray], half_width: float, spec: BevGridSpec) -> np.ndarray:
    """Cells whose centers lie within half_width of any road centerline."""
    xs, ys = cell_centers(spec)
    gx, gy = np.meshgrid(xs, ys)  # (rows, cols)
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    drivable = np.zeros(len(centers), dtype=bool)
    for line in road_centerlines:
        drivable |= min_distance_to_polyline(centers, line) <= half_width
    return drivable.reshape(spec.cells_y, spec.cells_x)


def _curve_speed_limit(plan: _RoadPlan, s: float, lookahead: float) -> float:
    limit = np.inf
    for s0, s1, kappa in plan.curvature_spans:
        if kappa == 0.0:
            continue
        if s1 >= s and s0 <= s + lookahead:
            limit = min(limit, math.sqrt(_LAT_BUDGET / abs(kappa)))
    return limit


def _expert_trajectory(plan: _RoadPlan, v0: float, cruise: float, stop_arc: float | None) -> Trajectory:
    """Track the route with clamped acceleration and jerk from speed v0."""
    arcs = np.zeros(TRAJ_LEN)
    v = v0
    a_prev = 0.0
    s = 0.0
    for k in range(1, TRAJ_LEN):
        target = min(cruise, _curve_speed_limit(plan, s, lookahead=max(4.0, v * 2.0)))
        if stop_arc is not None:
            remaining = stop_arc - _STOP_MARGIN - s
            target = min(target, math.sqrt(max(0.0, 2.0 * _STOP_DECEL * remaining)))
        a = (target - v) / TRAJ_DT
        a = min(max(a, a_prev - _GEN_JERK * TRAJ_DT), a_prev + _GEN_JERK * TRAJ_DT)
        a = min(max(a, _GEN_ACCEL_MIN), _GEN_ACCEL_MAX)
        v = max(0.0, v + a * TRAJ_DT)
        a_prev = a
        s += v * TRAJ_DT
        arcs[k] = s

    pts = np.zeros((TRAJ_LEN, 3))
    for k in range(TRAJ_LEN):
        arc = plan.route_start_arc + arcs[k]
        xy = polyline_point_at(plan.route, arc)
        tangent = polyline_tangent_at(plan.route, arc)
        pts[k] = (xy[0], xy[1], wrap_angle(math.atan2(tangent[1], tangent[0])))
    pts[0, :2] = 0.0  # exact ego origin
    return Trajectory.from_array(pts)


def _place_agents(plan: _RoadPlan, count: int, rng: np.random.Generator) -> list[AgentBox]:
    agents: list[AgentBox] = []
    for _ in range(count):
        for _attempt in range(20):
            lane = plan.lanes[rng.integers(len(plan.lanes))]
            total = float(np.sum(np.linalg.norm(np.diff(lane.points, axis=0), axis=1)))
            arc = float(rng.uniform(2.0, total - 2.0))
            pos = polyline_point_at(lane.points, arc)
            if np.linalg.norm(pos) < 9.0:
                continue  # keep-out bubble around the ego
            tangent = polyline_tangent_at(lane.points, arc)
            direction = tangent if lane.forward else -tangent
            heading = wrap_angle(math.atan2(direction[1], direction[0]))
            speed = 0.0 if rng.random() < 0.3 else float(rng.uniform(1.0, 10.0))
            agent = AgentBox(
                x=float(pos[0]),
                y=float(pos[1]),
                w=float(rng.uniform(1.7, 2.1)),
                h=float(rng.uniform(4.0, 5.2)),
                theta=heading,
                vx=speed * float(direction[0]),
                vy=speed * float(direction[1]),
            )
            if any(rects_overlap(agent_corners(agent), agent_corners(other)) for other in agents):
                continue
            agents.append(agent)
            break
    return agents


_EXPERT_RULES = (eval_nc, eval_dac, eval_tlc, eval_ttc, eval_lk, eval_hc)


def generate_scene(cfg: SceneConfig, index: int, max_retries: int = 100) -> Scene:
    """Deterministically generate one validated scene."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    spec = BevGridSpec()
    thresholds = MetricThresholds()
    scene_seed = int(rng.integers(0, 2**31 - 1))

    for _attempt in range(max_retries):
        family = cfg.families[rng.integers(len(cfg.families))]
        width = float(rng.uniform(cfg.width_min, cfg.width_max))
        plan = _plan_road(family, width, rng)

        # Traffic light ahead of the ego, before any junction turn.
        lights: list[TrafficLight] = []
        stop_arc = None
        if rng.random() < cfg.light_prob:
            max_arc = 25.0 if plan.junction_arc is None else min(25.0, plan.junction_arc - 1.0)
            if max_arc > 7.0:
                arc = float(rng.uniform(6.0, max_arc))
                state = RED if rng.random() < 0.5 else GREEN
                pos = polyline_point_at(plan.route, plan.route_start_arc + arc)
                tangent = polyline_tangent_at(plan.route, plan.route_start_arc + arc)
                normal = np.array([-tangent[1], tangent[0]])
                line = np.stack([pos + normal * width * 0.75, pos - normal * width * 0.75])
                lights = [TrafficLight(line=line, state=state)]
                if state == RED:
                    stop_arc = arc

        v0 = float(rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max))
        if stop_arc is not None:
            v_stoppable = math.sqrt(2.0 * _STOP_DECEL * max(stop_arc - _STOP_MARGIN, 0.5))
            v0 = min(v0, v_stoppable)
        # Keep the initial speed low enough to brake into the first curve.
        first_curve = next(((s0, k) for s0, _s1, k in plan.curvature_spans if k != 0.0), None)
        if first_curve is not None:
            s_curve, kappa = first_curve
            v_entry = math.sqrt(_LAT_BUDGET / abs(kappa) + 2.0 * _STOP_DECEL * max(s_curve, 0.0))
            v0 = min(v0, v_entry)
        cruise = float(rng.uniform(1.0, cfg.ego_speed_max)) if cfg.ego_speed_max > 1.0 else cfg.ego_speed_max
        ego = EgoState(velocity=(v0, 0.0), acceleration=0.0)
        expert = _expert_trajectory(plan, v0, cruise, stop_arc)

        _, arcs = points_to_polyline(expert.xy()[[0, -1]], plan.route)
        progress = max(float(arcs[1] - arcs[0]), 0.5)
        route = Route(points=plan.route, reference_progress=progress)

        drivable = rasterize_drivable(plan.road_centerlines, width / 2.0, spec)
        agent_count = int(rng.integers(cfg.agents_min, cfg.agents_max + 1))
        agents = _place_agents(plan, agent_count, rng)

        scene = Scene(
            drivable=drivable,
            lanes=plan.lanes,
            route=route,
            agents=agents,
            traffic_lights=lights,
            ego=ego,
            expert=expert,
            grid=spec,
            scene_id=f"scene-{cfg.seed:08d}-{index:05d}",
            seed=scene_seed,
        )
        if all(rule(scene, expert, thresholds) == 1.0 for rule in _EXPERT_RULES):
            return scene
    raise GenerationError(f"no valid scene for seed={cfg.seed} index={index} after {max_retries} attempts")


def _rescale_speed(xy: np.ndarray, scale: float) -> np.ndarray:
    """Scale progress along a waypoint path, extrapolating past its end."""
    deltas = np.diff(xy, axis=0)
    seg = np.linalg.norm(deltas, axis=1)
    arcs = np.concatenate([[0.0], np.cumsum(seg)])
    total = arcs[-1]
    out = np.empty_like(xy)
    if total <= 1e-9:
        return xy.copy()
    tail = deltas[-1] / seg[-1] if seg[-1] > 1e-12 else np.array([1.0, 0.0])
    for i, s in enumerate(arcs * scale):
        if s <= total:
            out[i] = polyline_point_at(xy, s)
        else:
            out[i] = xy[-1] + tail * (s - total)
    return out


def _headings_from_positions(xy: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    headings = np.empty(len(xy))
    prev = float(fallback[0])
    for i in range(len(xy) - 1):
        d = xy[i + 1] - xy[i]
        if np.linalg.norm(d) > 1e-9:
            prev = math.atan2(d[1], d[0])
        headings[i] = prev
    headings[-1] = headings[-2] if len(xy) > 1 else prev
    return headings


def generate_adversarial_candidates(
    scene: Scene,
    n: int,
    seed: int,
    cfg: AdversarialConfig = AdversarialConfig(),
) -> list[Trajectory]:
    """Perturbed expert copies used as hard negatives for labeling.

    The first candidates are fixed archetypes (full lateral push to
    either side, max/min speed scaling) so drivable-area and comfort
    violations are present whenever the geometry allows them; the rest
    draw random perturbations.  Identity perturbations return the
    expert unchanged.
    """
    if n < 1:
        raise ValueError("need at least one adversarial candidate")
    rng = np.random.default_rng(np.random.SeedSequence([seed, scene.seed]))
    expert_xyt = scene.expert.xyt()
    expert_xy = expert_xyt[:, :2]
    exp_headings = expert_xyt[:, 2]

    archetypes = [
        {"lateral": -cfg.max_lateral, "scale": 1.0, "noise": 0.0},
        {"lateral": 0.0, "scale": cfg.speed_hi, "noise": 0.0},
        {"lateral": cfg.max_lateral, "scale": 1.0, "noise": 0.0},
        {"lateral": 0.0, "scale": cfg.speed_lo, "noise": 0.0},
    ]
    candidates: list[Trajectory] = []
    for k in range(n):
        if k < len(archetypes):
            spec_k = archetypes[k]
        else:
            spec_k = {
                "lateral": float(rng.uniform(-cfg.max_lateral, cfg.max_lateral)),
                "scale": float(rng.uniform(cfg.speed_lo, cfg.speed_hi)),
                "noise": cfg.heading_sigma,
            }
        if spec_k["lateral"] == 0.0 and spec_k["scale"] == 1.0 and spec_k["noise"] == 0.0:
            candidates.append(scene.expert)
            continue

        xy = _rescale_speed(expert_xy, spec_k["scale"])
        if spec_k["lateral"] != 0.0:
            ramp = np.linspace(0.0, 1.0, TRAJ_LEN)
            normals = np.stack([-np.sin(exp_headings), np.cos(exp_headings)], axis=1)
            xy = xy + (spec_k["lateral"] * ramp)[:, None] * normals
        headings = _headings_from_positions(xy, exp_headings)
        if spec_k["noise"] > 0.0:
            headings = headings + rng.normal(0.0, spec_k["noise"], size=TRAJ_LEN)
        arr = np.column_stack([xy, [wrap_angle(h) for h in headings]])
        candidates.append(Trajectory.from_array(arr))
    return candidates
