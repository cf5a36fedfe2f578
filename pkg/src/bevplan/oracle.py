"""Rule-based driving metrics: ground-truth labels and final scoring.

Eight metrics are computed per (scene, trajectory) pair:

* nc  - no at-fault collisions, ternary {0, 0.5, 1}
* dac - drivable-area compliance, binary
* ddc - driving-direction compliance, ternary
* tlc - traffic-light compliance, binary
* ep  - ego progress along the route, continuous [0, 1]
* ttc - time-to-collision within bound, binary
* lk  - lane keeping, binary
* hc  - history comfort, binary

Agents move at constant velocity over the whole horizon.  All numeric
thresholds live in MetricThresholds and are configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .core import (
    Scene,
    Trajectory,
    agent_corners,
    ego_footprints,
    kinematics,
    oriented_rect_corners,
    position_chain,
    world_to_grid,
    RED,
)
from .geom import (
    nearest_lane_direction,
    points_to_polyline,
    rects_overlap_many,
    segments_intersect,
)


@dataclass(frozen=True)
class MetricThresholds:
    """Tunable limits of the rule metrics."""

    nc_fault_speed: float = 0.1  # m/s; slower contact is never at fault
    ddc_minor: float = 2.0  # m against traffic tolerated
    ddc_major: float = 6.0
    ttc_horizon: float = 1.0  # s
    ttc_substep: float = 0.1  # s
    lk_max_lateral: float = 0.5  # m from the nearest lane centerline
    lk_consecutive: int = 2  # waypoints in a row
    hc_lon_min: float = -4.05  # m/s^2
    hc_lon_max: float = 2.40
    hc_lat_max: float = 4.89
    hc_jerk_max: float = 8.37  # m/s^3


@dataclass(frozen=True)
class MetricVector:
    """Scores of one trajectory in one scene."""

    nc: float
    dac: float
    ddc: float
    tlc: float
    ep: float
    ttc: float
    lk: float
    hc: float

    def __post_init__(self):
        for name, allowed in (("nc", (0.0, 0.5, 1.0)), ("ddc", (0.0, 0.5, 1.0))):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}")
        for name in ("dac", "tlc", "ttc", "lk", "hc"):
            if getattr(self, name) not in (0.0, 1.0):
                raise ValueError(f"{name} must be 0 or 1")
        if not 0.0 <= self.ep <= 1.0:
            raise ValueError("ep must lie in [0, 1]")

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}


METRIC_NAMES = ("nc", "dac", "ddc", "tlc", "ep", "ttc", "lk", "hc")
TERNARY_METRICS = ("nc", "ddc")
BINARY_METRICS = ("dac", "tlc", "ttc", "lk", "hc")

# Report keys in the public leaderboard naming scheme.
REPORT_NAMES = {
    "nc": "no_at_fault_collisions",
    "dac": "drivable_area_compliance",
    "ddc": "driving_direction_compliance",
    "tlc": "traffic_light_compliance",
    "ep": "ego_progress",
    "ttc": "time_to_collision_within_bound",
    "lk": "lane_keeping",
    "hc": "history_comfort",
}


@dataclass(frozen=True)
class FinalScoreWeights:
    """Weights of the final weighted-sum score (tlc and hc are excluded)."""

    nc: float = 4.0
    dac: float = 0.8
    ep: float = 0.01
    ttc: float = 0.1
    lk: float = 0.04
    ddc: float = 6.0

    def __post_init__(self):
        for f in dc_fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError("final-score weights must be non-negative")


def _agent_corners_at(scene: Scene, t: float) -> np.ndarray:
    """All agent boxes at time offset t, (A, 4, 2)."""
    return np.stack([agent_corners(a, t) for a in scene.agents])


def eval_nc(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> float:
    """No at-fault collisions.

    1 without any footprint overlap; at the first overlapping step the
    score is 0 when the ego is at fault (moving faster than the fault
    speed with the agent center in its frontal half-plane), else 0.5.
    """
    if not scene.agents:
        return 1.0
    foot = ego_footprints(traj, scene.ego)
    speeds = kinematics(traj, scene.ego).speed
    for t in range(len(traj.waypoints)):
        boxes = _agent_corners_at(scene, t * traj.dt)
        hits = rects_overlap_many(np.broadcast_to(foot[t], boxes.shape), boxes)
        if not hits.any():
            continue
        wp = traj.waypoints[t]
        heading = np.array([math.cos(wp.theta), math.sin(wp.theta)])
        for a_idx in np.nonzero(hits)[0]:
            center = scene.agents[a_idx].center_at(t * traj.dt)
            frontal = float(np.dot(center - np.array([wp.x, wp.y]), heading)) > 0.0
            if speeds[t] > th.nc_fault_speed and frontal:
                return 0.0
        return 0.5
    return 1.0


def eval_dac(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> float:
    """1 iff every footprint corner lies in a drivable cell at every step."""
    corners = ego_footprints(traj, scene.ego).reshape(-1, 2)
    uv = world_to_grid(corners, scene.grid)
    cols = np.floor(uv[:, 0]).astype(int)
    rows = np.floor(uv[:, 1]).astype(int)
    inside = (
        (cols >= 0)
        & (cols < scene.grid.cells_x)
        & (rows >= 0)
        & (rows < scene.grid.cells_y)
    )
    if not inside.all():
        return 0.0
    return 1.0 if scene.drivable[rows, cols].all() else 0.0


def eval_ddc(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> float:
    """Driving-direction compliance with minor/major distance buckets."""
    if not scene.lanes:
        return 1.0
    xy = traj.xy()
    against = 0.0
    for t in range(1, len(xy)):
        step = float(np.linalg.norm(xy[t] - xy[t - 1]))
        if step <= 0.0:
            continue
        heading = traj.waypoints[t].theta
        _, lane_dir = nearest_lane_direction(xy[t], scene.lanes)
        lane_angle = math.atan2(lane_dir[1], lane_dir[0])
        diff = abs(((heading - lane_angle) + math.pi) % (2.0 * math.pi) - math.pi)
        if diff > math.pi / 2.0:
            against += step
    if against < th.ddc_minor:
        return 1.0
    if against < th.ddc_major:
        return 0.5
    return 0.0


def eval_tlc(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> float:
    """0 iff any path segment crosses a red stop line."""
    red_lines = [tl.line for tl in scene.traffic_lights if tl.state == RED]
    if not red_lines:
        return 1.0
    xy = traj.xy()
    for t in range(1, len(xy)):
        for line in red_lines:
            if segments_intersect(xy[t - 1], xy[t], line[0], line[1]):
                return 0.0
    return 1.0


def eval_ep(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> float:
    """Progress along the route as a fraction of the reference progress."""
    xy = traj.xy()
    _, arcs = points_to_polyline(xy[[0, -1]], scene.route.points)
    gained = float(arcs[1] - arcs[0])
    return float(np.clip(gained / scene.route.reference_progress, 0.0, 1.0))


def eval_ttc(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> float:
    """1 unless a constant-velocity projection collides within the bound.

    From each waypoint, the ego continues at its instantaneous velocity
    and heading while agents keep their own velocities; overlap at any
    sub-step within the horizon fails the metric.
    """
    if not scene.agents:
        return 1.0
    chain = position_chain(traj, scene.ego)
    vel = np.diff(chain, axis=0) / traj.dt  # (8, 2)
    n_sub = int(round(th.ttc_horizon / th.ttc_substep))
    taus = (np.arange(n_sub) + 1) * th.ttc_substep
    agent_vel = np.array([[a.vx, a.vy] for a in scene.agents])  # (A, 2)
    agents_t0 = _agent_corners_at(scene, 0.0)  # (A, 4, 2)

    for t in range(len(traj.waypoints)):
        wp = traj.waypoints[t]
        ego0 = oriented_rect_corners(wp.x, wp.y, scene.ego.length, scene.ego.width, wp.theta)
        # Corner positions are affine in time, so translate the t=0 boxes.
        ego_boxes = ego0[None, :, :] + (taus[:, None] * vel[t][None, :])[:, None, :]  # (S, 4, 2)
        base = t * traj.dt + taus  # (S,) absolute agent times
        agent_boxes = agents_t0[None, :, :, :] + (base[:, None, None] * agent_vel[None, :, :])[:, :, None, :]
        k = len(taus) * len(scene.agents)
        a = np.repeat(ego_boxes, len(scene.agents), axis=0).reshape(k, 4, 2)
        b = agent_boxes.reshape(k, 4, 2)
        if rects_overlap_many(a, b).any():
            return 0.0
    return 1.0


def eval_lk(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> float:
    """0 iff the lateral excursion persists for enough consecutive steps."""
    if not scene.lanes:
        return 1.0
    xy = traj.xy()
    dists = np.full(len(xy), np.inf)
    for lane in scene.lanes:
        d, _ = points_to_polyline(xy, lane.points)
        dists = np.minimum(dists, d)
    off = dists > th.lk_max_lateral
    run = 0
    for flag in off:
        run = run + 1 if flag else 0
        if run >= th.lk_consecutive:
            return 0.0
    return 1.0


def eval_hc(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> float:
    """History comfort: closed-interval acceleration and jerk bounds."""
    prof = kinematics(traj, scene.ego)
    if np.any(prof.accel_lon < th.hc_lon_min) or np.any(prof.accel_lon > th.hc_lon_max):
        return 0.0
    if np.any(np.abs(prof.accel_lat) > th.hc_lat_max):
        return 0.0
    if np.any(prof.jerk > th.hc_jerk_max):
        return 0.0
    return 1.0


def eval_all(scene: Scene, traj: Trajectory, th: MetricThresholds = MetricThresholds()) -> MetricVector:
    return MetricVector(
        nc=eval_nc(scene, traj, th),
        dac=eval_dac(scene, traj, th),
        ddc=eval_ddc(scene, traj, th),
        tlc=eval_tlc(scene, traj, th),
        ep=eval_ep(scene, traj, th),
        ttc=eval_ttc(scene, traj, th),
        lk=eval_lk(scene, traj, th),
        hc=eval_hc(scene, traj, th),
    )


def final_score(m: MetricVector, w: FinalScoreWeights = FinalScoreWeights()) -> float:
    """Weighted sum over nc, dac, ep, ttc, lk, ddc (tlc/hc excluded).

    math.fsum keeps the all-ones default-weight case exactly 10.95.
    """
    return math.fsum(
        [
            w.nc * m.nc,
            w.dac * m.dac,
            w.ep * m.ep,
            w.ttc * m.ttc,
            w.lk * m.lk,
            w.ddc * m.ddc,
        ]
    )


def final_score_values(values: dict[str, float], w: FinalScoreWeights = FinalScoreWeights()) -> float:
    """final_score over a plain metric-name -> value mapping."""
    return math.fsum(
        [
            w.nc * values["nc"],
            w.dac * values["dac"],
            w.ep * values["ep"],
            w.ttc * values["ttc"],
            w.lk * values["lk"],
            w.ddc * values["ddc"],
        ]
    )


MAX_FINAL_SCORE = final_score(MetricVector(1, 1, 1, 1, 1, 1, 1, 1))


@dataclass(frozen=True)
class AggregateConfig:
    """Sub-weights of the averaged block in the combined report score."""

    ep: float = 0.25
    ttc: float = 0.25
    lk: float = 0.25
    hc: float = 0.25


def aggregate_report(vectors: list[MetricVector], cfg: AggregateConfig = AggregateConfig()) -> dict:
    """Corpus report: per-metric means (percent) plus a combined score.

    The combined score multiplies the means of the gating metrics (nc,
    dac, ddc, tlc) with a weighted mean of the remaining ones.  That
    combination formula is a stand-in for the external benchmark
    aggregate, and the report says so.
    """
    if not vectors:
        raise ValueError("cannot aggregate an empty corpus")
    means = {name: float(np.mean([getattr(v, name) for v in vectors])) for name in METRIC_NAMES}
    weights = {"ep": cfg.ep, "ttc": cfg.ttc, "lk": cfg.lk, "hc": cfg.hc}
    total_w = math.fsum(weights.values())
    if total_w <= 0:
        raise ValueError("aggregate sub-weights must sum to a positive value")
    multiplicative = means["nc"] * means["dac"] * means["ddc"] * means["tlc"]
    averaged = math.fsum(weights[m] * means[m] for m in weights) / total_w
    combined = multiplicative * averaged * 100.0
    report = {REPORT_NAMES[name]: means[name] * 100.0 for name in METRIC_NAMES}
    report["extended_pdm_score_combined"] = combined
    report["combined_formula"] = "stand-in: product of gate means x weighted mean of progress/comfort means"
    report["num_samples"] = len(vectors)
    return report
