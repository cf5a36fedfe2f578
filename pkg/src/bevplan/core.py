"""Domain types, trajectory kinematics, and world/grid transforms.

Conventions used throughout the package:

* Ego frame: x forward, y left, heading angle measured from +x, wrapped
  to (-pi, pi].
* A trajectory holds 8 waypoints at 2 Hz (dt = 0.5 s), one per half
  second starting at the current time.  The ego state supplies the
  virtual predecessor pose one step in the past, so speed/acceleration/
  jerk profiles have lengths 8, 7 and 6.
* BEV grid: 128 x 128 cells over 64 x 64 m, ego at the center.  x maps
  to the u (column) axis, y to the v (row) axis; cell centers sit at
  integer + 0.5 grid coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TRAJ_LEN = 8
TRAJ_DT = 0.5

DEFAULT_EGO_LENGTH = 4.6
DEFAULT_EGO_WIDTH = 1.9


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = math.fmod(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    elif wrapped > math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


def wrap_angle_array(theta: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle; maps to (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("angles must be finite")
    wrapped = np.mod(theta + math.pi, 2.0 * math.pi) - math.pi
    # np.mod puts the -pi boundary at -pi; the convention is (-pi, pi].
    wrapped[wrapped == -math.pi] = math.pi
    return wrapped


@dataclass(frozen=True)
class Waypoint:
    """Single planned pose: position in meters, heading in radians."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("waypoint position must be finite")
        if not (-math.pi < self.theta <= math.pi):
            raise ValueError(f"heading {self.theta} outside (-pi, pi]")


@dataclass(frozen=True)
class Trajectory:
    """8 waypoints at 2 Hz covering a 4 s planning window."""

    waypoints: tuple[Waypoint, ...]
    dt: float = TRAJ_DT

    def __post_init__(self):
        if len(self.waypoints) != TRAJ_LEN:
            raise ValueError(f"expected {TRAJ_LEN} waypoints, got {len(self.waypoints)}")
        if self.dt != TRAJ_DT:
            raise ValueError(f"dt must be {TRAJ_DT}, got {self.dt}")

    def xy(self) -> np.ndarray:
        """Positions as an (8, 2) array."""
        return np.array([(w.x, w.y) for w in self.waypoints], dtype=float)

    def xyt(self) -> np.ndarray:
        """Positions and headings as an (8, 3) array."""
        return np.array([(w.x, w.y, w.theta) for w in self.waypoints], dtype=float)

    @staticmethod
    def from_array(arr: np.ndarray, dt: float = TRAJ_DT) -> "Trajectory":
        """Build from an (8, 3) array of (x, y, theta); headings are wrapped."""
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (TRAJ_LEN, 3):
            raise ValueError(f"expected shape ({TRAJ_LEN}, 3), got {arr.shape}")
        wps = tuple(Waypoint(float(x), float(y), wrap_angle(float(t))) for x, y, t in arr)
        return Trajectory(wps, dt)


@dataclass(frozen=True)
class EgoState:
    """Current ego motion state and vehicle dimensions."""

    velocity: tuple[float, float] = (0.0, 0.0)  # (longitudinal, lateral) m/s
    acceleration: float = 0.0  # longitudinal m/s^2
    length: float = DEFAULT_EGO_LENGTH
    width: float = DEFAULT_EGO_WIDTH

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("ego dimensions must be positive")

    @property
    def speed(self) -> float:
        return math.hypot(self.velocity[0], self.velocity[1])


@dataclass(frozen=True)
class AgentBox:
    """Dynamic agent as an oriented box with constant planar velocity.

    ``w`` is the box width (across heading), ``h`` the box length
    (along heading).
    """

    x: float
    y: float
    w: float
    h: float
    theta: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("agent box dimensions must be positive")
        if not (-math.pi < self.theta <= math.pi):
            raise ValueError(f"agent heading {self.theta} outside (-pi, pi]")

    def center_at(self, t: float) -> np.ndarray:
        """Constant-velocity center position at time offset t seconds."""
        return np.array([self.x + self.vx * t, self.y + self.vy * t])


@dataclass(frozen=True)
class Lane:
    """Lane centerline polyline with its legal travel direction.

    ``forward`` means travel follows the point order; otherwise the lane
    is driven from the last point to the first.
    """

    points: np.ndarray  # (P, 2)
    forward: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("lane polyline needs at least 2 points of (x, y)")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class Route:
    """Route centerline and the progress target used by the EP metric."""

    points: np.ndarray  # (P, 2)
    reference_progress: float  # meters

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("route polyline needs at least 2 points of (x, y)")
        if self.reference_progress <= 0:
            raise ValueError("reference_progress must be positive")
        object.__setattr__(self, "points", pts)


RED = "red"
GREEN = "green"


@dataclass(frozen=True)
class TrafficLight:
    """Stop-line segment controlled by a light state."""

    line: np.ndarray  # (2, 2): segment endpoints
    state: str

    def __post_init__(self):
        seg = np.asarray(self.line, dtype=float)
        if seg.shape != (2, 2):
            raise ValueError("stop line must be two (x, y) endpoints")
        if self.state not in (RED, GREEN):
            raise ValueError(f"unknown light state {self.state!r}")
        object.__setattr__(self, "line", seg)


@dataclass(frozen=True)
class BevGridSpec:
    """Ego-centered BEV grid geometry."""

    cells_x: int = 128
    cells_y: int = 128
    extent_x: float = 64.0
    extent_y: float = 64.0

    def __post_init__(self):
        if self.cells_x < 1 or self.cells_y < 1:
            raise ValueError("grid must have at least one cell per axis")
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise ValueError("grid extent must be positive")

    @property
    def cell_size_x(self) -> float:
        return self.extent_x / self.cells_x

    @property
    def cell_size_y(self) -> float:
        return self.extent_y / self.cells_y


@dataclass
class Scene:
    """One planning scene: static layout, agents, lights, ego and expert.

    The drivable mask is aligned with ``grid``: ``drivable[row, col]``
    with rows along y (v axis) and columns along x (u axis).
    """

    drivable: np.ndarray
    lanes: list[Lane]
    route: Route
    agents: list[AgentBox]
    traffic_lights: list[TrafficLight]
    ego: EgoState
    expert: Trajectory
    grid: BevGridSpec = field(default_factory=BevGridSpec)
    scene_id: str = "scene"
    seed: int = 0

    def __post_init__(self):
        mask = np.asarray(self.drivable, dtype=bool)
        if mask.shape != (self.grid.cells_y, self.grid.cells_x):
            raise ValueError(
                f"drivable mask shape {mask.shape} does not match grid "
                f"({self.grid.cells_y}, {self.grid.cells_x})"
            )
        self.drivable = mask


def world_to_grid(xy: np.ndarray, spec: BevGridSpec) -> np.ndarray:
    """Map ego-frame positions to continuous grid coordinates (u, v).

    u runs along x (columns), v along y (rows); cell centers sit at
    integer + 0.5 coordinates.  Out-of-extent points map outside
    [0, cells] and are allowed.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    u = (xy[:, 0] + spec.extent_x / 2.0) / spec.cell_size_x
    v = (xy[:, 1] + spec.extent_y / 2.0) / spec.cell_size_y
    return np.stack([u, v], axis=1)


def grid_to_world(uv: np.ndarray, spec: BevGridSpec) -> np.ndarray:
    """Inverse of world_to_grid."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    x = uv[:, 0] * spec.cell_size_x - spec.extent_x / 2.0
    y = uv[:, 1] * spec.cell_size_y - spec.extent_y / 2.0
    return np.stack([x, y], axis=1)


def cell_centers(spec: BevGridSpec) -> tuple[np.ndarray, np.ndarray]:
    """World coordinates of all cell centers: (xs (cells_x,), ys (cells_y,))."""
    xs = (np.arange(spec.cells_x) + 0.5) * spec.cell_size_x - spec.extent_x / 2.0
    ys = (np.arange(spec.cells_y) + 0.5) * spec.cell_size_y - spec.extent_y / 2.0
    return xs, ys


def position_chain(traj: Trajectory, ego: EgoState) -> np.ndarray:
    """(9, 2) positions: virtual predecessor followed by the 8 waypoints.

    The predecessor is the ego pose extrapolated one step into the past
    from the current velocity/acceleration, so step-0 differences see
    the ego history.
    """
    vx, vy = ego.velocity
    dt = traj.dt
    pre = np.array([-(vx * dt) + 0.5 * ego.acceleration * dt * dt, -(vy * dt)])
    return np.vstack([pre, traj.xy()])


@dataclass(frozen=True)
class KinematicProfile:
    """Per-step motion profiles derived from finite differences.

    speed has 8 entries (one per waypoint), accel_lon/accel_lat 7 and
    jerk 6; the missing leading entries are covered by the ego-history
    predecessor.
    """

    speed: np.ndarray
    accel_lon: np.ndarray
    accel_lat: np.ndarray
    jerk: np.ndarray


def kinematics(traj: Trajectory, ego: EgoState) -> KinematicProfile:
    """Speed, acceleration and jerk profiles of a trajectory.

    First differences of the position chain give speeds, second
    differences acceleration vectors (split into longitudinal/lateral
    against the local direction of travel) and third differences jerk
    magnitudes.
    """
    chain = position_chain(traj, ego)
    dt = traj.dt

    deltas = np.diff(chain, axis=0)  # (8, 2)
    speed = np.linalg.norm(deltas, axis=1) / dt

    acc = np.diff(chain, 2, axis=0) / dt**2  # (7, 2), centered on waypoints 0..6
    span = chain[2:] - chain[:-2]  # (7, 2) central direction at the same steps
    span_norm = np.linalg.norm(span, axis=1)
    tangents = np.zeros_like(span)
    moving = span_norm > 1e-12
    tangents[moving] = span[moving] / span_norm[moving, None]
    # Degenerate (no motion): fall back to the stored waypoint heading.
    for i in np.nonzero(~moving)[0]:
        th = traj.waypoints[i].theta
        tangents[i] = (math.cos(th), math.sin(th))
    accel_lon = np.einsum("ij,ij->i", acc, tangents)
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    accel_lat = np.einsum("ij,ij->i", acc, normals)

    jerk = np.linalg.norm(np.diff(chain, 3, axis=0), axis=1) / dt**3  # (6,)
    return KinematicProfile(speed=speed, accel_lon=accel_lon, accel_lat=accel_lat, jerk=jerk)


def oriented_rect_corners(cx: float, cy: float, length: float, width: float, theta: float) -> np.ndarray:
    """Corners of an oriented rectangle, counterclockwise, (4, 2).

    ``length`` extends along the heading, ``width`` across it.
    """
    c, s = math.cos(theta), math.sin(theta)
    half_l, half_w = length / 2.0, width / 2.0
    local = np.array(
        [
            [half_l, half_w],
            [-half_l, half_w],
            [-half_l, -half_w],
            [half_l, -half_w],
        ]
    )
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def ego_footprint(traj: Trajectory, ego: EgoState, t: int) -> np.ndarray:
    """Ego body rectangle at waypoint index t, as (4, 2) corners."""
    if not 0 <= t < TRAJ_LEN:
        raise IndexError(f"step index {t} out of range [0, {TRAJ_LEN})")
    wp = traj.waypoints[t]
    return oriented_rect_corners(wp.x, wp.y, ego.length, ego.width, wp.theta)


def ego_footprints(traj: Trajectory, ego: EgoState) -> np.ndarray:
    """Footprints at all 8 steps, (8, 4, 2)."""
    return np.stack([ego_footprint(traj, ego, t) for t in range(TRAJ_LEN)])


def agent_corners(agent: AgentBox, t: float = 0.0) -> np.ndarray:
    """Agent box corners after t seconds of constant-velocity motion."""
    cx, cy = agent.center_at(t)
    return oriented_rect_corners(cx, cy, agent.h, agent.w, agent.theta)
