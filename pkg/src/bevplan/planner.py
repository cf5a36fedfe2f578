"""Learnable planning head over a rendered BEV grid.

The pipeline renders scene semantics into channel planes, lifts them
per cell into a d-dimensional feature grid, samples each candidate
trajectory's waypoints from that grid, pools the samples with an
ego-conditioned attention readout, refines the pooled embeddings by
attending over agent features, and decodes bounded residual offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import (
    BevGridSpec,
    EgoState,
    RED,
    Scene,
    TRAJ_LEN,
    Trajectory,
    agent_corners,
    cell_centers,
    wrap_angle,
    world_to_grid,
)
from .geom import min_distance_to_polyline, point_in_convex_polygon
from .nn import MLP, Linear, smooth_l1_loss
from .vocabulary import Vocabulary

# Semantic channel order.  The first six carry scene content; the last
# three (cell coordinates and ego speed) make the per-cell encoding
# position- and state-aware, which the metric heads need at this scale.
CH_DRIVABLE = 0
CH_AGENT_OCC = 1
CH_AGENT_SPEED = 2
CH_ROUTE = 3
CH_LANE = 4
CH_RED_STOP = 5
CH_X = 6
CH_Y = 7
CH_EGO_SPEED = 8
NUM_CHANNELS = 9

_PROXIMITY_SCALE = 2.0  # m; exp(-dist / scale) falloff
_SPEED_CAP = 20.0  # m/s

OFFSET_POS_BOUND = 2.0  # m per waypoint
OFFSET_THETA_BOUND = 0.5  # rad per waypoint

_EGO_FEATURE_DIM = 5
_AGENT_FEATURE_DIM = 7


@dataclass
class PlannerParams:
    """All learnable pieces of the planning head."""

    d: int
    bev_encoder: Linear  # per-cell channels -> d, no bias
    ego_query: Linear  # ego features -> d
    pos_embed: Tensor  # (8, d) waypoint-step embeddings, added to keys
    agent_encoder: MLP  # agent features -> d
    attn_q: Tensor  # (d, d)
    attn_k: Tensor
    attn_v: Tensor
    offset_head: MLP  # d -> hidden -> 24, final layer zero-initialized

    @staticmethod
    def create(rng: np.random.Generator, d: int = 32, hidden: int = 64) -> "PlannerParams":
        def square():
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d)), requires_grad=True)

        return PlannerParams(
            d=d,
            bev_encoder=Linear(
                Tensor(rng.normal(0.0, 1.0 / math.sqrt(NUM_CHANNELS), size=(NUM_CHANNELS, d)), requires_grad=True)
            ),
            ego_query=Linear.create(rng, _EGO_FEATURE_DIM, d),
            pos_embed=Tensor(rng.normal(0.0, 0.5, size=(TRAJ_LEN, d)), requires_grad=True),
            agent_encoder=MLP.create(rng, [_AGENT_FEATURE_DIM, d, d]),
            attn_q=square(),
            attn_k=square(),
            attn_v=square(),
            offset_head=MLP.create(rng, [d, hidden, 3 * TRAJ_LEN], zero_last=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        named = {
            "planner/pos_embed": self.pos_embed,
            "planner/attn_q": self.attn_q,
            "planner/attn_k": self.attn_k,
            "planner/attn_v": self.attn_v,
        }
        named.update(self.bev_encoder.tensors("planner/bev_encoder"))
        named.update(self.ego_query.tensors("planner/ego_query"))
        named.update(self.agent_encoder.tensors("planner/agent_encoder"))
        named.update(self.offset_head.tensors("planner/offset_head"))
        return named


def render_bev(scene: Scene, spec: BevGridSpec | None = None) -> np.ndarray:
    """Rasterize scene semantics into (NUM_CHANNELS, H, W) planes.

    Occupancy-style channels are 0/1, proximity channels decay as
    exp(-distance / 2 m), and speed-like channels are clamped to 20 m/s
    and scaled into [0, 1].
    """
    spec = spec or scene.grid
    h, w = spec.cells_y, spec.cells_x
    xs, ys = cell_centers(spec)
    gx, gy = np.meshgrid(xs, ys)
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)

    grid = np.zeros((NUM_CHANNELS, h, w))
    grid[CH_DRIVABLE] = scene.drivable.astype(float)

    for agent in scene.agents:
        corners = agent_corners(agent, 0.0)
        lo = corners.min(axis=0)
        hi = corners.max(axis=0)
        sel = (
            (centers[:, 0] >= lo[0] - 0.5)
            & (centers[:, 0] <= hi[0] + 0.5)
            & (centers[:, 1] >= lo[1] - 0.5)
            & (centers[:, 1] <= hi[1] + 0.5)
        )
        if not sel.any():
            continue
        inside = point_in_convex_polygon(centers[sel], corners)
        idx = np.nonzero(sel)[0][inside]
        rows, cols = np.unravel_index(idx, (h, w))
        grid[CH_AGENT_OCC, rows, cols] = 1.0
        speed = min(math.hypot(agent.vx, agent.vy), _SPEED_CAP) / _SPEED_CAP
        grid[CH_AGENT_SPEED, rows, cols] = np.maximum(grid[CH_AGENT_SPEED, rows, cols], speed)

    grid[CH_ROUTE] = np.exp(-min_distance_to_polyline(centers, scene.route.points) / _PROXIMITY_SCALE).reshape(h, w)

    lane_dist = np.full(len(centers), np.inf)
    for lane in scene.lanes:
        lane_dist = np.minimum(lane_dist, min_distance_to_polyline(centers, lane.points))
    if np.isfinite(lane_dist).all():
        grid[CH_LANE] = np.exp(-lane_dist / _PROXIMITY_SCALE).reshape(h, w)

    red_lines = [tl.line for tl in scene.traffic_lights if tl.state == RED]
    if red_lines:
        stop_dist = np.full(len(centers), np.inf)
        for line in red_lines:
            stop_dist = np.minimum(stop_dist, min_distance_to_polyline(centers, line))
        grid[CH_RED_STOP] = np.exp(-stop_dist / _PROXIMITY_SCALE).reshape(h, w)

    grid[CH_X] = ((gx + spec.extent_x / 2.0) / spec.extent_x).clip(0.0, 1.0)
    grid[CH_Y] = ((gy + spec.extent_y / 2.0) / spec.extent_y).clip(0.0, 1.0)
    grid[CH_EGO_SPEED] = min(scene.ego.speed, _SPEED_CAP) / _SPEED_CAP
    return grid


def encode_bev(semantic: np.ndarray, params: PlannerParams) -> Tensor:
    """Per-cell linear lift of the semantic planes to a (d, H, W) grid."""
    s, h, w = semantic.shape
    if s != params.bev_encoder.weight.data.shape[0]:
        raise ValueError(
            f"semantic grid has {s} channels, encoder expects "
            f"{params.bev_encoder.weight.data.shape[0]}"
        )
    cells = Tensor(semantic.reshape(s, h * w).T)  # (H*W, S)
    feats = params.bev_encoder(cells)  # (H*W, d)
    return ad.reshape(ad.transpose(feats), (params.d, h, w))


def _ego_features(ego: EgoState) -> np.ndarray:
    return np.array(
        [
            ego.velocity[0] / _SPEED_CAP,
            ego.velocity[1] / _SPEED_CAP,
            ego.acceleration / 10.0,
            ego.length / 10.0,
            ego.width / 10.0,
        ]
    )


def embed_candidates(
    feature_grid: Tensor,
    candidates: list[Trajectory],
    ego: EgoState,
    params: PlannerParams,
    spec: BevGridSpec | None = None,
) -> Tensor:
    """Pool per-waypoint grid samples into one embedding per candidate.

    Waypoint features are bilinearly sampled, step embeddings are added
    on the key side, and a single ego-conditioned attention readout
    produces a (C, d) matrix.
    """
    spec = spec or BevGridSpec()
    n = len(candidates)
    if n == 0:
        return Tensor(np.zeros((0, params.d)))
    pts = np.concatenate([world_to_grid(t.xy(), spec) for t in candidates])  # (C*8, 2)
    samples = ad.bilinear_sample(feature_grid, pts)  # (C*8, d)
    values = ad.reshape(samples, (n, TRAJ_LEN, params.d))
    keys = values + params.pos_embed  # (C, 8, d) + (8, d)

    query = params.ego_query(Tensor(_ego_features(ego)[None, :]))  # (1, d)
    logits = ad.matmul(keys, ad.transpose(query)) * (1.0 / math.sqrt(params.d))  # (C, 8, 1)
    weights = ad.softmax(logits, axis=1)
    return ad.tsum(weights * values, axis=1)  # (C, d)


def agent_feature_matrix(agents) -> np.ndarray:
    """Per-agent input features (N, 7), normalized to unit-ish scale."""
    if not agents:
        return np.zeros((0, _AGENT_FEATURE_DIM))
    rows = []
    for a in agents:
        speed = math.hypot(a.vx, a.vy)
        rows.append(
            [
                a.x / 32.0,
                a.y / 32.0,
                math.cos(a.theta),
                math.sin(a.theta),
                a.w / 5.0,
                a.h / 5.0,
                min(speed, _SPEED_CAP) / _SPEED_CAP,
            ]
        )
    return np.array(rows)


def refine_with_agents(embeddings: Tensor, agents, params: PlannerParams) -> Tensor:
    """Cross-attention of candidate embeddings over agent features.

    Residual form: embeddings + attention(q, k, v).  Without agents the
    input is returned unchanged.
    """
    if not agents:
        return embeddings
    feats = params.agent_encoder(Tensor(agent_feature_matrix(agents)))  # (N, d)
    q = ad.matmul(embeddings, params.attn_q)
    k = ad.matmul(feats, params.attn_k)
    v = ad.matmul(feats, params.attn_v)
    return embeddings + ad.attention(q, k, v)


_THETA_MASK = np.tile([0.0, 0.0, 1.0], TRAJ_LEN)
_POS_MASK = 1.0 - _THETA_MASK
_OFFSET_LO = np.tile([-OFFSET_POS_BOUND, -OFFSET_POS_BOUND, -OFFSET_THETA_BOUND], TRAJ_LEN)
_OFFSET_HI = -_OFFSET_LO


def candidate_offsets(embeddings: Tensor, params: PlannerParams) -> Tensor:
    """Bounded residual offsets, (C, 24) laid out as (dx, dy, dtheta) x 8."""
    raw = params.offset_head(embeddings)
    return ad.clip(raw, _OFFSET_LO, _OFFSET_HI)


def decode_offsets(embeddings: Tensor, vocab: Vocabulary, params: PlannerParams) -> list[Trajectory]:
    """Apply decoded offsets to the vocabulary entries.

    With a zero offset head the output equals the vocabulary exactly.
    """
    if embeddings.data.shape[0] != vocab.size:
        raise ValueError(f"got {embeddings.data.shape[0]} embeddings for {vocab.size} candidates")
    offsets = candidate_offsets(embeddings, params).data.reshape(vocab.size, TRAJ_LEN, 3)
    decoded = []
    for entry, delta in zip(vocab.entries, offsets):
        arr = entry.xyt() + delta
        arr[:, 2] = [wrap_angle(t) for t in arr[:, 2]]
        decoded.append(Trajectory.from_array(arr))
    return decoded


def embed_scene_candidates(
    params: PlannerParams,
    scene: Scene,
    candidates: list[Trajectory],
    semantic: np.ndarray | None = None,
) -> Tensor:
    """Full context path: render -> encode -> pool -> agent refinement.

    ``semantic`` may be passed in to reuse a cached rendering.
    """
    if semantic is None:
        semantic = render_bev(scene)
    grid = encode_bev(semantic, params)
    pooled = embed_candidates(grid, candidates, scene.ego, params, scene.grid)
    return refine_with_agents(pooled, scene.agents, params)


def imitation_loss(
    embeddings: Tensor,
    vocab: Vocabulary,
    nearest_index: int,
    expert: Trajectory,
    params: PlannerParams,
) -> Tensor:
    """Smooth-L1 between the refined nearest candidate and the expert.

    Only the vocabulary entry closest to the expert is pulled; heading
    components compare wrapped differences.
    """
    offsets = candidate_offsets(embeddings, params)
    row = ad.take_rows(offsets, [nearest_index])  # (1, 24)
    base = Tensor(vocab.entries[nearest_index].xyt().reshape(1, -1))
    target = Tensor(expert.xyt().reshape(1, -1))
    diff = base + row - target
    blended = diff * Tensor(_POS_MASK) + ad.wrap_to_pi(diff) * Tensor(_THETA_MASK)
    return smooth_l1_loss(blended)
