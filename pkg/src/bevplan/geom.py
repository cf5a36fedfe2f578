"""2D geometry helpers: rectangle overlap, polylines, segment tests."""

from __future__ import annotations

import numpy as np


def rects_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis overlap test between two oriented rectangles.

    ``a`` and ``b`` are (4, 2) corner arrays.  Touching counts as
    overlap.
    """
    return bool(rects_overlap_many(a[None], b[None])[0])


def rects_overlap_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized SAT for K rectangle pairs: (K, 4, 2) x (K, 4, 2) -> (K,) bool.

    Rectangles contribute two unique edge normals each, so four axes
    decide every pair.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-2:] != (4, 2) or b.shape[-2:] != (4, 2):
        raise ValueError("expected (K, 4, 2) corner arrays")

    # Edge directions double as the other family's normals for rectangles.
    axes = np.concatenate(
        [a[:, 1] - a[:, 0], a[:, 2] - a[:, 1], b[:, 1] - b[:, 0], b[:, 2] - b[:, 1]],
        axis=0,
    ).reshape(4, -1, 2)  # (4, K, 2)
    norms = np.linalg.norm(axes, axis=2, keepdims=True)
    axes = axes / np.maximum(norms, 1e-300)

    proj_a = np.einsum("xkd,kcd->xkc", axes, a)  # (4, K, 4)
    proj_b = np.einsum("xkd,kcd->xkc", axes, b)
    sep = (proj_a.max(axis=2) < proj_b.min(axis=2)) | (proj_b.max(axis=2) < proj_a.min(axis=2))
    return ~sep.any(axis=0)


def point_in_convex_polygon(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Membership test for points vs a counterclockwise convex polygon."""
    points = np.atleast_2d(points)
    inside = np.ones(len(points), dtype=bool)
    n = len(corners)
    for i in range(n):
        p0, p1 = corners[i], corners[(i + 1) % n]
        edge = p1 - p0
        rel = points - p0
        cross = edge[0] * rel[:, 1] - edge[1] * rel[:, 0]
        inside &= cross >= -1e-12
    return inside


def segments_intersect(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray) -> bool:
    """True when segments [p1, p2] and [q1, q2] intersect (touching included)."""
    p1, p2, q1, q2 = (np.asarray(v, dtype=float) for v in (p1, p2, q1, q2))

    def orient(a, b, c):
        val = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(val) < 1e-12:
            return 0
        return 1 if val > 0 else -1

    def on_segment(a, b, c):
        return (
            min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
        )

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_segment(p1, p2, q1):
        return True
    if o2 == 0 and on_segment(p1, p2, q2):
        return True
    if o3 == 0 and on_segment(q1, q2, p1):
        return True
    if o4 == 0 and on_segment(q1, q2, p2):
        return True
    return False


def _segment_geometry(polyline: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pts = np.asarray(polyline, dtype=float)
    starts = pts[:-1]
    vecs = pts[1:] - starts
    lens = np.linalg.norm(vecs, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    return starts, vecs, lens, cum


def polyline_length(polyline: np.ndarray) -> float:
    _, _, lens, _ = _segment_geometry(polyline)
    return float(lens.sum())


def points_to_polyline(points: np.ndarray, polyline: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance and arc-length projection of points onto a polyline.

    Returns (distances (N,), arc positions (N,)); the arc position is
    the cumulative length of the closest point along the polyline.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    starts, vecs, lens, cum = _segment_geometry(polyline)
    seg_len2 = np.maximum(lens**2, 1e-300)

    rel = points[:, None, :] - starts[None, :, :]  # (N, S, 2)
    t = np.einsum("nsd,sd->ns", rel, vecs) / seg_len2  # (N, S)
    t = np.clip(t, 0.0, 1.0)
    closest = starts[None, :, :] + t[:, :, None] * vecs[None, :, :]
    dists = np.linalg.norm(points[:, None, :] - closest, axis=2)  # (N, S)

    best = np.argmin(dists, axis=1)
    idx = np.arange(len(points))
    arc = cum[best] + t[idx, best] * lens[best]
    return dists[idx, best], arc


def min_distance_to_polyline(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Minimum distance from many points to a polyline, (N,).

    Loops over segments with in-place minima, so it stays cheap for
    grid-sized point sets.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    starts, vecs, lens, _ = _segment_geometry(polyline)
    px, py = points[:, 0], points[:, 1]
    best = np.full(len(points), np.inf)
    for (sx, sy), (vx, vy), ln in zip(starts, vecs, lens):
        if ln > 0:
            t = np.clip(((px - sx) * vx + (py - sy) * vy) / (ln * ln), 0.0, 1.0)
        else:
            t = 0.0
        dx = px - (sx + t * vx)
        dy = py - (sy + t * vy)
        np.minimum(best, dx * dx + dy * dy, out=best)
    return np.sqrt(best)


def polyline_point_at(polyline: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length s along the polyline (clamped to its ends)."""
    starts, vecs, lens, cum = _segment_geometry(polyline)
    total = cum[-1]
    s = min(max(s, 0.0), total)
    seg = int(np.searchsorted(cum[1:], s, side="left"))
    seg = min(seg, len(lens) - 1)
    denom = lens[seg] if lens[seg] > 0 else 1.0
    t = (s - cum[seg]) / denom
    return starts[seg] + t * vecs[seg]


def polyline_tangent_at(polyline: np.ndarray, s: float) -> np.ndarray:
    """Unit tangent of the segment containing arc length s."""
    starts, vecs, lens, cum = _segment_geometry(polyline)
    seg = int(np.searchsorted(cum[1:], min(max(s, 0.0), cum[-1]), side="left"))
    seg = min(seg, len(lens) - 1)
    v = vecs[seg]
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([1.0, 0.0])


def nearest_lane_direction(point: np.ndarray, heading_lanes: list) -> tuple[float, np.ndarray]:
    """Distance to the nearest lane and that lane's travel direction there.

    ``heading_lanes`` is a list of Lane objects; a lane driven against
    its point order has its tangent flipped.
    """
    best_dist = np.inf
    best_dir = np.array([1.0, 0.0])
    for lane in heading_lanes:
        dist, arc = points_to_polyline(point, lane.points)
        if dist[0] < best_dist:
            best_dist = float(dist[0])
            tangent = polyline_tangent_at(lane.points, float(arc[0]))
            best_dir = tangent if lane.forward else -tangent
    return best_dist, best_dir
