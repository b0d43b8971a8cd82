"""Ground-truth contact labels from distance thresholding against a mesh.

Each hand vertex is labeled in-contact iff its distance to the interacting
surface is at or below a threshold. Queries run through a small axis-aligned
BVH; a brute-force scan over all triangles gives the same answer and serves
as the test oracle.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .util import worker_count

# Triangles with area at or below this are treated as slivers and answered
# by their longest edge segment.
DEGENERATE_AREA = 1e-12

LEAF_SIZE = 8


@dataclass(frozen=True)
class ThresholdProfile:
    """Named contact-distance threshold in meters."""

    name: str
    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")


PROFILES = {
    "default": ThresholdProfile("default", 0.010),
    "coarse": ThresholdProfile("coarse", 0.035),
    "fine": ThresholdProfile("fine", 0.005),
}


def profile_by_name(name: str) -> ThresholdProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(
            f"unknown profile {name!r}; choose from {sorted(PROFILES)}"
        ) from None


# ---------------------------------------------------------------------------
# Point-to-triangle closest point
# ---------------------------------------------------------------------------


def _closest_on_segments(p: np.ndarray, s0: np.ndarray, s1: np.ndarray) -> np.ndarray:
    d = s1 - s0
    dd = np.einsum("ij,ij->i", d, d)
    t = np.zeros(len(s0))
    np.divide(np.einsum("ij,ij->i", p - s0, d), dd, out=t, where=dd > 0)
    return s0 + np.clip(t, 0.0, 1.0)[:, None] * d


def closest_points_batch(p: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest point on each triangle to ``p``.

    Parameters
    ----------
    p : (3,) query point
    tris : (M, 3, 3) triangle vertex coordinates

    Returns
    -------
    points : (M, 3) closest point per triangle
    dist2 : (M,) squared distances
    """
    a, b, c = tris[:, 0, :], tris[:, 1, :], tris[:, 2, :]
    ab = b - a
    ac = c - a

    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    # Edge parameters; denominators are squared edge lengths, positive for
    # non-degenerate triangles (degenerate rows are overwritten below).
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom

    interior = a + v[:, None] * ab + w[:, None] * ac
    conds = [
        ((d1 <= 0) & (d2 <= 0))[:, None],
        ((d3 >= 0) & (d4 <= d3))[:, None],
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0))[:, None],
        ((d6 >= 0) & (d5 <= d6))[:, None],
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0))[:, None],
        ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[:, None],
    ]
    choices = [
        a,
        b,
        a + np.nan_to_num(t_ab)[:, None] * ab,
        c,
        a + np.nan_to_num(t_ac)[:, None] * ac,
        b + np.nan_to_num(t_bc)[:, None] * (c - b),
    ]
    points = np.select(conds, choices, default=interior)

    area = 0.5 * np.linalg.norm(np.cross(ab, ac), axis=1)
    degen = area <= DEGENERATE_AREA
    if degen.any():
        idx = np.nonzero(degen)[0]
        ta, tb, tc = a[idx], b[idx], c[idx]
        lens = np.stack(
            [
                np.einsum("ij,ij->i", tb - ta, tb - ta),
                np.einsum("ij,ij->i", tc - tb, tc - tb),
                np.einsum("ij,ij->i", ta - tc, ta - tc),
            ],
            axis=1,
        )
        longest = np.argmax(lens, axis=1)
        s0 = np.select([longest[:, None] == 0, longest[:, None] == 1], [ta, tb], tc)
        s1 = np.select([longest[:, None] == 0, longest[:, None] == 1], [tb, tc], ta)
        points[idx] = _closest_on_segments(p, s0, s1)

    diff = p - points
    dist2 = np.einsum("ij,ij->i", diff, diff)
    return points, dist2


def closest_point_on_triangle(p, a, b, c) -> tuple[np.ndarray, float]:
    """Closest point on triangle (a, b, c) to p, and its distance.

    Degenerate triangles fall back to the closest point on their longest
    edge segment.
    """
    tri = np.asarray([a, b, c], dtype=np.float64).reshape(1, 3, 3)
    pts, d2 = closest_points_batch(np.asarray(p, dtype=np.float64), tri)
    return pts[0], float(np.sqrt(d2[0]))


# ---------------------------------------------------------------------------
# BVH
# ---------------------------------------------------------------------------


class TriangleBVH:
    """Axis-aligned BVH over triangles, exact closest-surface queries.

    Median split over triangle centroids along the widest axis, leaf size 8.
    The build is deterministic; queries return the exact minimum distance
    with ties broken by lowest triangle index.
    """

    def __init__(self, vertices, triangles):
        verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(tris) == 0:
            raise ValueError("cannot build a BVH over an empty triangle list")
        self.tri_coords = verts[tris]  # (M, 3, 3)
        self.triangle_count = len(tris)

        centroids = self.tri_coords.mean(axis=1)
        lo: list[np.ndarray] = []
        hi: list[np.ndarray] = []
        left: list[int] = []
        right: list[int] = []
        start: list[int] = []
        count: list[int] = []
        order: list[np.ndarray] = []
        offset = 0

        def build(member_idx: np.ndarray) -> int:
            nonlocal offset
            node = len(lo)
            pts = self.tri_coords[member_idx].reshape(-1, 3)
            lo.append(pts.min(axis=0))
            hi.append(pts.max(axis=0))
            left.append(-1)
            right.append(-1)
            if len(member_idx) <= LEAF_SIZE:
                members = np.sort(member_idx)  # ascending: first min = lowest index
                start.append(offset)
                count.append(len(members))
                order.append(members)
                offset += len(members)
                return node
            start.append(-1)
            count.append(0)
            cen = centroids[member_idx]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            perm = np.argsort(cen[:, axis], kind="stable")
            half = len(member_idx) // 2
            lkid = build(member_idx[perm[:half]])
            rkid = build(member_idx[perm[half:]])
            left[node] = lkid
            right[node] = rkid
            return node

        build(np.arange(self.triangle_count))
        self._lo = [tuple(x) for x in lo]
        self._hi = [tuple(x) for x in hi]
        self._left = left
        self._right = right
        self._start = start
        self._count = count
        self._order = np.concatenate(order)

    def _box_dist2(self, p: tuple, node: int) -> float:
        lo = self._lo[node]
        hi = self._hi[node]
        d2 = 0.0
        for i in range(3):
            gap = lo[i] - p[i]
            if gap <= 0.0:
                gap = p[i] - hi[i]
            if gap > 0.0:
                d2 += gap * gap
        return d2

    def query(self, point) -> tuple[float, int]:
        """Exact closest-surface distance and owning triangle index."""
        p_arr = np.asarray(point, dtype=np.float64)
        p = (float(p_arr[0]), float(p_arr[1]), float(p_arr[2]))
        best_d2 = np.inf
        best_idx = -1
        stack = [0]
        while stack:
            node = stack.pop()
            # relative slack: the box and triangle distance pipelines can
            # round apart by a few ulps, and a near-tied lower-index
            # triangle must never be pruned away
            if self._box_dist2(p, node) > best_d2 + 1e-12 * best_d2:
                continue
            if self._count[node]:
                s = self._start[node]
                members = self._order[s : s + self._count[node]]
                _, d2 = closest_points_batch(p_arr, self.tri_coords[members])
                k = int(np.argmin(d2))
                d2k, idx = float(d2[k]), int(members[k])
                if d2k < best_d2 or (d2k == best_d2 and idx < best_idx):
                    best_d2, best_idx = d2k, idx
            else:
                l, r = self._left[node], self._right[node]
                dl, dr = self._box_dist2(p, l), self._box_dist2(p, r)
                # Push the farther child first so the nearer is explored next.
                if dl <= dr:
                    stack.extend((r, l))
                else:
                    stack.extend((l, r))
        return float(np.sqrt(best_d2)), best_idx


def closest_surface_distance(point, bvh: TriangleBVH) -> tuple[float, int]:
    """Minimum distance from ``point`` to any triangle in the BVH."""
    return bvh.query(point)


def brute_force_surface_distance(point, vertices, triangles) -> tuple[float, int]:
    """Linear scan over all triangles; oracle counterpart of the BVH query."""
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(tris) == 0:
        raise ValueError("empty triangle list")
    _, d2 = closest_points_batch(np.asarray(point, dtype=np.float64), verts[tris])
    k = int(np.argmin(d2))
    return float(np.sqrt(d2[k])), k


# ---------------------------------------------------------------------------
# Contact labeling
# ---------------------------------------------------------------------------


def label_contacts(
    hand_vertices,
    mesh_vertices,
    mesh_triangles,
    profile: ThresholdProfile = PROFILES["default"],
    workers: int | None = None,
) -> np.ndarray:
    """Binary per-vertex contact labels against an interacting mesh.

    A vertex is in contact iff its closest-surface distance is <= the
    profile threshold (boundary counts as contact). An empty interacting
    mesh yields all zeros and a warning.
    """
    hand = np.asarray(hand_vertices, dtype=np.float64).reshape(-1, 3)
    if len(hand) == 0:
        raise ValueError("empty hand vertex list")
    tris = np.asarray(mesh_triangles, dtype=np.int64).reshape(-1, 3)
    if len(tris) == 0:
        warnings.warn(
            "interacting mesh has no triangles; labeling everything non-contact",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.zeros(len(hand), dtype=np.uint8)

    bvh = TriangleBVH(mesh_vertices, tris)
    labels = np.zeros(len(hand), dtype=np.uint8)

    def run(span: range) -> None:
        for v in span:
            dist, _ = bvh.query(hand[v])
            labels[v] = 1 if dist <= profile.threshold else 0

    n_workers = worker_count() if workers is None else max(1, workers)
    if n_workers <= 1 or len(hand) < 64:
        run(range(len(hand)))
    else:
        chunk = (len(hand) + n_workers - 1) // n_workers
        spans = [range(i, min(i + chunk, len(hand))) for i in range(0, len(hand), chunk)]
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, spans))
    return labels
