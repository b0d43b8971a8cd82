"""Triangle-mesh topology, icosphere proxy meshes, and multi-level regressors.

The mesh types here are deliberately minimal: vertex positions, triangles,
and the derived unweighted adjacency. Coarse supervision levels are fixed
sparse row-stochastic matrices built once from vertex positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .util import atomic_write_text


class MeshError(ValueError):
    """Malformed mesh input: bad indices, degenerate triangles, bad files."""


@dataclass(frozen=True)
class MeshTopology:
    """Immutable triangle mesh with derived vertex connectivity.

    Attributes
    ----------
    vertices : (V, 3) float array
        Vertex positions in meters.
    triangles : (F, 3) int array
        Vertex index triples.
    adjacency : tuple of int arrays
        Sorted neighbor indices per vertex, symmetric, no self-loops.
    degree : (V,) int array
        ``degree[v] == len(adjacency[v])``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    adjacency: tuple
    degree: np.ndarray

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @cached_property
    def adjacency_matrix(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency as a CSR matrix."""
        rows = np.repeat(np.arange(self.vertex_count), self.degree)
        cols = (
            np.concatenate(self.adjacency)
            if self.vertex_count and self.degree.sum()
            else np.empty(0, dtype=np.int64)
        )
        data = np.ones(len(cols))
        mat = sparse.csr_matrix(
            (data, (rows, cols)), shape=(self.vertex_count, self.vertex_count)
        )
        return mat


def build_topology(vertices, triangles) -> MeshTopology:
    """Derive adjacency and degrees from a vertex/triangle soup.

    Rejects out-of-range indices and degenerate triangles (repeated vertex),
    naming the offending triangle.
    """
    verts = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
    n = len(verts)

    bad = np.nonzero((tris < 0).any(axis=1) | (tris >= n).any(axis=1))[0]
    if bad.size:
        raise MeshError(
            f"triangle {bad[0]} has out-of-range vertex index "
            f"(vertex count {n}): {tris[bad[0]].tolist()}"
        )
    degen = np.nonzero(
        (tris[:, 0] == tris[:, 1])
        | (tris[:, 1] == tris[:, 2])
        | (tris[:, 0] == tris[:, 2])
    )[0]
    if degen.size:
        raise MeshError(
            f"triangle {degen[0]} is degenerate (repeated vertex): "
            f"{tris[degen[0]].tolist()}"
        )

    if len(tris):
        edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    neighbors: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        neighbors[u].append(v)
        neighbors[v].append(u)
    adjacency = tuple(np.array(sorted(ns), dtype=np.int64) for ns in neighbors)
    degree = np.array([len(ns) for ns in adjacency], dtype=np.int64)

    verts.flags.writeable = False
    tris.flags.writeable = False
    degree.flags.writeable = False
    return MeshTopology(verts, tris, adjacency, degree)


# ---------------------------------------------------------------------------
# Icosphere proxy mesh
# ---------------------------------------------------------------------------

# Angular radius of the polar caps used as designated regions.
CAP_RADIUS_RAD = 0.4

MAX_SUBDIVISIONS = 4


@dataclass(frozen=True)
class ProxyMesh:
    """Unit icosphere with designated polar caps.

    ``tip`` collects vertices within CAP_RADIUS_RAD of the north pole,
    ``dorsal`` the same cap about the south pole. The two sets are disjoint.
    """

    topology: MeshTopology
    tip: np.ndarray
    dorsal: np.ndarray


def _polar_icosahedron() -> tuple[np.ndarray, np.ndarray]:
    # Pole-aligned icosahedron: apex/antapex at z = +-1, two 5-rings at
    # latitude +-atan(1/2), lower ring rotated by 36 degrees.
    z = 1.0 / math.sqrt(5.0)
    r = 2.0 / math.sqrt(5.0)
    verts = [(0.0, 0.0, 1.0)]
    for k in range(5):
        t = 2.0 * math.pi * k / 5.0
        verts.append((r * math.cos(t), r * math.sin(t), z))
    for k in range(5):
        t = 2.0 * math.pi * k / 5.0 + math.pi / 5.0
        verts.append((r * math.cos(t), r * math.sin(t), -z))
    verts.append((0.0, 0.0, -1.0))

    faces = []
    for k in range(5):
        k1 = (k + 1) % 5
        u, u1 = 1 + k, 1 + k1
        lo, lo1 = 6 + k, 6 + k1
        faces.append((0, u, u1))
        faces.append((u, lo, u1))
        faces.append((u1, lo, lo1))
        faces.append((11, lo1, lo))
    return np.array(verts), np.array(faces, dtype=np.int64)


def make_proxy_mesh(subdivisions: int) -> ProxyMesh:
    """Deterministic subdivided icosahedron on the unit sphere.

    Vertex counts for subdivisions 0..4: 12, 42, 162, 642, 2562.
    """
    if not (0 <= subdivisions <= MAX_SUBDIVISIONS):
        raise MeshError(
            f"subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}"
        )
    verts, faces = _polar_icosahedron()
    verts = [np.asarray(v, dtype=np.float64) for v in verts]

    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            idx = midpoint.get(key)
            if idx is None:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                idx = len(verts)
                verts.append(m)
                midpoint[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = np.array(new_faces, dtype=np.int64)

    positions = np.array(verts)
    positions /= np.linalg.norm(positions, axis=1, keepdims=True)
    topo = build_topology(positions, faces)

    cos_cap = math.cos(CAP_RADIUS_RAD)
    tip = np.nonzero(positions[:, 2] >= cos_cap)[0]
    dorsal = np.nonzero(positions[:, 2] <= -cos_cap)[0]
    return ProxyMesh(topo, tip, dorsal)


PROXY_VERTEX_COUNTS = {12: 0, 42: 1, 162: 2, 642: 3, 2562: 4}


def subdivisions_for_vertex_count(v: int) -> int | None:
    """Inverse of the proxy-mesh vertex counts, None for non-proxy sizes."""
    return PROXY_VERTEX_COUNTS.get(v)


# ---------------------------------------------------------------------------
# Multi-level regressors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelRegressor:
    """Fixed linear maps from full resolution down to each coarse level.

    ``matrices[i]`` is a sparse (level_sizes[i], V) row-stochastic matrix;
    the first level is the identity at full resolution.
    """

    level_sizes: tuple
    matrices: tuple

    @property
    def full_size(self) -> int:
        return self.level_sizes[0]


def _farthest_point_seeds(positions: np.ndarray, count: int) -> np.ndarray:
    """Deterministic farthest-point sampling, seeded at vertex 0."""
    n = len(positions)
    seeds = np.empty(count, dtype=np.int64)
    seeds[0] = 0
    dist = np.linalg.norm(positions - positions[0], axis=1)
    chosen = np.zeros(n, dtype=bool)
    chosen[0] = True
    for k in range(1, count):
        nxt = int(np.argmax(dist))
        if dist[nxt] == 0.0:
            # Remaining vertices coincide with chosen ones; fall back to the
            # lowest-index unchosen vertex so seeds stay distinct.
            nxt = int(np.nonzero(~chosen)[0][0])
        seeds[k] = nxt
        chosen[nxt] = True
        dist = np.minimum(dist, np.linalg.norm(positions - positions[nxt], axis=1))
    return seeds


def build_level_regressors(topology: MeshTopology, level_sizes) -> LevelRegressor:
    """Cluster-average downsampling matrices from farthest-point seeding.

    Coarse vertices are clusters of full-resolution vertices around
    deterministic farthest-point seeds; each J row averages its cluster
    members uniformly, so rows are nonnegative and sum to one.
    """
    sizes = tuple(int(s) for s in level_sizes)
    n = topology.vertex_count
    if not sizes or sizes[0] != n:
        raise MeshError(f"first level size must equal vertex count {n}, got {sizes}")
    for a, b in zip(sizes, sizes[1:]):
        if b >= a:
            raise MeshError(f"level sizes must be strictly decreasing, got {sizes}")
    if min(sizes) < 1:
        raise MeshError(f"level sizes must be positive, got {sizes}")

    matrices = []
    for m in sizes:
        if m == n:
            matrices.append(sparse.identity(n, format="csr"))
            continue
        seeds = _farthest_point_seeds(topology.vertices, m)
        d = np.linalg.norm(
            topology.vertices[:, None, :] - topology.vertices[seeds][None, :, :],
            axis=2,
        )
        assign = np.argmin(d, axis=1)
        assign[seeds] = np.arange(m)  # a seed always anchors its own cluster
        counts = np.bincount(assign, minlength=m)
        weights = 1.0 / counts[assign]
        mat = sparse.csr_matrix((weights, (assign, np.arange(n))), shape=(m, n))
        matrices.append(mat)
    return LevelRegressor(sizes, tuple(matrices))


def project_levels(values, regressors: LevelRegressor) -> list[np.ndarray]:
    """Apply every level matrix to a full-resolution per-vertex vector."""
    x = np.asarray(values, dtype=np.float64)
    if x.shape[0] != regressors.full_size:
        raise MeshError(
            f"expected {regressors.full_size} values, got {x.shape[0]}"
        )
    return [j @ x for j in regressors.matrices]


# ---------------------------------------------------------------------------
# OBJ subset I/O and regressor export
# ---------------------------------------------------------------------------


def load_obj(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read the ASCII OBJ subset: ``v x y z`` and ``f i j k`` (1-based).

    Comment lines and unrelated directives are ignored; malformed vertex or
    face rows raise MeshError with the line number.
    """
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) != 4:
                    raise MeshError(f"{path}:{lineno}: expected 'v x y z', got {raw!r}")
                try:
                    verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise MeshError(
                        f"{path}:{lineno}: non-numeric vertex coordinate"
                    ) from None
            elif tag == "f":
                if len(parts) != 4:
                    raise MeshError(f"{path}:{lineno}: expected 'f i j k', got {raw!r}")
                try:
                    idx = tuple(int(p) for p in parts[1:])
                except ValueError:
                    raise MeshError(
                        f"{path}:{lineno}: face indices must be plain integers"
                    ) from None
                if any(i < 1 for i in idx):
                    raise MeshError(f"{path}:{lineno}: face indices are 1-based")
                faces.append((idx[0] - 1, idx[1] - 1, idx[2] - 1))
            # other directives (vn, vt, o, ...) fall outside the subset: skipped
    vertices = np.array(verts, dtype=np.float64).reshape(-1, 3)
    triangles = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(triangles) and triangles.max() >= len(vertices):
        raise MeshError(f"{path}: face references vertex {triangles.max() + 1} "
                        f"but only {len(vertices)} vertices are defined")
    return vertices, triangles


def save_obj(path: str, vertices, triangles) -> None:
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in tris]
    atomic_write_text(path, "\n".join(lines) + "\n")


def export_regressor_csv(matrix, path: str) -> None:
    """Write one level matrix as ``row,col,weight`` triplets."""
    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = ["row,col,weight"]
    lines += [
        f"{coo.row[i]},{coo.col[i]},{float(coo.data[i])!r}" for i in order
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")
