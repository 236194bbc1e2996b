"""Finite Volume Features, face interpolation, and mesh reconstruction from FVF.

Edge attribute layout for a directed edge ``(i, j)``::

    q = [S_x, S_y, (c - x_i)_x, (c - x_i)_y, (c - x_j)_x, (c - x_j)_y]

with ``S`` the face area normal pointing out of node ``i``'s cell.
"""

from __future__ import annotations

import csv
import io
import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .graphgen import BOUNDARY, CELL, Graph, cell_centroid_graph
from .mesh import Mesh2D, MeshError, crossing_edges, polygon_area, validate_mesh

MERGE_TOL = 1e-9
NODE_HEADER = ["node_id", "p"]
EDGE_HEADER = ["i", "j", "S_x", "S_y", "cxi_x", "cxi_y", "cxj_x", "cxj_y"]


class ReconstructionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FvfAttributes:
    p: np.ndarray  # (N,) cell volume, 0 on boundary-face nodes
    q: np.ndarray  # (E, 6)
    edges: np.ndarray  # (E, 2), same order as q

    @property
    def normals(self) -> np.ndarray:
        return self.q[:, 0:2]

    @property
    def offset_i(self) -> np.ndarray:
        return self.q[:, 2:4]

    @property
    def offset_j(self) -> np.ndarray:
        return self.q[:, 4:6]


def fvf_attributes(mesh: Mesh2D, graph: Graph) -> FvfAttributes:
    ref = cell_centroid_graph(mesh)
    if (
        graph.kinds != ref.kinds
        or not np.array_equal(graph.origins, ref.origins)
        or not np.array_equal(graph.edges, ref.edges)
        or not np.array_equal(graph.edge_faces, ref.edge_faces)
    ):
        raise ValueError("graph does not match the cell-centroid graph of this mesh")
    p = np.zeros(graph.n_nodes)
    p[: mesh.n_cells] = mesh.cell_volumes
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    f = graph.edge_faces
    c = mesh.face_centroids[f]
    sign = np.where(i == mesh.owner[f], 1.0, -1.0)[:, None]
    x = ref.positions
    q = np.concatenate([sign * mesh.face_normals[f], c - x[i], c - x[j]], axis=1)
    return FvfAttributes(p=p, q=q, edges=graph.edges.copy())


def interpolate_face_flux(phi_i, phi_j, x_i, x_j, c):
    """Face value from the two cell-centroid values, weighted as

    ``phi_i * |c - x_i| / |x_j - x_i| + phi_j * |c - x_j| / |x_j - x_i|``.

    Note the weight on ``phi_i`` grows with the distance from ``x_i``; this is
    kept verbatim rather than swapped to textbook linear interpolation.
    """
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    c = np.asarray(c, dtype=float)
    span = np.linalg.norm(x_j - x_i)
    if span == 0:
        raise ValueError("coincident centroids")
    wi = np.linalg.norm(c - x_i) / span
    wj = np.linalg.norm(c - x_j) / span
    return np.asarray(phi_i, dtype=float) * wi + np.asarray(phi_j, dtype=float) * wj


def face_endpoints_from_fvf(c, S) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``(a + b) / 2 = c`` and ``b - a = (S_y, -S_x)`` for the face endpoints."""
    c = np.asarray(c, dtype=float)
    S = np.asarray(S, dtype=float)
    if not np.any(S):
        raise ValueError("zero-length area normal")
    half = 0.5 * np.array([S[1], -S[0]])
    return c - half, c + half


def missing_node_from_centroid(x_i, known) -> np.ndarray:
    known = np.asarray(known, dtype=float).reshape(-1, 2)
    return (len(known) + 1) * np.asarray(x_i, dtype=float) - known.sum(axis=0)


def is_complete_cell(x_i, known, tol: float = MERGE_TOL) -> bool:
    """True when ``known`` is already the full vertex set of the cell centred at ``x_i``."""
    x_i = np.asarray(x_i, dtype=float)
    return bool(np.max(np.abs(missing_node_from_centroid(x_i, known) - x_i)) <= tol)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _merge_points(coords: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Cluster points closer than ``tol``; returns (cluster id per input, cluster coords)."""
    uf = _UnionFind(len(coords))
    for a, b in cKDTree(coords).query_pairs(tol, output_type="ndarray"):
        uf.union(int(a), int(b))
    roots = np.array([uf.find(k) for k in range(len(coords))])
    _, first, ids = np.unique(roots, return_index=True, return_inverse=True)
    # relabel clusters in order of first appearance
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    ids = rank[ids]
    sums = np.zeros((len(first), 2))
    np.add.at(sums, ids, coords)
    centers = sums / np.bincount(ids)[:, None]
    spread = np.max(np.abs(coords - centers[ids]), axis=1)
    if len(coords) and spread.max() > tol:
        bad = int(np.argmax(spread))
        raise ReconstructionError(f"endpoint merge ambiguity near {coords[bad].tolist()}")
    return ids, centers


def _propagate_positions(graph: Graph, fvf: FvfAttributes) -> np.ndarray:
    cells = graph.cell_nodes
    if len(cells) == 0:
        raise ReconstructionError("graph has no cell nodes")
    x = np.full((graph.n_nodes, 2), np.nan)
    anchor = int(cells[0])
    x[anchor] = 0.0
    adj: list[list[int]] = [[] for _ in range(graph.n_nodes)]
    for e, (i, _) in enumerate(graph.edges):
        adj[i].append(e)
    queue = deque([anchor])
    seen = np.zeros(graph.n_nodes, dtype=bool)
    seen[anchor] = True
    while queue:
        i = queue.popleft()
        for e in adj[i]:
            j = int(graph.edges[e, 1])
            if not seen[j]:
                seen[j] = True
                x[j] = x[i] + fvf.q[e, 2:4] - fvf.q[e, 4:6]
                queue.append(j)
    if not seen.all():
        raise ReconstructionError(f"disconnected graph: {int((~seen).sum())} nodes unreachable from node {anchor}")
    return x


def _close_cell(pieces: list[list[int]], pts: np.ndarray, volume: float, area_tol: float, cell: int):
    """Join vertex chains into the single CCW loop whose area matches ``volume``."""
    head, rest = pieces[0], pieces[1:]
    found = []
    for perm in itertools.permutations(rest):
        cyc = head + [v for piece in perm for v in piece]
        if len(set(cyc)) != len(cyc) or len(cyc) < 3:
            continue
        area = polygon_area(pts[cyc])
        if area > 0 and abs(area - volume) <= area_tol and not crossing_edges(pts[cyc]):
            found.append(cyc)
    if len(found) != 1:
        raise ReconstructionError(f"farfield closure not unique for cell node {cell}: {len(found)} candidates")
    return found[0]


def reconstruct_mesh(graph: Graph, fvf: FvfAttributes, tol: float = MERGE_TOL) -> Mesh2D:
    """Rebuild the mesh (up to translation) from the cell-centroid graph topology and its FVF.

    Node positions stored on ``graph`` are ignored; only node kinds, edges and
    the FVF are used.  The lowest-index cell centroid is placed at the origin.
    """
    if fvf.q.shape != (graph.n_edges, 6) or fvf.p.shape != (graph.n_nodes,):
        raise ReconstructionError("FVF shape does not match the graph")
    if not np.array_equal(fvf.edges, graph.edges):
        raise ReconstructionError("FVF edge list does not match the graph")
    x = _propagate_positions(graph, fvf)

    # one representative directed edge per face; prefer cell -> other
    face_edge: dict[int, int] = {}
    for e, f in enumerate(graph.edge_faces):
        if int(f) not in face_edge and graph.kinds[graph.edges[e, 0]] == CELL:
            face_edge[int(f)] = e
    faces = sorted(face_edge, key=face_edge.get)
    fe = np.array([face_edge[f] for f in faces], dtype=np.int64)
    c = x[graph.edges[fe, 0]] + fvf.q[fe, 2:4]
    half = 0.5 * np.stack([fvf.q[fe, 1], -fvf.q[fe, 0]], axis=1)
    if np.any(np.all(half == 0, axis=1)):
        raise ReconstructionError("zero-length area normal")
    ends = np.empty((2 * len(faces), 2))
    ends[0::2] = c - half
    ends[1::2] = c + half

    scale = float(np.ptp(ends, axis=0).max()) if len(ends) else 1.0
    scale = scale if scale > 0 else 1.0
    mtol = tol * scale
    ids, points = _merge_points(ends, mtol)
    points = list(points)

    # CCW traversal of the owning cell i runs b -> a; the other cell runs a -> b
    succ: list[dict[int, int]] = [dict() for _ in range(graph.n_nodes)]
    geometry = []
    for k, f in enumerate(faces):
        e = face_edge[f]
        i, j = int(graph.edges[e, 0]), int(graph.edges[e, 1])
        a, b = int(ids[2 * k]), int(ids[2 * k + 1])
        succ[i][b] = a
        if graph.kinds[j] == CELL:
            succ[j][a] = b
        elif graph.kinds[j] == BOUNDARY:
            geometry.append((a, b))

    cells_out = []
    farfield = []
    recovered = []
    pts_arr = np.array(points)
    for ci in graph.cell_nodes:
        s = succ[ci]
        known = sorted(set(s) | set(s.values()))
        if len(known) < 2:
            raise ReconstructionError(f"cell node {ci} has fewer than two known mesh nodes")
        pieces = _chains(s)
        if not is_complete_cell(x[ci], pts_arr[known], mtol):
            m = missing_node_from_centroid(x[ci], pts_arr[known])
            recovered.append(m)
            pid = len(points)
            points.append(m)
            pieces.append([pid])
            pts_arr = np.array(points)
        if len(pieces) == 1 and pieces[0][-1] in s and s[pieces[0][-1]] == pieces[0][0]:
            cyc = pieces[0]  # already closed by known faces
        else:
            cyc = _close_cell(pieces, pts_arr, fvf.p[ci], 1e-9 * scale * scale + 1e-9 * fvf.p[ci], int(ci))
        n = len(cyc)
        for k in range(n):
            a, b = cyc[k], cyc[(k + 1) % n]
            if s.get(a) != b:
                farfield.append((a, b))
        cells_out.append(cyc)

    if recovered:
        _check_recovered(np.array(points), len(points) - len(recovered), mtol)
    mesh = Mesh2D(np.array(points), cells_out, geometry, farfield)
    issues = validate_mesh(mesh)
    if issues:
        raise ReconstructionError(f"reconstructed mesh is invalid: {MeshError(issues)}")
    return mesh


def _chains(succ: dict[int, int]) -> list[list[int]]:
    """Split a partial successor map into maximal vertex chains (or one closed loop)."""
    preds = set(succ.values())
    starts = [v for v in succ if v not in preds]
    chains = []
    used = set()
    for s in sorted(starts):
        chain = [s]
        while chain[-1] in succ:
            chain.append(succ[chain[-1]])
        used.update(chain)
        chains.append(chain)
    if not chains:
        s0 = min(succ)
        chain = [s0]
        while succ[chain[-1]] != s0:
            chain.append(succ[chain[-1]])
            if len(chain) > len(succ):
                raise ReconstructionError("cell face loop is not a single cycle")
        used.update(chain)
        chains.append(chain)
    if used != set(succ) | preds:
        raise ReconstructionError("cell face loop is not a single cycle")
    return chains


def _check_recovered(points: np.ndarray, n_known: int, tol: float) -> None:
    tree = cKDTree(points)
    for k in range(n_known, len(points)):
        close = tree.query_ball_point(points[k], tol)
        if len(close) > 1:
            raise ReconstructionError(f"recovered corner node {points[k].tolist()} duplicates another node")


def reconstruction_error(reference: Mesh2D, rebuilt: Mesh2D) -> float:
    """Max abs coordinate error after undoing the anchor translation (cell 0 centroid)."""
    if rebuilt.n_points != reference.n_points:
        return float("inf")
    shifted = rebuilt.points + reference.cell_centroids[0] - rebuilt.cell_centroids[0]
    dist, _ = cKDTree(shifted).query(reference.points)
    back, _ = cKDTree(reference.points).query(shifted)
    return float(max(dist.max(), back.max())) if len(dist) else 0.0


def fvf_to_csv(fvf: FvfAttributes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(NODE_HEADER)
    for k, p in enumerate(fvf.p):
        w.writerow([k, repr(float(p))])
    w.writerow(EDGE_HEADER)
    for (i, j), q in zip(fvf.edges, fvf.q):
        w.writerow([int(i), int(j)] + [repr(float(v)) for v in q])
    return buf.getvalue()


def fvf_from_csv(text: str) -> FvfAttributes:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != NODE_HEADER:
        raise ValueError(f"FVF CSV must start with header {','.join(NODE_HEADER)}")
    try:
        split = rows.index(EDGE_HEADER)
    except ValueError:
        raise ValueError(f"FVF CSV lacks edge header {','.join(EDGE_HEADER)}") from None
    node_rows, edge_rows = rows[1:split], rows[split + 1:]
    try:
        ids = [int(r[0]) for r in node_rows]
        p = np.array([float(r[1]) for r in node_rows])
        edges = np.array([[int(r[0]), int(r[1])] for r in edge_rows], dtype=np.int64).reshape(-1, 2)
        q = np.array([[float(v) for v in r[2:8]] for r in edge_rows]).reshape(-1, 6)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed FVF CSV: {exc}") from None
    if ids != list(range(len(ids))):
        raise ValueError("FVF node ids must be 0..N-1 in order")
    return FvfAttributes(p=p, q=q, edges=edges)

