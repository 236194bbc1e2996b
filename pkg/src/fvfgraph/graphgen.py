"""Mesh -> graph: mesh-node-based and cell-centroid-based constructions."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mesh import GEOMETRY, Mesh2D

CELL = "cell-centroid"
BOUNDARY = "boundary-face-centroid"
MESH_NODE = "mesh-node"
MODES = ("mesh-node", "cell-centroid")


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed graph with node positions; ``edge_faces[e]`` is the mesh face behind edge ``e``."""

    positions: np.ndarray
    kinds: tuple[str, ...]
    origins: np.ndarray
    edges: np.ndarray
    edge_faces: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def cell_nodes(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == CELL], dtype=np.int64)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == BOUNDARY], dtype=np.int64)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.n_nodes) if self.n_edges else np.zeros(self.n_nodes, int)

    def neighbors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            out[i].append(int(j))
        return out


def _pairs_to_edges(pairs: list[tuple[int, int, int]]) -> tuple[np.ndarray, np.ndarray]:
    edges = []
    faces = []
    for i, j, f in pairs:
        edges += [(i, j), (j, i)]
        faces += [f, f]
    return np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(faces, dtype=np.int64)


def mesh_node_graph(mesh: Mesh2D) -> Graph:
    """One node per mesh point, one bidirectional edge pair per mesh face."""
    edges, faces = _pairs_to_edges([(int(a), int(b), f) for f, (a, b) in enumerate(mesh.faces)])
    return Graph(
        positions=mesh.points.copy(),
        kinds=(MESH_NODE,) * mesh.n_points,
        origins=np.arange(mesh.n_points),
        edges=edges,
        edge_faces=faces,
    )


def cell_centroid_graph(mesh: Mesh2D) -> Graph:
    """Cell centroids plus geometry boundary-face centroids as nodes.

    Internal faces link owner and neighbor cells; geometry faces link the owner
    cell with the face-centroid node.  Farfield faces contribute nothing.
    """
    geo = mesh.faces_of_kind(GEOMETRY)
    bnode = {int(f): mesh.n_cells + k for k, f in enumerate(geo)}
    pairs = []
    for f in range(mesh.n_faces):
        o, n = int(mesh.owner[f]), int(mesh.neighbor[f])
        if n >= 0:
            pairs.append((o, n, f))
        elif f in bnode:
            pairs.append((o, bnode[f], f))
    edges, faces = _pairs_to_edges(pairs)
    positions = np.concatenate([mesh.cell_centroids, mesh.face_centroids[geo]]).reshape(-1, 2)
    return Graph(
        positions=positions,
        kinds=(CELL,) * mesh.n_cells + (BOUNDARY,) * len(geo),
        origins=np.concatenate([np.arange(mesh.n_cells), geo]).astype(np.int64),
        edges=edges,
        edge_faces=faces,
    )


def build_graph(mesh: Mesh2D, mode: str) -> Graph:
    if mode == "mesh-node":
        return mesh_node_graph(mesh)
    if mode == "cell-centroid":
        return cell_centroid_graph(mesh)
    raise ValueError(f"unknown graph mode {mode!r}; expected one of {MODES}")


def graph_to_dict(graph: Graph) -> dict:
    return {
        "nodes": [
            {"pos": p.tolist(), "kind": k, "origin": int(o)}
            for p, k, o in zip(graph.positions, graph.kinds, graph.origins)
        ],
        "edges": [[int(i), int(j), int(f)] for (i, j), f in zip(graph.edges, graph.edge_faces)],
    }


def graph_to_json(graph: Graph) -> str:
    return json.dumps(graph_to_dict(graph))


def graph_from_dict(data: dict) -> Graph:
    try:
        nodes = data["nodes"]
        edges = data["edges"]
        positions = np.array([n["pos"] for n in nodes], dtype=float).reshape(-1, 2)
        kinds = tuple(str(n["kind"]) for n in nodes)
        origins = np.array([n["origin"] for n in nodes], dtype=np.int64)
        e = np.array(edges, dtype=np.int64).reshape(-1, 3)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed graph JSON: {exc}") from None
    bad = set(kinds) - {CELL, BOUNDARY, MESH_NODE}
    if bad:
        raise ValueError(f"unknown node kinds {sorted(bad)}")
    if len(e) and (e[:, :2].min() < 0 or e[:, :2].max() >= len(nodes)):
        raise ValueError("edge references a missing node")
    return Graph(positions, kinds, origins, e[:, :2].copy(), e[:, 2].copy())


def graph_from_json(text: str) -> Graph:
    return graph_from_dict(json.loads(text))
