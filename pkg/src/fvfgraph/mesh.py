"""2D finite-volume mesh: data model, JSON parsing, validation and cell/face geometry.

Cells are stored as counterclockwise point-index cycles. Faces are derived from
the cells; each face keeps its endpoints ordered ``(a, b)`` so that the owner
cell lies to the *right* of ``a -> b``.  With that ordering the area normal
``S = rot90_ccw(b - a)`` points out of the owner and ``b - a = (S_y, -S_x)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

INTERNAL = "internal"
GEOMETRY = "geometry"
FARFIELD = "farfield"
UNCLASSIFIED = "unclassified"

MAX_FARFIELD_FACES_PER_CELL = 2


class MeshError(ValueError):
    """Raised when mesh input is malformed or violates a mesh invariant."""

    def __init__(self, issues):
        if isinstance(issues, str):
            issues = [Issue("syntax error", issues)]
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


@dataclass(frozen=True)
class Issue:
    kind: str
    message: str
    cell: int | None = None
    face: int | None = None

    def __str__(self) -> str:
        return f"{self.kind}: {self.message}"


@dataclass(frozen=True)
class FaceGeometry:
    centroid: np.ndarray
    area_normal: np.ndarray


def _signed_area(pts: np.ndarray) -> float:
    # relative to the first vertex so that translation does not cost precision
    rel = pts - pts[0]
    x, y = rel[:, 0], rel[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _grouped(cells, npts):
    """Yield (cell indices, (m, n) index array) per cell arity, skipping malformed cells."""
    groups: dict[int, list[int]] = {}
    for ci, c in enumerate(cells):
        if len(c) >= 3 and all(0 <= v < npts for v in c):
            groups.setdefault(len(c), []).append(ci)
    for n, idx in groups.items():
        yield np.array(idx), np.array([cells[i] for i in idx], dtype=np.int64).reshape(-1, n)


def _cell_areas(points: np.ndarray, cells) -> np.ndarray:
    out = np.full(len(cells), np.nan)
    for idx, arr in _grouped(cells, len(points)):
        p = points[arr]
        rel = p - p[:, :1]
        x, y = rel[..., 0], rel[..., 1]
        out[idx] = 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
    return out


def _cell_means(points: np.ndarray, cells) -> np.ndarray:
    out = np.full((len(cells), 2), np.nan)
    for idx, arr in _grouped(cells, len(points)):
        out[idx] = points[arr].mean(axis=1)
    return out


def face_geometry_from_endpoints(a, b) -> FaceGeometry:
    """Centroid and area normal of the face ``a -> b`` (normal = ``b - a`` turned 90 deg CCW)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    if not np.any(d):
        raise MeshError([Issue("degenerate face", f"zero-length face at {a.tolist()}")])
    return FaceGeometry(centroid=0.5 * (a + b), area_normal=np.array([-d[1], d[0]]))


@dataclass(frozen=True, eq=False)
class Mesh2D:
    points: np.ndarray
    cells: tuple[tuple[int, ...], ...]
    geometry: tuple[tuple[int, int], ...] = ()
    farfield: tuple[tuple[int, int], ...] = ()
    _topology_issues: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cells", tuple(tuple(int(v) for v in c) for c in self.cells))
        object.__setattr__(self, "geometry", tuple((int(a), int(b)) for a, b in self.geometry))
        object.__setattr__(self, "farfield", tuple((int(a), int(b)) for a, b in self.farfield))

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def _topology(self):
        issues = self._topology_issues
        npts = self.n_points
        face_index: dict[tuple[int, int], int] = {}
        ends: list[tuple[int, int]] = []
        owner: list[int] = []
        neighbor: list[int] = []
        cell_faces: list[list[int]] = []
        for ci, cyc in enumerate(self.cells):
            cf = []
            if len(cyc) < 3 or any(v < 0 or v >= npts for v in cyc):
                cell_faces.append(cf)
                continue
            for k, a in enumerate(cyc):
                b = cyc[(k + 1) % len(cyc)]
                if a == b:
                    continue
                key = (min(a, b), max(a, b))
                fi = face_index.get(key)
                if fi is None:
                    face_index[key] = len(ends)
                    cf.append(len(ends))
                    ends.append((b, a))  # owner on the right
                    owner.append(ci)
                    neighbor.append(-1)
                    continue
                cf.append(fi)
                if neighbor[fi] != -1:
                    issues.append(Issue("non-manifold face", f"face {key} shared by more than two cells",
                                        cell=ci, face=fi))
                elif ends[fi] != (a, b):
                    issues.append(Issue("inconsistent orientation",
                                        f"cells {owner[fi]} and {ci} traverse face {key} in the same direction",
                                        cell=ci, face=fi))
                elif owner[fi] == ci:
                    issues.append(Issue("open cell loop", f"cell {ci} uses face {key} twice", cell=ci, face=fi))
                else:
                    neighbor[fi] = ci
            cell_faces.append(cf)

        kinds = [INTERNAL if n >= 0 else UNCLASSIFIED for n in neighbor]
        for tag, pairs in ((GEOMETRY, self.geometry), (FARFIELD, self.farfield)):
            for a, b in pairs:
                fi = face_index.get((min(a, b), max(a, b)))
                if fi is None:
                    issues.append(Issue("unknown boundary face", f"{tag} face ({a}, {b}) is not a mesh face"))
                elif neighbor[fi] >= 0:
                    issues.append(Issue("tagged internal face", f"{tag} face ({a}, {b}) is internal", face=fi))
                elif kinds[fi] != UNCLASSIFIED:
                    issues.append(Issue("duplicate boundary tag", f"face ({a}, {b}) tagged more than once", face=fi))
                else:
                    kinds[fi] = tag
        return (np.array(ends, dtype=np.int64).reshape(-1, 2), np.array(owner, dtype=np.int64),
                np.array(neighbor, dtype=np.int64), tuple(kinds), tuple(tuple(c) for c in cell_faces))

    @property
    def faces(self) -> np.ndarray:
        """(F, 2) endpoint indices, owner on the right of ``a -> b``."""
        return self._topology[0]

    @property
    def owner(self) -> np.ndarray:
        return self._topology[1]

    @property
    def neighbor(self) -> np.ndarray:
        """Neighbor cell per face, ``-1`` on boundary faces."""
        return self._topology[2]

    @property
    def face_kinds(self) -> tuple[str, ...]:
        return self._topology[3]

    @property
    def cell_faces(self) -> tuple[tuple[int, ...], ...]:
        return self._topology[4]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def faces_of_kind(self, kind: str) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.face_kinds) if k == kind], dtype=np.int64)

    @cached_property
    def cell_centroids(self) -> np.ndarray:
        return _cell_means(self.points, self.cells)

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        return _cell_areas(self.points, self.cells)

    @cached_property
    def face_centroids(self) -> np.ndarray:
        f = self.faces
        return 0.5 * (self.points[f[:, 0]] + self.points[f[:, 1]])

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Area normal per face, outward from the owner, length = face length."""
        f = self.faces
        d = self.points[f[:, 1]] - self.points[f[:, 0]]
        return np.stack([-d[:, 1], d[:, 0]], axis=1)

    def translated(self, offset) -> "Mesh2D":
        return Mesh2D(self.points + np.asarray(offset, dtype=float), self.cells, self.geometry, self.farfield)


def _check_index(kind: str, i: int, n: int) -> None:
    if not 0 <= i < n:
        raise IndexError(f"{kind} index {i} out of range [0, {n})")


def cell_centroid(mesh: Mesh2D, cell: int) -> np.ndarray:
    """Vertex-average centroid of ``cell`` (not the area centroid)."""
    _check_index("cell", cell, mesh.n_cells)
    return mesh.points[list(mesh.cells[cell])].mean(axis=0)


def cell_volume(mesh: Mesh2D, cell: int) -> float:
    _check_index("cell", cell, mesh.n_cells)
    return _signed_area(mesh.points[list(mesh.cells[cell])])


def face_geometry(mesh: Mesh2D, face: int) -> FaceGeometry:
    _check_index("face", face, mesh.n_faces)
    a, b = mesh.faces[face]
    return face_geometry_from_endpoints(mesh.points[a], mesh.points[b])


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return d1 * d2 < 0 and d3 * d4 < 0


def crossing_edges(p: np.ndarray) -> list[tuple[int, int]]:
    """Pairs of non-adjacent polygon edges that properly cross."""
    n = len(p)
    out = []
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]):
                out.append((i, j))
    return out


def validate_mesh(mesh: Mesh2D) -> list[Issue]:
    """Every invariant violation found in ``mesh``; an empty list means the mesh is valid."""
    issues: list[Issue] = []
    pts = mesh.points
    npts = len(pts)
    if not np.all(np.isfinite(pts)):
        issues.append(Issue("non-finite point", "points contain NaN or Inf"))
    _, first, counts = np.unique(pts, axis=0, return_index=True, return_counts=True)
    for i in first[counts > 1]:
        dup = np.flatnonzero(np.all(pts == pts[i], axis=1))
        issues.append(Issue("duplicate point", f"points {dup.tolist()} coincide at {pts[i].tolist()}"))

    used = np.zeros(npts, dtype=bool)
    areas = mesh.cell_volumes
    for ci, cyc in enumerate(mesh.cells):
        if any(v < 0 or v >= npts for v in cyc):
            issues.append(Issue("bad point index", f"cell {ci} references a point outside [0, {npts})", cell=ci))
            continue
        used[list(cyc)] = True
        if len(set(cyc)) < 3:
            issues.append(Issue("open cell loop", f"cell {ci} has fewer than 3 distinct points", cell=ci))
            continue
        if len(set(cyc)) != len(cyc):
            issues.append(Issue("open cell loop", f"cell {ci} revisits a point: {list(cyc)}", cell=ci))
            continue
        area = areas[ci]
        if area < 0:
            issues.append(Issue("non-CCW cell", f"cell {ci} has signed area {area:g}", cell=ci))
        elif area == 0:
            issues.append(Issue("degenerate cell", f"cell {ci} has zero area", cell=ci))
        if len(cyc) > 3:
            for i, j in crossing_edges(pts[list(cyc)]):
                issues.append(Issue("self-intersecting cell", f"cell {ci} edges {i} and {j} cross", cell=ci))
    if npts and not used.all():
        issues.append(Issue("unused point", f"points {np.flatnonzero(~used).tolist()} belong to no cell"))

    mesh._topology  # derives faces, filling _topology_issues
    issues.extend(mesh._topology_issues)
    for fi, kind in enumerate(mesh.face_kinds):
        if kind == UNCLASSIFIED:
            a, b = mesh.faces[fi]
            issues.append(Issue("unclassified boundary face",
                                f"boundary face {fi} ({a}, {b}) is neither geometry nor farfield", face=fi))

    n_far = np.zeros(mesh.n_cells, dtype=int)
    for fi in mesh.faces_of_kind(FARFIELD):
        n_far[mesh.owner[fi]] += 1
    for ci in np.flatnonzero(n_far > MAX_FARFIELD_FACES_PER_CELL):
        issues.append(Issue("farfield precondition",
                            f"cell {ci} has {n_far[ci]} farfield faces; reconstruction needs at most "
                            f"{MAX_FARFIELD_FACES_PER_CELL} per cell", cell=int(ci)))
    return issues


def build_mesh(points, cells, geometry=(), farfield=()) -> Mesh2D:
    """Construct and validate; raises :class:`MeshError` listing every violation."""
    mesh = Mesh2D(points, cells, geometry, farfield)
    issues = validate_mesh(mesh)
    if issues:
        raise MeshError(issues)
    return mesh


def _pairs(obj, name) -> list[tuple[int, int]]:
    if not isinstance(obj, list) or any(not isinstance(p, list) or len(p) != 2 for p in obj):
        raise MeshError(f"boundary.{name} must be a list of [a, b] index pairs")
    return [(_as_index(a), _as_index(b)) for a, b in obj]


def _as_index(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise MeshError(f"expected an integer index, got {v!r}")
    return v


def parse_mesh(text: str) -> Mesh2D:
    """Parse mesh JSON (``points``, ``cells``, ``boundary.{geometry,farfield}``) and validate it."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshError(f"syntax error: {exc}") from None
    if not isinstance(data, dict) or "points" not in data or "cells" not in data:
        raise MeshError("syntax error: expected an object with 'points' and 'cells'")
    points = data["points"]
    if not isinstance(points, list) or any(
        not isinstance(p, list) or len(p) != 2 or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in p)
        for p in points
    ):
        raise MeshError("syntax error: 'points' must be a list of [x, y] numbers")
    cells = data["cells"]
    if not isinstance(cells, list) or any(not isinstance(c, list) for c in cells):
        raise MeshError("syntax error: 'cells' must be a list of index lists")
    cells = [[_as_index(v) for v in c] for c in cells]
    boundary = data.get("boundary", {})
    if not isinstance(boundary, dict) or set(boundary) - {GEOMETRY, FARFIELD}:
        raise MeshError("syntax error: 'boundary' may only contain 'geometry' and 'farfield'")
    geometry = _pairs(boundary.get(GEOMETRY, []), GEOMETRY)
    farfield = _pairs(boundary.get(FARFIELD, []), FARFIELD)
    return build_mesh(np.array(points, dtype=float).reshape(-1, 2), cells, geometry, farfield)


def load_mesh(path) -> Mesh2D:
    with open(path, encoding="utf-8") as fh:
        return parse_mesh(fh.read())


def mesh_to_dict(mesh: Mesh2D) -> dict:
    return {
        "points": mesh.points.tolist(),
        "cells": [list(c) for c in mesh.cells],
        "boundary": {GEOMETRY: [list(p) for p in mesh.geometry], FARFIELD: [list(p) for p in mesh.farfield]},
    }


def mesh_to_json(mesh: Mesh2D) -> str:
    return json.dumps(mesh_to_dict(mesh))


def boundary_pairs(mesh: Mesh2D, kind: str) -> list[tuple[int, int]]:
    return [tuple(int(v) for v in mesh.faces[f]) for f in mesh.faces_of_kind(kind)]


def structured_grid(nx: int, ny: int, x0=0.0, y0=0.0, x1=1.0, y1=1.0, holes: Iterable[tuple[int, int]] = ()) -> Mesh2D:
    """Quad grid of ``nx * ny`` cells; cells in ``holes`` are removed and their rims tagged geometry."""
    holes = set(holes)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    pid = lambda i, j: j * (nx + 1) + i  # noqa: E731
    points = [(x, y) for y in ys for x in xs]
    cells = []
    for j in range(ny):
        for i in range(nx):
            if (i, j) not in holes:
                cells.append((pid(i, j), pid(i + 1, j), pid(i + 1, j + 1), pid(i, j + 1)))
    geometry = []
    for i, j in sorted(holes):
        for a, b, (ni, nj) in (
            (pid(i, j), pid(i + 1, j), (i, j - 1)),
            (pid(i + 1, j), pid(i + 1, j + 1), (i + 1, j)),
            (pid(i + 1, j + 1), pid(i, j + 1), (i, j + 1)),
            (pid(i, j + 1), pid(i, j), (i - 1, j)),
        ):
            if 0 <= ni < nx and 0 <= nj < ny and (ni, nj) not in holes:
                geometry.append((a, b))
    mesh = Mesh2D(points, cells, geometry)
    farfield = [tuple(mesh.faces[f]) for f, k in enumerate(mesh.face_kinds) if k == UNCLASSIFIED]
    return build_mesh(points, cells, geometry, farfield)


def polygon_area(pts: Sequence) -> float:
    return _signed_area(np.asarray(pts, dtype=float))
