"""Test and experiment meshes: random Delaunay domains with a convex hole, annuli around a cylinder."""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .mesh import UNCLASSIFIED, Mesh2D, build_mesh, polygon_area


def _tag_remaining(points, cells, geometry) -> Mesh2D:
    probe = Mesh2D(points, cells, geometry)
    farfield = [tuple(probe.faces[f]) for f, k in enumerate(probe.face_kinds) if k == UNCLASSIFIED]
    return build_mesh(points, cells, geometry, farfield)


def random_delaunay_with_hole(rng: np.random.Generator, n_points: int, hole_sides: int | None = None) -> Mesh2D:
    """Delaunay triangulation of ``n_points`` random points in the unit square around a convex polygonal hole.

    Points are kept out of every hole edge's diametral disk, which makes each
    hole edge a Delaunay edge, so the triangles inside the hole can be dropped
    cleanly and the hole rim becomes the geometry boundary.
    """
    for _ in range(100):
        k = int(hole_sides or rng.integers(5, 13))
        center = rng.uniform(0.4, 0.6, size=2)
        radius = rng.uniform(0.1, 0.2)
        phase = rng.uniform(0, 2 * np.pi)
        ang = phase + 2 * np.pi * np.arange(k) / k + rng.uniform(-0.2, 0.2, size=k) * np.pi / k
        hole = center + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        mids = 0.5 * (hole + np.roll(hole, -1, axis=0))
        rads = 0.5 * np.linalg.norm(np.roll(hole, -1, axis=0) - hole, axis=1)

        n_free = max(n_points - k, 3)
        free = np.empty((0, 2))
        while len(free) < n_free:
            cand = rng.uniform(0, 1, size=(2 * n_free, 2))
            d = np.linalg.norm(cand[:, None, :] - mids[None], axis=2)
            keep = np.all(d > rads * 1.05 + 1e-3, axis=1) & (np.linalg.norm(cand - center, axis=1) > radius * 1.05)
            free = np.concatenate([free, cand[keep]])[:n_free]
        pts = np.concatenate([hole, free])
        tri = Delaunay(pts).simplices
        cells = []
        for t in tri:
            if np.all(t < k):
                continue  # inside the convex hole
            p = pts[t]
            area = polygon_area(p)
            if area < 0:
                t = t[::-1]
                area = -area
            if area < 1e-10:
                break
            cells.append(tuple(int(v) for v in t))
        else:
            geometry = [(i, (i + 1) % k) for i in range(k)]
            try:
                return _tag_remaining(pts, cells, geometry)
            except ValueError:
                pass
    raise RuntimeError("could not generate a valid random mesh")


def annulus_mesh(radius: float, outer: float, n_r: int, n_theta: int, grading: float = 1.0) -> Mesh2D:
    """Quad mesh between a circle of ``radius`` (geometry) and ``outer`` (farfield).

    Radial spacing grows geometrically by ``grading`` per layer.
    """
    if n_r < 1 or n_theta < 3 or not 0 < radius < outer:
        raise ValueError("invalid annulus resolution or radii")
    w = grading ** np.arange(n_r)
    r = radius + (outer - radius) * np.concatenate([[0.0], np.cumsum(w)]) / w.sum()
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    points = np.array([(ri * np.cos(t), ri * np.sin(t)) for ri in r for t in th])
    points[:n_theta] = radius * np.stack([np.cos(th), np.sin(th)], axis=1)
    pid = lambda i, j: i * n_theta + (j % n_theta)  # noqa: E731
    cells = [(pid(i, j), pid(i + 1, j), pid(i + 1, j + 1), pid(i, j + 1)) for i in range(n_r) for j in range(n_theta)]
    # rings are CCW in theta, so (inner j -> outer j -> outer j+1 -> inner j+1) is CCW
    geometry = [(pid(0, j + 1), pid(0, j)) for j in range(n_theta)]
    farfield = [(pid(n_r, j), pid(n_r, j + 1)) for j in range(n_theta)]
    return build_mesh(points, cells, geometry, farfield)


def polyline_arc(center, radius: float, theta0: float, theta1: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Points and (a, b) segments of an arc sampled with ``n`` segments."""
    t = np.linspace(theta0, theta1, n + 1)
    pts = np.asarray(center, dtype=float) + radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    return pts, np.stack([pts[:-1], pts[1:]], axis=1)
