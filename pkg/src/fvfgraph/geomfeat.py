"""Global geometry features per graph node: SDF, shortest vector (SV) and directional integrated distance (DID)."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .graphgen import Graph
from .mesh import GEOMETRY, Mesh2D

TWO_PI = 2.0 * math.pi
WEIGHTS = ("uniform", "gaussian")

# (C, B, F) visibility blocks are capped at roughly this many elements
_BLOCK = 1 << 21
# targets closer than this fraction of the segment length to the end count as "touching"
_T_END = 1e-9
_T_START = 1e-9
_U_EPS = 1e-12


@dataclass(frozen=True)
class DIDConfig:
    segments: tuple[tuple[float, float], ...]
    weights: str = "uniform"
    inf_value: float = 4.0

    def __post_init__(self):
        segs = tuple((float(a), float(b)) for a, b in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("DID needs at least one segment")
        for a, b in segs:
            if not 0 < b - a <= TWO_PI:
                raise ValueError(f"segment ({a}, {b}) must span (0, 2*pi]")
        if self.weights not in WEIGHTS:
            raise ValueError(f"unknown weight function {self.weights!r}; expected one of {WEIGHTS}")
        if not self.inf_value > 0:
            raise ValueError("inf_value must be positive")

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def shifted(self, alpha: float) -> "DIDConfig":
        return DIDConfig(tuple((a + alpha, b + alpha) for a, b in self.segments), self.weights, self.inf_value)


def default_did_config(inf_value: float = 4.0) -> DIDConfig:
    """Eight quarter-circle arcs centred every pi/4, uniform weights, large value 4."""
    q = math.pi / 4
    return DIDConfig(tuple(((k - 1) * q, (k + 1) * q) for k in range(8)), "uniform", inf_value)


def load_did_config(path, inf_value: float | None = None) -> DIDConfig:
    """Segments from JSON: either ``[[lo, hi], ...]`` or ``{"segments": ..., "weights": ..., "inf_value": ...}``."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):
        data = {"segments": data}
    cfg = DIDConfig(tuple(tuple(s) for s in data["segments"]), data.get("weights", "uniform"),
                    float(data.get("inf_value", 4.0)))
    if inf_value is not None:
        cfg = DIDConfig(cfg.segments, cfg.weights, inf_value)
    return cfg


def _weight(kind: str, theta, lo: float, hi: float):
    if kind == "uniform":
        return np.ones_like(theta, dtype=float)
    mid, sigma = 0.5 * (lo + hi), (hi - lo) / 4.0
    return np.exp(-0.5 * ((theta - mid) / sigma) ** 2)


def _weight_integral(kind: str, a, b, lo: float, hi: float):
    if kind == "uniform":
        return b - a
    mid, sigma = 0.5 * (lo + hi), (hi - lo) / 4.0
    s = sigma * math.sqrt(2.0)
    return sigma * math.sqrt(math.pi / 2.0) * (erf((b - mid) / s) - erf((a - mid) / s))


def _check_boundary(boundary: np.ndarray) -> np.ndarray:
    boundary = np.asarray(boundary, dtype=float).reshape(-1, 2)
    if len(boundary) == 0:
        raise ValueError("empty boundary set")
    return boundary


def _nearest(positions: np.ndarray, boundary: np.ndarray) -> np.ndarray:
    """Index of the closest boundary node per position; ties go to the lowest index."""
    out = np.empty(len(positions), dtype=np.int64)
    step = max(1, _BLOCK // max(1, len(boundary)))
    for s in range(0, len(positions), step):
        d = positions[s:s + step, None, :] - boundary[None]
        out[s:s + step] = np.argmin(np.einsum("ijk,ijk->ij", d, d), axis=1)
    return out


def sv(positions, boundary) -> np.ndarray:
    """Shortest vector ``x_i - x_b`` to the nearest boundary node."""
    boundary = _check_boundary(boundary)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    return positions - boundary[_nearest(positions, boundary)]


def sdf(positions, boundary) -> np.ndarray:
    """Distance to the nearest boundary node (nodes are never inside the object, so no sign)."""
    v = sv(positions, boundary)
    return np.hypot(v[:, 0], v[:, 1])


def _obstructed(nodes: np.ndarray, targets: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """(C, B) mask: open segment node -> target crosses a face away from the target end."""
    p = faces[:, 0]
    e = faces[:, 1] - p
    d = targets[None, :, :] - nodes[:, None, :]  # (C, B, 2)
    w = p[None, :, :] - nodes[:, None, :]  # (C, F, 2)
    denom = d[:, :, None, 0] * e[None, None, :, 1] - d[:, :, None, 1] * e[None, None, :, 0]
    tnum = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0])[:, None, :]
    unum = w[:, None, :, 0] * d[:, :, None, 1] - w[:, None, :, 1] * d[:, :, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = tnum / denom
        u = unum / denom
    hit = (denom != 0) & (t > _T_START) & (t < 1.0 - _T_END) & (u >= -_U_EPS) & (u <= 1.0 + _U_EPS)
    return hit.any(axis=2)


def _inside_solid(points: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Even-odd test against the geometry face loops."""
    p, q = faces[:, 0], faces[:, 1]
    y = points[:, None, 1]
    straddle = (p[None, :, 1] > y) != (q[None, :, 1] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = p[None, :, 0] + (y - p[None, :, 1]) * (q[None, :, 0] - p[None, :, 0]) / (q[None, :, 1] - p[None, :, 1])
    return (np.count_nonzero(straddle & (xcross > points[:, None, 0]), axis=1) % 2) == 1


def _distance_to_faces(x: np.ndarray, faces: np.ndarray) -> float:
    p, q = faces[:, 0], faces[:, 1]
    e = q - p
    ee = np.einsum("ij,ij->i", e, e)
    t = np.clip(np.einsum("ij,ij->i", x - p, e) / np.where(ee > 0, ee, 1.0), 0.0, 1.0)
    closest = p + t[:, None] * e
    return float(np.min(np.hypot(*(closest - x).T)))


def _on_boundary(nodes: np.ndarray, faces: np.ndarray) -> np.ndarray:
    scale = float(np.ptp(faces.reshape(-1, 2), axis=0).max()) or 1.0
    return np.array([_distance_to_faces(x, faces) <= 1e-12 * scale for x in nodes], dtype=bool)


def _visible(nodes: np.ndarray, targets: np.ndarray, faces: np.ndarray, on_boundary: np.ndarray) -> np.ndarray:
    vis = ~_obstructed(nodes, targets, faces)
    for c in np.flatnonzero(on_boundary):
        # a chord between two surface points may pass through the solid without crossing a face
        mids = 0.5 * (nodes[c] + targets)
        vis[c] &= ~_inside_solid(mids, faces)
    return vis


def unobstructed(x_i, x_k, boundary_faces) -> bool:
    """Line of sight from ``x_i`` to the boundary point ``x_k`` past the geometry faces.

    Touching at ``x_k`` itself (its own face, or the faces meeting at a corner)
    is not an obstruction.  When ``x_i`` is itself on the boundary, a chord
    through the solid interior is also treated as blocked.
    """
    faces = np.asarray(boundary_faces, dtype=float).reshape(-1, 2, 2)
    if len(faces) == 0:
        return True
    node = np.asarray(x_i, dtype=float).reshape(1, 2)
    return bool(_visible(node, np.asarray(x_k, dtype=float).reshape(1, 2), faces, _on_boundary(node, faces))[0, 0])


def _did_block(nodes, boundary, faces, config: DIDConfig, on_boundary) -> np.ndarray:
    inf = config.inf_value
    v = boundary[None, :, :] - nodes[:, None, :]
    dist = np.hypot(v[..., 0], v[..., 1])
    ok = dist > 0
    if len(faces):
        ok &= _visible(nodes, boundary, faces, on_boundary)
    theta = np.mod(np.arctan2(v[..., 1], v[..., 0]), TWO_PI)
    clamped = np.minimum(dist, inf)
    out = np.empty((len(nodes), config.n_segments))
    for j, (lo, hi) in enumerate(config.segments):
        th = lo + np.mod(theta - lo, TWO_PI)
        inside = ok & (th > lo) & (th < hi)
        w = np.where(inside, _weight(config.weights, th, lo, hi), 0.0)
        wsum = w.sum(axis=1)
        any_in = inside.any(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = (w * clamped).sum(axis=1) / wsum
        tmin = np.where(inside, th, np.inf).min(axis=1)
        tmax = np.where(inside, th, -np.inf).max(axis=1)
        tmin, tmax = np.where(any_in, tmin, lo), np.where(any_in, tmax, lo)
        frac = _weight_integral(config.weights, tmin, tmax, lo, hi) / _weight_integral(config.weights, lo, hi, lo, hi)
        out[:, j] = np.where(any_in, frac * mean + (1.0 - frac) * inf, inf)
    return out


def did(node, boundary_nodes, boundary_faces, config: DIDConfig) -> np.ndarray:
    """DID of one node: per segment, blend of the mean visible boundary distance and ``inf_value``."""
    node = np.asarray(node, dtype=float).reshape(1, 2)
    faces = np.asarray(boundary_faces, dtype=float).reshape(-1, 2, 2)
    boundary = np.asarray(boundary_nodes, dtype=float).reshape(-1, 2)
    onb = _on_boundary(node, faces) if len(faces) else np.zeros(1, bool)
    return _did_block(node, boundary, faces, config, onb)[0]


def compute_did(positions, boundary_nodes, boundary_faces, config: DIDConfig, threads: int = 1) -> np.ndarray:
    """DID for every position; chunking is fixed so results do not depend on ``threads``."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    boundary = np.asarray(boundary_nodes, dtype=float).reshape(-1, 2)
    faces = np.asarray(boundary_faces, dtype=float).reshape(-1, 2, 2)
    onb = _on_boundary(positions, faces) if len(faces) else np.zeros(len(positions), bool)
    step = max(1, _BLOCK // max(1, len(boundary) * max(1, len(faces))))
    starts = range(0, len(positions), step)

    def block(s):
        return _did_block(positions[s:s + step], boundary, faces, config, onb[s:s + step])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    return np.concatenate(parts) if parts else np.empty((0, config.n_segments))


def did_oracle(node, boundary_faces, config: DIDConfig, ray_count: int) -> np.ndarray:
    """Reference DID by casting ``ray_count`` equiangular rays per segment.

    Each ray takes the exact distance to the first face it hits (clamped to
    ``inf_value``) or ``inf_value`` on a miss; the segment value is the
    weight-averaged ray distance.
    """
    if ray_count < 1000:
        raise ValueError("ray_count must be at least 1000")
    x = np.asarray(node, dtype=float).reshape(2)
    faces = np.asarray(boundary_faces, dtype=float).reshape(-1, 2, 2)
    J = config.n_segments
    frac = (np.arange(ray_count) + 0.5) / ray_count
    ang = np.concatenate([lo + (hi - lo) * frac for lo, hi in config.segments])
    hits = np.full(len(ang), np.inf)

    if len(faces):
        wrapped = np.mod(ang, TWO_PI)
        order = np.argsort(wrapped, kind="stable")
        sorted_ang = wrapped[order]
        rel = faces - x
        cross = rel[:, 0, 0] * rel[:, 1, 1] - rel[:, 0, 1] * rel[:, 1, 0]
        keep = cross != 0
        rel = rel[keep]
        # order endpoints so the face sweeps counterclockwise from start to end
        ccw = (cross[keep] > 0)[:, None, None]
        start_end = np.where(ccw, rel, rel[:, ::-1])
        a0 = np.mod(np.arctan2(start_end[:, 0, 1], start_end[:, 0, 0]), TWO_PI)
        a1 = np.mod(np.arctan2(start_end[:, 1, 1], start_end[:, 1, 0]), TWO_PI)
        sweep = np.mod(a1 - a0, TWO_PI)
        lo_list, hi_list, face_list = [], [], []
        for shift in (0.0, -TWO_PI):
            s0, s1 = a0 + shift, a0 + sweep + shift
            lo_list.append(np.searchsorted(sorted_ang, s0, side="left"))
            hi_list.append(np.searchsorted(sorted_ang, s1, side="right"))
            face_list.append(np.arange(len(rel)))
        lo_i = np.concatenate(lo_list)
        hi_i = np.concatenate(hi_list)
        fid = np.concatenate(face_list)
        counts = np.maximum(hi_i - lo_i, 0)
        total = int(counts.sum())
        if total:
            pair_face = np.repeat(fid, counts)
            offsets = np.repeat(np.cumsum(counts) - counts, counts)
            pos = np.repeat(lo_i, counts) + (np.arange(total) - offsets)
            ray = order[pos]
            r = np.stack([np.cos(ang[ray]), np.sin(ang[ray])], axis=1)
            p = rel[pair_face, 0]
            e = rel[pair_face, 1] - p
            den = r[:, 0] * e[:, 1] - r[:, 1] * e[:, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (p[:, 0] * e[:, 1] - p[:, 1] * e[:, 0]) / den
                u = (p[:, 0] * r[:, 1] - p[:, 1] * r[:, 0]) / den
            good = (den != 0) & (t > 0) & (u >= 0) & (u <= 1)
            np.minimum.at(hits, ray[good], t[good])

    g = np.minimum(hits, config.inf_value).reshape(J, ray_count)
    out = np.empty(J)
    for j, (lo, hi) in enumerate(config.segments):
        w = _weight(config.weights, lo + (hi - lo) * frac, lo, hi)
        out[j] = np.sum(w * g[j]) / np.sum(w)
    return out


@dataclass(frozen=True, eq=False)
class GeomFeatures:
    sdf: np.ndarray
    sv: np.ndarray
    did: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.sdf, self.sv, self.did])

    def columns(self) -> list[str]:
        return ["sdf", "sv_x", "sv_y"] + [f"did_{j}" for j in range(self.did.shape[1])]


def geometry_boundary(mesh: Mesh2D) -> tuple[np.ndarray, np.ndarray]:
    """Candidate boundary nodes (geometry face centroids, then geometry mesh points, deduplicated) and face segments."""
    geo = mesh.faces_of_kind(GEOMETRY)
    if len(geo) == 0:
        raise ValueError("mesh has no geometry boundary faces")
    cents = mesh.face_centroids[geo]
    pts = mesh.points[np.unique(mesh.faces[geo].ravel())]
    cand = np.concatenate([cents, pts])
    _, first = np.unique(cand, axis=0, return_index=True)
    nodes = cand[np.sort(first)]
    segs = mesh.points[mesh.faces[geo]]
    return nodes, segs


def geometric_features(mesh: Mesh2D, graph: Graph, config: DIDConfig | None = None, threads: int = 1) -> GeomFeatures:
    config = config or default_did_config()
    boundary, segs = geometry_boundary(mesh)
    v = sv(graph.positions, boundary)
    return GeomFeatures(
        sdf=np.hypot(v[:, 0], v[:, 1]),
        sv=v,
        did=compute_did(graph.positions, boundary, segs, config, threads=threads),
    )


def features_to_csv(features: GeomFeatures) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_id"] + features.columns())
    for k, row in enumerate(features.matrix()):
        w.writerow([k] + [repr(float(v)) for v in row])
    return buf.getvalue()
