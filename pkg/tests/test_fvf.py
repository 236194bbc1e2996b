import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fvfgraph.fvf import (
    FvfAttributes,
    ReconstructionError,
    face_endpoints_from_fvf,
    fvf_attributes,
    fvf_from_csv,
    fvf_to_csv,
    interpolate_face_flux,
    is_complete_cell,
    missing_node_from_centroid,
    reconstruct_mesh,
    reconstruction_error,
)
from fvfgraph.graphgen import cell_centroid_graph, mesh_node_graph
from fvfgraph.mesh import face_geometry_from_endpoints, validate_mesh

from conftest import two_unit_squares

coord = st.floats(-10, 10, allow_nan=False)


def test_two_squares_attributes():
    mesh = two_unit_squares()
    g = cell_centroid_graph(mesh)
    a = fvf_attributes(mesh, g)
    assert np.array_equal(a.p, [1.0, 1.0])
    e = [k for k, (i, j) in enumerate(a.edges) if (i, j) == (0, 1)][0]
    assert np.allclose(a.normals[e], [1, 0])
    assert np.allclose(a.offset_i[e], [0.5, 0])
    assert np.allclose(a.offset_j[e], [-0.5, 0])


def test_boundary_nodes_have_zero_volume(hole3):
    a = fvf_attributes(hole3, cell_centroid_graph(hole3))
    assert np.all(a.p[:8] > 0) and np.all(a.p[8:] == 0)


def test_mismatched_graph_rejected(hole3, square2):
    with pytest.raises(ValueError):
        fvf_attributes(hole3, cell_centroid_graph(square2))
    with pytest.raises(ValueError):
        fvf_attributes(hole3, mesh_node_graph(hole3))


def test_edge_pair_relations(random_meshes):
    for mesh in random_meshes:
        g = cell_centroid_graph(mesh)
        a = fvf_attributes(mesh, g)
        fwd, bwd = a.q[0::2], a.q[1::2]
        assert np.array_equal(fwd[:, :2], -bwd[:, :2])
        assert np.array_equal(fwd[:, 2:4], bwd[:, 4:6])
        assert np.array_equal(fwd[:, 4:6], bwd[:, 2:4])
        rel = g.positions[a.edges[:, 1]] - g.positions[a.edges[:, 0]]
        assert np.allclose(a.offset_i - a.offset_j, rel, atol=1e-12)


def test_interpolation_examples():
    assert interpolate_face_flux(1.0, 3.0, (0, 0), (2, 0), (1, 0)) == 2.0
    assert interpolate_face_flux(1.0, 3.0, (0, 0), (2, 0), (0, 0)) == 3.0
    # off-segment face centroid: both weights are distances, evaluated as written
    k, xi, xj, c = 2.0, np.array([0.0, 0.0]), np.array([2.0, 0.0]), np.array([1.0, 1.0])
    expect = k * (np.sqrt(2) + np.sqrt(2)) / 2
    assert interpolate_face_flux(k, k, xi, xj, c) == pytest.approx(expect, rel=1e-15)
    with pytest.raises(ValueError):
        interpolate_face_flux(1.0, 2.0, (1, 1), (1, 1), (0, 0))


def test_interpolation_vector_samples():
    out = interpolate_face_flux(np.array([1.0, 0.0]), np.array([0.0, 1.0]), (0, 0), (4, 0), (1, 0))
    assert np.allclose(out, [0.25, 0.75])


def test_interpolation_differs_from_linear_off_midpoint():
    # the distance to x_i weights phi_i, so phi_i dominates when c is near x_j
    out = interpolate_face_flux(1.0, 0.0, (0, 0), (1, 0), (0.9, 0))
    assert out == pytest.approx(0.9)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_interpolation_linear_and_symmetric(a1, a2, b1, b2):
    xi, xj = np.array([0.0, 0.0]), np.array([2.0, 1.0])
    c = 0.5 * (xi + xj)
    lhs = interpolate_face_flux(a1 + b1, a2 + b2, xi, xj, c)
    rhs = interpolate_face_flux(a1, a2, xi, xj, c) + interpolate_face_flux(b1, b2, xi, xj, c)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert interpolate_face_flux(a1, a2, xi, xj, c) == pytest.approx(interpolate_face_flux(a2, a1, xj, xi, c))


def test_endpoints_examples():
    a, b = face_endpoints_from_fvf((0.5, 0), (0, 1))
    assert np.allclose(a, [0, 0]) and np.allclose(b, [1, 0])
    a, b = face_endpoints_from_fvf((0, 0), (2, 0))
    assert np.allclose(a, [0, 1]) and np.allclose(b, [0, -1])
    with pytest.raises(ValueError):
        face_endpoints_from_fvf((0, 0), (0, 0))


@given(st.tuples(coord, coord), st.tuples(coord, coord))
def test_endpoints_round_trip(a, b):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(a - b) < 1e-6:
        return
    g = face_geometry_from_endpoints(a, b)
    ra, rb = face_endpoints_from_fvf(g.centroid, g.area_normal)
    assert np.allclose(ra, a, atol=1e-12) and np.allclose(rb, b, atol=1e-12)


def test_missing_node_examples():
    assert np.allclose(missing_node_from_centroid((0.5, 0.5), [(0, 0), (1, 0), (1, 1)]), [0, 1])
    assert np.allclose(missing_node_from_centroid((1 / 3, 1 / 3), [(0, 0), (1, 0)]), [0, 1])


@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=8))
def test_missing_node_identity(pts):
    pts = np.array(pts)
    x = pts.mean(axis=0)
    assert np.allclose(missing_node_from_centroid(x, pts[:-1]), pts[-1], atol=1e-9)


def test_complete_cell_examples():
    tri = np.array([(0, 0), (1, 0), (0, 1)], float)
    assert is_complete_cell(tri.mean(axis=0), tri)
    sq = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], float)
    assert not is_complete_cell(sq.mean(axis=0), sq[:3])
    assert not is_complete_cell(tri.mean(axis=0) + 1e-6, tri)


def check_round_trip(mesh, tol=1e-8):
    g = cell_centroid_graph(mesh)
    a = fvf_attributes(mesh, g)
    rebuilt = reconstruct_mesh(g, a)
    assert validate_mesh(rebuilt) == []
    assert reconstruction_error(mesh, rebuilt) < tol
    again = fvf_attributes(rebuilt, cell_centroid_graph(rebuilt))
    assert np.allclose(again.p, a.p, atol=1e-9)
    return rebuilt


def test_round_trip_two_triangles(square2):
    check_round_trip(square2, 1e-9)


def test_round_trip_grid_with_hole_recovers_corners(hole3):
    rebuilt = check_round_trip(hole3, 1e-9)
    offset = rebuilt.cell_centroids[0] - hole3.cell_centroids[0]
    for corner in [(0, 0), (1, 0), (1, 1), (0, 1)]:
        assert np.min(np.linalg.norm(rebuilt.points - offset - corner, axis=1)) < 1e-9


def test_round_trip_random(random_meshes):
    for m in random_meshes:
        check_round_trip(m)


def test_round_trip_translated(hole3):
    check_round_trip(hole3.translated((100.0, -37.5)))


def test_disconnected_graph_rejected(hole3):
    g = cell_centroid_graph(hole3)
    a = fvf_attributes(hole3, g)
    keep = np.ones(g.n_edges, bool)
    cut = np.isin(g.edges, [0]).any(axis=1)
    keep[cut] = False
    from dataclasses import replace
    g2 = replace(g, edges=g.edges[keep], edge_faces=g.edge_faces[keep])
    a2 = FvfAttributes(a.p, a.q[keep], a.edges[keep])
    with pytest.raises(ReconstructionError, match="disconnected"):
        reconstruct_mesh(g2, a2)


def test_csv_round_trip(hole3):
    a = fvf_attributes(hole3, cell_centroid_graph(hole3))
    b = fvf_from_csv(fvf_to_csv(a))
    assert np.array_equal(a.p, b.p) and np.array_equal(a.q, b.q) and np.array_equal(a.edges, b.edges)
    assert fvf_to_csv(b) == fvf_to_csv(a)
    with pytest.raises(ValueError):
        fvf_from_csv("bogus\n")
