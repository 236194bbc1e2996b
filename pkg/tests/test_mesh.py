import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fvfgraph.mesh import (
    FARFIELD,
    GEOMETRY,
    INTERNAL,
    Mesh2D,
    MeshError,
    build_mesh,
    cell_centroid,
    cell_volume,
    face_geometry,
    face_geometry_from_endpoints,
    mesh_to_json,
    parse_mesh,
    polygon_area,
    validate_mesh,
)

from conftest import grid_with_hole, two_triangle_square


def kinds(issues):
    return {i.kind for i in issues}


def test_parse_two_triangle_square():
    text = json.dumps({
        "points": [[0, 0], [1, 0], [1, 1], [0, 1]],
        "cells": [[0, 1, 2], [0, 2, 3]],
        "boundary": {"farfield": [[0, 1], [1, 2], [2, 3], [3, 0]]},
    })
    m = parse_mesh(text)
    assert (m.n_points, m.n_cells) == (4, 2)
    assert list(m.face_kinds).count(INTERNAL) == 1
    assert list(m.face_kinds).count(FARFIELD) == 4


def test_parse_rejects_clockwise_cell():
    text = json.dumps({
        "points": [[0, 0], [1, 0], [1, 1], [0, 1]],
        "cells": [[0, 1, 2], [0, 3, 2]],
        "boundary": {"farfield": [[0, 1], [1, 2], [2, 3], [3, 0]]},
    })
    with pytest.raises(MeshError) as exc:
        parse_mesh(text)
    assert "non-CCW cell" in kinds(exc.value.issues)


@pytest.mark.parametrize("text", ["{", "[]", '{"points": [[0, "a"]], "cells": []}', '{"points": [], "cells": [[0.5]]}'])
def test_parse_syntax_errors(text):
    with pytest.raises(MeshError, match="syntax error|integer"):
        parse_mesh(text)


def test_parse_duplicate_point():
    text = json.dumps({
        "points": [[0, 0], [1, 0], [1, 1], [1, 1]],
        "cells": [[0, 1, 2], [0, 1, 3]],
        "boundary": {},
    })
    with pytest.raises(MeshError) as exc:
        parse_mesh(text)
    assert "duplicate point" in kinds(exc.value.issues)


def test_parse_unclassified_boundary_face():
    text = json.dumps({"points": [[0, 0], [1, 0], [0, 1]], "cells": [[0, 1, 2]],
                       "boundary": {"farfield": [[0, 1], [1, 2]]}})
    with pytest.raises(MeshError) as exc:
        parse_mesh(text)
    assert "unclassified boundary face" in kinds(exc.value.issues)


def test_json_round_trip(hole3):
    again = parse_mesh(mesh_to_json(hole3))
    assert np.array_equal(again.points, hole3.points)
    assert again.cells == hole3.cells
    assert np.array_equal(again.faces, hole3.faces)


def test_grid_with_hole_counts(hole3):
    k = list(hole3.face_kinds)
    assert hole3.n_cells == 8
    assert (k.count(INTERNAL), k.count(GEOMETRY), k.count(FARFIELD)) == (8, 4, 12)


def test_centroid_examples(square2):
    sq = Mesh2D([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2, 3)])
    assert np.allclose(cell_centroid(sq, 0), [0.5, 0.5])
    tri = Mesh2D([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])
    assert np.allclose(cell_centroid(tri, 0), [1 / 3, 1 / 3])
    assert cell_volume(sq, 0) == 1.0
    assert cell_volume(tri, 0) == 0.5
    with pytest.raises(IndexError):
        cell_centroid(square2, 2)


def test_centroid_is_vertex_average_not_area_centroid():
    pts = [(0, 0), (4, 0), (4, 1), (1, 1), (0, 1)]
    m = Mesh2D(pts, [(0, 1, 2, 3, 4)])
    assert np.allclose(cell_centroid(m, 0), np.mean(pts, axis=0))


def test_volume_sum_grid_with_hole(hole3):
    assert hole3.cell_volumes.sum() == pytest.approx(8 / 9, rel=1e-14)


def test_face_geometry_examples():
    g = face_geometry_from_endpoints((0, 0), (1, 0))
    assert np.allclose(g.centroid, [0.5, 0]) and np.allclose(g.area_normal, [0, 1])
    g = face_geometry_from_endpoints((0, 0), (0, 2))
    assert np.allclose(g.centroid, [0, 1]) and np.allclose(g.area_normal, [-2, 0])
    with pytest.raises(ValueError, match="degenerate face"):
        face_geometry_from_endpoints((1, 1), (1, 1))


def test_face_normals_point_out_of_owner(hole3):
    for f in range(hole3.n_faces):
        g = face_geometry(hole3, f)
        outward = g.centroid - hole3.cell_centroids[hole3.owner[f]]
        assert np.dot(g.area_normal, outward) > 0


def test_translation_equivariance(hole3):
    v = np.array([3.25, -1.5])
    t = hole3.translated(v)
    assert np.allclose(t.cell_centroids, hole3.cell_centroids + v, rtol=1e-12, atol=1e-12)
    assert np.allclose(t.face_normals, hole3.face_normals, rtol=1e-12, atol=1e-12)
    assert np.allclose(t.cell_volumes, hole3.cell_volumes, rtol=1e-12)


def test_validate_fixture_is_clean(hole3, square2):
    assert validate_mesh(hole3) == []
    assert validate_mesh(square2) == []


def test_validate_farfield_precondition():
    pts = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
    m = Mesh2D(pts, [(0, 1, 4, 3), (1, 2, 5, 4)], farfield=[(0, 1), (1, 2), (2, 5), (5, 4), (4, 3), (3, 0)])
    issues = [i for i in validate_mesh(m) if i.kind == "farfield precondition"]
    assert sorted(i.cell for i in issues) == [0, 1]


def test_validate_open_cell_loop():
    m = Mesh2D([(0, 0), (1, 0), (0, 1)], [(0, 1)])
    assert "open cell loop" in kinds(validate_mesh(m))
    m = Mesh2D([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2, 1, 3)])
    assert "open cell loop" in kinds(validate_mesh(m))


def test_validate_non_manifold_face():
    pts = [(0, 0), (1, 0), (0.5, 1), (0.5, -1), (0.5, 0.5)]
    m = Mesh2D(pts, [(0, 1, 2), (1, 0, 3), (0, 1, 4)])
    assert kinds(validate_mesh(m)) & {"non-manifold face", "inconsistent orientation"}


def random_polygon(data):
    n = data.draw(st.integers(3, 9))
    ang = np.sort(data.draw(st.lists(st.floats(0, 2 * np.pi, allow_nan=False), min_size=n, max_size=n, unique=True)))
    rad = np.array(data.draw(st.lists(st.floats(0.3, 2.0), min_size=n, max_size=n)))
    c = np.array(data.draw(st.tuples(st.floats(-5, 5), st.floats(-5, 5))))
    return c + rad[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)


@given(st.data())
def test_star_polygon_invariants(data):
    pts = random_polygon(data)
    n = len(pts)
    if abs(polygon_area(pts)) < 1e-3:
        return
    m = Mesh2D(pts, [tuple(range(n))], farfield=[(i, (i + 1) % n) for i in range(n)])
    if kinds(validate_mesh(m)) - {"farfield precondition"}:
        return
    # outward normals of a closed loop cancel
    assert np.allclose(m.face_normals.sum(axis=0), 0.0, atol=1e-12)
    # area from the divergence theorem: V = 0.5 * sum over faces of c . S
    div = 0.5 * np.sum(m.face_centroids * m.face_normals)
    assert div == pytest.approx(m.cell_volumes[0], rel=1e-12)


def test_random_meshes_are_valid(random_meshes):
    for m in random_meshes:
        assert validate_mesh(m) == []
        sums = np.zeros((m.n_cells, 2))
        for f in range(m.n_faces):
            sums[m.owner[f]] += m.face_normals[f]
            if m.neighbor[f] >= 0:
                sums[m.neighbor[f]] -= m.face_normals[f]
        assert np.abs(sums).max() < 1e-12


def test_fixture_helpers_are_consistent():
    assert two_triangle_square().n_faces == 5
    assert grid_with_hole().n_faces == 24
