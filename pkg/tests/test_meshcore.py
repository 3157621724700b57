"""Mesh container, metrics, OBJ io, and procedural grids."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clothpix.meshcore import (ObjParseError, TriMesh, compute_normals_and_tbn,
                               edge_lengths, load_obj, make_grid_mesh,
                               save_obj, triangle_areas)


def _unit_quad():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
    tris = np.array([[0, 1, 2], [1, 3, 2]])
    uv = verts[:, :2].copy()
    return TriMesh(verts, tris, uv)


def test_edges_unique_and_sorted():
    mesh = _unit_quad()
    assert mesh.edges.shape == (5, 2)
    assert (mesh.edges[:, 0] < mesh.edges[:, 1]).all()
    as_rows = {tuple(e) for e in mesh.edges}
    assert len(as_rows) == len(mesh.edges)
    assert (1, 2) in as_rows  # the shared diagonal appears once


def test_rest_metrics_of_unit_quad():
    mesh = _unit_quad()
    lengths = {tuple(e): l for e, l in zip(mesh.edges,
                                           mesh.rest_edge_lengths)}
    assert lengths[(0, 1)] == pytest.approx(1.0)
    assert lengths[(1, 2)] == pytest.approx(np.sqrt(2.0))
    assert triangle_areas(mesh.vertices, mesh.triangles) == pytest.approx(
        [0.5, 0.5])
    assert mesh.rest_areas == pytest.approx([0.5, 0.5])


def test_edge_lengths_matches_direct_norm():
    rng = np.random.default_rng(0)
    mesh = make_grid_mesh(5, 4)
    p = mesh.vertices + rng.normal(scale=0.1, size=mesh.vertices.shape)
    got = edge_lengths(p, mesh.edges)
    want = np.linalg.norm(p[mesh.edges[:, 1]] - p[mesh.edges[:, 0]], axis=1)
    np.testing.assert_allclose(got, want, rtol=0, atol=0)


def test_grid_mesh_counts_and_uv_cover():
    mesh = make_grid_mesh(7, 5, uv_window=(0.1, 0.2, 0.9, 0.8), chart=3)
    assert mesh.n_vertices == 35
    assert len(mesh.triangles) == 2 * 6 * 4
    assert (mesh.chart_id == 3).all()
    assert mesh.uv.min(axis=0) == pytest.approx([0.1, 0.2])
    assert mesh.uv.max(axis=0) == pytest.approx([0.9, 0.8])
    assert mesh.chart_uv_window(3) == pytest.approx([0.1, 0.2, 0.9, 0.8])


@settings(max_examples=25, deadline=None)
@given(nu=st.integers(2, 9), nv=st.integers(2, 9))
def test_grid_mesh_edge_multiplicity(nu, nv):
    # every edge of a manifold grid patch belongs to one or two triangles
    mesh = make_grid_mesh(nu, nv)
    pairs = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2),
                    axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    assert counts.max() <= 2
    assert len(uniq) == len(mesh.edges)
    assert len(mesh.triangles) == 2 * (nu - 1) * (nv - 1)


def test_vertex_normals_of_flat_grid_point_up():
    mesh = make_grid_mesh(6, 6)
    frame = compute_normals_and_tbn(mesh, mesh.vertices)
    np.testing.assert_allclose(frame.n, np.tile([0.0, 0.0, 1.0], (36, 1)),
                               atol=1e-12)
    # tangent frame is orthonormal and right-handed
    for a, b in ((frame.t, frame.b), (frame.t, frame.n), (frame.b, frame.n)):
        np.testing.assert_allclose(np.einsum("ij,ij->i", a, b), 0.0,
                                   atol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(frame.t, axis=1), 1.0,
                               atol=1e-10)
    np.testing.assert_allclose(np.cross(frame.t, frame.b), frame.n,
                               atol=1e-10)


def test_tbn_tangent_follows_u_direction():
    # positions = (u, v, 0) exactly, so d(position)/du is +x
    mesh = make_grid_mesh(5, 5)
    frame = compute_normals_and_tbn(mesh, mesh.vertices)
    np.testing.assert_allclose(frame.t[:, 0], 1.0, atol=1e-10)


def _obj_correspondence(loaded, original):
    """loaded-vertex index for each original vertex, joined on exact UV."""
    keys = {tuple(k): i for i, k in enumerate(np.round(loaded.uv, 12))}
    return np.array([keys[tuple(k)] for k in np.round(original.uv, 12)])


def test_obj_round_trip_exact(tmp_path):
    rng = np.random.default_rng(5)
    mesh = make_grid_mesh(6, 4, uv_window=(0.05, 0.1, 0.95, 0.9))
    deformed = TriMesh(mesh.vertices + rng.normal(size=mesh.vertices.shape),
                       mesh.triangles, mesh.uv)
    path = tmp_path / "m.obj"
    save_obj(deformed, path)
    loaded, warnings = load_obj(path)
    assert warnings == []
    assert loaded.n_vertices == deformed.n_vertices
    perm = _obj_correspondence(loaded, deformed)
    np.testing.assert_array_equal(np.sort(perm), np.arange(len(perm)))
    np.testing.assert_allclose(loaded.vertices[perm], deformed.vertices,
                               rtol=0, atol=0)
    np.testing.assert_allclose(loaded.uv[perm], deformed.uv, rtol=0, atol=0)


def test_obj_loader_rejects_missing_texcoords(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(ObjParseError):
        load_obj(path)


def test_obj_loader_flags_nonmanifold_edges(tmp_path):
    # three triangles sharing one edge
    mesh = TriMesh(
        np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0],
                  [1.0, 1, 1]]),
        np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]]),
        np.array([[0, 0], [1, 0], [0, 1], [0.5, 1], [1, 1.0]]))
    path = tmp_path / "nm.obj"
    save_obj(mesh, path)
    _, warnings = load_obj(path)
    assert len(warnings) == 1
    assert "non-manifold" in warnings[0]


def test_degenerate_triangle_area_is_zero():
    p = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    assert triangle_areas(p, np.array([[0, 1, 2]])) == pytest.approx([0.0])
