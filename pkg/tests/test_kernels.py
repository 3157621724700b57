"""Compiled and pure-python kernels must agree bit for bit where exact.

im2col/col2im are pure index shuffles (exact); rasterization coverage and
closest-point queries involve the same float arithmetic in both backends, so
agreement is required to tight tolerances.
"""

import numpy as np
import pytest

from clothpix.kernels import available_backends, get_backend
from clothpix.meshcore import make_icosphere

HAVE_COMPILED = "compiled" in available_backends()
needs_both = pytest.mark.skipif(not HAVE_COMPILED,
                                reason="compiled kernels not built")


@pytest.fixture(scope="module")
def backends():
    return get_backend("python"), get_backend("compiled")


def test_python_backend_always_available():
    assert get_backend("python").BACKEND == "python"
    with pytest.raises(ValueError):
        get_backend("fortran")


@needs_both
def test_im2col_matches(backends):
    py, cy = backends
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 9, 7))
    for stride, pad, k in ((1, 0, 3), (2, 1, 3), (1, 2, 5)):
        a = py.im2col(x, k, k, stride, pad)
        b = cy.im2col(x, k, k, stride, pad)
        np.testing.assert_array_equal(a, b)


@needs_both
def test_col2im_matches_and_adjoint(backends):
    py, cy = backends
    rng = np.random.default_rng(1)
    n, c, h, w, k, stride, pad = 2, 3, 8, 6, 3, 2, 1
    x = rng.normal(size=(n, c, h, w))
    cols = py.im2col(x, k, k, stride, pad)
    g = rng.normal(size=cols.shape)
    a = py.col2im(g, n, c, h, w, k, k, stride, pad)
    b = cy.col2im(g, n, c, h, w, k, k, stride, pad)
    np.testing.assert_array_equal(a, b)
    # col2im is the exact adjoint of im2col: <im2col(x), g> == <x, col2im(g)>
    lhs = float(np.sum(cols * g))
    rhs = float(np.sum(x * a))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def _raster_case():
    rng = np.random.default_rng(2)
    pix = rng.uniform(2.0, 30.0, size=(12, 2))
    tris = np.array([[a, a + 1, a + 2] for a in range(0, 9, 3)]
                    + [[0, 4, 8], [1, 5, 9]], dtype=np.int64)
    values = rng.normal(size=(12, 3))
    return pix, tris, values


@needs_both
def test_rasterize_tris_matches(backends):
    py, cy = backends
    pix, tris, values = _raster_case()
    out_a = py.rasterize_tris(pix, tris, values, 32, 32)
    out_b = cy.rasterize_tris(pix, tris, values, 32, 32)
    assert len(out_a) == len(out_b)
    for a, b in zip(out_a, out_b):
        np.testing.assert_allclose(a, b, atol=1e-12)


@needs_both
def test_closest_point_matches(backends):
    # triangle indices may differ on exact ties (queries over a shared
    # edge), so the contract is on distances and closest points
    py, cy = backends
    sphere = make_icosphere(2, radius=3.0)
    rng = np.random.default_rng(3)
    q = rng.normal(scale=4.0, size=(50, 3))

    def points_of(idx, bary):
        corners = sphere.vertices[sphere.triangles[idx]]
        return np.einsum("qk,qkj->qj", bary, corners)

    idx_a, bary_a, dist_a = py.closest_point_tris(q, sphere.vertices,
                                                  sphere.triangles)
    idx_b, bary_b, dist_b = cy.closest_point_tris(q, sphere.vertices,
                                                  sphere.triangles)
    np.testing.assert_allclose(dist_a, dist_b, atol=1e-10)
    np.testing.assert_allclose(points_of(idx_a, bary_a),
                               points_of(idx_b, bary_b), atol=1e-9)
    assert (idx_a == idx_b).mean() > 0.9


def test_closest_point_on_sphere_has_expected_distance():
    sphere = make_icosphere(3, radius=3.0)
    py = get_backend("python")
    q = np.array([[10.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    tri_idx, bary, dist = py.closest_point_tris(q, sphere.vertices,
                                                sphere.triangles)
    # outside point: distance ~ 7; center: distance ~ radius (within facet sag)
    assert abs(dist[0] - 7.0) < 0.05
    assert abs(dist[1] - 3.0) < 0.05
    assert bary.min() >= -1e-12
    np.testing.assert_allclose(bary.sum(axis=1), 1.0, atol=1e-12)
    # the barycentric combination reproduces the point at distance dist
    corners = sphere.vertices[sphere.triangles[tri_idx]]
    points = np.einsum("qk,qkj->qj", bary, corners)
    np.testing.assert_allclose(np.linalg.norm(points - q, axis=1), dist,
                               atol=1e-10)
