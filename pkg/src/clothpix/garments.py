"""Procedural garments: a two-panel tee and a necktie strip.

The tee is two rectangular pattern pieces (front chart 0, back chart 1),
each a grid over its UV window, shaped in 3D as half-tubes of 18 cm radius
around the torso. The panels are not sewn to each other; each chart is its
own connected component, mirroring pattern pieces embedded independently on
the body.

Grid sizes are chosen so the default cage (2 columns x 7 rows of cells per
chart, 28 patches total) snaps exactly onto grid lines.
"""

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .body import TORSO
from .meshcore import TriMesh, make_grid_mesh

TEE_RADIUS = 18.0
# Rest height of the pattern tube, and the height band the wrapped tee
# occupies on the body. The top edge stays a few cm below the shoulder line
# so the wrap lands on the torso only, clear of the arm capsules. The body
# band is deliberately shorter than the rest height (34 cm of pattern mapped
# onto 27 cm of body): the torso is slimmer than the 18 cm pattern tube, so
# circumferences shrink by ~0.8 when wrapped, and shrinking heights by the
# same factor keeps the initial wrap close to a uniform scale, which is the
# state distortion equalization relaxes toward.
TEE_REST_Y_RANGE = (104.0, 138.0)
TEE_Y_RANGE = (111.0, 138.0)
# Window slack around each chart keeps the margin-expanded raster window
# inside [0,1]^2 down to 64x64 tee images (pad_rings 4) and 256x256 patch
# sources (pad_rings 16).
TEE_FRONT_WINDOW = (0.06, 0.10, 0.44, 0.90)
TEE_BACK_WINDOW = (0.56, 0.10, 0.94, 0.90)
TEE_NU, TEE_NV = 25, 29
TEE_CAGE_COLS, TEE_CAGE_ROWS = 2, 7

NECKTIE_WINDOW = (0.375, 0.06, 0.625, 0.94)
NECKTIE_NU, NECKTIE_NV = 9, 33
NECKTIE_WIDTH = 6.0
NECKTIE_Y_RANGE = (108.0, 148.0)


@dataclass
class Garment:
    mesh: TriMesh
    cage_loops: List[np.ndarray]            # closed UV polylines
    body_map: Callable                      # (u,v) arrays -> (part, t, theta)
    name: str = "garment"


def _tee_angle(u, chart):
    u0, _, u1, _ = TEE_FRONT_WINDOW if chart == 0 else TEE_BACK_WINDOW
    frac = (np.asarray(u) - u0) / (u1 - u0)
    if chart == 0:
        return (frac - 0.5) * np.pi
    return 0.5 * np.pi + frac * np.pi


def _tee_rest_height(v):
    _, v0, _, v1 = TEE_FRONT_WINDOW
    y0, y1 = TEE_REST_Y_RANGE
    return y0 + (np.asarray(v) - v0) / (v1 - v0) * (y1 - y0)


def _tee_body_height(v):
    _, v0, _, v1 = TEE_FRONT_WINDOW
    y0, y1 = TEE_Y_RANGE
    return y0 + (np.asarray(v) - v0) / (v1 - v0) * (y1 - y0)


def _cell_loops(window, cols, rows):
    """Closed rectangle polylines over a cols x rows cell grid."""
    u0, v0, u1, v1 = window
    us = np.linspace(u0, u1, cols + 1)
    vs = np.linspace(v0, v1, rows + 1)
    loops = []
    for c in range(cols):
        for r in range(rows):
            loops.append(np.array([
                (us[c], vs[r]), (us[c + 1], vs[r]),
                (us[c + 1], vs[r + 1]), (us[c], vs[r + 1])]))
    return loops


def make_tee_garment():
    """Two-panel tee around the torso; 28-patch default cage."""
    def front_pos(u, v):
        th = _tee_angle(u, 0)
        y = _tee_rest_height(v)
        return np.stack([TEE_RADIUS * np.sin(th), y,
                         TEE_RADIUS * np.cos(th)], axis=1)

    def back_pos(u, v):
        th = _tee_angle(u, 1)
        y = _tee_rest_height(v)
        return np.stack([TEE_RADIUS * np.sin(th), y,
                         TEE_RADIUS * np.cos(th)], axis=1)

    front = make_grid_mesh(TEE_NU, TEE_NV, TEE_FRONT_WINDOW, front_pos, chart=0)
    back = make_grid_mesh(TEE_NU, TEE_NV, TEE_BACK_WINDOW, back_pos, chart=1)

    verts = np.concatenate([front.vertices, back.vertices])
    tris = np.concatenate([front.triangles, back.triangles + front.n_vertices])
    uv = np.concatenate([front.uv, back.uv])
    chart = np.concatenate([front.chart_id, back.chart_id])
    mesh = TriMesh(verts, tris, uv, chart_id=chart)

    loops = (_cell_loops(TEE_FRONT_WINDOW, TEE_CAGE_COLS, TEE_CAGE_ROWS)
             + _cell_loops(TEE_BACK_WINDOW, TEE_CAGE_COLS, TEE_CAGE_ROWS))

    def body_map(u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        front_side = u < 0.5
        theta = np.where(front_side, _tee_angle(u, 0), _tee_angle(u, 1))
        part = np.full(u.shape, TORSO, dtype=np.int64)
        return part, _tee_body_height(v), theta

    return Garment(mesh=mesh, cage_loops=loops, body_map=body_map, name="tee")


def make_necktie_garment():
    """Single-chart 1:4 strip hanging over the chest center line."""
    u0, v0, u1, v1 = NECKTIE_WINDOW
    y0, y1 = NECKTIE_Y_RANGE

    def pos(u, v):
        x = (np.asarray(u) - 0.5) / (u1 - u0) * NECKTIE_WIDTH
        y = y0 + (np.asarray(v) - v0) / (v1 - v0) * (y1 - y0)
        z = np.full(len(np.atleast_1d(u)), 16.0)
        return np.stack([x, y, z], axis=1)

    mesh = make_grid_mesh(NECKTIE_NU, NECKTIE_NV, NECKTIE_WINDOW, pos, chart=0)
    loops = _cell_loops(NECKTIE_WINDOW, 1, 4)

    def body_map(u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        theta = (u - 0.5) / (u1 - u0) * 0.42
        y = y0 + (v - v0) / (v1 - v0) * (y1 - y0)
        part = np.full(u.shape, TORSO, dtype=np.int64)
        return part, y, theta

    return Garment(mesh=mesh, cage_loops=loops, body_map=body_map,
                   name="necktie")


def cage_displacements_to_body(garment, cage_vertices, body):
    """Wrap boundary conditions: move each cage vertex to its body target.

    The garment's body_map sends a cage vertex's UV to an axial/angular
    location on a body part; the displacement is the analytic surface point
    there minus the rest position.
    """
    uv = garment.mesh.uv[cage_vertices]
    part, t, theta = garment.body_map(uv[:, 0], uv[:, 1])
    disp = {}
    for i, vid in enumerate(cage_vertices):
        target = body.surface_point(int(part[i]), float(t[i]), float(theta[i]))
        disp[int(vid)] = target - garment.mesh.vertices[vid]
    return disp
