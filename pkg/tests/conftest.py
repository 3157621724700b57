"""Shared fixtures: one body/garment/embedding per session.

The wrap and embedding are deterministic, so building them once and sharing
across test modules is safe and keeps the suite fast.
"""

import numpy as np
import pytest

from clothpix import oracle
from clothpix.body import build_procedural_body
from clothpix.cage import segment_patches
from clothpix.embedding import embed_pixels, shrink_wrap
from clothpix.garments import cage_displacements_to_body, make_tee_garment


@pytest.fixture(scope="session")
def body():
    return build_procedural_body()


@pytest.fixture(scope="session")
def tee():
    return make_tee_garment()


@pytest.fixture(scope="session")
def tee_graph(tee):
    return segment_patches(tee.mesh, tee.cage_loops)


@pytest.fixture(scope="session")
def tee_wrapped(tee, tee_graph, body):
    disp = cage_displacements_to_body(tee, tee_graph.cage_vertices, body)
    wrapped, info = shrink_wrap(tee.mesh, body, disp)
    assert np.isfinite(wrapped).all()
    return wrapped


@pytest.fixture(scope="session")
def tee_emb(tee_wrapped, body):
    return embed_pixels(tee_wrapped, body)


@pytest.fixture(scope="session")
def tee_spec(body, tee):
    return oracle.make_oracle_spec(7, body.skeleton, tee.mesh)


@pytest.fixture(scope="session")
def small_dataset(body, tee, tee_emb, tee_spec):
    return oracle.generate_dataset(60, body, tee.mesh, tee_emb, tee_spec,
                                   seed=3)
