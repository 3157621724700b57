"""clothpix: garment deformation as multi-channel images in UV space.

Cloth vertices are embedded on a body surface; their world positions are
stored as local-frame offsets rasterized into 2D pattern space, where they
can be filtered, edited, compressed, and regressed from pose like any other
image data.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401

from . import (body, cage, clothimage, embedding, garments, losses,  # noqa: F401,E402
               meshcore, nn, oracle, pca, skeleton, training)
