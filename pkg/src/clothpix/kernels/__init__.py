"""Kernel backend selection.

The hot kernels (patch unfolding for convolutions, triangle rasterization,
closest point on a triangle soup) exist twice: a Cython extension
(``_ckernels``) and a pure numpy fallback (``_pykernels``). On import we pick
the compiled one when it is available and fall back to numpy otherwise, so the
package works from a source checkout without a compiler.

Set ``CLOTHPIX_KERNELS=python`` or ``CLOTHPIX_KERNELS=compiled`` to force a
backend (``compiled`` raises if the extension is missing). Anything else, or
unset, means auto.
"""

import os

from . import _pykernels

_choice = os.environ.get("CLOTHPIX_KERNELS", "auto").strip().lower()

if _choice == "python":
    _impl = _pykernels
elif _choice == "compiled":
    from . import _ckernels as _impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im
rasterize_tris = _impl.rasterize_tris
closest_point_tris = _impl.closest_point_tris


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return the kernel module for ``name`` ('python' or 'compiled')."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _ckernels
        return _ckernels
    raise ValueError("unknown kernel backend: %r" % (name,))
