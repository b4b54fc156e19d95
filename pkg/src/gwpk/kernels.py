"""Backend selection for the hot loops.

The compiled module ``gwpk._ckernels`` is used when it was built and
``GWPK_PURE_PYTHON`` is not set to ``1``; otherwise the NumPy fallback in
``gwpk._pykernels`` is used.  Both expose the same functions.
"""

import os

from . import _pykernels


def _load():
    if os.environ.get("GWPK_PURE_PYTHON", "") == "1":
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        return _pykernels
    return _ckernels


_impl = _load()
BACKEND = _impl.BACKEND

neighborhood_hits = _impl.neighborhood_hits
coo_matvec = _impl.coo_matvec
weyl_gather = _impl.weyl_gather
fio_sum = _impl.fio_sum


def get_backend(name: str):
    """Return the kernel module for ``'python'`` or ``'cython'`` (ImportError if unbuilt)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
