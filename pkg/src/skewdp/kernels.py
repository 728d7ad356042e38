"""Backend selection for the edge-segment reductions.

The compiled extension is used when it was built; otherwise, or when
``SKEWDP_PURE_PYTHON=1`` is set, the numpy implementation is used. Both
backends accumulate in edge order, so they agree bit for bit on
``segment_sum``.
"""
import os

from . import _kernels_py

if os.environ.get("SKEWDP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

import numpy as np


def _as_groups(groups):
    return np.ascontiguousarray(groups, dtype=np.int64)


def segment_sum(groups, values, n_groups):
    """Sum rows of ``values`` into ``n_groups`` buckets given by ``groups``."""
    return _impl.segment_sum(_as_groups(groups), values, int(n_groups))


def segment_gram(groups, x, w, y, n_groups):
    """Per-group weighted second moments.

    Returns ``(A, b)`` with ``A[g] = sum w_e x_e x_e^T`` and
    ``b[g] = sum w_e y_e x_e`` over edges ``e`` in group ``g``. ``A`` is
    exactly symmetric.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be a 2-d array of edge features")
    w = np.ascontiguousarray(w, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _impl.segment_gram(_as_groups(groups), x, w, y, int(n_groups))


def available_backends():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return the module implementing backend ``name`` (for tests and benchmarks)."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
