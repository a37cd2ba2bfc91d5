"""Backend selection for the shortest-path kernels.

The compiled Cython extension is used when present; otherwise the pure
numpy/heapq implementations take over. Set the environment variable
``SALSA2D_DISABLE_SPEEDUPS=1`` before import to force the pure backend
(used by the backend-equality tests and the benchmark).
"""

import os

from . import _speedups_py

if os.environ.get("SALSA2D_DISABLE_SPEEDUPS"):
    _impl = _speedups_py
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _speedups_py

dijkstra_csr_many = _impl.dijkstra_csr_many
floyd_warshall = _impl.floyd_warshall


def active_backend():
    """Name of the backend in use: 'compiled' or 'python'."""
    return _impl.BACKEND_NAME
