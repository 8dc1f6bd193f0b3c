"""Hot-loop kernels.

The compiled extension is used when importable; set ``FLEETLAB_PURE=1`` to
force the pure-Python implementations.
"""

import os

from . import _pure

if os.environ.get("FLEETLAB_PURE", "") not in ("", "0"):
    _impl = _pure
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _pure

BACKEND = "compiled" if _impl is not _pure else "pure"

dtw_accumulate = _impl.dtw_accumulate
bfs_distances = _impl.bfs_distances

__all__ = ["BACKEND", "dtw_accumulate", "bfs_distances"]
