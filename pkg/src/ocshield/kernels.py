"""Kernel backend selection.

The compiled extension ``ocshield._core`` is used when it imports; otherwise
the numpy implementations in ``ocshield._fallback`` take over.  Setting
``OCSHIELD_PURE_PYTHON=1`` forces the fallback.
"""

import os

if os.environ.get("OCSHIELD_PURE_PYTHON"):
    from . import _fallback as backend
else:
    try:
        from . import _core as backend
    except ImportError:  # extension not built
        from . import _fallback as backend

BACKEND = backend.BACKEND
scan_min = backend.scan_min
scan_min_batch = backend.scan_min_batch
leaf_paths = backend.leaf_paths
have_wide = backend.have_wide
expand_children = backend.expand_children

__all__ = ["BACKEND", "backend", "scan_min", "scan_min_batch", "leaf_paths", "have_wide", "expand_children"]
