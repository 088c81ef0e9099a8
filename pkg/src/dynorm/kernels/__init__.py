"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension ``_core`` is used when it imports; set
``DYNORM_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

from . import _reference

BACKEND = "python"
if os.environ.get("DYNORM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _reference
else:
    _impl = _reference

KERNEL_NAMES = ("group_stats", "instance_means", "cosine_matrix", "first_neighbors",
                "components", "group_normalize", "conv2d")

group_stats = _impl.group_stats
instance_means = _impl.instance_means
cosine_matrix = _impl.cosine_matrix
first_neighbors = _impl.first_neighbors
components = _impl.components
group_normalize = _impl.group_normalize
conv2d = _impl.conv2d


def available_backends():
    """Map backend name -> kernel module, for tests and benchmarks."""
    found = {"python": _reference}
    try:
        from . import _core

        found["cython"] = _core
    except ImportError:
        pass
    return found
