"""Hot numerical kernels with a compiled core and a numpy fallback.

At import time the Cython extension ``_core`` is preferred; if it is not
built the pure-numpy module ``_numpy`` provides the same functions with
identical semantics (and identical bits; see ``_numpy`` docstring).
``BACKEND`` names the selected implementation.  Setting the environment
variable ``KSPLAB_DISABLE_EXT=1`` before import forces the fallback (a
development knob for exercising both code paths; outputs are identical).
"""

import os

from . import _numpy

_impl = None
if not os.environ.get("KSPLAB_DISABLE_EXT"):
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = None

if _impl is not None:
    BACKEND = "cython"
else:
    _impl = _numpy
    BACKEND = "numpy"

heston_paths = _impl.heston_paths
fd_substep = _impl.fd_substep
resample_indices = _impl.resample_indices


def backends() -> dict:
    """All importable backends, keyed by name (for benchmarks and tests)."""
    out = {"numpy": _numpy}
    if BACKEND == "cython":
        out["cython"] = _impl
    return out
