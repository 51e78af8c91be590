"""Backend selection for the hot numeric kernels.

The environment variable ``BETREES_BACKEND`` picks the implementation at
import time:

* ``auto`` (default): numba if importable, else pure numpy,
* ``numba``: require numba, raise if unavailable,
* ``numpy``: force the pure-numpy fallback.

``load_backend(name)`` imports a specific backend module regardless of the
flag; the benchmark harness uses it to compare both paths in one process.
"""

import os

_choice = os.environ.get("BETREES_BACKEND", "auto").lower()

if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"BETREES_BACKEND must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    from . import numpy_backend as _impl
else:
    try:
        from . import numba_backend as _impl
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_backend as _impl

BACKEND = "numba" if _impl.IS_NUMBA else "numpy"

route_rows = _impl.route_rows
split_rows = _impl.split_rows
leaf_stats_cont = _impl.leaf_stats_cont
leaf_counts_cat = _impl.leaf_counts_cat
log_marginal_cont = _impl.log_marginal_cont
log_marginal_cat = _impl.log_marginal_cat
obs_logdens_cont = _impl.obs_logdens_cont
obs_logdens_cat = _impl.obs_logdens_cat


def active_backend() -> str:
    """Name of the backend selected at import time."""
    return BACKEND


def load_backend(name: str):
    """Import and return a backend module by name ('numba' or 'numpy')."""
    if name == "numba":
        from . import numba_backend
        return numba_backend
    if name == "numpy":
        from . import numpy_backend
        return numpy_backend
    raise ValueError(f"unknown backend {name!r}")
