"""Kernel backend selection.

The hot numeric kernels in :mod:`dinctr.kernels` exist in two variants: a
pure NumPy implementation and a Numba JIT-compiled one. The active variant
is chosen once, at import time, from the ``DINCTR_BACKEND`` environment
variable:

* ``DINCTR_BACKEND=numpy``  forces the pure NumPy path.
* ``DINCTR_BACKEND=numba``  requires Numba and fails loudly if it is missing.
* unset                     Numba when importable, NumPy otherwise.

Both variants agree to ~1e-13 relative error but are not bit-identical
(floating-point reduction order differs). Within one backend, every result
is bit-for-bit reproducible, which is what the determinism contracts
require. ``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None
    HAS_NUMBA = False

_requested = os.environ.get("DINCTR_BACKEND", "").strip().lower()

if _requested == "numpy":
    USE_NUMBA = False
elif _requested == "numba":
    if not HAS_NUMBA:
        raise ImportError("DINCTR_BACKEND=numba but numba is not installed")
    USE_NUMBA = True
elif _requested == "":
    USE_NUMBA = HAS_NUMBA
else:
    raise ValueError(
        f"unknown DINCTR_BACKEND value {_requested!r}; use 'numba' or 'numpy'"
    )


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return "numba" if USE_NUMBA else "numpy"
