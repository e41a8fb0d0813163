"""Backend selection for the hot stencil kernels.

The environment variable ``KPPLAB_BACKEND`` picks the implementation:
``numba`` (default when numba is importable) or ``numpy`` (vectorized
fallback, no compilation).  Both produce the same arithmetic in the same
order, so results agree to the last bit on every platform we tested.
"""
import os

_requested = os.environ.get("KPPLAB_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"KPPLAB_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on the environment
    HAVE_NUMBA = False

BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"
