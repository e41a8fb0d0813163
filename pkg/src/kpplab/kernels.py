"""Dispatch to the compiled or vectorized explicit-update kernels."""
from ._backend import BACKEND

if BACKEND == "numba":
    from ._kernels_numba import heat_2d, local_1d, local_2d, nonlocal_1d, nonlocal_2d
else:
    from ._kernels_numpy import heat_2d, local_1d, local_2d, nonlocal_1d, nonlocal_2d

SHAPE_CODES = {"logistic": 0, "template": 1, "cubic": 2}

__all__ = ["BACKEND", "SHAPE_CODES", "heat_2d", "local_1d", "local_2d", "nonlocal_1d", "nonlocal_2d"]
