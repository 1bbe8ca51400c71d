# The numba kernels are the default. Set USERIAL_NO_NUMBA=1 to use the numpy
# ones (no JIT warm-up, handy for short runs and for cross-checking).
import os

import numpy as np

if os.environ.get("USERIAL_NO_NUMBA", "") not in ("", "0"):
    from ._kernels_py import fwht_inplace as _fwht, pow_abs_sum
    BACKEND = "numpy"
else:
    from ._kernels_nb import fwht_inplace as _fwht, pow_abs_sum
    BACKEND = "numba"


def fwht(values):
    """Unnormalized Hadamard-order transform of a real or complex vector."""
    v = np.asarray(values)
    if np.iscomplexobj(v):
        re = np.ascontiguousarray(v.real, dtype=np.float64).copy()
        im = np.ascontiguousarray(v.imag, dtype=np.float64).copy()
        _fwht(re)
        _fwht(im)
        return re + 1j * im
    out = np.array(v, dtype=np.float64)
    _fwht(out)
    return out


__all__ = ["BACKEND", "fwht", "pow_abs_sum"]
