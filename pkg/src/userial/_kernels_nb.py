"""numba versions of the hot kernels; same signatures as _kernels_py."""
import numba as nb
import numpy as np


@nb.njit(cache=True)
def fwht_inplace(a):
    n = a.shape[0]
    h = 1
    while h < n:
        for i in range(0, n, 2 * h):
            for j in range(i, i + h):
                x = a[j]
                y = a[j + h]
                a[j] = x + y
                a[j + h] = x - y
        h *= 2
    return a


@nb.njit(cache=True, fastmath=True)
def _pow_abs_sum(re, im, p):
    # one power of the squared modulus instead of hypot then power
    half = 0.5 * p
    s = 0.0
    for i in range(re.shape[0]):
        m = re[i] * re[i] + im[i] * im[i]
        if m > 0.0:
            s += m ** half
    return s


def pow_abs_sum(re, im, p):
    return float(_pow_abs_sum(re, im, float(p)))
