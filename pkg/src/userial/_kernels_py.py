"""Pure numpy versions of the hot kernels."""
import numpy as np


def fwht_inplace(a):
    """Unnormalized Walsh-Hadamard transform in natural (Hadamard) order.

    Works on a 1-D float64 array whose length is a power of two.
    """
    n = a.shape[0]
    h = 1
    while h < n:
        v = a.reshape(-1, 2 * h)
        x = v[:, :h].copy()
        y = v[:, h:]
        v[:, :h] += y
        v[:, h:] = x - y
        h *= 2
    return a


def pow_abs_sum(re, im, p):
    return float(np.sum(np.hypot(re, im) ** p))
