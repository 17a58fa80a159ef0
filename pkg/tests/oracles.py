"""Independent reference computations used by several test modules."""

import numpy as np


def brute_circular_convolution(x, kernel):
    """Direct spatial circular convolution, one shifted copy per kernel tap."""
    out = np.zeros_like(x, dtype=np.float64)
    h, w = x.shape
    for a in range(h):
        for b in range(w):
            k = kernel[a, b]
            if k != 0.0:
                out += k * np.roll(np.roll(x, a, axis=0), b, axis=1)
    return out


def block_mean_loops(x, s):
    h, w = x.shape
    out = np.zeros((h // s, w // s))
    for i in range(h // s):
        for j in range(w // s):
            out[i, j] = sum(x[i * s + p, j * s + q] for p in range(s) for q in range(s)) / (s * s)
    return out
