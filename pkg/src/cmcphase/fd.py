"""Finite-difference weights and uniform-grid derivative helpers."""

import numpy as np


def fd_weights(z, x, m):
    """Fornberg weights for derivatives 0..m at point z from nodes x.

    Returns an array of shape (m + 1, len(x)); row k holds the weights of
    the k-th derivative.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


# centered 4th-order stencils on offsets -2..2
D1_C4 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
D2_C4 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def diff_uniform(u, h, axis, order=1, accuracy=4):
    """Derivative along `axis` of samples with two ghost layers on that axis.

    The output is trimmed by two layers on each side of `axis`, so an input
    with ghost layers yields values on the interior grid.
    """
    u = np.moveaxis(np.asarray(u), axis, 0)
    n = u.shape[0]
    if accuracy == 4:
        w = D1_C4 if order == 1 else D2_C4
        out = sum(w[k] * u[k:n - 4 + k] for k in range(5) if w[k] != 0.0)
    elif accuracy == 2:
        if order == 1:
            out = 0.5 * (u[3:n - 1] - u[1:n - 3])
        else:
            out = u[3:n - 1] - 2.0 * u[2:n - 2] + u[1:n - 3]
    else:
        raise ValueError("accuracy must be 2 or 4")
    return np.moveaxis(out / h ** order, 0, axis)


def trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def simpson_weights(n, h):
    if n % 2 == 0:
        raise ValueError("Simpson's rule needs an odd number of nodes")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0
