"""Independent oracles used across the test suite.

Everything here is deliberately implemented by a different route than the
package code it checks: recursions instead of closed forms, double loops
instead of vectorized convolutions, quadrature instead of algebra.
"""

from __future__ import annotations

import numpy as np


def cox_de_boor(m: int, z: float) -> float:
    """Cardinal B-spline of order ``m`` via the Cox-de Boor recursion over
    the integer knots ``0, 1, ..., m+1``."""

    def basis(i: int, deg: int, t: float) -> float:
        if deg == 0:
            return 1.0 if i <= t < i + 1 else 0.0
        left = (t - i) / deg * basis(i, deg - 1, t)
        right = (i + deg + 1 - t) / deg * basis(i + 1, deg - 1, t)
        return left + right

    return basis(0, m, float(z))


def naive_conv(W: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Direct double-sum one-sided convolution, zero past the right end."""
    w_out, K, w_in = W.shape
    D = z.shape[0]
    y = np.zeros((D, w_out))
    for i in range(D):
        for j in range(w_out):
            acc = 0.0
            for k in range(K):
                row = i + k
                if row >= D:
                    continue
                for l in range(w_in):
                    acc += W[j, k, l] * z[row, l]
            y[i, j] = acc
    return y


def naive_dense_forward(layers, x: np.ndarray) -> np.ndarray:
    """Dense ReLU forward with plain matmul (independent accumulation)."""
    h = np.asarray(x, dtype=float)
    for idx, (W, b) in enumerate(layers):
        h = W @ h
        if b is not None:
            h = h + b
        if idx != len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def finite_difference(fun, theta: np.ndarray, index: int, step: float = 1e-5) -> float:
    """Central finite difference of ``fun`` along coordinate ``index``."""
    up = theta.copy()
    dn = theta.copy()
    up[index] += step
    dn[index] -= step
    return (fun(up) - fun(dn)) / (2.0 * step)
