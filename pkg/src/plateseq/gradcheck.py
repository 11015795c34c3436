"""Finite-difference gradient oracle for checking analytic backward passes."""

import numpy as np


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of a scalar function f at x.

    Each element i is perturbed in place by +/- eps and the gradient entry is
    (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps). f must be deterministic and
    must not retain references into x.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        f_plus = f(x)
        flat_x[i] = orig - eps
        f_minus = f(x)
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def rel_error(a, b):
    """Max absolute difference normalized by the larger gradient magnitude.

    Scores 0 for identical arrays. A score below 1e-4 at float64 precision is
    the pass mark used throughout the test suite.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)
