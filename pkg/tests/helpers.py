"""Numerical helpers shared by the tests."""

import numpy as np


def central_difference(f, theta, h=1e-6):
    """Central differences of a scalar or array valued f at theta."""
    theta = np.asarray(theta, dtype=float)
    out = []
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        out.append((np.asarray(f(up)) - np.asarray(f(down))) / (2 * h))
    return out
