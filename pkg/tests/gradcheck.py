"""Central finite-difference gradient oracle shared by the op tests and the
acceptance suite.  The oracle only re-runs forward passes; it never touches
the backward code it is checking."""

from __future__ import annotations

import numpy as np


def fd_gradients(f, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar f(arrays) w.r.t. every entry of every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a.ravel())
    nb = np.linalg.norm(b.ravel())
    return float(np.linalg.norm((a - b).ravel()) / max(na + nb, 1e-12))


def max_rel_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))
