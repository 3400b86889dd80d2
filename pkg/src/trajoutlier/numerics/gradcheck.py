"""Central finite differences, used as an independent gradient oracle."""

import numpy as np


def numerical_grad(fn, arrays, h=1e-5):
    """d fn / d arrays[i] by central differences.

    ``fn`` takes no arguments and reads the arrays in place; each entry is
    perturbed by +-h and restored.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            fp = fn()
            arr[idx] = orig - h
            fm = fn()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
