"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

import numpy as np

from . import ndcore as nd


def numeric_grad(fn, param: nd.Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d param by central differences; ``fn`` must rebuild its graph on each call."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn().item()
        flat[i] = orig - h
        down = fn().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(fn, params, h: float = 1e-5) -> dict:
    """Relative error per parameter name between tape and finite-difference gradients."""
    grads = nd.backward(fn())
    return {p.name or str(i): relative_error(grads[p], numeric_grad(fn, p, h)) for i, p in enumerate(params)}
