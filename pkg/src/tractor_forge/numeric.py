"""Finite-difference machinery and deterministic sampling.

Everything here works from metric *values* only, so it can serve as an
independent check on the symbolic curvature path and on the ambient metric.
Arrays carry arbitrary leading batch dimensions.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

MetricFn = Callable[[np.ndarray], np.ndarray]


def shrink_box(domain, shrink: float = 0.1) -> np.ndarray:
    box = np.asarray(domain, dtype=float)
    centre = box.mean(axis=1)
    half = 0.5 * (box[:, 1] - box[:, 0]) * (1.0 - shrink)
    return np.stack([centre - half, centre + half], axis=1)


def sample_grid(domain, per_axis: int = 5, shrink: float = 0.1) -> np.ndarray:
    """Uniform tensor grid over the box shrunk towards its centre; shape (per_axis**n, n)."""
    box = shrink_box(domain, shrink)
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def random_points(domain, count: int, seed: int, shrink: float = 0.1) -> np.ndarray:
    box = shrink_box(domain, shrink)
    rng = np.random.default_rng(seed)
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((count, len(box)))


def directional_derivative(f: Callable, x, v, h: float = 1e-3) -> np.ndarray:
    """Fourth-order central difference of ``f`` at ``x`` along ``v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    f1, f_1 = np.asarray(f(x + h * v)), np.asarray(f(x - h * v))
    f2, f_2 = np.asarray(f(x + 2 * h * v)), np.asarray(f(x - 2 * h * v))
    return (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h)


def partial_derivative(f: Callable, x, i: int, h: float | None = None) -> np.ndarray:
    """Second-order central difference in coordinate ``i``; default step 1e-5*max(1,|x_i|)."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * max(1.0, abs(x[i]))
    e = np.zeros_like(x)
    e[i] = h
    return (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h)


def _steps(h, dim: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(h, dtype=float), (dim,))


def _stencil(y: np.ndarray, h) -> np.ndarray:
    """Points y +/- h_m e_m, shape (..., N, 2, N)."""
    step = np.diag(_steps(h, y.shape[-1]))
    offsets = np.stack([step, -step], axis=1)
    return y[..., None, None, :] + offsets


def fd_christoffel(metric: MetricFn, y, h=1e-3) -> np.ndarray:
    """Christoffel symbols Gamma[..., k, i, j] from central differences of the metric.

    ``h`` is a scalar step or one step per coordinate axis.
    """
    y = np.asarray(y, dtype=float)
    dim = y.shape[-1]
    vals = metric(_stencil(y, h))
    width = 2.0 * _steps(h, dim)[:, None, None]
    dg = (vals[..., 0, :, :] - vals[..., 1, :, :]) / width  # [..., m, i, j]
    ginv = np.linalg.inv(metric(y))
    gamma = np.zeros(y.shape[:-1] + (dim, dim, dim))
    for k in range(dim):
        for i in range(dim):
            for j in range(dim):
                acc = 0.0
                for l in range(dim):
                    acc = acc + ginv[..., k, l] * (
                        dg[..., i, j, l] + dg[..., j, i, l] - dg[..., l, i, j])
                gamma[..., k, i, j] = 0.5 * acc
    return gamma


def fd_curvature(metric: MetricFn, y, h=1e-3) -> dict:
    """Nested central differences: metric -> Christoffel -> Riemann -> Ricci -> scalar.

    Riemann is returned as ``R[..., l, k, i, j]``, the l-component of
    R(d_i, d_j) d_k with R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y]; Ricci is
    Ric[v, w] = sum_l R[l, w, l, v].
    """
    y = np.asarray(y, dtype=float)
    dim = y.shape[-1]
    gamma = fd_christoffel(metric, y, h)
    shifted = fd_christoffel(metric, _stencil(y, h), h)
    width = 2.0 * _steps(h, dim)[:, None, None, None]
    dgamma = (shifted[..., 0, :, :, :] - shifted[..., 1, :, :, :]) / width  # [..., a, l, j, k]
    riem = np.zeros(y.shape[:-1] + (dim,) * 4)
    for l in range(dim):
        for k in range(dim):
            for i in range(dim):
                for j in range(dim):
                    val = dgamma[..., i, l, j, k] - dgamma[..., j, l, i, k]
                    for m in range(dim):
                        val = val + gamma[..., l, i, m] * gamma[..., m, j, k] \
                            - gamma[..., l, j, m] * gamma[..., m, i, k]
                    riem[..., l, k, i, j] = val
    ricci = np.zeros(y.shape[:-1] + (dim, dim))
    for v in range(dim):
        for w in range(dim):
            ricci[..., v, w] = sum(riem[..., l, w, l, v] for l in range(dim))
    g = metric(y)
    ginv = np.linalg.inv(g)
    scalar = np.einsum("...ij,...ij->...", ginv, ricci)
    return {"metric": g, "christoffel": gamma, "riemann": riem, "ricci": ricci, "scalar": scalar}


def fd_laplacian(metric: MetricFn, f: Callable, x, h: float = 1e-3) -> float:
    """Laplace-Beltrami via the divergence form (1/sqrt|g|) d_i (sqrt|g| g^ij d_j f)."""
    x = np.asarray(x, dtype=float)
    dim = x.size

    def flux(y):
        g = metric(y)
        grad = np.array([partial_derivative(f, y, j, h) for j in range(dim)])
        return np.sqrt(abs(np.linalg.det(g))) * np.linalg.solve(g, grad)

    div = 0.0
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        div += (flux(x + e)[i] - flux(x - e)[i]) / (2.0 * h)
    return div / np.sqrt(abs(np.linalg.det(metric(x))))


def max_abs(values: Sequence | np.ndarray) -> float:
    arr = np.asarray(values, dtype=float)
    return float(np.max(np.abs(arr))) if arr.size else 0.0
