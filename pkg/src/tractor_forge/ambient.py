"""Lorentzian ambient space over a metric chart.

Coordinates on the ambient space are ordered (t, r, x1, ..., xn).  The metric
is

    g~ = d(rt) (x) dt + dt (x) d(rt) + t^2 g(gamma(r) . , .)

so g~_tt = 2r, g~_tr = t, g~_rr = 0, no mixed (t|r, x) terms, and the chart
block is t^2 gamma(r)^T g (gamma is stored as a matrix [k, i] acting on
column vectors).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import numeric
from .chart import MetricChart, curvature, schouten_jet, _coord_env
from .errors import OutOfDomain, RequiresRZero, SchoutenUndefined, SingularGram
from .expr import Expr, as_expr, differentiate, lambdify, render

__all__ = [
    "AdmissibleFamily", "ExprFamily", "SchoutenFamily", "identity_family", "gamma_schouten",
    "AmbientPoint", "AmbientMetric", "NormalizationReport", "normalization_check",
    "estimate_validity_radius",
]

MAX_RADIUS = 10.0


class AdmissibleFamily:
    """One-parameter family gamma(r) of (1,1) tensors with gamma(0) = Id.

    Subclasses provide ``gamma``, ``gamma_dot`` and ``dgamma_dx`` on batches of
    (r, x); results are matrices [k, i] (``dgamma_dx`` has a leading
    derivative index m).
    """

    n: int
    radius: float = MAX_RADIUS

    def gamma(self, r, x) -> np.ndarray:
        raise NotImplementedError

    def gamma_dot(self, r, x) -> np.ndarray:
        raise NotImplementedError

    def dgamma_dx(self, r, x) -> np.ndarray:
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError

    def check(self, chart: MetricChart, radius: float | None = None) -> dict:
        """Residuals of the admissibility conditions on the chart's sample grid."""
        radius = self.radius if radius is None else radius
        xs = chart.sample_grid()
        eye = np.eye(self.n)
        g = chart.metric(xs)
        at_zero = numeric.max_abs(self.gamma(np.zeros(len(xs)), xs) - eye)
        asym, min_det = 0.0, np.inf
        for r in np.linspace(-radius, radius, 9) * (1 - 1e-9):
            G = np.einsum("...ki,...kj->...ij", self.gamma(np.full(len(xs), r), xs), g)
            asym = max(asym, numeric.max_abs(G - np.swapaxes(G, -1, -2)))
            min_det = min(min_det, float(np.min(np.linalg.det(self.gamma(np.full(len(xs), r), xs)))))
        return {"gamma0_minus_identity": at_zero, "self_adjoint_residual": asym,
                "min_det": min_det, "radius": radius}


class ExprFamily(AdmissibleFamily):
    """gamma given as an n x n matrix of expressions in r and x1..xn."""

    def __init__(self, matrix, radius: float | None = None):
        self.matrix = tuple(tuple(as_expr(e) for e in row) for row in matrix)
        self.n = len(self.matrix)
        if any(len(row) != self.n for row in self.matrix):
            raise ValueError("family matrix must be square")
        flat = [e for row in self.matrix for e in row]
        self._gamma = lambdify(flat)
        self._dot = lambdify([differentiate(e, "r") for e in flat])
        self._dx = lambdify([differentiate(e, m + 1) for m in range(self.n) for e in flat])
        self.radius = MAX_RADIUS if radius is None else float(radius)

    def _env(self, r, x):
        x = np.asarray(x, dtype=float)
        env = _coord_env(x)
        env["r"] = np.asarray(r, dtype=float)
        return env, x.shape[:-1]

    def _eval(self, comp, r, x, shape):
        env, _ = self._env(r, x)
        out = comp(env)
        return out.reshape(out.shape[:-1] + shape)

    def gamma(self, r, x):
        return self._eval(self._gamma, r, x, (self.n, self.n))

    def gamma_dot(self, r, x):
        return self._eval(self._dot, r, x, (self.n, self.n))

    def dgamma_dx(self, r, x):
        return self._eval(self._dx, r, x, (self.n, self.n, self.n))

    def to_json(self):
        return {"gamma": [[render(e) for e in row] for row in self.matrix]}


def identity_family(n: int) -> ExprFamily:
    return ExprFamily([["1" if i == j else "0" for j in range(n)] for i in range(n)])


class SchoutenFamily(AdmissibleFamily):
    """gamma(r) = Id + 2 r P-hat, the normalizing family (n >= 3)."""

    def __init__(self, chart: MetricChart, radius: float | None = None):
        if chart.n < 3:
            raise SchoutenUndefined("the Schouten family requires n >= 3")
        self.chart = chart
        self.n = chart.n
        if radius is not None:
            self.radius = float(radius)

    @cached_property
    def radius(self) -> float:
        return estimate_validity_radius(self, self.chart)

    def phat(self, x) -> np.ndarray:
        return curvature(self.chart, x).schouten_endo

    def gamma(self, r, x):
        r = np.asarray(r, dtype=float)[..., None, None]
        return np.eye(self.n) + 2.0 * r * self.phat(x)

    def gamma_dot(self, r, x):
        x = np.asarray(x, dtype=float)
        batch = np.broadcast_shapes(np.shape(r), x.shape[:-1])
        return np.broadcast_to(2.0 * self.phat(x), batch + (self.n, self.n))

    def dgamma_dx(self, r, x):
        r = np.asarray(r, dtype=float)
        x = np.asarray(x, dtype=float)
        if not np.any(r):
            return np.zeros(np.broadcast_shapes(r.shape, x.shape[:-1]) + (self.n,) * 3)
        return 2.0 * r[..., None, None, None] * schouten_jet(self.chart, x)["dPhat"]

    def to_json(self):
        return {"family": "schouten"}


def gamma_schouten(chart: MetricChart) -> SchoutenFamily:
    family = SchoutenFamily(chart)
    family.radius  # noqa: B018 - force the estimate so errors surface here
    return family


def estimate_validity_radius(family: AdmissibleFamily, chart: MetricChart,
                             max_radius: float = MAX_RADIUS, tol: float = 1e-3) -> float:
    """Largest rho <= max_radius with det gamma(r) > 0 for |r| <= rho on the sample grid.

    Bisection on the sampled determinant; the predicate is checked at +/- rho
    and at interior r samples.
    """
    xs = chart.sample_grid()

    def ok(rho: float) -> bool:
        for r in np.linspace(-rho, rho, 9):
            if np.min(np.linalg.det(family.gamma(np.full(len(xs), r), xs))) <= 0:
                return False
        return True

    if ok(max_radius):
        return max_radius
    lo, hi = 0.0, max_radius
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class AmbientPoint:
    t: float
    r: float
    x: np.ndarray

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([[self.t, self.r], np.asarray(self.x, dtype=float)])


class AmbientMetric:
    def __init__(self, chart: MetricChart, family: AdmissibleFamily):
        if family.n != chart.n:
            raise ValueError("family and chart dimensions differ")
        self.chart = chart
        self.family = family
        self.n = chart.n
        self.dim = chart.n + 2

    def point(self, t: float, r: float, x) -> AmbientPoint:
        p = AmbientPoint(float(t), float(r), np.asarray(x, dtype=float))
        self.validate(p)
        return p

    def validate(self, p: AmbientPoint) -> None:
        if not p.t > 0:
            raise OutOfDomain(f"t must be positive, got {p.t}")
        if abs(p.r) >= self.family.radius:
            raise OutOfDomain(f"|r| = {abs(p.r)} exceeds the validity radius {self.family.radius}")
        if not self.chart.contains(p.x):
            raise OutOfDomain(f"x = {np.asarray(p.x).tolist()} lies outside the chart domain")

    # -- metric --------------------------------------------------------------
    def gram_coords(self, y) -> np.ndarray:
        """Gram matrix at ambient coordinates y = (t, r, x...), any batch shape."""
        y = np.asarray(y, dtype=float)
        t, r, x = y[..., 0], y[..., 1], y[..., 2:]
        n = self.n
        out = np.zeros(y.shape[:-1] + (n + 2, n + 2))
        out[..., 0, 0] = 2.0 * r
        out[..., 0, 1] = out[..., 1, 0] = t
        G = np.einsum("...ki,...kj->...ij", self.family.gamma(r, x), self.chart.metric(x))
        G = 0.5 * (G + np.swapaxes(G, -1, -2))  # exact symmetry despite rounding in gamma^T g
        out[..., 2:, 2:] = (t ** 2)[..., None, None] * G
        return out

    def gram(self, p: AmbientPoint) -> np.ndarray:
        self.validate(p)
        return self.gram_coords(p.coords)

    def gram_derivatives(self, p: AmbientPoint) -> np.ndarray:
        """Exact dG[a, b, c] = d_a g~_bc at p."""
        t, r, x = p.t, p.r, np.asarray(p.x, dtype=float)
        n = self.n
        g, dg = self.chart.metric_jet(x, 1)
        gam = self.family.gamma(r, x)
        dot = self.family.gamma_dot(r, x)
        dx = self.family.dgamma_dx(r, x)
        out = np.zeros((n + 2,) * 3)
        out[0, 0, 1] = out[0, 1, 0] = 1.0
        out[0, 2:, 2:] = 2.0 * t * gam.T @ g
        out[1, 0, 0] = 2.0
        out[1, 2:, 2:] = t ** 2 * dot.T @ g
        for m in range(n):
            out[2 + m, 2:, 2:] = t ** 2 * (dx[m].T @ g + gam.T @ dg[m])
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    # -- connection ----------------------------------------------------------
    def connection_numeric(self, p: AmbientPoint) -> np.ndarray:
        """Christoffel symbols Gamma~[A, B, C] of the explicit Gram matrix."""
        G = self.gram(p)
        try:
            ginv = np.linalg.inv(G)
        except np.linalg.LinAlgError:
            raise SingularGram(f"ambient Gram matrix is singular at {p}") from None
        if not np.all(np.isfinite(ginv)):
            raise SingularGram(f"ambient Gram matrix is singular at {p}")
        dG = self.gram_derivatives(p)
        lowered = np.einsum("bcd->dbc", dG) + np.einsum("cbd->dbc", dG) - dG
        return 0.5 * np.einsum("ad,dbc->abc", ginv, lowered)

    def connection_closed_form(self, p: AmbientPoint, a, b) -> np.ndarray:
        """nabla~_a b for constant-coefficient ambient vectors from the closed-form list."""
        self.validate(p)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        n, t = self.n, p.t
        at, ar, V = a[0], a[1], a[2:]
        bt, br, W = b[0], b[1], b[2:]
        out = np.zeros(n + 2)
        # d_t d_r = d_r d_t = (1/t) d_r; d_t d_t = d_r d_r = 0
        out[1] += (at * br + ar * bt) / t
        # V d_t = (1/t) V, and d_t W = W d_t by symmetry
        out[2:] += (bt * V + at * W) / t
        # V d_r = 1/2 gamma^{-1} gamma_dot V
        gam = self.family.gamma(p.r, p.x)
        dot = self.family.gamma_dot(p.r, p.x)
        half = 0.5 * np.linalg.solve(gam, dot)
        out[2:] += br * (half @ V) + ar * (half @ W)
        if np.any(V) and np.any(W):
            if p.r != 0.0:
                raise RequiresRZero("the closed form for nabla~_V W holds only at r = 0")
            g, dg = self.chart.metric_jet(p.x, 1)
            gamma = curvature_christoffel(g, dg)
            out[0] += -0.5 * t * float((dot @ V) @ g @ W)
            out[1] += -float(V @ g @ W)
            out[2:] += np.einsum("kij,i,j->k", gamma, V, W)
        return out

    # -- curvature -----------------------------------------------------------
    def ricci_r0_matrix(self, x) -> np.ndarray:
        """Ric~ restricted to r = 0 on lifted chart directions (closed form)."""
        x = np.asarray(x, dtype=float)
        pack = curvature(self.chart, x)
        dot = self.family.gamma_dot(np.zeros(x.shape[:-1]), x)
        tr = np.trace(dot, axis1=-2, axis2=-1)[..., None, None]
        lowered = np.einsum("...ki,...kj->...ij", dot, pack.metric)
        return pack.ricci - 0.5 * tr * pack.metric - 0.5 * (self.n - 2) * lowered

    def ricci_r0(self, x, V, W) -> float:
        return float(np.asarray(V) @ self.ricci_r0_matrix(x) @ np.asarray(W))

    def ricci_numeric(self, p: AmbientPoint, h: float = 1e-3) -> np.ndarray:
        """Full ambient Ricci tensor from nested finite differences of the Gram matrix.

        The t step is ``h * t`` so the stencil stays proportionate near t = 0.
        """
        self.validate(p)
        if abs(p.r) + 2 * h >= self.family.radius:
            raise OutOfDomain("finite-difference stencil leaves the ambient domain")
        steps = np.full(self.dim, h)
        steps[0] = h * p.t
        return numeric.fd_curvature(self.gram_coords, p.coords, steps)["ricci"]


def curvature_christoffel(g, dg) -> np.ndarray:
    ginv = np.linalg.inv(g)
    lowered = np.einsum("ijl->lij", dg) + np.einsum("jil->lij", dg) - dg
    return 0.5 * np.einsum("kl,lij->kij", ginv, lowered)


@dataclass(frozen=True)
class NormalizationReport:
    residual: float
    location: list
    kind: str
    n: int


def normalization_check(chart: MetricChart, family: AdmissibleFamily, points=None) -> NormalizationReport:
    """Distance of gamma_dot(0) from the normalization (2P for n >= 3, trace = 2K for n = 2)."""
    xs = chart.sample_grid() if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    pack = curvature(chart, xs)
    dot = family.gamma_dot(np.zeros(len(xs)), xs)
    if chart.n == 2:
        dev = np.abs(np.trace(dot, axis1=-2, axis2=-1) - 2.0 * pack.gauss)
        k = int(np.argmax(dev))
        return NormalizationReport(float(dev[k]), xs[k].tolist(), "trace(gamma_dot) - 2K", 2)
    lowered = np.einsum("...ki,...kj->...ij", dot, pack.metric)
    dev = np.max(np.abs(lowered - 2.0 * pack.schouten), axis=(-1, -2))
    k = int(np.argmax(dev))
    return NormalizationReport(float(dev[k]), xs[k].tolist(), "g(gamma_dot .,.) - 2P", chart.n)


def family_from_json(data, chart: MetricChart) -> AdmissibleFamily:
    if data in (None, "schouten") or (isinstance(data, dict) and data.get("family") == "schouten"):
        return gamma_schouten(chart)
    if data == "identity" or (isinstance(data, dict) and data.get("family") == "identity"):
        return identity_family(chart.n)
    if isinstance(data, dict) and "gamma" in data:
        return ExprFamily(data["gamma"], data.get("radius"))
    if isinstance(data, list):
        return ExprFamily(data)
    raise ValueError(f"unrecognised family specification: {data!r}")

