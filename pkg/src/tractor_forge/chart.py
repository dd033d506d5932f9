"""Riemannian geometry of a single coordinate chart.

Conventions: ``Gamma[k, i, j]`` is the coefficient of d_k in nabla_{d_i} d_j;
``Riem[l, k, i, j]`` is the l-component of R(d_i, d_j) d_k with
R(X,Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z; and
Ric(V, W) = trace(Z -> R(Z, V) W).  With these signs the round sphere has
positive Ricci curvature.

All point-wise functions accept a single point of shape (n,) or a batch of
shape (..., n).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement, product
from typing import Sequence

import numpy as np

from . import numeric
from .errors import BoundaryTooClose, SchoutenUndefined, SingularMetric
from .expr import Expr, as_expr, differentiate, lambdify, parse, render

__all__ = [
    "MetricChart", "CurvaturePack", "ScalarField", "FieldCalculus",
    "christoffel", "curvature", "curvature_fd_oracle", "field_calculus",
    "conformal_ricci", "schouten_jet", "flat", "sphere", "hyperbolic", "perturbed",
]


def _coord_env(x: np.ndarray) -> dict:
    return {f"x{i + 1}": x[..., i] for i in range(x.shape[-1])}


class _JetTable:
    """Compiled partial derivatives of a symmetric family of expressions.

    ``entries`` maps a flat slot to an Expr; ``layout`` is an integer array of
    shape ``shape`` indexing into those slots.  ``order`` k derivative arrays
    have shape (n,)*k + shape.
    """

    def __init__(self, entries: Sequence[Expr], layout: np.ndarray, n: int, order: int):
        combos = list(combinations_with_replacement(range(n), order))
        exprs = []
        for combo in combos:
            for e in entries:
                for var in combo:
                    e = differentiate(e, var + 1)
                exprs.append(e)
        self.compiled = lambdify(exprs)
        index = np.empty((n,) * order + layout.shape, dtype=int)
        pos = {c: k for k, c in enumerate(combos)}
        for multi in product(range(n), repeat=order):
            index[multi] = pos[tuple(sorted(multi))] * len(entries) + layout
        self.index = index

    def __call__(self, env: dict) -> np.ndarray:
        return self.compiled(env)[..., self.index]


def _symmetric_layout(n: int) -> tuple[list, np.ndarray]:
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    layout = np.empty((n, n), dtype=int)
    for k, (i, j) in enumerate(pairs):
        layout[i, j] = layout[j, i] = k
    return pairs, layout


@dataclass(frozen=True)
class MetricChart:
    """A Riemannian metric on an axis-aligned coordinate box.

    ``g`` holds the n x n expression matrix; only the upper triangle is used
    for evaluation after symmetry has been checked on the sample grid.
    """

    n: int
    domain: tuple
    g: tuple
    label: str = ""
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"dimension must be >= 2, got {self.n}")
        g = tuple(tuple(as_expr(e) for e in row) for row in self.g)
        dom = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        if len(g) != self.n or any(len(row) != self.n for row in g):
            raise ValueError("metric matrix must be n x n")
        if len(dom) != self.n or any(lo >= hi for lo, hi in dom):
            raise ValueError("domain must be n intervals [lo, hi] with lo < hi")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "domain", dom)
        if self.validate:
            self._check()

    def _check(self):
        grid = self.sample_grid(5, shrink=0.0)
        full = lambdify([e for row in self.g for e in row])(_coord_env(grid))
        full = full.reshape(grid.shape[:-1] + (self.n, self.n))
        asym = np.max(np.abs(full - np.swapaxes(full, -1, -2)))
        if asym > 1e-12 * max(1.0, np.max(np.abs(full))):
            raise ValueError(f"metric matrix is not symmetric (deviation {asym:.3e})")
        self.metric(grid)

    # -- derivative tables -------------------------------------------------
    @cached_property
    def _layout(self):
        return _symmetric_layout(self.n)

    def _table(self, order: int) -> _JetTable:
        cache = self.__dict__.setdefault("_tables", {})
        if order not in cache:
            pairs, layout = self._layout
            cache[order] = _JetTable([self.g[i][j] for i, j in pairs], layout, self.n, order)
        return cache[order]

    def metric_jet(self, x, order: int = 2) -> list[np.ndarray]:
        """[g, dg, ddg, ...] up to ``order``; dg[..., m, i, j] = d_m g_ij."""
        x = np.asarray(x, dtype=float)
        env = _coord_env(x)
        return [self._table(k)(env) for k in range(order + 1)]

    def metric(self, x) -> np.ndarray:
        """Metric matrix at x, verified positive definite by Cholesky."""
        g = self._table(0)(_coord_env(np.asarray(x, dtype=float)))
        _cholesky_or_raise(g, x)
        return g

    # -- sampling ------------------------------------------------------------
    def sample_grid(self, per_axis: int = 5, shrink: float = 0.1) -> np.ndarray:
        return numeric.sample_grid(self.domain, per_axis, shrink)

    def random_points(self, count: int = 20, seed: int = 0, shrink: float = 0.1) -> np.ndarray:
        return numeric.random_points(self.domain, count, seed, shrink)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        box = np.asarray(self.domain)
        return bool(np.all((x >= box[:, 0]) & (x <= box[:, 1])))

    # -- constructions -------------------------------------------------------
    def conformally_scaled(self, u) -> "MetricChart":
        """The chart of e^{2u} g."""
        factor = parse(f"exp(2*({render(as_expr(u))}))")
        g = tuple(tuple(factor * e for e in row) for row in self.g)
        return MetricChart(self.n, self.domain, g, f"exp(2u)*{self.label or 'g'}")

    def to_json(self) -> dict:
        data = {"n": self.n, "domain": [list(b) for b in self.domain],
                "g": [[render(e) for e in row] for row in self.g]}
        if self.label:
            data["label"] = self.label
        return data

    @classmethod
    def from_json(cls, data: dict | str) -> "MetricChart":
        if isinstance(data, str):
            data = json.loads(data)
        n = int(data["n"])
        g = tuple(tuple(parse(str(e)) if not isinstance(e, (int, float)) else as_expr(e)
                        for e in row) for row in data["g"])
        return cls(n, tuple(tuple(b) for b in data["domain"]), g, data.get("label", ""))


def _cholesky_or_raise(g: np.ndarray, x) -> None:
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise SingularMetric(f"metric is not positive definite at {np.asarray(x).tolist()}") from None


# ---------------------------------------------------------------- Levi-Civita jets

def _christoffel_from_jet(g, dg):
    ginv = np.linalg.inv(g)
    lowered = (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg)
               - dg)  # [..., l, i, j]
    return ginv, lowered, 0.5 * np.einsum("...kl,...lij->...kij", ginv, lowered)


def _levi_civita_jet(jet: list[np.ndarray], order: int) -> dict:
    """Gamma and its first ``order`` coordinate derivatives from metric jets."""
    g, dg = jet[0], jet[1]
    ginv, A, gamma = _christoffel_from_jet(g, dg)
    out = {"ginv": ginv, "gamma": gamma}
    if order < 1:
        return out
    ddg = jet[2]
    dA = (np.einsum("...mijl->...mlij", ddg) + np.einsum("...mjil->...mlij", ddg) - ddg)
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", ginv, dg, ginv)
    dgamma = 0.5 * (np.einsum("...mkl,...lij->...mkij", dginv, A)
                    + np.einsum("...kl,...mlij->...mkij", ginv, dA))
    out.update(dginv=dginv, dgamma=dgamma)
    if order < 2:
        return out
    dddg = jet[3]
    ddA = (np.einsum("...mpijl->...mplij", dddg) + np.einsum("...mpjil->...mplij", dddg) - dddg)
    ddginv = -(np.einsum("...pka,...mab,...bl->...mpkl", dginv, dg, ginv)
               + np.einsum("...ka,...mpab,...bl->...mpkl", ginv, ddg, ginv)
               + np.einsum("...ka,...mab,...pbl->...mpkl", ginv, dg, dginv))
    ddgamma = 0.5 * (np.einsum("...mpkl,...lij->...mpkij", ddginv, A)
                     + np.einsum("...mkl,...plij->...mpkij", dginv, dA)
                     + np.einsum("...pkl,...mlij->...mpkij", dginv, dA)
                     + np.einsum("...kl,...mplij->...mpkij", ginv, ddA))
    out.update(ddgamma=ddgamma)
    return out


def _riemann(gamma, dgamma):
    # R[l,k,i,j] = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
    return (np.einsum("...iljk->...lkij", dgamma) - np.einsum("...jlik->...lkij", dgamma)
            + np.einsum("...lim,...mjk->...lkij", gamma, gamma)
            - np.einsum("...ljm,...mik->...lkij", gamma, gamma))


def _d_riemann(gamma, dgamma, ddgamma):
    # derivative index p first: dR[p, l, k, i, j]
    return (np.einsum("...piljk->...plkij", ddgamma) - np.einsum("...pjlik->...plkij", ddgamma)
            + np.einsum("...plim,...mjk->...plkij", dgamma, gamma)
            + np.einsum("...lim,...pmjk->...plkij", gamma, dgamma)
            - np.einsum("...pljm,...mik->...plkij", dgamma, gamma)
            - np.einsum("...ljm,...pmik->...plkij", gamma, dgamma))


def _ricci(riem):
    return np.einsum("...lwlv->...vw", riem)


# ---------------------------------------------------------------- curvature pack

@dataclass(frozen=True)
class CurvaturePack:
    """Curvature quantities of a chart at one point (or a batch of points)."""

    point: np.ndarray
    n: int
    metric: np.ndarray
    metric_inv: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray

    @property
    def schouten(self) -> np.ndarray:
        """P = (Ric - S/(2(n-1)) g) / (n-2); undefined for n = 2."""
        if self.n == 2:
            raise SchoutenUndefined("the Schouten tensor requires n >= 3")
        s = np.asarray(self.scalar)[..., None, None]
        return (self.ricci - s / (2.0 * (self.n - 1)) * self.metric) / (self.n - 2)

    @property
    def schouten_endo(self) -> np.ndarray:
        """P-hat with P(V, W) = g(P-hat V, W), as matrix [k, i]."""
        return np.einsum("...kl,...li->...ki", self.metric_inv, self.schouten)

    @property
    def gauss(self) -> np.ndarray:
        if self.n != 2:
            raise ValueError("Gauss curvature is defined for n = 2 only")
        return 0.5 * np.asarray(self.scalar)

    def einstein_residual(self) -> float:
        s = np.asarray(self.scalar)[..., None, None]
        return numeric.max_abs(self.ricci - s / self.n * self.metric)


def christoffel(chart: MetricChart, x) -> np.ndarray:
    """Gamma[..., k, i, j] with exact symbolic metric derivatives."""
    g, dg = chart.metric_jet(x, 1)
    _cholesky_or_raise(g, x)
    return _christoffel_from_jet(g, dg)[2]


def curvature(chart: MetricChart, x) -> CurvaturePack:
    x = np.asarray(x, dtype=float)
    jet = chart.metric_jet(x, 2)
    _cholesky_or_raise(jet[0], x)
    lc = _levi_civita_jet(jet, 1)
    riem = _riemann(lc["gamma"], lc["dgamma"])
    ric = _ricci(riem)
    scal = np.einsum("...ij,...ij->...", lc["ginv"], ric)
    return CurvaturePack(x, chart.n, jet[0], lc["ginv"], lc["gamma"], riem, ric, scal)


def schouten_jet(chart: MetricChart, x) -> dict:
    """Schouten tensor, its endomorphism and their exact first derivatives.

    ``dP[..., m, i, j] = d_m P_ij`` and ``dPhat[..., m, k, i] = d_m Phat^k_i``.
    """
    if chart.n == 2:
        raise SchoutenUndefined("the Schouten tensor requires n >= 3")
    x = np.asarray(x, dtype=float)
    n = chart.n
    jet = chart.metric_jet(x, 3)
    _cholesky_or_raise(jet[0], x)
    g, dg = jet[0], jet[1]
    lc = _levi_civita_jet(jet, 2)
    ginv, dginv = lc["ginv"], lc["dginv"]
    riem = _riemann(lc["gamma"], lc["dgamma"])
    driem = _d_riemann(lc["gamma"], lc["dgamma"], lc["ddgamma"])
    ric = _ricci(riem)
    dric = np.einsum("...plwlv->...pvw", driem)
    scal = np.einsum("...ij,...ij->...", ginv, ric)
    dscal = np.einsum("...pij,...ij->...p", dginv, ric) + np.einsum("...ij,...pij->...p", ginv, dric)
    c = 1.0 / (2.0 * (n - 1))
    P = (ric - c * scal[..., None, None] * g) / (n - 2)
    dP = (dric - c * (dscal[..., :, None, None] * g[..., None, :, :]
                      + scal[..., None, None, None] * dg)) / (n - 2)
    Phat = np.einsum("...kl,...li->...ki", ginv, P)
    dPhat = (np.einsum("...mkl,...li->...mki", dginv, P)
             + np.einsum("...kl,...mli->...mki", ginv, dP))
    return {"P": P, "Phat": Phat, "dP": dP, "dPhat": dPhat, "metric": g, "scalar": scal}


def curvature_fd_oracle(chart: MetricChart, x, h: float = 1e-3) -> CurvaturePack:
    """Curvature from nested central differences of metric values only."""
    x = np.asarray(x, dtype=float)
    box = np.asarray(chart.domain)
    if np.any(x - 2 * h < box[:, 0]) or np.any(x + 2 * h > box[:, 1]):
        raise BoundaryTooClose(f"point {x.tolist()} is closer than 2h = {2 * h} to the boundary")
    fd = numeric.fd_curvature(chart.metric, x, h)
    return CurvaturePack(x, chart.n, fd["metric"], np.linalg.inv(fd["metric"]),
                         fd["christoffel"], fd["riemann"], fd["ricci"], fd["scalar"])


# ---------------------------------------------------------------- scalar fields

@dataclass(frozen=True)
class ScalarField:
    expr: Expr

    def __post_init__(self):
        object.__setattr__(self, "expr", as_expr(self.expr))

    @cached_property
    def _jets(self):
        return {}

    def jet(self, n: int, x, order: int = 2) -> list[np.ndarray]:
        """[u, du, ddu] with du[..., i] = d_i u and ddu[..., i, j]."""
        key = (n, order)
        if key not in self._jets:
            pairs, layout = _symmetric_layout(n)
            tables = [lambdify([self.expr])]
            if order >= 1:
                tables.append(lambdify([differentiate(self.expr, i + 1) for i in range(n)]))
            if order >= 2:
                first = [differentiate(self.expr, i + 1) for i in range(n)]
                tables.append((lambdify([differentiate(first[i], j + 1) for i, j in pairs]), layout))
            self._jets[key] = tables
        env = _coord_env(np.asarray(x, dtype=float))
        out = []
        for k, t in enumerate(self._jets[key]):
            if k == 0:
                out.append(t(env)[..., 0])
            elif k == 1:
                out.append(t(env))
            else:
                comp, layout = t
                out.append(comp(env)[..., layout])
        return out

    def __call__(self, n: int, x) -> np.ndarray:
        return self.jet(n, x, 0)[0]


def as_field(u) -> ScalarField:
    return u if isinstance(u, ScalarField) else ScalarField(as_expr(u))


@dataclass(frozen=True)
class FieldCalculus:
    value: np.ndarray
    differential: np.ndarray   # d_i u
    gradient: np.ndarray       # (grad u)^i
    hessian: np.ndarray        # (0,2): nabla^2 u(d_i, d_j)
    hessian_endo: np.ndarray   # (1,1): V -> nabla_V grad u, matrix [k, i]
    laplacian: np.ndarray
    grad_norm2: np.ndarray


def field_calculus(chart: MetricChart, u, x) -> FieldCalculus:
    u = as_field(u)
    x = np.asarray(x, dtype=float)
    g, dg = chart.metric_jet(x, 1)
    _cholesky_or_raise(g, x)
    ginv, _, gamma = _christoffel_from_jet(g, dg)
    val, du, ddu = u.jet(chart.n, x, 2)
    grad = np.einsum("...ij,...j->...i", ginv, du)
    hess = ddu - np.einsum("...kij,...k->...ij", gamma, du)
    endo = np.einsum("...kl,...li->...ki", ginv, hess)
    lap = np.einsum("...ij,...ij->...", ginv, hess)
    norm2 = np.einsum("...i,...i->...", grad, du)
    return FieldCalculus(val, du, grad, hess, endo, lap, norm2)


def conformal_ricci(chart: MetricChart, u, x, pack: CurvaturePack | None = None) -> np.ndarray:
    """Ricci tensor of e^{2u} g from the conformal transformation law."""
    pack = pack or curvature(chart, x)
    fc = field_calculus(chart, u, x)
    n = chart.n
    g = pack.metric
    lap = np.asarray(fc.laplacian)[..., None, None]
    nrm = np.asarray(fc.grad_norm2)[..., None, None]
    return (pack.ricci - lap * g - (n - 2) * nrm * g
            + (n - 2) * np.einsum("...i,...j->...ij", fc.differential, fc.differential)
            - (n - 2) * fc.hessian)


# ---------------------------------------------------------------- catalog

def _diagonal(n: int, factor: str) -> tuple:
    f = parse(factor)
    zero = parse("0")
    return tuple(tuple(f if i == j else zero for j in range(n)) for i in range(n))


def _norm2(n: int) -> str:
    return " + ".join(f"x{i + 1}^2" for i in range(n))


def flat(n: int = 3, half_width: float = 1.0) -> MetricChart:
    return MetricChart(n, ((-half_width, half_width),) * n, _diagonal(n, "1"), f"flat({n})")


def sphere(n: int = 3, radius: float = 1.0) -> MetricChart:
    """Stereographic chart of the round sphere of the given radius on [-0.9, 0.9]^n."""
    factor = f"{4.0 * radius ** 2!r}/(1 + {_norm2(n)})^2"
    return MetricChart(n, ((-0.9, 0.9),) * n, _diagonal(n, factor), f"sphere({n},{radius:g})")


def hyperbolic(n: int = 3) -> MetricChart:
    """Upper half-space model, last coordinate in [1, 2]."""
    domain = ((-1.0, 1.0),) * (n - 1) + ((1.0, 2.0),)
    return MetricChart(n, domain, _diagonal(n, f"1/x{n}^2"), f"hyperbolic({n})")


def perturbed(n: int = 3, eps: float = 0.3) -> MetricChart:
    """(1 + eps x1^2) times the flat metric; not Einstein for eps != 0."""
    return MetricChart(n, ((-1.0, 1.0),) * n, _diagonal(n, f"1 + {float(eps)!r}*x1^2"),
                       f"perturbed({n},{eps:g})")
