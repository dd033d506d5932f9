"""Codimension-two spacelike immersions x -> (e^{u(x)}, 0, x) into the ambient space.

Normal vectors are reported by their coefficients on the lightlike normal
frame (xi, ell).  Tangent-space quantities (Weingarten operators) are n x n
matrices acting on chart vectors; the bilinear forms built from them use the
induced metric e^{2u} g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import numeric
from .ambient import AdmissibleFamily, AmbientMetric, AmbientPoint
from .chart import (FieldCalculus, MetricChart, ScalarField, as_field, conformal_ricci,
                    curvature, field_calculus)
from .errors import SingularGram

__all__ = ["ImmersionFrame", "Immersion", "Cond4Report", "UmbilicReport", "TEST_SCALES"]

# trivial, constant shift, linear gradient, sphere-to-flat conformal factor
TEST_SCALES = ("0", "0.7", "x1/4", "log(2/(1 + x1^2 + x2^2 + x3^2))")


@dataclass(frozen=True)
class ImmersionFrame:
    x: np.ndarray
    field: FieldCalculus
    point: AmbientPoint
    metric: np.ndarray          # g at x
    induced: np.ndarray         # e^{2u} g at x
    gram: np.ndarray            # ambient Gram at the image point
    differential: np.ndarray    # (n+2) x n, columns T Psi(d_i)
    xi: np.ndarray
    ell: np.ndarray
    gamma_dot: np.ndarray       # gamma_dot(0) at x

    def decompose(self, w: np.ndarray) -> tuple[np.ndarray, float, float]:
        """Split an ambient vector as T Psi(top) + c_xi xi + c_ell ell."""
        rhs = self.differential.T @ self.gram @ w
        try:
            top = cho_solve(cho_factor(self.induced), rhs)
        except np.linalg.LinAlgError:
            raise SingularGram("induced metric is not positive definite") from None
        normal = w - self.differential @ top
        return top, float(-(normal @ self.gram @ self.ell)), float(-(normal @ self.gram @ self.xi))

    def compose(self, top, c_xi: float, c_ell: float) -> np.ndarray:
        return self.differential @ np.asarray(top, dtype=float) + c_xi * self.xi + c_ell * self.ell


@dataclass(frozen=True)
class Cond4Report:
    residual: float
    location: list
    uniqueness: bool   # False for n = 2, where the condition does not pin down the connection


@dataclass(frozen=True)
class UmbilicReport:
    umbilic_deviation: float
    einstein_residual: float
    norm_identity_residual: float
    umbilic: bool
    einstein: bool
    tol: float

    @property
    def consistent(self) -> bool:
        return self.umbilic == self.einstein


class Immersion:
    """The immersion Psi^u for a chart, admissible family and scale u."""

    def __init__(self, chart: MetricChart, family: AdmissibleFamily, u="0"):
        self.chart = chart
        self.family = family
        self.u: ScalarField = as_field(u)
        self.ambient = AmbientMetric(chart, family)
        self.n = chart.n

    def immerse(self, x) -> AmbientPoint:
        x = np.asarray(x, dtype=float)
        return AmbientPoint(float(np.exp(self.u(self.n, x))), 0.0, x)

    def differential(self, x, V=None) -> np.ndarray:
        """T Psi as an (n+2) x n matrix, or applied to V."""
        x = np.asarray(x, dtype=float)
        val, du = self.u.jet(self.n, x, 1)
        d = np.zeros((self.n + 2, self.n))
        d[0] = np.exp(val) * du
        d[2:] = np.eye(self.n)
        return d if V is None else d @ np.asarray(V, dtype=float)

    def normal_frame(self, x) -> tuple[np.ndarray, np.ndarray]:
        fc = field_calculus(self.chart, self.u, x)
        return self._normal_frame(fc)

    def _normal_frame(self, fc: FieldCalculus):
        n = self.n
        eu = float(np.exp(fc.value))
        xi = np.zeros(n + 2)
        xi[0] = eu
        ell = np.zeros(n + 2)
        ell[0] = 0.5 * float(fc.grad_norm2) / eu
        ell[1] = -1.0 / eu ** 2
        ell[2:] = fc.gradient / eu ** 2
        return xi, ell

    def frame(self, x) -> ImmersionFrame:
        x = np.asarray(x, dtype=float)
        fc = field_calculus(self.chart, self.u, x)
        p = AmbientPoint(float(np.exp(fc.value)), 0.0, x)
        g = self.chart.metric(x)
        xi, ell = self._normal_frame(fc)
        d = np.zeros((self.n + 2, self.n))
        d[0] = np.exp(fc.value) * fc.differential
        d[2:] = np.eye(self.n)
        dot = self.family.gamma_dot(0.0, x)
        return ImmersionFrame(x, fc, p, g, float(np.exp(2 * fc.value)) * g,
                              self.ambient.gram(p), d, xi, ell, np.asarray(dot))

    # -- closed forms ---------------------------------------------------------
    def weingarten_closed_form(self, x) -> tuple[np.ndarray, np.ndarray]:
        fr = self.frame(x)
        return self._weingarten(fr)

    def _weingarten(self, fr: ImmersionFrame):
        fc = fr.field
        eye = np.eye(self.n)
        a_ell = np.exp(-2 * fc.value) * (0.5 * (fr.gamma_dot - fc.grad_norm2 * eye)
                                         + np.outer(fc.gradient, fc.differential)
                                         - fc.hessian_endo)
        return -eye, a_ell

    def second_fundamental_form(self, x, V, W) -> np.ndarray:
        """Coefficients (on xi, on ell) of II(V, W)."""
        fr = self.frame(x)
        return self._second_fundamental_form(fr, np.asarray(V, float), np.asarray(W, float))

    def _second_fundamental_form(self, fr: ImmersionFrame, V, W) -> np.ndarray:
        fc = fr.field
        g = fr.metric
        vec = (0.5 * (fr.gamma_dot @ V - fc.grad_norm2 * V)
               + float(fc.differential @ V) * fc.gradient - fc.hessian_endo @ V)
        return np.array([-float(vec @ g @ W), float(np.exp(2 * fc.value)) * float(V @ g @ W)])

    def second_fundamental_form_from_weingarten(self, x, V, W) -> np.ndarray:
        """II(V,W) = -g(A_ell V, W) xi - g(A_xi V, W) ell with the induced metric."""
        fr = self.frame(x)
        a_xi, a_ell = self._weingarten(fr)
        V, W = np.asarray(V, float), np.asarray(W, float)
        return np.array([-float((a_ell @ V) @ fr.induced @ W), -float((a_xi @ V) @ fr.induced @ W)])

    def mean_curvature(self, x) -> np.ndarray:
        fr = self.frame(x)
        return self._mean_curvature(fr)

    def _mean_curvature(self, fr: ImmersionFrame) -> np.ndarray:
        fc, n = fr.field, self.n
        tr = float(np.trace(fr.gamma_dot))
        a = np.exp(-2 * fc.value) / n * (fc.laplacian - 0.5 * (tr - (n - 2) * fc.grad_norm2))
        return np.array([float(a), 1.0])

    def mean_curvature_from_weingarten(self, x) -> np.ndarray:
        a_xi, a_ell = self.weingarten_closed_form(x)
        return -np.array([np.trace(a_ell), np.trace(a_xi)]) / self.n

    def mean_curvature_from_scalar(self, x) -> np.ndarray:
        """-(S of e^{2u} g)/(2n(n-1)) xi + ell, valid for a normalized family."""
        n = self.n
        return np.array([-self.conformal_scalar(x) / (2 * n * (n - 1)), 1.0])

    def conformal_scalar(self, x) -> float:
        x = np.asarray(x, dtype=float)
        pack = curvature(self.chart, x)
        ric = conformal_ricci(self.chart, self.u, x, pack)
        return float(np.exp(-2 * self.u(self.n, x)) * np.einsum("ij,ij->", pack.metric_inv, ric))

    # -- extrinsic oracles ------------------------------------------------------
    def _covariant_along(self, x, V, field_fn, h: float = 1e-3) -> tuple[ImmersionFrame, np.ndarray]:
        """nabla~_V of an ambient-valued field along Psi, by differentiating its components."""
        x = np.asarray(x, dtype=float)
        V = np.asarray(V, dtype=float)
        fr = self.frame(x)
        gamma = self.ambient.connection_numeric(fr.point)
        dz = numeric.directional_derivative(field_fn, x, V, h)
        out = dz + np.einsum("abc,b,c->a", gamma, fr.differential @ V, field_fn(x))
        return fr, out

    def weingarten_oracle(self, x, which: str = "ell") -> tuple[np.ndarray, np.ndarray]:
        """A_zeta from the tangential part of nabla~ zeta; also the normal parts.

        Returns (A, normal) where column i of A is A_zeta(d_i) and row i of
        ``normal`` holds the (xi, ell) coefficients of the normal part of
        nabla~_{d_i} zeta.
        """
        idx = {"xi": 0, "ell": 1}[which]
        field_fn = lambda y: self.normal_frame(y)[idx]  # noqa: E731
        A = np.zeros((self.n, self.n))
        normal = np.zeros((self.n, 2))
        for i in range(self.n):
            fr, cov = self._covariant_along(x, np.eye(self.n)[i], field_fn)
            top, c_xi, c_ell = fr.decompose(cov)
            A[:, i] = -top
            normal[i] = (c_xi, c_ell)
        return A, normal

    def second_fundamental_form_oracle(self, x, V, W) -> np.ndarray:
        """Normal part of nabla~_V (T Psi W), as (xi, ell) coefficients."""
        W = np.asarray(W, dtype=float)
        fr, cov = self._covariant_along(x, V, lambda y: self.differential(y, W))
        _, c_xi, c_ell = fr.decompose(cov)
        return np.array([c_xi, c_ell])

    # -- normal tractor condition ---------------------------------------------
    def cond4_residual(self, x) -> np.ndarray:
        """Ric(e^{2u}g) - (n/2)|H|^2 e^{2u}g + (n-2) g~(H, xi) e^{2u}g(., A_ell .)."""
        x = np.asarray(x, dtype=float)
        fr = self.frame(x)
        n = self.n
        ric = conformal_ricci(self.chart, self.u, x)
        a, b = self._mean_curvature(fr)
        norm2 = -2.0 * a * b
        h_xi = -b          # g~(a xi + b ell, xi) with g~(xi, ell) = -1
        _, a_ell = self._weingarten(fr)
        return ric - 0.5 * n * norm2 * fr.induced + (n - 2) * h_xi * fr.induced @ a_ell

    def cond4_scan(self, points) -> Cond4Report:
        best, loc = -1.0, None
        for x in np.atleast_2d(points):
            val = numeric.max_abs(self.cond4_residual(x))
            if val > best:
                best, loc = val, np.asarray(x).tolist()
        return Cond4Report(best, loc, self.n >= 3)

    def umbilic_einstein_check(self, points, tol: float = 1e-6) -> UmbilicReport:
        umb = ein = ident = 0.0
        for x in np.atleast_2d(points):
            fr = self.frame(x)
            _, a_ell = self._weingarten(fr)
            coeffs = self._mean_curvature(fr)
            H = coeffs[0] * fr.xi + coeffs[1] * fr.ell
            mu = float(H @ fr.gram @ fr.ell)
            umb = max(umb, numeric.max_abs(a_ell - mu * np.eye(self.n)))
            pack = curvature(self.chart, x)
            ric = conformal_ricci(self.chart, self.u, x, pack)
            scal = float(np.einsum("ij,ij->", np.linalg.inv(fr.induced), ric))
            ein = max(ein, numeric.max_abs(ric - scal / self.n * fr.induced))
            norm2 = float(H @ fr.gram @ H)
            ident = max(ident, abs(norm2 + 2.0 * float(H @ fr.gram @ fr.xi) * mu))
        return UmbilicReport(umb, ein, ident, umb <= tol, ein <= tol, tol)
