"""The normal tractor bundle realized along the immersion x -> (1, 0, x).

A tractor at x is stored by its components (w_top, w1, w2) in the frame
{T Psi d_i, xi, ell} = {d_i, d_t, -d_r}.  The covariant derivative is
available from the component formula and from ambient differentiation;
transport integrates the component formula along curves with fixed-step RK4.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import numeric
from .ambient import AdmissibleFamily, gamma_schouten, normalization_check
from .chart import MetricChart, _coord_env, curvature
from .errors import (NotEinstein, OutOfDomain, RequiresNormalizedFamily, SchoutenUndefined,
                     StepSizeUnderflow)
from .expr import Expr, Num, as_expr, differentiate, lambdify, parse, render
from .immersion import Immersion

__all__ = [
    "TractorVector", "TractorSection", "CurvePath", "PiecewisePath", "TransportResult",
    "ResidualReport", "TractorBundle", "fit_einstein_constant", "einstein_scale_tractor",
    "flat_parallel_section", "path_from_json",
]

NORMALIZATION_TOL = 1e-6
STEPS_PER_UNIT = 2000


@dataclass(frozen=True)
class TractorVector:
    w_top: np.ndarray
    w1: float
    w2: float

    def __post_init__(self):
        object.__setattr__(self, "w_top", np.asarray(self.w_top, dtype=float))
        object.__setattr__(self, "w1", float(self.w1))
        object.__setattr__(self, "w2", float(self.w2))

    @classmethod
    def from_array(cls, arr) -> "TractorVector":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:-2], arr[-2], arr[-1])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.w_top, [self.w1, self.w2]])

    def to_json(self) -> dict:
        return {"w_top": self.w_top.tolist(), "w1": self.w1, "w2": self.w2}

    @classmethod
    def from_json(cls, data: dict) -> "TractorVector":
        return cls(data["w_top"], data["w1"], data["w2"])


@dataclass(frozen=True)
class TractorSection:
    """A tractor field given by expressions in the chart coordinates."""

    w_top: tuple
    w1: Expr
    w2: Expr

    def __post_init__(self):
        object.__setattr__(self, "w_top", tuple(as_expr(e) for e in self.w_top))
        object.__setattr__(self, "w1", as_expr(self.w1))
        object.__setattr__(self, "w2", as_expr(self.w2))

    @property
    def n(self) -> int:
        return len(self.w_top)

    @property
    def components(self) -> tuple:
        return self.w_top + (self.w1, self.w2)

    @cached_property
    def _values(self):
        return lambdify(self.components)

    @cached_property
    def _derivatives(self):
        return lambdify([differentiate(c, i + 1) for c in self.components for i in range(self.n)])

    def values(self, x) -> np.ndarray:
        """Component array of shape (..., n+2)."""
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self._values(_coord_env(x)), x.shape[:-1] + (self.n + 2,)).copy()

    def derivatives(self, x) -> np.ndarray:
        """d_i of each component, shape (..., n+2, n)."""
        x = np.asarray(x, dtype=float)
        flat = np.broadcast_to(self._derivatives(_coord_env(x)), x.shape[:-1] + ((self.n + 2) * self.n,))
        return flat.reshape(x.shape[:-1] + (self.n + 2, self.n))

    def __call__(self, x) -> TractorVector:
        return TractorVector.from_array(self.values(x))

    def to_json(self) -> dict:
        return {"w_top": [render(e) for e in self.w_top], "w1": render(self.w1), "w2": render(self.w2)}

    @classmethod
    def from_json(cls, data: dict | str) -> "TractorSection":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(tuple(parse(str(e)) for e in data["w_top"]), parse(str(data["w1"])), parse(str(data["w2"])))


# ---------------------------------------------------------------- curves

@dataclass(frozen=True)
class CurvePath:
    """A smooth curve s -> (c1(s), ..., cn(s)) on [s0, s1]."""

    coords: tuple
    s0: float = 0.0
    s1: float = 1.0
    loop: bool = False

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(as_expr(e) for e in self.coords))
        if self.loop:
            gap = numeric.max_abs(self.position(self.s1) - self.position(self.s0))
            if gap > 1e-12:
                raise ValueError(f"loop endpoints differ by {gap:.3e}")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def pieces(self) -> tuple:
        return (self,)

    @cached_property
    def _position(self):
        return lambdify(self.coords)

    @cached_property
    def _velocity(self):
        return lambdify([differentiate(e, "s") for e in self.coords])

    def position(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(self._position({"s": s}), s.shape + (self.n,)).copy()

    def velocity(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(self._velocity({"s": s}), s.shape + (self.n,)).copy()

    @property
    def start(self) -> np.ndarray:
        return self.position(self.s0)

    def to_json(self) -> dict:
        return {"coords": [render(e) for e in self.coords], "s": [self.s0, self.s1], "loop": self.loop}

    @classmethod
    def from_json(cls, data: dict) -> "CurvePath":
        s0, s1 = data.get("s", (0.0, 1.0))
        return cls(tuple(parse(str(e)) for e in data["coords"]), float(s0), float(s1), bool(data.get("loop", False)))

    @classmethod
    def segment(cls, a, b) -> "CurvePath":
        """Straight segment from a to b with s in [0, 1]."""
        coords = tuple(parse(f"{float(p)!r} + ({float(q) - float(p)!r})*s") for p, q in zip(a, b))
        return cls(coords)

    @classmethod
    def circle(cls, centre, radius: float, plane: tuple[int, int] = (0, 1)) -> "CurvePath":
        """Circle through centre + radius e_i, parametrized by angle over [0, 2 pi]."""
        coords = [parse(repr(float(c))) for c in centre]
        i, j = plane
        coords[i] = parse(f"{float(centre[i])!r} + {radius!r}*cos(s)")
        coords[j] = parse(f"{float(centre[j])!r} + {radius!r}*sin(s)")
        return cls(tuple(coords), 0.0, 2 * math.pi, True)


@dataclass(frozen=True)
class PiecewisePath:
    """Concatenation of smooth pieces, e.g. a polygon."""

    pieces: tuple
    loop: bool = False

    def __post_init__(self):
        for a, b in zip(self.pieces, self.pieces[1:]):
            if numeric.max_abs(a.position(a.s1) - b.start) > 1e-12:
                raise ValueError("path pieces are not contiguous")
        if self.loop:
            last = self.pieces[-1]
            if numeric.max_abs(last.position(last.s1) - self.start) > 1e-12:
                raise ValueError("loop endpoints differ")

    @property
    def n(self) -> int:
        return self.pieces[0].n

    @property
    def start(self) -> np.ndarray:
        return self.pieces[0].start

    @classmethod
    def polygon(cls, vertices, closed: bool = True) -> "PiecewisePath":
        verts = [np.asarray(v, dtype=float) for v in vertices]
        if closed:
            verts.append(verts[0])
        return cls(tuple(CurvePath.segment(a, b) for a, b in zip(verts, verts[1:])), closed)

    def to_json(self) -> dict:
        return {"pieces": [p.to_json() for p in self.pieces], "loop": self.loop}


def square_loop(corner, side: float = 1.0, plane: tuple[int, int] = (0, 1)) -> PiecewisePath:
    corner = np.asarray(corner, dtype=float)
    i, j = plane
    e_i, e_j = np.eye(len(corner))[i] * side, np.eye(len(corner))[j] * side
    return PiecewisePath.polygon([corner, corner + e_i, corner + e_i + e_j, corner + e_j])


def path_from_json(data: dict):
    if "polygon" in data:
        return PiecewisePath.polygon(data["polygon"], bool(data.get("loop", True)))
    if "pieces" in data:
        return PiecewisePath(tuple(CurvePath.from_json(p) for p in data["pieces"]), bool(data.get("loop", False)))
    return CurvePath.from_json(data)


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class TransportResult:
    end: np.ndarray             # (n+2,) or (n+2, m) for several initial vectors
    s: np.ndarray               # sample parameters (cumulative over pieces)
    states: np.ndarray          # states at those parameters
    steps: int                  # steps used on the finest accepted run
    refinement_change: float | None

    @property
    def vector(self) -> TractorVector:
        return TractorVector.from_array(self.end)


@dataclass(frozen=True)
class ResidualReport:
    """Maxima of the parallel-section residuals over points and coordinate directions.

    ``tangential``, ``xi`` and ``ell`` come from the component system;
    ``shape_first`` and ``shape_second`` from the Weingarten/second
    fundamental form system; ``form_disagreement`` compares the two.
    """

    tangential: float
    xi: float
    ell: float
    shape_first: float
    shape_second: float
    form_disagreement: float
    location: list

    @property
    def max(self) -> float:
        return max(self.tangential, self.xi, self.ell)

    def to_json(self) -> dict:
        return {"tangential": self.tangential, "xi": self.xi, "ell": self.ell,
                "shape_first": self.shape_first, "shape_second": self.shape_second,
                "form_disagreement": self.form_disagreement, "max": self.max,
                "location": self.location}


# ---------------------------------------------------------------- bundle

class TractorBundle:
    """Tractor calculus for a chart at the scale u = 0."""

    def __init__(self, chart: MetricChart, family: AdmissibleFamily | None = None):
        if chart.n < 3:
            raise SchoutenUndefined("the normal tractor connection is only determined for n >= 3")
        self.chart = chart
        self.n = chart.n
        self.family = family if family is not None else gamma_schouten(chart)
        self.immersion = Immersion(chart, self.family, "0")

    @cached_property
    def normalization_residual(self) -> float:
        return normalization_check(self.chart, self.family).residual

    def _require_normalized(self) -> None:
        if self.normalization_residual > NORMALIZATION_TOL:
            raise RequiresNormalizedFamily(
                f"gamma_dot(0) differs from 2 P-hat by {self.normalization_residual:.3e}")

    # -- metric ---------------------------------------------------------------
    def gram(self, x) -> np.ndarray:
        n = self.n
        h = np.zeros((n + 2, n + 2))
        h[:n, :n] = self.chart.metric(x)
        h[n, n + 1] = h[n + 1, n] = -1.0
        return h

    def metric(self, W, Z, x) -> float:
        w = _as_array(W)
        z = _as_array(Z)
        return float(w @ self.gram(x) @ z)

    # -- covariant derivative ---------------------------------------------------
    def cov_deriv_intrinsic(self, sec: TractorSection, V, x) -> TractorVector:
        self._require_normalized()
        x = np.asarray(x, dtype=float)
        V = np.asarray(V, dtype=float)
        n = self.n
        pack = curvature(self.chart, x)
        P, Phat = pack.schouten, pack.schouten_endo
        vals = sec.values(x)
        dvals = sec.derivatives(x) @ V
        w, w1, w2 = vals[:n], vals[n], vals[n + 1]
        nabla_w = dvals[:n] + np.einsum("kij,i,j->k", pack.christoffel, V, w)
        top = nabla_w + w1 * V - w2 * (Phat @ V)
        return TractorVector(top, dvals[n] - V @ P @ w, dvals[n + 1] + V @ pack.metric @ w)

    def cov_deriv_extrinsic_oracle(self, sec: TractorSection, V, x, h: float = 1e-3) -> TractorVector:
        """Differentiate the ambient realization of ``sec`` and split the result in the frame."""
        imm = self.immersion
        n = self.n

        def ambient(y):
            vals = sec.values(y)
            xi, ell = imm.normal_frame(y)
            return imm.differential(y) @ vals[:n] + vals[n] * xi + vals[n + 1] * ell

        fr, cov = imm._covariant_along(x, V, ambient, h)
        top, c_xi, c_ell = fr.decompose(cov)
        return TractorVector(top, c_xi, c_ell)

    # -- transport ----------------------------------------------------------------
    def transport_matrix(self, c, dc) -> np.ndarray:
        """A(s) with W' = A W for the parallel transport equation; batched over samples."""
        n = self.n
        c = np.atleast_2d(c)
        dc = np.atleast_2d(dc)
        pack = curvature(self.chart, c)
        A = np.zeros(c.shape[:-1] + (n + 2, n + 2))
        A[..., :n, :n] = -np.einsum("...kji,...j->...ki", pack.christoffel, dc)
        A[..., :n, n] = -dc
        A[..., :n, n + 1] = np.einsum("...ki,...i->...k", pack.schouten_endo, dc)
        A[..., n, :n] = np.einsum("...ji,...j->...i", pack.schouten, dc)
        A[..., n + 1, :n] = -np.einsum("...ji,...j->...i", pack.metric, dc)
        return A

    def _integrate(self, piece: CurvePath, W: np.ndarray, steps: int, backward: bool, keep: bool):
        a, b = (piece.s1, piece.s0) if backward else (piece.s0, piece.s1)
        h = (b - a) / steps
        ss = a + 0.5 * h * np.arange(2 * steps + 1)
        pts = piece.position(ss)
        box = np.asarray(self.chart.domain)
        if np.any(pts < box[:, 0]) or np.any(pts > box[:, 1]):
            raise OutOfDomain("transport path leaves the chart domain")
        A = self.transport_matrix(pts, piece.velocity(ss))
        states = [W] if keep else None
        for k in range(steps):
            a0, am, a1 = A[2 * k], A[2 * k + 1], A[2 * k + 2]
            k1 = a0 @ W
            k2 = am @ (W + 0.5 * h * k1)
            k3 = am @ (W + 0.5 * h * k2)
            k4 = a1 @ (W + h * k3)
            W = W + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if keep:
                states.append(W)
        return W, (ss[::2], np.array(states)) if keep else None

    def _run(self, path, W0: np.ndarray, steps_per_unit: float, backward: bool, keep: bool):
        pieces = path.pieces[::-1] if backward else path.pieces
        W = W0
        s_all, st_all, offset, total = [], [], 0.0, 0
        for piece in pieces:
            steps = max(1, math.ceil(steps_per_unit * abs(piece.s1 - piece.s0)))
            total += steps
            W, samples = self._integrate(piece, W, steps, backward, keep)
            if keep:
                ss, st = samples
                s_all.append(offset + np.abs(ss - ss[0]))
                st_all.append(st)
                offset += abs(piece.s1 - piece.s0)
        if keep:
            return W, np.concatenate(s_all), np.concatenate(st_all), total
        return W, np.zeros(0), np.zeros((0,) + W.shape), total

    def parallel_transport(self, path, W0, steps_per_unit: float = STEPS_PER_UNIT, *,
                           backward: bool = False, verify: bool = False, verify_tol: float = 1e-7,
                           max_refinements: int = 4, samples: bool = False) -> TransportResult:
        """Transport W0 (a TractorVector, an (n+2,) array or an (n+2, m) matrix) along ``path``.

        With ``verify`` the run is repeated at half the step until two
        successive results agree within ``verify_tol``.
        """
        self._require_normalized()
        W0 = _as_array(W0)
        end, s, states, steps = self._run(path, W0, steps_per_unit, backward, samples)
        change = None
        if verify:
            for _ in range(max_refinements):
                steps_per_unit *= 2
                finer, s, states, steps = self._run(path, W0, steps_per_unit, backward, samples)
                change = numeric.max_abs(finer - end)
                end = finer
                if change <= verify_tol:
                    break
            else:
                raise StepSizeUnderflow(f"transport did not settle: last change {change:.3e}")
        return TransportResult(end, s, states, steps, change)

    def holonomy(self, loop, steps_per_unit: float = STEPS_PER_UNIT) -> np.ndarray:
        if not loop.loop:
            raise ValueError("holonomy needs a closed loop")
        return self.parallel_transport(loop, np.eye(self.n + 2), steps_per_unit).end

    def holonomy_metric_defect(self, M: np.ndarray, x) -> float:
        H = self.gram(x)
        return numeric.max_abs(M.T @ H @ M - H)

    # -- parallel sections ------------------------------------------------------
    def parallel_residual(self, sec: TractorSection, points=None) -> ResidualReport:
        """Residuals of the parallel-section equations, measured as covectors in d_i.

        Component system (for V = d_i):
          nabla_V w + w1 V - w2 P-hat V,   P(V, w) - V(w1),   g(V, w) + V(w2).
        Shape system: nabla_V w - A_{W_perp} V with A_{W_perp} = w1 A_xi + w2 A_ell,
        and II(V, w) + nabla-perp_V W_perp as (xi, ell) coefficients.
        """
        xs = self.chart.sample_grid() if points is None else np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        imm = self.immersion
        worst = dict(tangential=0.0, xi=0.0, ell=0.0, shape_first=0.0, shape_second=0.0, form_disagreement=0.0)
        loc, loc_val = xs[0].tolist(), -1.0
        for x in xs:
            pack = curvature(self.chart, x)
            P, Phat, g = pack.schouten, pack.schouten_endo, pack.metric
            vals, dvals = sec.values(x), sec.derivatives(x)
            w, w1, w2 = vals[:n], vals[n], vals[n + 1]
            nabla_w = dvals[:n] + np.einsum("kij,j->ki", pack.christoffel, w)   # column i: nabla_{d_i} w
            first = nabla_w + w1 * np.eye(n) - w2 * Phat
            second = P @ w - dvals[n]
            third = g @ w + dvals[n + 1]

            fr = imm.frame(x)
            a_xi, a_ell = imm._weingarten(fr)
            shape_first = nabla_w - (w1 * a_xi + w2 * a_ell)
            shape_second = np.array([imm._second_fundamental_form(fr, e, w) + dvals[n:, i]
                                     for i, e in enumerate(np.eye(n))])
            worst["tangential"] = max(worst["tangential"], numeric.max_abs(first))
            worst["xi"] = max(worst["xi"], numeric.max_abs(second))
            worst["ell"] = max(worst["ell"], numeric.max_abs(third))
            worst["shape_first"] = max(worst["shape_first"], numeric.max_abs(shape_first))
            worst["shape_second"] = max(worst["shape_second"], numeric.max_abs(shape_second))
            disagreement = max(numeric.max_abs(first - shape_first),
                               numeric.max_abs(shape_second[:, 0] + second),
                               numeric.max_abs(shape_second[:, 1] - third))
            worst["form_disagreement"] = max(worst["form_disagreement"], disagreement)
            here = max(numeric.max_abs(first), numeric.max_abs(second), numeric.max_abs(third))
            if here > loc_val:
                loc, loc_val = x.tolist(), here
        return ResidualReport(location=loc, **worst)


def _as_array(W) -> np.ndarray:
    if isinstance(W, TractorVector):
        return W.as_array()
    return np.asarray(W, dtype=float)


# ---------------------------------------------------------------- special sections

def fit_einstein_constant(chart: MetricChart, points=None) -> tuple[float, float]:
    """k = mean of S/(n(n-1)) over the points and the residual max|Ric - (n-1) k g|."""
    xs = chart.sample_grid() if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    n = chart.n
    pack = curvature(chart, xs)
    k = float(np.mean(pack.scalar) / (n * (n - 1)))
    return k, numeric.max_abs(pack.ricci - (n - 1) * k * pack.metric)


def einstein_scale_tractor(chart: MetricChart, points=None, tol: float = 1e-6) -> TractorSection:
    """The parallel tractor (0, k/2, 1) of an Einstein chart with Ric = (n-1) k g."""
    k, residual = fit_einstein_constant(chart, points)
    if residual > tol:
        raise NotEinstein(residual, tol)
    return TractorSection((Num(0.0),) * chart.n, Num(k / 2.0), Num(1.0))


def flat_parallel_section(a: float, b: Sequence[float], c: float) -> TractorSection:
    """(-b - a x, a, c + b.x + (a/2)|x|^2), parallel for the flat metric."""
    b = [float(v) for v in b]
    xs = [parse(f"x{i + 1}") for i in range(len(b))]
    a_, c_ = Num(float(a)), Num(float(c))
    w_top = tuple(-Num(bi) - a_ * xi for bi, xi in zip(b, xs))
    w2 = c_
    for bi, xi in zip(b, xs):
        w2 = w2 + Num(bi) * xi
    half = Num(0.5 * float(a))
    for xi in xs:
        w2 = w2 + half * xi * xi
    return TractorSection(w_top, a_, w2)
