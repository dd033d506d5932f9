"""Command-line verification campaigns with JSON reports.

    tractor-forge describe --config run.json
    tractor-forge verify-ambient --config run.json --seed 3
    tractor-forge verify-immersion --config run.json --tol 1e-5
    tractor-forge tractor --config run.json [residual|transport|holonomy|einstein]

The report goes to stdout (and to --out if given); a short summary goes to
stderr.  Exit codes: 0 pass, 1 check failure, 2 config error, 3 unsupported
dimension.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__, numeric
from .ambient import AmbientMetric, AmbientPoint, family_from_json, normalization_check
from .chart import MetricChart, curvature, flat, hyperbolic, perturbed, sphere
from .errors import ConfigError, ExprSyntaxError, NotEinstein, SchoutenUndefined, TractorForgeError
from .expr import parse
from .immersion import Immersion
from .tractor import (CurvePath, TractorBundle, TractorSection, TractorVector, einstein_scale_tractor,
                      fit_einstein_constant, flat_parallel_section, path_from_json, square_loop,
                      STEPS_PER_UNIT)

SCHEMA = "tractor-forge/1"

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_DIMENSION = 0, 1, 2, 3

DEFAULT_TOLS = {
    # ambient
    "connection": 1e-6,
    "ricci_formula_vs_numeric": 1e-4,
    "ricci_t_row": 1e-4,
    "ricci_vanishing": 1e-8,
    "ricci_numeric_vanishing": 1e-4,
    "normalization": 1e-6,
    # immersion
    "frame_identities": 1e-10,
    "induced_metric": 1e-9,
    "weingarten_xi": 1e-10,
    "weingarten_oracle": 1e-6,
    "normal_flatness": 1e-6,
    "second_fundamental_form": 1e-9,
    "second_fundamental_form_oracle": 1e-6,
    "mean_curvature_trace": 1e-9,
    "mean_curvature_scalar": 1e-8,
    "cond4": 1e-6,
    "umbilic_einstein": 1e-6,
    # tractor
    "parallel_residual": 1e-7,
    "form_agreement": 1e-8,
    "oracle_equality": 1e-6,
    "metric_preservation": 1e-8,
    "step_halving": 1e-7,
    "forward_backward": 1e-7,
    "holonomy_metric": 1e-6,
    "holonomy_identity": 1e-6,
    "scale_tractor_fixed": 1e-5,
}

# checks whose outcome depends on gamma_dot(0) being the normalized choice;
# "expect": "violated" in the config flips exactly these
NORMALIZATION_DEPENDENT = {
    "ricci_vanishing", "ricci_numeric_vanishing", "normalization",
    "mean_curvature_scalar", "cond4", "umbilic_einstein", "einstein",
}

_CATALOG = {"flat": flat, "sphere": sphere, "hyperbolic": hyperbolic, "perturbed": perturbed}
_CALL = re.compile(r"^\s*(\w+)\s*(?:\((.*)\))?\s*$")


class UnsupportedDimension(TractorForgeError):
    pass


# ---------------------------------------------------------------- config

def parse_chart(spec) -> MetricChart:
    """A catalog call such as ``sphere(3, 1)`` or an inline chart object."""
    if isinstance(spec, dict):
        try:
            return MetricChart.from_json(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid inline chart: {exc}") from exc
    m = _CALL.match(str(spec))
    if not m or m.group(1) not in _CATALOG:
        raise ConfigError(f"unknown chart {spec!r}; expected one of {sorted(_CATALOG)}")
    args = [a for a in (m.group(2) or "").split(",") if a.strip()]
    try:
        values = [float(a) for a in args]
    except ValueError:
        raise ConfigError(f"chart arguments must be numbers: {spec!r}") from None
    if values:
        if values[0] != int(values[0]) or values[0] < 1:
            raise ConfigError(f"chart dimension must be a positive integer: {spec!r}")
        values[0] = int(values[0])
    try:
        return _CATALOG[m.group(1)](*values)
    except TypeError:
        raise ConfigError(f"wrong number of arguments in {spec!r}") from None


@dataclass
class RunConfig:
    raw: dict
    chart: MetricChart
    family_spec: Any
    scales: list
    tol: dict
    grid: int
    seed: int
    points: int
    expect: dict
    payload: dict = field(default_factory=dict)

    def family(self):
        try:
            return family_from_json(self.family_spec, self.chart)
        except (ValueError, ExprSyntaxError) as exc:
            raise ConfigError(str(exc)) from exc

    def grid_points(self) -> np.ndarray:
        return self.chart.sample_grid(per_axis=self.grid)

    def random_points(self) -> np.ndarray:
        return self.chart.random_points(self.points, self.seed)

    def expectation(self, name: str) -> str:
        return self.expect.get(name, "hold")


def load_config(data: dict, *, seed=None, tol=None, grid=None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    schema = data.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported schema {schema!r}; expected {SCHEMA!r}")
    if "chart" not in data:
        raise ConfigError("config needs a 'chart' entry")
    raw = dict(data)
    if seed is not None:
        raw["seed"] = seed
    if grid is not None:
        raw["grid"] = grid
    if tol is not None:
        raw["tol"] = tol
    tols = dict(DEFAULT_TOLS)
    given = raw.get("tol", {})
    if isinstance(given, (int, float)):
        tols = {k: float(given) for k in tols}
    elif isinstance(given, dict):
        unknown = set(given) - set(tols)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")
        tols.update({k: float(v) for k, v in given.items()})
    else:
        raise ConfigError("'tol' must be a number or an object")
    if any(not v > 0 for v in tols.values()):
        raise ConfigError("tolerances must be positive")
    grid_n = int(raw.get("grid", 5))
    if grid_n < 2:
        raise ConfigError("grid needs at least 2 points per axis")
    expect = raw.get("expect", {})
    if isinstance(expect, str):
        if expect not in ("hold", "violated"):
            raise ConfigError("'expect' must be 'hold' or 'violated'")
        expect = {name: expect for name in NORMALIZATION_DEPENDENT}
    scales = raw.get("u", "0")
    scales = [scales] if isinstance(scales, str) else list(scales)
    try:
        for u in scales:
            parse(str(u))
    except ExprSyntaxError as exc:
        raise ConfigError(f"invalid scale u: {exc}") from exc
    chart = parse_chart(raw["chart"])
    payload = {k: v for k, v in raw.items()
               if k not in ("schema", "chart", "family", "u", "tol", "grid", "seed", "points", "expect")}
    return RunConfig(raw, chart, raw.get("family", "schouten"), [str(u) for u in scales], tols,
                     grid_n, int(raw.get("seed", 0)), int(raw.get("points", 20)), dict(expect), payload)


# ---------------------------------------------------------------- reports

class Report:
    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.checks: list[dict] = []
        self.data: dict = {}
        self.error: dict | None = None

    def check(self, name: str, identity: str, residual: float, location=None, **extra) -> dict:
        tol = self.cfg.tol[name]
        expected = self.cfg.expectation(name)
        holds = bool(residual <= tol)
        entry = {"name": name, "identity": identity, "residual": float(residual), "tol": tol,
                 "location": location, "expected": expected,
                 "pass": holds if expected == "hold" else not holds}
        entry.update(extra)
        self.checks.append(entry)
        return entry

    def verdict(self, name: str, identity: str, holds: bool, **extra) -> dict:
        """A yes/no check with no single residual; the measured numbers go in ``extra``."""
        expected = self.cfg.expectation(name)
        entry = {"name": name, "identity": identity, "residual": None, "tol": self.cfg.tol[name],
                 "location": None, "expected": expected,
                 "pass": bool(holds) if expected == "hold" else not holds}
        entry.update(extra)
        self.checks.append(entry)
        return entry

    @property
    def passed(self) -> bool:
        return self.error is None and all(c["pass"] for c in self.checks)

    def to_json(self, wall_clock: float) -> dict:
        out = {"schema": SCHEMA, "command": self.command, "version": __version__,
               "config": self.cfg.raw, "seed": self.cfg.seed, "checks": self.checks,
               "data": self.data, "pass": self.passed}
        if self.error is not None:
            out["error"] = self.error
        out["wall_clock"] = wall_clock
        return out


def _worst(values, points) -> tuple[float, list]:
    values = np.asarray(values, dtype=float)
    k = int(np.argmax(values))
    return float(values[k]), np.asarray(points[k]).tolist()


def _ambient_samples(cfg: RunConfig):
    rng = np.random.default_rng(cfg.seed)
    xs = cfg.random_points()
    ts = rng.uniform(0.5, 2.0, len(xs))
    return xs, ts


# ---------------------------------------------------------------- commands

def cmd_describe(cfg: RunConfig) -> Report:
    rep = Report("describe", cfg)
    chart = cfg.chart
    wanted = cfg.payload.get("quantities", [])
    if chart.n == 2 and "schouten" in wanted:
        raise SchoutenUndefined("the Schouten tensor is not defined for n = 2")
    xs = cfg.payload.get("points_at")
    xs = cfg.grid_points() if xs is None else np.atleast_2d(np.asarray(xs, dtype=float))
    pack = curvature(chart, xs)
    rows = []
    for k, x in enumerate(xs):
        row = {"x": x.tolist(), "ricci": pack.ricci[k].tolist(), "scalar": float(pack.scalar[k])}
        if chart.n == 2:
            row["gauss"] = float(pack.gauss[k])
        else:
            row["schouten"] = pack.schouten[k].tolist()
        rows.append(row)
    s = np.asarray(pack.scalar, dtype=float)
    rep.data = {
        "chart": chart.to_json(), "label": chart.label, "n": chart.n,
        "scalar_range": [float(s.min()), float(s.max())],
        "einstein_residual": float(max(
            numeric.max_abs(pack.ricci[k] - s[k] / chart.n * pack.metric[k]) for k in range(len(xs)))),
        "points": rows,
    }
    return rep


def cmd_verify_ambient(cfg: RunConfig) -> Report:
    rep = Report("verify-ambient", cfg)
    chart = cfg.chart
    fam = cfg.family()
    amb = AmbientMetric(chart, fam)
    n = chart.n
    xs, ts = _ambient_samples(cfg)
    basis = np.eye(n + 2)

    conn, form, trow, vanish, nvanish = [], [], [], [], []
    for x, t in zip(xs, ts):
        p = AmbientPoint(float(t), 0.0, x)
        gamma = amb.connection_numeric(p)
        conn.append(max(numeric.max_abs(amb.connection_closed_form(p, a, b)
                                        - np.einsum("kij,i,j->k", gamma, a, b))
                        for a in basis for b in basis))
        ric = amb.ricci_numeric(p)
        formula = amb.ricci_r0_matrix(x)
        form.append(numeric.max_abs(ric[2:, 2:] - formula))
        trow.append(numeric.max_abs(ric[0]))
        vanish.append(numeric.max_abs(formula))
        nvanish.append(numeric.max_abs(ric[2:, 2:]))
    pts = [[float(t)] + x.tolist() for x, t in zip(xs, ts)]
    rep.check("connection", "ambient Levi-Civita closed forms at r = 0", *_worst(conn, pts))
    rep.check("ricci_formula_vs_numeric", "ambient Ricci at r = 0 on lifted directions", *_worst(form, pts))
    rep.check("ricci_t_row", "ambient Ricci(d_t, .) = 0", *_worst(trow, pts))
    rep.check("ricci_vanishing", "ambient Ricci at r = 0 vanishes (formula)", *_worst(vanish, pts))
    rep.check("ricci_numeric_vanishing", "ambient Ricci at r = 0 vanishes (numeric)", *_worst(nvanish, pts))
    norm = normalization_check(chart, fam, np.vstack([cfg.grid_points(), xs]))
    rep.check("normalization", "gamma_dot(0) = 2 P-hat", norm.residual, norm.location, kind=norm.kind)
    rep.data = {"family_check": _jsonable(fam.check(chart)), "validity_radius": float(fam.radius)}
    return rep


def cmd_verify_immersion(cfg: RunConfig) -> Report:
    rep = Report("verify-immersion", cfg)
    chart = cfg.chart
    fam = cfg.family()
    n = chart.n
    grid = np.vstack([cfg.grid_points(), cfg.random_points()])
    xs = cfg.random_points()
    eye = np.eye(n)
    summaries = []
    for u in cfg.scales:
        imm = Immersion(chart, fam, u)
        frame_res, induced_res, axi_res, sff_res, rel_res, h_res, hs_res = ([] for _ in range(7))
        for x in grid:
            fr = imm.frame(x)
            G = fr.gram
            frame_res.append(max(abs(fr.xi @ G @ fr.xi), abs(fr.ell @ G @ fr.ell),
                                 abs(fr.xi @ G @ fr.ell + 1.0),
                                 numeric.max_abs(fr.xi @ G @ fr.differential),
                                 numeric.max_abs(fr.ell @ G @ fr.differential)))
            induced_res.append(numeric.max_abs(fr.differential.T @ G @ fr.differential - fr.induced))
            a_xi, a_ell = imm._weingarten(fr)
            axi_res.append(numeric.max_abs(a_xi + eye))
            sff, rel = 0.0, 0.0
            for V in eye:
                for W in eye:
                    ii = imm._second_fundamental_form(fr, V, W)
                    recon = np.array([-(a_ell @ V) @ fr.induced @ W, -(a_xi @ V) @ fr.induced @ W])
                    sff = max(sff, numeric.max_abs(ii - recon))
                    amb_ii = ii[0] * fr.xi + ii[1] * fr.ell
                    rel = max(rel, abs((a_xi @ V) @ fr.induced @ W - amb_ii @ G @ fr.xi),
                              abs((a_ell @ V) @ fr.induced @ W - amb_ii @ G @ fr.ell))
            sff_res.append(sff)
            rel_res.append(rel)
            H = imm._mean_curvature(fr)
            h_res.append(numeric.max_abs(H + np.array([np.trace(a_ell), np.trace(a_xi)]) / n))
            hs_res.append(numeric.max_abs(H - imm.mean_curvature_from_scalar(x)))
        tag = {"u": u}
        rep.check("frame_identities", "lightlike normal frame: null, g~(xi, ell) = -1, orthogonal to T Psi",
                  *_worst(frame_res, grid), **tag)
        rep.check("induced_metric", "T Psi^T g~ T Psi = e^{2u} g", *_worst(induced_res, grid), **tag)
        rep.check("weingarten_xi", "A_xi = -Id", *_worst(axi_res, grid), **tag)
        rep.check("second_fundamental_form", "II from (A_xi, A_ell) and g(A_zeta V, W) = g~(II(V,W), zeta)",
                  *_worst(np.maximum(sff_res, rel_res), grid), **tag)
        rep.check("mean_curvature_trace", "H = -(tr A_ell xi + tr A_xi ell)/n", *_worst(h_res, grid), **tag)
        rep.check("mean_curvature_scalar", "H = -S/(2n(n-1)) xi + ell for the normalized family",
                  *_worst(hs_res, grid), **tag)

        w_res, flat_res, ii_res = [], [], []
        for x in xs:
            o_xi, n_xi = imm.weingarten_oracle(x, "xi")
            o_ell, n_ell = imm.weingarten_oracle(x, "ell")
            a_xi, a_ell = imm.weingarten_closed_form(x)
            w_res.append(max(numeric.max_abs(o_xi - a_xi), numeric.max_abs(o_ell - a_ell)))
            flat_res.append(max(numeric.max_abs(n_xi), numeric.max_abs(n_ell)))
            ii_res.append(max(numeric.max_abs(imm.second_fundamental_form_oracle(x, V, W)
                                              - imm.second_fundamental_form(x, V, W))
                              for V in eye for W in eye))
        rep.check("weingarten_oracle", "Weingarten closed form vs ambient differentiation", *_worst(w_res, xs), **tag)
        rep.check("normal_flatness", "normal parts of nabla~ xi and nabla~ ell vanish", *_worst(flat_res, xs), **tag)
        rep.check("second_fundamental_form_oracle", "II closed form vs ambient differentiation",
                  *_worst(ii_res, xs), **tag)

        c4 = imm.cond4_scan(grid)
        rep.check("cond4", "induced Ricci condition of the normal tractor connection", c4.residual, c4.location,
                  uniqueness=c4.uniqueness, **tag)
        ue = imm.umbilic_einstein_check(grid, cfg.tol["umbilic_einstein"])
        rep.verdict("umbilic_einstein", "Einstein iff totally umbilic", ue.consistent,
                    umbilic_deviation=ue.umbilic_deviation, einstein_residual=ue.einstein_residual,
                    norm_identity_residual=ue.norm_identity_residual, umbilic=ue.umbilic,
                    einstein=ue.einstein, **tag)
        centre = np.asarray(chart.domain, dtype=float).mean(axis=1)
        summaries.append({"u": u, "mean_curvature_at_centre": imm.mean_curvature(centre).tolist()})
    rep.data = {"scales": summaries}
    return rep


def _section_from_payload(spec, chart: MetricChart) -> TractorSection:
    if spec in (None, "einstein"):
        return einstein_scale_tractor(chart)
    if isinstance(spec, dict) and "flat" in spec:
        a, b, c = spec["flat"]
        return flat_parallel_section(a, b, c)
    try:
        sec = TractorSection.from_json(spec)
    except (KeyError, TypeError, ExprSyntaxError) as exc:
        raise ConfigError(f"invalid section: {exc}") from exc
    if sec.n != chart.n:
        raise ConfigError("section and chart dimensions differ")
    return sec


def _path_from_payload(spec, chart: MetricChart):
    if spec is None:
        raise ConfigError("this action needs a path")
    try:
        if "square" in spec:
            sq = spec["square"]
            return square_loop(sq["corner"], float(sq.get("side", 1.0)), tuple(sq.get("plane", (0, 1))))
        if "circle" in spec:
            c = spec["circle"]
            return CurvePath.circle(c["centre"], float(c["radius"]), tuple(c.get("plane", (0, 1))))
        path = path_from_json(spec)
    except (KeyError, TypeError, ValueError, ExprSyntaxError) as exc:
        raise ConfigError(f"invalid path: {exc}") from exc
    if path.n != chart.n:
        raise ConfigError("path and chart dimensions differ")
    return path


def cmd_tractor(cfg: RunConfig, action: str | None = None) -> Report:
    action = action or cfg.payload.get("action")
    if action not in ("residual", "transport", "holonomy", "einstein"):
        raise ConfigError(f"unknown tractor action {action!r}")
    rep = Report(f"tractor {action}", cfg)
    chart = cfg.chart
    if chart.n < 3:
        raise SchoutenUndefined("tractor calculus needs n >= 3")
    bundle = TractorBundle(chart, cfg.family())
    n = chart.n

    if action == "einstein":
        try:
            sec = einstein_scale_tractor(chart, cfg.grid_points())
        except NotEinstein as exc:
            rep.error = {"type": "NotEinstein", "message": str(exc), "residual": exc.residual, "tol": exc.tol}
            if cfg.expectation("einstein") == "violated":
                rep.error = None
                rep.data = {"not_einstein": {"residual": exc.residual, "tol": exc.tol}}
            return rep
        k, resid = fit_einstein_constant(chart, cfg.grid_points())
        rep.data = {"section": sec.to_json(), "k": k, "einstein_residual": resid}
        res = bundle.parallel_residual(sec, cfg.grid_points())
        rep.check("parallel_residual", "scale tractor (0, k/2, 1) is parallel", res.max, res.location)
        return rep

    if action == "residual":
        sec = _section_from_payload(cfg.payload.get("section"), chart)
        pts = np.vstack([cfg.grid_points(), cfg.random_points()])
        res = bundle.parallel_residual(sec, pts)
        rep.data = {"section": sec.to_json(), "residuals": res.to_json()}
        rep.check("parallel_residual", "component system of a parallel section", res.max, res.location)
        rep.check("form_agreement", "component and shape-operator systems agree", res.form_disagreement)
        diffs = [numeric.max_abs(bundle.cov_deriv_intrinsic(sec, V, x).as_array()
                                 - bundle.cov_deriv_extrinsic_oracle(sec, V, x).as_array())
                 for x in cfg.random_points() for V in np.eye(n)]
        rep.check("oracle_equality", "tractor derivative vs ambient differentiation",
                  *_worst(diffs, np.repeat(cfg.random_points(), n, axis=0)))
        return rep

    if action == "transport":
        path = _path_from_payload(cfg.payload.get("path"), chart)
        try:
            w0 = TractorVector.from_json(cfg.payload["initial"]).as_array()
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"transport needs an 'initial' tractor: {exc}") from exc
        if w0.size != n + 2:
            raise ConfigError("initial tractor has the wrong size")
        run = bundle.parallel_transport(path, w0, samples=True)
        h0 = bundle.metric(w0, w0, path.start)
        pts = _path_points(path, run.s)
        drift = [abs(bundle.metric(w, w, x) - h0) for w, x in zip(run.states, pts)]
        rep.check("metric_preservation", "h(W, W) constant along transport", *_worst(drift, pts))
        finer = bundle.parallel_transport(path, w0, 2 * _steps_per_unit(cfg))
        rep.check("step_halving", "transport at half step agrees", numeric.max_abs(finer.end - run.end))
        back = bundle.parallel_transport(path, run.end, backward=True)
        rep.check("forward_backward", "transport there and back returns the start", numeric.max_abs(back.end - w0))
        rep.data = {"end": TractorVector.from_array(run.end).to_json(), "steps": run.steps}
        count = int(cfg.payload.get("samples", 0))
        if count > 0:
            idx = np.unique(np.linspace(0, len(run.s) - 1, count).round().astype(int))
            rep.data["trajectory"] = [{"s": float(run.s[i]), "x": pts[i].tolist(), "w": run.states[i].tolist()}
                                      for i in idx]
        return rep

    loop = _path_from_payload(cfg.payload.get("loop") or cfg.payload.get("path"), chart)
    if not loop.loop:
        raise ConfigError("holonomy needs a closed loop")
    M = bundle.holonomy(loop)
    rep.data = {"holonomy": M.tolist()}
    rep.check("holonomy_metric", "M^T H M = H", bundle.holonomy_metric_defect(M, loop.start))
    if cfg.payload.get("expect_identity"):
        rep.check("holonomy_identity", "trivial holonomy", numeric.max_abs(M - np.eye(n + 2)))
    k, resid = fit_einstein_constant(chart, cfg.grid_points())
    if resid <= 1e-6:
        sigma = einstein_scale_tractor(chart, cfg.grid_points())(loop.start).as_array()
        rep.check("scale_tractor_fixed", "holonomy fixes the scale tractor", numeric.max_abs(M @ sigma - sigma))
    return rep


def _steps_per_unit(cfg: RunConfig) -> float:
    return float(cfg.payload.get("steps_per_unit", STEPS_PER_UNIT))


def _path_points(path, s_cumulative) -> np.ndarray:
    """Positions at cumulative parameter values; samples arrive piece by piece."""
    pieces = path.pieces
    bounds = np.cumsum([0.0] + [abs(p.s1 - p.s0) for p in pieces])
    pts = np.empty((len(s_cumulative), path.n))
    k = 0
    for j, s in enumerate(s_cumulative):
        while k < len(pieces) - 1 and s > bounds[k + 1]:
            k += 1
        piece = pieces[k]
        pts[j] = piece.position(piece.s0 + (s - bounds[k]))
    return pts


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tractor-forge", description="Verification campaigns for tractor calculus.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("describe", "verify-ambient", "verify-immersion", "tractor"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path, or - for stdin")
        p.add_argument("--out", help="also write the report here")
        p.add_argument("--seed", type=int)
        p.add_argument("--tol", type=float, help="override every tolerance")
        p.add_argument("--grid", type=int, help="grid points per axis")
        if name == "tractor":
            p.add_argument("action", nargs="?", choices=("residual", "transport", "holonomy", "einstein"))
    return parser


def _read_config(path: str) -> dict:
    try:
        text = sys.stdin.read() if path == "-" else open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def run(command: str, raw: dict, *, action=None, seed=None, tol=None, grid=None) -> tuple[int, dict]:
    """Run one command on a config dict; returns (exit code, report)."""
    start = time.perf_counter()
    cfg = None
    try:
        cfg = load_config(raw, seed=seed, tol=tol, grid=grid)
        if command == "describe":
            rep = cmd_describe(cfg)
        elif command == "verify-ambient":
            rep = cmd_verify_ambient(cfg)
        elif command == "verify-immersion":
            rep = cmd_verify_immersion(cfg)
        elif command == "tractor":
            rep = cmd_tractor(cfg, action)
        else:
            raise ConfigError(f"unknown command {command!r}")
    except (ConfigError, ExprSyntaxError) as exc:
        return EXIT_CONFIG, _error_report(command, raw, "ConfigError", str(exc), start)
    except (SchoutenUndefined, UnsupportedDimension) as exc:
        return EXIT_DIMENSION, _error_report(command, raw, "UnsupportedDimension", str(exc), start)
    except TractorForgeError as exc:
        return EXIT_FAIL, _error_report(command, raw, type(exc).__name__, str(exc), start)
    report = rep.to_json(time.perf_counter() - start)
    return (EXIT_PASS if rep.passed else EXIT_FAIL), report


def _error_report(command, raw, kind, message, start) -> dict:
    return {"schema": SCHEMA, "command": command, "version": __version__, "config": raw,
            "checks": [], "pass": False, "error": {"type": kind, "message": message},
            "wall_clock": time.perf_counter() - start}


def _summary(report: dict) -> str:
    lines = [f"{report['command']}: {'PASS' if report['pass'] else 'FAIL'}"]
    for c in report.get("checks", []):
        status = "ok  " if c["pass"] else "FAIL"
        scale = f" u={c['u']}" if "u" in c else ""
        value = "verdict" if c["residual"] is None else f"{c['residual']:.3e}"
        lines.append(f"  {status} {c['name']}{scale}: {value} (tol {c['tol']:.0e}, expect {c['expected']})")
    if "error" in report:
        lines.append(f"  error {report['error']['type']}: {report['error'].get('message', '')}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = _read_config(args.config)
    except ConfigError as exc:
        code, report = EXIT_CONFIG, _error_report(args.command, None, "ConfigError", str(exc), time.perf_counter())
    else:
        code, report = run(args.command, raw, action=getattr(args, "action", None),
                           seed=args.seed, tol=args.tol, grid=args.grid)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(_summary(report), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
