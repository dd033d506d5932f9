"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line (printed in the terminal summary by
conftest.py) with the worst measured value next to the tolerance.
"""

import json

import numpy as np
import pytest

from tractor_forge import numeric
from tractor_forge.ambient import AmbientMetric, AmbientPoint, gamma_schouten, identity_family
from tractor_forge.chart import curvature, curvature_fd_oracle, flat, hyperbolic, perturbed, sphere
from tractor_forge.cli import run
from tractor_forge.errors import NotEinstein
from tractor_forge.expr import parse
from tractor_forge.immersion import TEST_SCALES, Immersion
from tractor_forge.tractor import (CurvePath, PiecewisePath, TractorBundle, TractorSection, einstein_scale_tractor,
                                   flat_parallel_section, square_loop)

from conftest import record

CATALOG = [flat(3), sphere(3, 1.0), hyperbolic(3), perturbed(3, 0.3)]


def _gate(criterion: str, label: str, value: float, tol: float, below: bool = True) -> None:
    ok = bool(value <= tol) if below else bool(value >= tol)
    record(criterion, label, ok, f"{value:.3e} {'<=' if below else '>='} {tol:.0e}")
    assert ok, f"{label}: {value:.3e} vs {tol:.0e}"


def test_criterion_1_curvature_oracle():
    worst = 0.0
    for chart in CATALOG:
        xs = chart.random_points(20, seed=101)
        exact = curvature(chart, xs)
        for k, x in enumerate(xs):
            fd = curvature_fd_oracle(chart, x)
            worst = max(worst, numeric.max_abs(exact.riemann[k] - fd.riemann),
                        numeric.max_abs(exact.ricci[k] - fd.ricci),
                        abs(float(exact.scalar[k]) - float(fd.scalar)))
    _gate("1", "symbolic vs FD curvature, 4 charts x 20 points", worst, 1e-4)
    pack = curvature(sphere(3), sphere(3).random_points(20, seed=102))
    dev = max(numeric.max_abs(pack.ricci - 2 * pack.metric), numeric.max_abs(pack.schouten - pack.metric / 2))
    _gate("1", "sphere Ric = 2g and P = g/2", dev, 1e-8)


def test_criterion_2_connection_identities():
    worst = 0.0
    for chart in CATALOG:
        am = AmbientMetric(chart, gamma_schouten(chart))
        rng = np.random.default_rng(201)
        basis = np.eye(chart.n + 2)
        for x in chart.random_points(20, seed=201):
            p = AmbientPoint(rng.uniform(0.5, 2.0), 0.0, x)
            gamma = am.connection_numeric(p)
            for a in basis:
                for b in basis:
                    worst = max(worst, numeric.max_abs(am.connection_closed_form(p, a, b)
                                                       - np.einsum("kij,i,j->k", gamma, a, b)))
    _gate("2", "closed-form vs numeric ambient connection", worst, 1e-6)


def test_criterion_3_ambient_ricci():
    formula_vs_numeric = vanish_formula = vanish_numeric = t_row = 0.0
    for chart in CATALOG:
        for normalized, fam in ((True, gamma_schouten(chart)), (False, identity_family(3))):
            am = AmbientMetric(chart, fam)
            rng = np.random.default_rng(301)
            for x in chart.random_points(5, seed=301):
                ric = am.ricci_numeric(AmbientPoint(rng.uniform(0.5, 2.0), 0.0, x))
                formula = am.ricci_r0_matrix(x)
                formula_vs_numeric = max(formula_vs_numeric, numeric.max_abs(ric[2:, 2:] - formula))
                t_row = max(t_row, numeric.max_abs(ric[0]))
                if normalized:
                    vanish_formula = max(vanish_formula, numeric.max_abs(formula))
                    vanish_numeric = max(vanish_numeric, numeric.max_abs(ric[2:, 2:]))
    _gate("3", "Ricci formula vs numeric on lifted directions", formula_vs_numeric, 1e-4)
    _gate("3", "normalized family: Ricci vanishes (formula)", vanish_formula, 1e-8)
    _gate("3", "normalized family: Ricci vanishes (numeric)", vanish_numeric, 1e-4)
    _gate("3", "Ricci(d_t, .) = 0", t_row, 1e-4)


def test_criterion_4_immersion_package():
    frame = axi = weing = recon = scalar_h = 0.0
    for chart in CATALOG:
        fam = gamma_schouten(chart)
        for u in TEST_SCALES:
            imm = Immersion(chart, fam, u)
            for x in chart.random_points(10, seed=401):
                fr = imm.frame(x)
                G = fr.gram
                frame = max(frame, abs(fr.xi @ G @ fr.ell + 1), abs(fr.xi @ G @ fr.xi), abs(fr.ell @ G @ fr.ell),
                            numeric.max_abs(fr.xi @ G @ fr.differential),
                            numeric.max_abs(fr.ell @ G @ fr.differential))
                a_xi, a_ell = imm.weingarten_closed_form(x)
                axi = max(axi, numeric.max_abs(a_xi + np.eye(3)),
                          numeric.max_abs(imm.weingarten_oracle(x, "xi")[0] + np.eye(3)))
                if u in ("0", "x1/4", TEST_SCALES[-1]):
                    weing = max(weing, numeric.max_abs(imm.weingarten_oracle(x, "ell")[0] - a_ell))
                H = imm.mean_curvature(x)
                recon = max(recon, numeric.max_abs(H - imm.mean_curvature_from_weingarten(x)))
                scalar_h = max(scalar_h, numeric.max_abs(H - imm.mean_curvature_from_scalar(x)))
    _gate("4", "lightlike frame identities", frame, 1e-10)
    closed = max(numeric.max_abs(Immersion(c, gamma_schouten(c), u).weingarten_closed_form(x)[0] + np.eye(3))
                 for c in CATALOG for u in TEST_SCALES for x in c.random_points(3, seed=402))
    _gate("4", "A_xi = -Id (closed form)", closed, 1e-10)
    _gate("4", "A_xi = -Id (ambient oracle)", axi, 1e-6)
    _gate("4", "A_ell closed form vs oracle", weing, 1e-6)
    _gate("4", "mean curvature from Weingarten traces", recon, 1e-9)
    _gate("4", "normalized mean curvature = -S/(2n(n-1)) xi + ell", scalar_h, 1e-8)


def test_criterion_5_cond4():
    worst = max(Immersion(c, gamma_schouten(c), u).cond4_scan(c.sample_grid()).residual
                for c in CATALOG for u in TEST_SCALES)
    _gate("5", "cond4 residual, normalized family", worst, 1e-6)
    violated = Immersion(sphere(3), identity_family(3), "0").cond4_scan(sphere(3).sample_grid()).residual
    _gate("5", "cond4 residual, sphere with identity family", violated, 1e-2, below=False)


def _random_section(rng):
    terms = ["0.3*x1", "sin(x2)", "x1*x3", "exp(0.2*x2)", "1.5", "x3^2", "cos(x1 + x2)"]
    pick = lambda: parse(f"{rng.normal():.3f}*({rng.choice(terms)}) + {rng.normal():.3f}*({rng.choice(terms)})")  # noqa: E731
    return TractorSection(tuple(pick() for _ in range(3)), pick(), pick())


def test_criterion_6_tractor_equivalence():
    oracle = forms = 0.0
    for chart in CATALOG:
        tb = TractorBundle(chart)
        rng = np.random.default_rng(601)
        for x in chart.random_points(50, seed=601):
            sec, V = _random_section(rng), rng.normal(size=3)
            oracle = max(oracle, numeric.max_abs(tb.cov_deriv_intrinsic(sec, V, x).as_array()
                                                 - tb.cov_deriv_extrinsic_oracle(sec, V, x).as_array()))
            forms = max(forms, tb.parallel_residual(sec, [x]).form_disagreement)
    _gate("6", "intrinsic vs extrinsic tractor derivative, 50 draws per chart", oracle, 1e-6)
    _gate("6", "component and shape-operator residual systems agree", forms, 1e-8)


def test_criterion_7_transport_and_holonomy():
    helix = CurvePath.from_json({"coords": ["0.3*cos(s)", "0.3*sin(s)", "0.1*s"], "s": [0, 2]})
    hyp = CurvePath.from_json({"coords": ["0.5*sin(s)", "0.2*s", "1.2 + 0.3*s^2"], "s": [0, 1.5]})
    drift = fb = defect = 0.0
    for chart in CATALOG:
        tb = TractorBundle(chart)
        path = hyp if chart.label == "hyperbolic(3)" else helix
        w0 = np.random.default_rng(701).normal(size=5)
        res = tb.parallel_transport(path, w0, samples=True)
        h0 = tb.metric(w0, w0, path.start)
        drift = max(drift, max(abs(tb.metric(w, w, x) - h0) for w, x in zip(res.states, path.position(res.s))))
        fb = max(fb, numeric.max_abs(tb.parallel_transport(path, res.end, backward=True).end - w0))
        centre = np.asarray(chart.domain).mean(axis=1)
        for loop in (CurvePath.circle(centre, 0.3, (0, 2)),
                     PiecewisePath.polygon([centre, centre + [0.3, 0, 0], centre + [0, 0.2, 0.2]])):
            defect = max(defect, tb.holonomy_metric_defect(tb.holonomy(loop), loop.start))
    _gate("7", "h preserved along transport", drift, 1e-8)
    _gate("7", "forward then backward transport", fb, 1e-7)
    M = TractorBundle(flat(3)).holonomy(square_loop([-0.5, -0.5, 0.0], 1.0))
    _gate("7", "flat unit-square holonomy = Id", numeric.max_abs(M - np.eye(5)), 1e-6)
    _gate("7", "holonomy satisfies M^T H M = H", defect, 1e-6)


def _flat_family():
    return ([flat_parallel_section(1, [0, 0, 0], 0)]
            + [flat_parallel_section(0, e, 0) for e in np.eye(3)]
            + [flat_parallel_section(0, [0, 0, 0], 1)])


def test_criterion_8_einstein_detection():
    worst = 0.0
    for chart, k in ((flat(3), 0.0), (sphere(3), 1.0), (hyperbolic(3), -1.0)):
        sec = einstein_scale_tractor(chart)
        x = chart.random_points(1, seed=801)[0]
        assert np.allclose(sec.values(x), [0, 0, 0, k / 2, 1], atol=1e-12)
        pts = np.vstack([chart.sample_grid(), chart.random_points(20, seed=801)])
        worst = max(worst, TractorBundle(chart).parallel_residual(sec, pts).max)
    _gate("8", "scale tractors (0,0,1), (0,1/2,1), (0,-1/2,1) are parallel", worst, 1e-7)

    tb = TractorBundle(flat(3))
    family = _flat_family()
    resid = max(tb.parallel_residual(s).max for s in family)
    x = np.array([0.2, -0.3, 0.4])
    rank = np.linalg.matrix_rank(np.array([s.values(x) for s in family]), tol=1e-10)
    ok = rank == 5 and resid <= 1e-8
    record("8", "flat parallel sections span n+2 = 5 dimensions", ok, f"rank {rank}, residual {resid:.1e}")
    assert ok

    try:
        einstein_scale_tractor(perturbed(3, 0.3))
        residual = 0.0
    except NotEinstein as exc:
        residual = exc.residual
    _gate("8", "perturbed(3,0.3) raises NotEinstein", residual, 1e-3, below=False)


@pytest.mark.xfail(strict=True, reason="a rank-5 bundle has at most 5 independent parallel sections")
def test_criterion_8_six_independent_flat_sections_literal():
    # the criterion's count of 6 for n = 3 contradicts its own n + 2; measured honestly here
    family = _flat_family() + [flat_parallel_section(1, [1, 1, 1], 1)]
    x = np.array([0.2, -0.3, 0.4])
    rank = np.linalg.matrix_rank(np.array([s.values(x) for s in family]), tol=1e-10)
    record("8", "six independent residual-zero flat sections (literal count)", rank == 6,
           f"rank {rank} of 6 candidates; bound is n+2 = 5")
    assert rank == 6


def test_criterion_9_determinism_and_convergence():
    chart = sphere(3)
    xs = chart.random_points(5, seed=901)
    exact = curvature(chart, xs)
    ratios = []
    for k, x in enumerate(xs):
        e1 = numeric.max_abs(curvature_fd_oracle(chart, x, 4e-3).ricci - exact.ricci[k])
        e2 = numeric.max_abs(curvature_fd_oracle(chart, x, 2e-3).ricci - exact.ricci[k])
        ratios.append(e1 / e2)
    ratio = min(ratios)
    record("9", "halving the FD step cuts curvature error", ratio >= 3, f"min ratio {ratio:.2f} >= 3")
    assert ratio >= 3

    tb = TractorBundle(chart)
    helix = CurvePath.from_json({"coords": ["0.3*cos(s)", "0.3*sin(s)", "0.1*s"], "s": [0, 2]})
    w0 = np.array([1.0, -0.5, 0.2, 0.3, 1.0])
    change = numeric.max_abs(tb.parallel_transport(helix, w0, 4000).end - tb.parallel_transport(helix, w0).end)
    _gate("9", "halving the ODE step", change, 1e-7)

    raw = {"chart": "sphere(3,1)", "points": 4}
    reports = [run("verify-immersion", raw, seed=42)[1] for _ in range(2)]
    same = json.dumps({k: v for k, v in reports[0].items() if k != "wall_clock"}) == \
        json.dumps({k: v for k, v in reports[1].items() if k != "wall_clock"})
    record("9", "identical seeds give identical reports", same, "byte comparison without wall_clock")
    assert same
