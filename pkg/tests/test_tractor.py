import json

import numpy as np
import pytest

from tractor_forge import numeric
from tractor_forge.ambient import identity_family
from tractor_forge.chart import curvature, flat, hyperbolic, perturbed, sphere
from tractor_forge.errors import (NotEinstein, OutOfDomain, RequiresNormalizedFamily, SchoutenUndefined,
                                  StepSizeUnderflow)
from tractor_forge.expr import parse
from tractor_forge.tractor import (CurvePath, PiecewisePath, TractorBundle, TractorSection, TractorVector,
                                   einstein_scale_tractor, fit_einstein_constant, flat_parallel_section,
                                   path_from_json, square_loop)

CATALOG = [flat(3), sphere(3, 1.0), hyperbolic(3), perturbed(3, 0.3)]
TERMS = ["0.3*x1", "sin(x2)", "x1*x3", "exp(0.2*x2)", "1.5", "x3^2", "cos(x1 + x2)", "-0.7", "x2*x1^2"]


def random_section(rng, n=3) -> TractorSection:
    def pick():
        a, b = rng.choice(TERMS, 2)
        return parse(f"{rng.normal():.3f}*({a}) + {rng.normal():.3f}*({b})")
    return TractorSection(tuple(pick() for _ in range(n)), pick(), pick())


def const_section(w_top, w1, w2) -> TractorSection:
    return TractorSection(tuple(str(v) for v in w_top), str(w1), str(w2))


BUNDLES = {c.label: TractorBundle(c) for c in CATALOG}


def test_tractor_metric_examples():
    tb = BUNDLES["sphere(3,1)"]
    x = np.array([0.1, 0.2, 0.3])
    xi = TractorVector(np.zeros(3), 1, 0)
    ell = TractorVector(np.zeros(3), 0, 1)
    assert tb.metric(xi, ell, x) == -1
    assert tb.metric(xi, xi, x) == 0
    V, W = np.array([1.0, 2, 3]), np.array([0.5, -1, 0])
    assert tb.metric(TractorVector(V, 0, 0), TractorVector(W, 0, 0), x) == pytest.approx(V @ sphere(3).metric(x) @ W)


def test_vector_and_section_json():
    v = TractorVector([1, 2, 3], 0.5, -1)
    assert TractorVector.from_json(json.loads(json.dumps(v.to_json()))).as_array().tolist() == [1, 2, 3, 0.5, -1]
    sec = random_section(np.random.default_rng(0))
    again = TractorSection.from_json(json.dumps(sec.to_json()))
    x = np.array([0.2, 0.1, -0.3])
    assert np.allclose(sec.values(x), again.values(x), rtol=1e-12)


def test_cov_deriv_constant_frame_sections():
    for chart in CATALOG:
        tb = BUNDLES[chart.label]
        x = chart.random_points(1, seed=3)[0]
        V = np.array([0.3, -1.2, 0.8])
        got = tb.cov_deriv_intrinsic(const_section([0, 0, 0], 1, 0), V, x)
        assert np.allclose(got.as_array(), np.concatenate([V, [0, 0]]))
        got = tb.cov_deriv_intrinsic(const_section([0, 0, 0], 0, 1), V, x)
        phat = curvature(chart, x).schouten_endo
        assert np.allclose(got.as_array(), np.concatenate([-phat @ V, [0, 0]]))
        oracle = tb.cov_deriv_extrinsic_oracle(const_section([0, 0, 0], 1, 0), V, x)
        assert numeric.max_abs(oracle.as_array() - np.concatenate([V, [0, 0]])) < 1e-6


@pytest.mark.parametrize("chart", CATALOG, ids=lambda c: c.label)
def test_intrinsic_equals_extrinsic_oracle(chart):
    tb = BUNDLES[chart.label]
    rng = np.random.default_rng(7)
    for x in chart.random_points(50, seed=7):
        sec, V = random_section(rng), rng.normal(size=3)
        a = tb.cov_deriv_intrinsic(sec, V, x).as_array()
        b = tb.cov_deriv_extrinsic_oracle(sec, V, x).as_array()
        assert numeric.max_abs(a - b) < 1e-6


@pytest.mark.parametrize("chart", CATALOG, ids=lambda c: c.label)
def test_residual_forms_agree(chart):
    tb = BUNDLES[chart.label]
    rng = np.random.default_rng(8)
    for _ in range(10):
        rep = tb.parallel_residual(random_section(rng), chart.random_points(5, seed=int(rng.integers(1000))))
        assert rep.form_disagreement < 1e-8


@pytest.mark.parametrize("chart", CATALOG, ids=lambda c: c.label)
def test_connection_is_metric(chart):
    tb = BUNDLES[chart.label]
    rng = np.random.default_rng(9)
    for x in chart.random_points(5, seed=9):
        W, Z, V = random_section(rng), random_section(rng), rng.normal(size=3)
        along = lambda y: tb.metric(W.values(y), Z.values(y), y)  # noqa: E731
        lhs = numeric.directional_derivative(along, x, V, 1e-3)
        rhs = (tb.metric(tb.cov_deriv_intrinsic(W, V, x), Z.values(x), x)
               + tb.metric(W.values(x), tb.cov_deriv_intrinsic(Z, V, x), x))
        assert lhs == pytest.approx(rhs, abs=1e-7)


def test_requires_normalized_family():
    tb = TractorBundle(sphere(3), identity_family(3))
    with pytest.raises(RequiresNormalizedFamily):
        tb.cov_deriv_intrinsic(const_section([0, 0, 0], 1, 0), [1, 0, 0], [0, 0, 0])
    # the identity family is normalized for the flat metric
    TractorBundle(flat(3), identity_family(3)).cov_deriv_intrinsic(const_section([0, 0, 0], 1, 0), [1, 0, 0], [0, 0, 0])


def test_dimension_two_is_unsupported():
    with pytest.raises(SchoutenUndefined):
        TractorBundle(sphere(2))


# -- residual systems ----------------------------------------------------------

def test_flat_family_residuals():
    tb = BUNDLES["flat(3)"]
    rep = tb.parallel_residual(flat_parallel_section(1, [1, 0, 0], 0))
    assert rep.max <= 1e-8 and rep.shape_first <= 1e-8 and rep.shape_second <= 1e-8


def test_flat_solution_space_has_dimension_n_plus_2():
    tb = BUNDLES["flat(3)"]
    sections = [flat_parallel_section(1, [0, 0, 0], 0)]
    sections += [flat_parallel_section(0, e, 0) for e in np.eye(3)]
    sections += [flat_parallel_section(0, [0, 0, 0], 1)]
    for sec in sections:
        assert tb.parallel_residual(sec).max <= 1e-8
    x = np.array([0.2, -0.3, 0.4])
    assert np.linalg.matrix_rank(np.array([s.values(x) for s in sections]), tol=1e-10) == 5


def test_pure_tangential_sections_are_not_parallel():
    tb = BUNDLES["sphere(3,1)"]
    rep = tb.parallel_residual(const_section([1, 0, 0], 0, 0))
    assert rep.ell > 0.1


def test_pure_xi_residual():
    rep = BUNDLES["sphere(3,1)"].parallel_residual(const_section([0, 0, 0], 1, 0))
    assert rep.tangential >= 0.9


@pytest.mark.parametrize("chart, k", [(flat(3), 0.0), (sphere(3), 1.0), (hyperbolic(3), -1.0)],
                         ids=["flat", "sphere", "hyperbolic"])
def test_einstein_scale_tractor(chart, k):
    sec = einstein_scale_tractor(chart)
    x = chart.random_points(1, seed=0)[0]
    assert np.allclose(sec.values(x), [0, 0, 0, k / 2, 1], atol=1e-12)
    tb = BUNDLES[chart.label]
    assert tb.parallel_residual(sec, np.vstack([chart.sample_grid(), chart.random_points(20, 1)])).max <= 1e-7
    V = np.array([0.4, -0.2, 0.9])
    assert numeric.max_abs(tb.cov_deriv_extrinsic_oracle(sec, V, x).as_array()) < 1e-6


def test_perturbed_is_not_einstein():
    with pytest.raises(NotEinstein) as info:
        einstein_scale_tractor(perturbed(3, 0.3))
    assert info.value.residual >= 1e-3
    assert fit_einstein_constant(perturbed(3, 0.3))[1] == pytest.approx(info.value.residual)


# -- transport and holonomy ---------------------------------------------------

HELIX = CurvePath.from_json({"coords": ["0.3*cos(s)", "0.3*sin(s)", "0.1*s"], "s": [0, 2]})
HYP_PATH = CurvePath.from_json({"coords": ["0.5*sin(s)", "0.2*s", "1.2 + 0.3*s^2"], "s": [0, 1.5]})
PATHS = {"flat(3)": HELIX, "sphere(3,1)": HELIX, "hyperbolic(3)": HYP_PATH, "perturbed(3,0.3)": HELIX}


def test_zero_stays_zero():
    res = BUNDLES["sphere(3,1)"].parallel_transport(HELIX, np.zeros(5))
    assert not np.any(res.end)


@pytest.mark.parametrize("chart", CATALOG, ids=lambda c: c.label)
def test_transport_preserves_metric_and_inverts(chart):
    tb = BUNDLES[chart.label]
    path = PATHS[chart.label]
    w0 = np.random.default_rng(2).normal(size=5)
    res = tb.parallel_transport(path, w0, samples=True)
    h0 = tb.metric(w0, w0, path.start)
    pts = path.position(res.s)
    drift = max(abs(tb.metric(w, w, x) - h0) for w, x in zip(res.states, pts))
    assert drift <= 1e-8
    back = tb.parallel_transport(path, res.end, backward=True)
    assert numeric.max_abs(back.end - w0) <= 1e-7
    finer = tb.parallel_transport(path, w0, 4000)
    assert numeric.max_abs(finer.end - res.end) <= 1e-7


def test_flat_transport_follows_parallel_family():
    tb = BUNDLES["flat(3)"]
    sec = flat_parallel_section(0.7, [0.2, -1.0, 0.5], 0.3)
    path = CurvePath.from_json({"coords": ["0.5*sin(3*s)", "s^2 - 0.5", "0.2*cos(s)"], "s": [0, 1]})
    res = tb.parallel_transport(path, sec.values(path.start))
    assert numeric.max_abs(res.end - sec.values(path.position(1.0))) <= 1e-7


def test_verify_refines_and_underflows():
    tb = BUNDLES["sphere(3,1)"]
    w0 = np.array([1.0, 0, 0, 0.2, 1])
    res = tb.parallel_transport(HELIX, w0, 50, verify=True)
    assert res.refinement_change <= 1e-7
    with pytest.raises(StepSizeUnderflow):
        tb.parallel_transport(HELIX, w0, 2, verify=True, verify_tol=1e-15, max_refinements=2)


def test_path_leaving_domain():
    path = CurvePath.from_json({"coords": ["2*s", "0", "0"], "s": [0, 1]})
    with pytest.raises(OutOfDomain):
        BUNDLES["sphere(3,1)"].parallel_transport(path, np.ones(5))


def test_flat_square_holonomy_is_identity():
    M = BUNDLES["flat(3)"].holonomy(square_loop([-0.5, -0.5, 0.0], 1.0))
    assert numeric.max_abs(M - np.eye(5)) <= 1e-6


def test_sphere_holonomy_fixes_scale_tractor():
    tb = BUNDLES["sphere(3,1)"]
    loop = CurvePath.circle([0.0, 0.0, 0.1], 0.5)
    M = tb.holonomy(loop)
    sigma = einstein_scale_tractor(sphere(3))(loop.start).as_array()
    assert numeric.max_abs(M @ sigma - sigma) <= 1e-5
    assert tb.holonomy_metric_defect(M, loop.start) <= 1e-6


@pytest.mark.parametrize("chart", CATALOG, ids=lambda c: c.label)
def test_holonomy_preserves_tractor_metric(chart):
    tb = BUNDLES[chart.label]
    centre = np.asarray(chart.domain).mean(axis=1)
    loops = [CurvePath.circle(centre, 0.3, (0, 2)),
             PiecewisePath.polygon([centre, centre + [0.3, 0, 0], centre + [0, 0.2, 0.2]])]
    for loop in loops:
        M = tb.holonomy(loop)
        assert tb.holonomy_metric_defect(M, loop.start) <= 1e-6


def test_loop_validation_and_json():
    with pytest.raises(ValueError):
        CurvePath.from_json({"coords": ["s", "0", "0"], "s": [0, 1], "loop": True})
    square = path_from_json({"polygon": [[0, 0, 0], [0.5, 0, 0], [0.5, 0.5, 0], [0, 0.5, 0]]})
    assert square.loop and len(square.pieces) == 4
    assert path_from_json(HELIX.to_json()).to_json() == HELIX.to_json()
