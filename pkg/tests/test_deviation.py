import math

import numpy as np
import pytest

from gaussdev.convex_analysis import concavity_test
from gaussdev.deviation import (
    BoundCheckReport,
    PhiCurve,
    TailEstimate,
    bound_value,
    check_bound,
    chi_square_tail,
    layer_cake_check,
    phi_curve,
    phi_lower_bound_check,
    psi_lower_bound_check,
    select_drift,
    tail_estimate,
)
from gaussdev.errors import ConfigurationError, ContractError, DomainError, NumericError, RangeError
from gaussdev.functions import (
    CONVEX_LABELS,
    SEMICONVEX_1D_LABELS,
    catalog_function,
    sharpness_function,
)
from gaussdev.gauss_core import RandomStream, phi_bar, phi_cdf, phi_density, phi_inv

C_HALF = 0.5 * math.log(0.5)


def quad_tail(t):
    # gamma_1(x^2/4 + c >= t)
    return 2 * phi_bar(math.sqrt(4 * (t - C_HALF))) if t > C_HALF else 1.0


# -- tail_estimate ----------------------------------------------------------


def test_zero_function_tail_is_exactly_zero():
    est = tail_estimate(catalog_function("zero"), 0.5, 10_000, RandomStream(1))
    assert est.p_hat == 0.0
    assert est.se == 0.0


def test_sharpness_tail_matches_closed_form():
    est = tail_estimate(sharpness_function(1.0), 1.0, 10**6, RandomStream(2))
    assert abs(est.p_hat - phi_bar(math.sqrt(2))) <= 3 * est.se
    assert phi_bar(math.sqrt(2)) == pytest.approx(0.07865, abs=1e-5)


def test_quadratic_tail_matches_closed_form():
    f = catalog_function("quad_a0.25")
    est = tail_estimate(f, 2.0, 10**6, RandomStream(3))
    assert abs(est.p_hat - quad_tail(2.0)) <= 3 * est.se


def test_count_floor():
    with pytest.raises(ConfigurationError):
        tail_estimate(catalog_function("zero"), 0.5, 999, RandomStream(1))


@pytest.mark.parametrize("t", [2.0, 6.0, 12.0])
def test_importance_sampling_sharpness(t):
    f = sharpness_function(t)
    drift = select_drift(f, t)
    assert drift[0] == pytest.approx(math.sqrt(2 * t), abs=1e-9)
    est = tail_estimate(f, t, 100_000, RandomStream(4), drift=drift)
    truth = phi_bar(math.sqrt(2 * t))
    assert est.method == "importance"
    assert abs(est.p_hat - truth) <= 3 * est.se
    assert est.se / truth < 0.02


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_importance_weight_overflow_is_reported():
    with pytest.raises(NumericError, match="overflow"):
        tail_estimate(sharpness_function(1.0), 1.0, 1000, RandomStream(5), drift=[1e200])


@pytest.mark.parametrize("label", CONVEX_LABELS + SEMICONVEX_1D_LABELS)
def test_plain_and_importance_agree(label):
    f = catalog_function(label)
    vals = np.sort(f.evaluate(np.random.default_rng(0).standard_normal((20_000, f.n))))
    t = float(vals[-2000])  # about 10% tail, plenty of plain hits
    plain = tail_estimate(f, t, 400_000, RandomStream(100))
    imp = tail_estimate(f, t, 400_000, RandomStream(101), drift=select_drift(f, t))
    assert plain.p_hat * plain.count >= 100
    assert abs(plain.p_hat - imp.p_hat) <= 3 * math.hypot(plain.se, imp.se)


def test_tail_nonincreasing_on_shared_batch():
    f = catalog_function("logcosh_n2")
    ests = [tail_estimate(f, t, 50_000, RandomStream(8)) for t in np.linspace(-1, 3, 25)]
    p = [e.p_hat for e in ests]
    assert all(a >= b for a, b in zip(p, p[1:]))


def test_tail_is_worker_independent():
    f = catalog_function("abs_l1_n2")
    a = tail_estimate(f, 1.0, 300_000, RandomStream(9), workers=1)
    b = tail_estimate(f, 1.0, 300_000, RandomStream(9), workers=3)
    assert a == b


def test_tail_estimate_json_roundtrip_fields():
    est = TailEstimate(1.0, 0.1, 0.01, 1000)
    assert set(est.to_json()) == {"level", "p_hat", "se", "count", "method", "drift"}


# -- bounds -----------------------------------------------------------------


def test_bound_examples():
    assert bound_value("theorem1", 1.0) == pytest.approx(0.078649603, abs=1e-8)
    assert bound_value("theorem1", 0.0) == 0.5
    assert bound_value("dim1", 1.0) == pytest.approx(math.exp(-1) / math.sqrt(2), rel=1e-14)
    assert bound_value("dim1", 1.0) == pytest.approx(0.26013, abs=1e-5)
    assert bound_value("dim1", 1.0) >= bound_value("theorem1", 1.0)
    assert bound_value("corollary12", 1.0) == 0.5
    assert bound_value("prop41", 0.0, kappa=0.0) == 0.5
    assert bound_value("lehec", math.e, alpha=2.0) == pytest.approx(2 / math.e)
    assert bound_value("eq_start", 1.0, c_beta=1.0) == pytest.approx(math.exp(-1))


@pytest.mark.parametrize(
    "name,level,kw",
    [("theorem1", -0.1, {}), ("dim1", 0.5, {}), ("lehec", 1.0, {"alpha": 1.0}),
     ("corollary12", 0.9, {}), ("prop41", 0.1, {"kappa": 1.0}), ("eq_start", 0.0, {"c_beta": 1.0}),
     ("chi2_route", 0.1, {"beta": 1.0})],
)
def test_bound_domain_errors(name, level, kw):
    with pytest.raises(DomainError, match="valid only"):
        bound_value(name, level, **kw)


def test_bounds_with_unpinned_constants_need_them():
    with pytest.raises(ContractError):
        bound_value("lehec", 2.0)
    with pytest.raises(ContractError):
        bound_value("eq_start", 2.0)
    with pytest.raises(ConfigurationError):
        bound_value("nope", 1.0)


def test_dim1_dominates_theorem1():
    for t in np.linspace(1, 20, 100):
        assert bound_value("dim1", t) >= bound_value("theorem1", t)


def test_chi_square_tail_examples():
    assert chi_square_tail(1, 0.0) == 1.0
    assert chi_square_tail(1, 4.0) == pytest.approx(0.0455003, abs=1e-7)
    assert chi_square_tail(2, 2.0) == pytest.approx(math.exp(-1), rel=1e-14)
    assert chi_square_tail(3, 0.0) == 1.0
    with pytest.raises(DomainError):
        chi_square_tail(0, 1.0)
    with pytest.raises(DomainError):
        chi_square_tail(1, -1.0)


def test_chi_square_tail_matches_gamma_for_n1():
    from scipy.special import gammaincc

    for r in [0.1, 1.0, 5.0, 30.0]:
        assert chi_square_tail(1, r) == pytest.approx(float(gammaincc(0.5, 0.5 * r)), rel=1e-12)


# -- check_bound ------------------------------------------------------------


def test_sharpness_is_tight():
    reports = check_bound(sharpness_function(1.0), "theorem1", [1.0], 10**6, RandomStream(10))
    r = reports[0]
    assert r.verdict == "PASS"
    assert abs(r.estimate.p_hat - r.bound_value) <= 3 * r.estimate.se


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_sharpness_family_at_own_level(t):
    r = check_bound(sharpness_function(t), "theorem1", [t], 200_000, RandomStream(11))[0]
    assert r.verdict == "PASS"
    assert r.margin <= 6 * r.estimate.se


def test_quadratic_theorem1_strict():
    f = catalog_function("quad_a0.25")
    for r in check_bound(f, "theorem1", [1.0, 2.0, 4.0], 10**6, RandomStream(12)):
        assert r.verdict == "PASS"
        assert quad_tail(r.level) < r.bound_value
        assert r.margin > 0


def test_dim1_on_negative_quadratic():
    f = catalog_function("neg_quad_b0.5")
    for r in check_bound(f, "dim1", [1.0, 2.0], 100_000, RandomStream(13)):
        assert r.verdict == "PASS"


def test_hypothesis_flags_enforced():
    with pytest.raises(ContractError):
        check_bound(catalog_function("neg_quad_b0.5"), "theorem1", [1.0], 1000, RandomStream(0))
    with pytest.raises(ContractError):
        check_bound(catalog_function("logcosh_n2"), "dim1", [1.0], 1000, RandomStream(0))


@pytest.mark.parametrize("label", SEMICONVEX_1D_LABELS)
def test_chi2_route(label):
    f = catalog_function(label)
    levels = [t for t in (0.5, 1.0, 2.0) if 2 * t >= math.log1p(f.beta)]
    for r in check_bound(f, "chi2_route", levels, 100_000, RandomStream(14)):
        assert r.verdict == "PASS"


def test_report_margin_definition():
    est = TailEstimate(1.0, 0.1, 0.01, 1000)
    r = BoundCheckReport.build(est, "theorem1", 0.08)
    assert r.margin == pytest.approx(0.08 - 0.07)
    assert r.verdict == "PASS"
    r = BoundCheckReport.build(est, "theorem1", 0.06)
    assert r.verdict == "FAIL"
    j = r.to_json()
    assert {"name", "inputs", "estimate", "se", "bound", "margin", "verdict"} <= set(j)


def test_deep_tail_uses_tilt():
    r = check_bound(sharpness_function(16.0), "theorem1", [16.0], 20_000, RandomStream(15))[0]
    assert r.estimate.method == "importance"
    assert r.verdict == "PASS"


# -- phi curve --------------------------------------------------------------


def test_phi_curve_sharpness_is_affine():
    c = phi_curve(sharpness_function(1.0), (-2.0, 2.0), K=33, count=10**6, stream=RandomStream(20))
    assert len(c.levels) == 33
    expected = (c.levels + 1) / math.sqrt(2)
    assert np.all(np.abs(c.phi_values - expected) <= 4 * c.ses)


def test_phi_curve_quadratic_closed_form():
    f = catalog_function("quad_a0.25")
    c = phi_curve(f, (0.0, 3.0), K=16, count=10**6, stream=RandomStream(21))
    exact = np.array([phi_inv(1 - quad_tail(s)) for s in c.levels])
    assert np.all(np.abs(c.phi_values - exact) <= 4 * c.ses)
    assert concavity_test(c.grid(), c.ses).verdict == "PASS"


def test_phi_curve_monotone_and_drops_degenerate_levels():
    c = phi_curve(catalog_function("logcosh"), (-1.0, 8.0), K=40, count=100_000, stream=RandomStream(22))
    assert np.all(np.diff(c.phi_values) >= 0)
    assert np.all(np.isfinite(c.ses))
    assert np.all(c.cdf * (1 - c.cdf) * c.count >= 10)
    assert len(c.levels) < 40


def test_phi_curve_errors():
    with pytest.raises(ConfigurationError):
        phi_curve(catalog_function("logcosh"), K=7, count=10_000)
    with pytest.raises(RangeError):
        phi_curve(catalog_function("zero"), count=10_000)
    with pytest.raises(RangeError):
        phi_curve(catalog_function("logcosh"), (50.0, 60.0), count=10_000)


def test_phi_curve_delta_method_se():
    c = phi_curve(sharpness_function(1.0), (-1.0, 1.0), K=8, count=10_000, stream=RandomStream(23))
    p = c.cdf
    assert np.allclose(c.ses, np.sqrt(p * (1 - p) / c.count) / phi_density(phi_inv(p)))


@pytest.mark.parametrize("label", CONVEX_LABELS)
def test_lemma_suite_on_convex_catalog(label):
    c = phi_curve(catalog_function(label), K=32, count=10**6, stream=RandomStream(7))
    assert concavity_test(c.grid(), c.ses).verdict == "PASS"
    assert phi_lower_bound_check(c).verdict == "PASS"
    assert psi_lower_bound_check(c).verdict == "PASS"
    lc = layer_cake_check(catalog_function(label), c)
    assert lc.verdict == "PASS", lc.details


def _exact_curve(levels, phi):
    levels = np.asarray(levels, dtype=float)
    phi = np.asarray(phi, dtype=float)
    p = phi_cdf(phi)
    return PhiCurve(levels, phi, np.zeros_like(phi), p, 10**9, "exact")


def test_phi_lower_bound_sharpness_points():
    u = np.array([0.25, 1.0])
    c = _exact_curve(u, (u + 1) / math.sqrt(2))
    check = phi_lower_bound_check(c)
    assert check.verdict == "PASS"
    assert check.worst_margin == pytest.approx(0.0, abs=1e-12)
    assert check.details["worst_level"] == 1.0


def test_phi_lower_bound_fails_below_sqrt_2u():
    u = np.linspace(0.1, 3, 10)
    check = phi_lower_bound_check(_exact_curve(u, 0.9 * np.sqrt(2 * u)))
    assert check.verdict == "FAIL"


def test_psi_extremal_concave_curve():
    u = np.linspace(1e-4, 400, 200_001)
    check = psi_lower_bound_check(_exact_curve(u, np.sqrt(2 * u)), np.linspace(-10, -0.05, 50))
    assert check.verdict == "PASS"
    assert check.checked == 50
    assert abs(check.worst_margin) < 1e-4


def test_psi_linear_equality_case():
    u = np.linspace(-3, 3, 61)
    t = -1 / math.sqrt(2)
    check = psi_lower_bound_check(_exact_curve(u, (u + 1) / math.sqrt(2)), [t])
    assert check.verdict == "PASS"
    assert check.worst_margin == pytest.approx(0.0, abs=1e-12)


def test_psi_detects_violation():
    u = np.linspace(0.01, 50, 2001)
    check = psi_lower_bound_check(_exact_curve(u, 0.8 * np.sqrt(2 * u)), np.linspace(-2, -0.2, 20))
    assert check.verdict == "FAIL"


def test_psi_rejects_nonnegative_slopes():
    u = np.linspace(0, 1, 10)
    with pytest.raises(DomainError):
        psi_lower_bound_check(_exact_curve(u, u), [0.1])


def test_layer_cake_zero_function():
    check = layer_cake_check(catalog_function("zero"), count=10_000)
    assert check.verdict == "PASS"
    assert check.details["integral"] == pytest.approx(1.0, abs=1e-3)


def test_layer_cake_detects_unnormalised():
    from gaussdev.functions import affine

    f = affine([math.sqrt(2)], -0.5)  # log E e^f = 0.5
    c = phi_curve(f, count=10**6, stream=RandomStream(30))
    check = layer_cake_check(f, c)
    assert check.verdict == "FAIL"
    assert check.details["integral"] == pytest.approx(math.exp(0.5), rel=0.02)


def test_layer_cake_narrow_range_raises():
    f = sharpness_function(1.0)
    c = phi_curve(f, count=100_000, stream=RandomStream(31))
    with pytest.raises(RangeError):
        layer_cake_check(f, c, u_range=(-3.0, 1.0))
