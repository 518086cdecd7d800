import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmelab import geometry as geo
from pmelab.funcineq import (
    DomainError,
    RadialIntegrals,
    WeightPair,
    cutoff_witness,
    fit_gamma,
    poincare_bracket,
    poincare_eigenvalue,
    sobolev_constant,
    subpoincare_criterion,
    subpoincare_threshold,
)
from pmelab.geometry import ManifoldProfile


# ---------------------------------------------------------------- tables


def test_euclidean_tables_closed_form(E3):
    tab = RadialIntegrals(E3)
    x = np.array([0.5, 3.0, 40.0, 700.0])
    np.testing.assert_allclose(np.exp(tab.log_I1_at(x)), x**3 / 3, rtol=1e-11)
    np.testing.assert_allclose(np.exp(tab.log_I2_at(x)), 1 / x, rtol=1e-11)


def test_hyperbolic_tables_closed_form(H3):
    tab = RadialIntegrals(H3)
    x = np.array([0.5, 2.0, 10.0, 200.0])
    I1 = 0.5 * (0.5 * np.sinh(2 * x) - x)
    I2 = 2.0 / np.expm1(2 * x)
    np.testing.assert_allclose(np.exp(tab.log_I1_at(x)), I1, rtol=1e-10)
    np.testing.assert_allclose(np.exp(tab.log_I2_at(x)), I2, rtol=1e-10)


def test_table_range_is_enforced(E3):
    tab = RadialIntegrals(E3, x_top=100.0)
    with pytest.raises(DomainError):
        tab.log_I1_at(np.array([200.0]))
    tab.extend(1000.0)
    assert np.isfinite(tab.log_I1_at(np.array([200.0]))).all()


def test_two_dimensional_tail_diverges():
    E2 = ManifoldProfile.euclidean(2)
    rep = sobolev_constant(E2, sigma=1.5)
    assert not rep.finite
    assert rep.growth_exponent == np.inf


# ------------------------------------------------------------- Sobolev


def test_euclidean_sigma2_diverges_with_quarter_growth(E3):
    rep = sobolev_constant(E3, sigma=2.0)
    assert rep.verdict == "divergent"
    assert rep.growth_exponent == pytest.approx(0.25, abs=1e-6)
    tab = RadialIntegrals(E3)
    x = np.array([10.0, 1e2, 1e3])
    logA = 0.25 * tab.log_I1_at(x) + 0.5 * tab.log_I2_at(x)
    np.testing.assert_allclose(np.diff(logA) / math.log(10), 0.25, atol=1e-9)


def test_euclidean_endpoint_sigma_closed_form(E3):
    # sigma = d/(d-2): A(x) = (x^3/3)^{1/6} x^{-1/2} is constant
    rep = sobolev_constant(E3, sigma=3.0)
    assert rep.finite and rep.stable
    assert rep.C_sigma == pytest.approx(3 ** (-1 / 6), rel=1e-10)


def test_sigma_above_critical_flagged(E3):
    rep = sobolev_constant(E3, sigma=3.5)
    assert rep.flagged


def test_sigma_below_one_rejected(E3):
    with pytest.raises(ValueError):
        sobolev_constant(E3, sigma=0.9)


def test_intermediate_sigma15_finite(I3):
    rep = sobolev_constant(I3, sigma=1.5)
    assert rep.finite and rep.stable
    assert rep.C_sigma > 0
    # A(x) decays past the maximiser
    tab = RadialIntegrals(I3, x_top=1e4)
    x = np.array([1e2, 1e3, 1e4])
    logA = tab.log_I1_at(x) / 3.0 + 0.5 * tab.log_I2_at(x)
    assert np.all(np.diff(logA) < 0)


def test_hyperbolic_near_one_bounded_by_muckenhoupt(H3):
    rep = sobolev_constant(H3, sigma=1.0001)
    br = poincare_bracket(H3)
    assert rep.finite and rep.stable
    # I1 >= 1 at the maximiser, so the sigma > 1 value cannot exceed B
    assert rep.C_sigma <= br.B * (1 + 1e-8)
    assert rep.C_sigma == pytest.approx(br.B, rel=1e-3)


def test_refinement_stability_sobolev(H3, I3):
    for M, s in ((H3, 1.2), (I3, 1.5), (I3, 1.1)):
        rep = sobolev_constant(M, sigma=s)
        a, b = (e["value"] for e in rep.refinement_log)
        assert abs(a - b) <= 1e-4 * abs(b)


# ---------------------------------------------------------------- gamma


@pytest.mark.parametrize("a,target", [(0.5, 1.0), (2 / 3, 0.5)])
def test_gamma_intermediate(a, target):
    M = ManifoldProfile.intermediate(3, a)
    fit = fit_gamma(M, sigma_grid=1 + np.geomspace(1e-4, 0.2, 10))
    assert fit.gamma == pytest.approx(target, rel=0.1)
    assert fit.monotone


def test_gamma_hyperbolic_indistinguishable_from_zero(H3):
    fit = fit_gamma(H3, sigma_grid=1 + np.geomspace(1e-4, 0.2, 10))
    assert fit.indistinguishable_from_zero(0.05)


def test_gamma_needs_six_points(H3):
    with pytest.raises(ValueError):
        fit_gamma(H3, sigma_grid=[1.1, 1.2, 1.3])


# -------------------------------------------------------------- Poincare


def test_euclidean_has_no_gap(E3):
    est = poincare_bracket(E3)
    assert not est.has_gap
    assert est.lambda_low == 0.0


def test_hyperbolic_bracket_and_eigenvalue(H3):
    est = poincare_bracket(H3, eigensolve=True, L=60.0, n=10_000)
    assert est.has_gap
    assert est.B == pytest.approx(0.5, rel=1e-6)
    assert est.lambda_low == pytest.approx(1.0, rel=1e-5)
    assert est.lambda_high == pytest.approx(4.0, rel=1e-5)
    # bottom of the spectrum (d-1)^2/4 = 1, Dirichlet at L adds pi^2/L^2
    assert est.lambda_num == pytest.approx(1 + math.pi**2 / 3600, rel=1e-4)
    assert est.lambda_num >= est.lambda_low * (1 - 1e-6)


def test_eigenvalue_euclidean_box():
    # u = sin(pi r/L)/r on the 3-ball: lambda = (pi/L)^2
    E3 = ManifoldProfile.euclidean(3)
    lam = poincare_eigenvalue(E3, L=5.0, n=2000)
    assert lam == pytest.approx((math.pi / 5) ** 2, rel=1e-6)


def test_intermediate_has_no_gap(I3):
    est = poincare_bracket(I3)
    assert not est.has_gap
    tab = RadialIntegrals(I3, x_top=1e4)
    x = np.array([1e2, 1e3, 1e4])
    logA = 0.5 * (tab.log_I1_at(x) + tab.log_I2_at(x))
    slopes = np.diff(logA) / math.log(10)
    assert np.all(slopes > 0)
    assert slopes[-1] == pytest.approx(0.5, abs=0.05)


def test_refinement_stability_poincare(H3):
    est = poincare_bracket(H3)
    a, b = (e["value"] for e in est.refinement_log)
    assert abs(a - b) <= 1e-4 * abs(b)


# ---------------------------------------------------------- sub-Poincare


@pytest.mark.parametrize("alpha,beta", [(0.0, 1.0), (1.0, 0.0), (1.0, 1.0)])
def test_subpoincare_flip_hyperbolic(H3, alpha, beta):
    W = WeightPair.exponential(alpha, beta, 3)
    lo, hi = subpoincare_threshold(H3, W)
    below = subpoincare_criterion(H3, W, lo - 0.05)
    above = subpoincare_criterion(H3, W, lo + 0.05)
    assert below.verdict == "divergent"
    assert above.verdict == "finite"
    assert above.D_bracket[0] <= above.D_bracket[1]


def test_subpoincare_threshold_values(H3):
    assert subpoincare_threshold(H3, WeightPair.exponential(0, 1, 3))[0] == pytest.approx(1.6)
    assert subpoincare_threshold(H3, WeightPair.exponential(1, 0, 3))[0] == pytest.approx(1.5)
    assert subpoincare_threshold(H3, WeightPair.unweighted()) is None


def test_subpoincare_full_range_when_weight_cancels_growth(H3):
    # nu-weight rate equal to the volume growth rate: every p in (1, 2)
    W = WeightPair.exponential(4.0, 0.0, 3)
    assert subpoincare_threshold(H3, W) == (1.0, 2.0)
    for p in (1.05, 1.5, 1.95):
        assert subpoincare_criterion(H3, W, p).finite


@pytest.mark.parametrize("p", [1.1, 1.5, 1.9])
def test_subpoincare_euclidean_diverges(E3, p):
    assert subpoincare_criterion(E3, p=p).verdict == "divergent"


def test_subpoincare_unweighted_hyperbolic_diverges(H3):
    assert not subpoincare_criterion(H3, p=1.5).finite


def test_subpoincare_refinement_stability(H3):
    rep = subpoincare_criterion(H3, WeightPair.exponential(1, 1, 3), 1.5)
    a, b = (e["value"] for e in rep.refinement_log)
    assert abs(a - b) <= 1e-4 * abs(b)


def test_subpoincare_rejects_bad_p(H3):
    with pytest.raises(ValueError):
        subpoincare_criterion(H3, p=2.0)


# -------------------------------------------------------- cutoff witness


R0 = [1.0, 3.0, 10.0, 30.0, 100.0]


@pytest.mark.parametrize("name", ["E3", "H3"])
def test_witness_ratio_increasing(name, request):
    M = request.getfixturevalue(name)
    ratios = [cutoff_witness(M, 1.5, r0).ratio for r0 in R0]
    assert np.all(np.diff(ratios) > 0)


@pytest.mark.parametrize("name", ["E3", "H3"])
@pytest.mark.parametrize("r0", [0.5, 2.0, 20.0])
def test_witness_lower_bound_and_shell(name, r0, request):
    M = request.getfixturevalue(name)
    w = cutoff_witness(M, 1.5, r0)
    assert w.ratio >= w.lower_bound * (1 - 1e-10)
    S0 = geo.surface_area(M, r0)
    r = np.linspace(r0, r0 + w.delta, 50)
    S = geo.surface_area(M, r)
    assert np.all(S >= S0 * (1 - 1e-12)) and np.all(S <= 2 * S0 * (1 + 1e-12))


def test_witness_euclidean_delta_closed_form(E3):
    w = cutoff_witness(E3, 1.5, 10.0)
    assert w.delta == pytest.approx(10.0 * (math.sqrt(2) - 1), rel=1e-10)


@pytest.mark.parametrize("name", ["E3", "H3"])
@pytest.mark.parametrize("r0", [0.5, 5.0, 50.0])
def test_area_inversion(name, r0, request):
    M = request.getfixturevalue(name)
    r = geo.surface_area_inverse(M, geo.surface_area(M, r0), 10 * r0 + 10)
    assert r == pytest.approx(r0, rel=1e-8)


def test_witness_domain_error(E3):
    with pytest.raises(DomainError, match="r_max"):
        cutoff_witness(E3, 1.5, 10.0, r_max=11.0)


@settings(max_examples=25, deadline=None)
@given(r0=st.floats(0.2, 60.0), p=st.floats(1.0, 1.95))
def test_witness_lower_bound_property(r0, p):
    M = ManifoldProfile.hyperbolic(3)
    w = cutoff_witness(M, p, r0)
    assert w.ratio >= w.lower_bound * (1 - 1e-10)


# --------------------------------------------------------------- weights


def test_weight_pair_values():
    W = WeightPair.exponential(2.0, 1.0, 3)
    r = np.array([0.0, 1.0, 4.0])
    np.testing.assert_allclose(W.rho_nu(r), np.exp(-r))
    np.testing.assert_allclose(W.rho_mu(r), np.exp(0.5 * r))
    assert WeightPair.unweighted().is_unweighted
    assert not W.is_unweighted
