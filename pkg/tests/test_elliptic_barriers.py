import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmelab import elliptic_barriers as eb
from pmelab import pme_solver as pme
from pmelab.funcineq import WeightPair
from pmelab.geometry import ManifoldProfile

ADMISSIBLE = eb.BarrierParams(C=0.056234132519034905, eta=5.623413251903491e-4, t0=1e6)


# ---------------------------------------------------------------- barrier


def test_params_validation():
    with pytest.raises(ValueError):
        eb.BarrierParams(C=0.0, eta=1.0, t0=10.0)
    with pytest.raises(ValueError):
        eb.BarrierParams(C=1.0, eta=1.0, t0=1.0)
    with pytest.raises(ValueError):
        eb.BarrierParams(C=1.0, eta=1.0, t0=10.0, a=1.0)
    with pytest.raises(ValueError):
        eb.BarrierParams(C=1.0, eta=1.0, t0=10.0, m=1.0)


@pytest.mark.parametrize("a", [0.25, 0.5, 2 / 3])
def test_bracket_join_at_one(a):
    p = eb.BarrierParams(1.0, 1.0, 10.0, a=a)
    eps = 1e-7
    phi, dphi, _ = eb._bracket(p, np.array([1 - eps, 1.0, 1 + eps]))
    assert phi[1] == pytest.approx(1.0, abs=1e-15)
    assert phi[0] == pytest.approx(1.0, abs=1e-6) and phi[2] == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(dphi, 2 - a, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(C=st.floats(1e-3, 1.0), eta=st.floats(1e-4, 1.0), t0=st.floats(2.0, 1e8),
       t=st.floats(0.0, 1e6), m=st.floats(1.2, 4.0))
def test_sup_at_pole(C, eta, t0, t, m):
    p = eb.BarrierParams(C, eta, t0, a=0.5, m=m)
    s = eb.barrier_sup(p, t)
    assert s == pytest.approx(float(eb.barrier_eval(p, 0.0, t)), rel=1e-12, abs=1e-300)
    rf = eb.front_radius(p, t)
    r = np.linspace(0, 2 * rf + 1, 200)
    u = eb.barrier_eval(p, r, t)
    assert np.all(u <= s * (1 + 1e-12))
    assert np.all(u[r >= rf * (1 + 1e-9)] == 0.0)


def test_front_radius_matches_zero_set():
    p = eb.BarrierParams(1.0, 0.01, 1e4)
    for t in (0.0, 1e3, 1e8):
        rf = eb.front_radius(p, t)
        assert float(eb.barrier_eval(p, rf * (1 - 1e-6), t)) > 0
        assert float(eb.barrier_eval(p, rf * (1 + 1e-6), t)) == 0


def test_sup_closed_form_beta():
    p = ADMISSIBLE
    T = np.exp(np.array([50.0, 100.0]))
    s = eb.barrier_sup(p, T - p.t0)
    _, L, _ = eb._log_power(p, T - p.t0)
    np.testing.assert_allclose(s, p.C / T * (p.eta * L - 0.25), rtol=1e-13)


def test_admissible_triple_passes(I3):
    rep = eb.barrier_residual(ADMISSIBLE, I3)
    assert rep.verdict
    assert rep.max_residual <= 1e-8
    assert rep.n_samples > 0
    doc = json.loads(rep.to_json())
    assert list(doc) == sorted(doc)


def test_large_C_rejected(I3):
    p = eb.BarrierParams(100 * ADMISSIBLE.C, ADMISSIBLE.eta, ADMISSIBLE.t0)
    rep = eb.barrier_residual(p, I3)
    assert not rep.verdict
    assert rep.violations


def test_empty_barrier_not_vacuous(I3):
    p = eb.BarrierParams(0.01, 1e-5, 10.0)
    rep = eb.barrier_residual(p, I3)
    assert not rep.verdict
    assert rep.violations[0]["reason"] == "empty at t=0"


def test_barrier_needs_matching_profile(H3):
    with pytest.raises(ValueError):
        eb.barrier_residual(ADMISSIBLE, H3)


def test_small_lattice_search(I3):
    lat = ([ADMISSIBLE.C, 100 * ADMISSIBLE.C], [ADMISSIBLE.eta], [ADMISSIBLE.t0])
    found = eb.barrier_lattice_search(I3, lattice=lat)
    assert [p.C for p, _ in found] == [ADMISSIBLE.C]


# --------------------------------------------------------------- elliptic


@pytest.fixture(scope="module")
def wspec():
    M = ManifoldProfile.hyperbolic(3)
    return pme.ProblemSpec(M, m=2.0, R=10.0, W=WeightPair.exponential(1.0, 1.0, 3))


def test_sublinear_residual(wspec):
    sol = eb.solve_sublinear(wspec, N=400)
    assert sol.residual < 1e-8
    assert np.all(sol.W > 0)
    assert np.all(np.diff(sol.residual_log[1:]) <= 0)


@pytest.mark.parametrize("m", [1.5, 2.0, 3.0])
def test_sublinear_dilation_identity(m):
    # Euclidean dilation r -> 2r multiplies W by 2^{2m/(m-1)}
    E3 = ManifoldProfile.euclidean(3)
    s1 = eb.solve_sublinear(pme.ProblemSpec(E3, m=m, R=1.0), N=200)
    s2 = eb.solve_sublinear(pme.ProblemSpec(E3, m=m, R=2.0), N=200)
    np.testing.assert_allclose(s2.W, 2 ** (2 * m / (m - 1)) * s1.W, rtol=1e-8)


def test_sublinear_monotone_in_R(wspec):
    sols = [eb.solve_sublinear(wspec, R=R, N=int(80 * R)) for R in (5.0, 10.0, 20.0)]
    for small, big in zip(sols, sols[1:]):
        Wb = np.interp(small.r, big.r, big.W)
        assert np.all(Wb >= small.W * (1 - 1e-3))
        assert Wb[0] > small.W[0]


def test_sublinear_start_above_and_below_agree(wspec):
    a = eb.solve_sublinear(wspec, N=300)
    b = eb.solve_sublinear(wspec, N=300, start_scale=5.0)
    np.testing.assert_allclose(a.W, b.W, rtol=1e-8)


@pytest.mark.parametrize("m", [1.5, 2.0])
def test_separable_subsolution(wspec, m):
    spec = pme.ProblemSpec(wspec.M, m=m, R=10.0, W=wspec.W)
    sol = eb.solve_sublinear(spec, N=400)
    f = sol.W ** (1.0 / m)
    scale = np.max(sol.grid.volumes * f)
    for t in np.geomspace(1e-2, 1e4, 25):
        for dt in (1e-3 * (t + 1), 0.5 * (t + 1)):
            u0 = (t + 1) ** (-1 / (m - 1)) * f
            u1 = (t + dt + 1) ** (-1 / (m - 1)) * f
            res = eb.discrete_parabolic_residual(sol.grid, u0, u1, dt, m)
            assert np.all(res <= 1e-9 * scale * (t + 1) ** (-1 / (m - 1)))


def test_sublinear_csv(wspec, tmp_path):
    sol = eb.solve_sublinear(wspec, N=100)
    sol.to_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "r_center,W" and len(lines) == 101


@pytest.fixture(scope="module")
def flow_pair(wspec):
    grid = pme.build_grid(wspec, 200)
    flow = eb.minimal_solution_via_flow(wspec, t_max=1e4, grid=grid)
    ell = eb.solve_sublinear(wspec, grid=grid)
    return flow, ell


def test_flow_monotone(flow_pair):
    flow, _ = flow_pair
    assert flow.monotonicity_margin >= -1e-6
    ts, U = flow.U_history
    assert np.all(np.diff(U[:, 0]) >= -1e-6 * U.max())


def test_flow_matches_elliptic(flow_pair):
    flow, ell = flow_pair
    rel = np.abs(flow.W - ell.W) / ell.W
    assert np.max(rel) < 0.02


def test_flow_bound_enforced(wspec):
    with pytest.raises(eb.MonotonicityError):
        eb.minimal_solution_via_flow(wspec, t_max=1e2, N=60, U_bound=1e-12)
