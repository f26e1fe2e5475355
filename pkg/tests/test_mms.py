import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpflux import geometry as geo
from vpflux import mms
from vpflux.grid import make_grid
from vpflux.operator import ExternalDirichlet, InvalidProblemError, PenalizedProblem

C = (np.pi, np.pi)


def at(*xy):
    return np.atleast_2d(np.array(xy, dtype=float))


# -- manufactured solutions -------------------------------------------------

def test_same_flux_exact_values():
    case = mms.case_1d_same_flux(32, "sharp")
    assert case.exact(at(0.0))[0] == pytest.approx(1 - np.pi / 2)
    assert case.exact(at(np.pi / 2))[0] == pytest.approx(0.0, abs=1e-15)
    assert case.exact_grad(at(np.pi))[0, 0] == pytest.approx(1.0)
    assert case.mean_shift_policy == "zero_fluid_mean" and case.problem.periodic


def test_diff_flux_exact_values():
    case = mms.case_1d_diff_flux(32, "sharp")
    assert case.exact_grad(at(0.0))[0, 0] == pytest.approx(2.0)
    assert case.exact_grad(at(np.pi))[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert case.exact(at(0.0))[0] == pytest.approx(-2 / np.pi - np.pi / 2)
    assert case.exact(at(0.0))[0] == pytest.approx(-2.20740, abs=5e-5)


def test_1d_exact_solutions_have_zero_fluid_mean():
    x = np.linspace(0, np.pi, 20001)[:, None]
    for case in (mms.case_1d_same_flux(32), mms.case_1d_diff_flux(32)):
        assert np.trapezoid(case.exact(x), x[:, 0]) == pytest.approx(0.0, abs=1e-8)


def test_annulus_flux_profile_and_exact_slope():
    assert mms.annulus_flux_profile(np.pi / 4) == pytest.approx(3.0)
    assert mms.annulus_flux_profile(3 * np.pi / 4) == pytest.approx(1.0)
    assert mms.annulus_flux_profile(4.0) == 0.0
    case = mms.case_2d_annulus(32)
    p = at(np.pi + 3 * np.pi / 4, np.pi)
    assert case.exact_grad(p)[0, 0] == pytest.approx(1.0)
    beta = case.base.neumann_regions[0].beta
    np.testing.assert_array_equal(beta(at(*C)), [[0.0, 0.0]])
    assert case.mean_shift_policy == "subtract_fluid_mean"


def test_annulus_forcing_is_finite_at_center():
    case = mms.case_2d_annulus(32)
    assert case.base.f(at(*C))[0] == pytest.approx(32.0)


def test_complex_shape_data():
    case = mms.case_complex_shape("hexagram", 32)
    p = at(np.pi / 2, np.pi / 2)
    assert case.base.f(p)[0] == pytest.approx(2.0)
    np.testing.assert_allclose(case.base.neumann_regions[0].beta(p), [[0, 0]], atol=1e-16)
    assert case.exact(at(*C))[0] == pytest.approx(0.0, abs=1e-15)
    assert case.mean_shift_policy == "none"
    hc = mms.case_complex_shape("hexagram_circle_annulus", 32)
    assert hc.mean_shift_policy == "subtract_fluid_mean"
    assert len(mms.case_complex_shape("multi_shape", 32).base.neumann_regions) == 4


def test_transport_case_data():
    case = mms.case_transport(32)
    assert mms.transport_forcing(at(np.pi / 2, np.pi / 2))[0] == pytest.approx(2.0)
    assert case.exact(at(np.pi + 1.5, np.pi))[0] == pytest.approx(0.0, abs=1e-15)
    assert case.problem.dt == 2e-3


@pytest.mark.parametrize("call", [
    lambda: mms.case_1d_same_flux(4),
    lambda: mms.case_1d_diff_flux(7),
    lambda: mms.case_2d_annulus(16),
    lambda: mms.case_complex_shape("hexagram", 16),
    lambda: mms.case_complex_shape("triangle", 64),
    lambda: mms.case_transport(16),
    lambda: mms.get_case("nope"),
    lambda: mms.case_complex_shape("hexagram_circle_annulus", 32, sizes={"circumradius": 1.5}),
])
def test_invalid_case_requests(call):
    with pytest.raises(ValueError):
        call()


def test_registry_cases_build_with_disjoint_regions():
    from vpflux.operator import check_disjoint
    for name, d in mms.CASES.items():
        case = d.build(64 if d.dim == 2 else 32, "smoothed")
        check_disjoint(case.base)
        assert case.name == name


# -- error norms ---------------------------------------------------------------------

def _circle_setup(n=32):
    g = make_grid(2, (0, 0), (2 * np.pi, 2 * np.pi), n)
    sdf = geo.sdf_circle(C, 1.0)
    exact = lambda p: np.sin(p[:, 0]) * np.sin(p[:, 1])  # noqa: E731
    return g, [sdf], exact


def test_error_norm_examples():
    g, sdfs, exact = _circle_setup()
    qe = exact(g.cell_centers())
    r = mms.error_norms(qe, exact, g, sdfs)
    assert r.E1 == 0 and r.Einf == 0
    r = mms.error_norms(qe + 0.37, exact, g, sdfs, "subtract_fluid_mean")
    assert r.E1 == pytest.approx(0, abs=1e-14) and r.Einf == pytest.approx(0, abs=1e-14)
    assert r.E1_raw == pytest.approx(0.37)
    r = mms.error_norms(qe + 0.37, exact, g, sdfs, "none")
    assert r.E1 == pytest.approx(0.37) and r.Einf == pytest.approx(0.37)
    mask = mms.fluid_mask(g, sdfs)
    assert r.fluid_cells == mask.sum() < g.size


def test_zero_fluid_mean_policy():
    g, sdfs, exact = _circle_setup()
    q = exact(g.cell_centers()) + 5.0
    r = mms.error_norms(q, exact, g, sdfs, "zero_fluid_mean")
    mask = mms.fluid_mask(g, sdfs)
    qf = q[mask] - q[mask].mean()
    assert r.Einf == pytest.approx(np.max(np.abs(qf - exact(g.cell_centers()[mask]))))


def test_error_norm_failures():
    g, sdfs, exact = _circle_setup()
    with pytest.raises(ValueError):
        mms.error_norms(np.zeros(g.size), exact, g, sdfs, "median")
    everywhere = geo.SignedDistance(lambda p: -np.ones(len(p)), 2)
    with pytest.raises(InvalidProblemError):
        mms.error_norms(np.zeros(g.size), exact, g, [everywhere])


@given(st.integers(0, 2 ** 31 - 1))
def test_error_norms_are_set_functions(seed):
    g, sdfs, exact = _circle_setup(16)
    rng = np.random.default_rng(seed)
    q = exact(g.cell_centers()) + rng.normal(scale=0.1, size=g.size)
    r = mms.error_norms(q, exact, g, sdfs, "subtract_fluid_mean")
    assert 0 <= r.E1 <= r.Einf
    mask = mms.fluid_mask(g, sdfs)
    perm = rng.permutation(mask.sum())
    err = (q[mask] - exact(g.cell_centers()[mask]))[perm]
    err = err - err.mean()
    assert r.E1 == pytest.approx(np.mean(np.abs(err)))
    assert r.Einf == pytest.approx(np.max(np.abs(err)))


# -- observed order ------------------------------------------------------------------

def _reports(Ns, Es):
    return [mms.ErrorReport("x", N, 1.0 / N, E, E, E, E, 1) for N, E in zip(Ns, Es)]


def test_observed_order_examples():
    cr = mms.observed_order(_reports([32, 64], [1e-2, 2.5e-3]))
    assert cr.orders_E1[1] == pytest.approx(2.0) and cr.slope_Einf == pytest.approx(2.0)
    assert cr.orders_E1[0] is None
    cr = mms.observed_order(_reports([25, 75], [1e-2, 3.333e-3]))
    assert cr.orders_Einf[1] == pytest.approx(1.0, abs=1e-3)
    cr = mms.observed_order(_reports([32, 64, 128], [1e-3] * 3))
    assert cr.slope_E1 == pytest.approx(0.0, abs=1e-12)


def test_observed_order_drops_zero_errors_with_warning():
    with pytest.warns(UserWarning):
        cr = mms.observed_order(_reports([32, 64, 128], [1e-2, 0.0, 6.25e-4]))
    assert cr.slope_E1 == pytest.approx(2.0)
    assert cr.orders_E1[1] is None


def test_observed_order_preconditions():
    with pytest.raises(ValueError):
        mms.observed_order(_reports([32], [1e-2]))
    with pytest.raises(ValueError):
        mms.observed_order(_reports([64, 32], [1e-2, 1e-3]))


# -- oracles ---------------------------------------------------------------------------

def test_truncation_oracle_same_flux_ratio():
    a = mms.truncation_oracle(mms.case_1d_same_flux(128))
    b = mms.truncation_oracle(mms.case_1d_same_flux(256))
    assert 3.5 <= a / b <= 4.5


def test_truncation_oracle_exact_for_linear_solution():
    g = make_grid(1, 0.0, 2.0, 40)
    lin = lambda p: p[:, 0]  # noqa: E731
    problem = PenalizedProblem(g, 1.0, 1e-8, lambda p: np.zeros(len(p)), [], [],
                               ExternalDirichlet(lin))
    case = mms.Case("linear", problem, lin, lambda p: np.ones((len(p), 1)))
    assert mms.truncation_oracle(case) <= 1e-11


def test_truncation_oracle_hexagram_baseline():
    value = mms.truncation_oracle(mms.get_case("hexagram").build(256, "smoothed"))
    assert value == pytest.approx(1.0038167275e-4, rel=1e-6)


def test_truncation_oracle_needs_cells():
    case = mms.case_2d_annulus(32, n_cells=8.0)
    with pytest.raises(InvalidProblemError):
        mms.truncation_oracle(case)


@pytest.mark.parametrize("name", list(mms.CASES))
def test_bc_audit_every_case(name):
    d = mms.get_case(name)
    case = d.build(128 if d.dim == 1 else 64, "smoothed")
    audit = mms.bc_audit(case)
    assert audit and max(audit.values()) <= 1e-10
    bad = mms.bc_audit(case, beta_perturbation=0.1)
    assert min(bad.values()) >= 0.09


def test_interface_points_lie_on_interface():
    case = mms.get_case("multi-shape").build(64, "sharp")
    for reg in case.base.neumann_regions:
        p = mms.interface_points(reg.sdf, case.grid, 64)
        assert len(p) == 64
        assert np.max(np.abs(reg.sdf(p))) <= 1e-12


# -- runners ---------------------------------------------------------------------------

def test_run_case_and_mean_shift_resolution():
    res = mms.run_case("2d-annulus", 32, "smoothed", mean_shift="off")
    assert res.report.mean_shift == "none"
    assert res.report.Einf_raw == res.report.Einf
    res = mms.run_case("hexagram", 32, "sharp", mean_shift="on")
    assert res.report.mean_shift == "subtract_fluid_mean"
    res = mms.run_case("1d-diff-flux", 64, "sharp")
    assert res.report.mean_shift == "zero_fluid_mean" and res.report.eta == 1e-8
    assert res.report.solver_iters == 1


def test_convergence_study_orders_are_monotone_in_n():
    cr, runs = mms.convergence_study("1d-same-flux", [128, 32, 64], "sharp")
    assert [r.N for r in cr.reports] == [32, 64, 128]
    assert cr.slope_E1 == pytest.approx(2.0, abs=0.1)
