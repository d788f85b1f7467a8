import numpy as np
import pytest
from oracles import STEP, brute_force_quantile, lattice_instance

from gqlasso.kkt import kkt_check
from gqlasso.model import GroupedCoefficients, GroupedDesign, PenaltySpec
from gqlasso.penalized import fit_ag_lasso_q
from gqlasso.pilot import compute_weights, fit_quantile_lp
from gqlasso.tuning import lambda_max

from conftest import random_instance


def solved(seed, frac=0.3, tau=0.5):
    d, y = random_instance(seed)
    w = compute_weights(fit_quantile_lp(d, y, tau).coefficients, 1.0)
    pen = PenaltySpec(frac * lambda_max(d, y, tau, w), w)
    return d, y, pen, fit_ag_lasso_q(d, y, tau, pen)


def test_zero_at_lambda_max_passes():
    d, y = random_instance(0)
    w = np.ones(d.p)
    pen = PenaltySpec(lambda_max(d, y, 0.5, w), w)
    rep = kkt_check(d, y, GroupedCoefficients.zeros(d.group_sizes), 0.5, pen)
    assert rep.passed
    assert all(g.residual == 0.0 and not g.active for g in rep.groups)
    assert rep.n_interpolated == 0


@pytest.mark.parametrize("seed", range(5))
def test_solver_fit_passes(seed):
    d, y, pen, fit = solved(seed)
    assert fit.active_set
    rep = kkt_check(d, y, fit, 0.5, pen, tol=1e-4)
    assert rep.passed
    assert rep.overall == max(g.residual for g in rep.groups)
    assert all(g.residual >= 0 for g in rep.groups)
    assert rep.n_interpolated >= 1


@pytest.mark.parametrize("seed", range(5))
def test_perturbed_fit_fails(seed):
    d, y, pen, fit = solved(seed)
    beta = fit.coefficients.values.copy()
    j = min(fit.active_set)
    beta[d.slices[j].start] += 0.05
    coef = GroupedCoefficients(beta, d.group_sizes)
    assert not kkt_check(d, y, coef, 0.5, pen, tol=1e-4).passed


def test_tol_monotone():
    d, y, pen, fit = solved(1)
    beta = fit.coefficients.values + 0.01
    coef = GroupedCoefficients(beta, d.group_sizes)
    results = [kkt_check(d, y, coef, 0.5, pen, tol=t).passed for t in np.logspace(-8, 2, 30)]
    # once passing, stays passing as tol grows
    assert results == sorted(results)
    assert results[-1]


def test_scale_coherence():
    # duplicating every observation doubles n and mu = n * lam together
    d, y, pen, fit = solved(2)
    d2 = GroupedDesign(np.vstack([d.values, d.values]), d.group_sizes)
    y2 = np.concatenate([y, y])
    a = kkt_check(d, y, fit.coefficients, 0.5, pen)
    b = kkt_check(d2, y2, fit.coefficients, 0.5, pen)
    for ga, gb in zip(a.groups, b.groups):
        assert gb.residual == pytest.approx(ga.residual, abs=1e-15)
    assert b.n_interpolated == 2 * a.n_interpolated


@pytest.mark.parametrize("seed", range(8))
def test_brute_force_minimizer_passes(seed):
    X, y = lattice_instance(300 + seed)
    d = GroupedDesign(X, (1, 1))
    w = np.array([1.0, 1.5])
    for tau in (0.3, 0.5):
        lam = 0.3 * lambda_max(d, y, tau, w)
        _, arg = brute_force_quantile(X, y, tau, lam, w)
        rep = kkt_check(d, y, GroupedCoefficients(arg, (1, 1)), tau, PenaltySpec(lam, w), tol=10 * STEP)
        assert rep.passed


def test_group_norm_mode_is_stricter():
    # each coordinate meets the bound but the block norm does not
    X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [2.0, 2.0]])
    y = np.array([1.0, 1.0, 1.0, 1.0])
    d = GroupedDesign(X, (2,))
    # sum of x_i * 0.5 = (1.5, 1.5): coordinates 1.5, norm ~2.12
    pen = PenaltySpec(1.6 / 4, np.ones(1))
    zero = np.zeros(2)
    assert kkt_check(d, y, zero, 0.5, pen, active=set()).overall == 0.0
    strict = kkt_check(d, y, zero, 0.5, pen, active=set(), group_norm=True)
    assert strict.overall == pytest.approx((np.sqrt(4.5) - 1.6) / (4 * np.sqrt(8)), rel=1e-12)


def test_fit_reports_spec_residual():
    d, y, pen, fit = solved(3)
    assert fit.kkt_residual == kkt_check(d, y, fit, 0.5, pen).overall


def test_dimension_errors():
    d, y = random_instance(0)
    pen = PenaltySpec(0.1, np.ones(d.p))
    with pytest.raises(ValueError):
        kkt_check(d, y[:-1], np.zeros(d.r), 0.5, pen)
    with pytest.raises(ValueError):
        kkt_check(d, y, np.zeros(d.r + 1), 0.5, pen)
    with pytest.raises(ValueError):
        kkt_check(d, y, np.zeros(d.r), 0.5, PenaltySpec(0.1, np.ones(d.p + 1)))
    with pytest.raises(ValueError):
        kkt_check(d, y, np.zeros(d.r), 0.5, pen, tol=0.0)


def test_to_dict():
    d, y, pen, fit = solved(4)
    out = kkt_check(d, y, fit, 0.5, pen).to_dict()
    assert set(out) == {"overall", "n_interpolated", "tol", "passed", "groups"}
    assert len(out["groups"]) == d.p
    assert out["groups"][0]["group"] == 0
