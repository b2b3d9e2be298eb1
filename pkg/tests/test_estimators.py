import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from phibe.dynamics import CubicStabilization1D, Linear1D, LinearND, NonlinearSin1D, OU1D, simulate_batch
from phibe.estimators import (
    ClosedFormProvider, FlowProvider, MonteCarloProvider, estimator_order_check, model_mu_sigma_hat, moment_provider,
    mu_bar, mu_sigma_hat, sigma_bar, window_estimates,
)
from phibe.fdcoeff import fd_coefficients
from phibe.metrics import fit_order

DT_GRID = [5.0, 2.5, 1.25, 0.625]


def test_mu_bar_examples():
    assert mu_bar([0.0, 0.5], 0.5, fd_coefficients(1))[0] == pytest.approx(1.0)
    assert mu_bar([0.0, 0.5, 1.2], 0.5, fd_coefficients(2))[0] == pytest.approx(0.8)
    w = np.exp(0.05 * 5 * np.arange(2))
    assert mu_bar(w, 5.0, fd_coefficients(1))[0] == pytest.approx((math.exp(0.25) - 1) / 5, rel=1e-14)
    assert mu_bar(w, 5.0, fd_coefficients(1))[0] == pytest.approx(0.0568051, abs=1e-7)


def test_sigma_bar_examples():
    assert sigma_bar([0.0, 0.5], 0.5, fd_coefficients(1))[0, 0] == pytest.approx(0.5)
    np.testing.assert_array_equal(sigma_bar(np.full((3, 2), 1.7), 0.3, fd_coefficients(2)), np.zeros((2, 2)))
    assert sigma_bar([0.0, 1.0, 2.0], 1.0, fd_coefficients(2))[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_wrong_window_length():
    with pytest.raises(ValueError):
        mu_bar([0.0, 1.0, 2.0], 1.0, fd_coefficients(1))
    with pytest.raises(ValueError):
        sigma_bar([0.0], 1.0, fd_coefficients(1))
    with pytest.raises(ValueError):
        mu_bar([0.0, 1.0], 0.0, fd_coefficients(1))


@settings(max_examples=50, deadline=None)
@given(w=arrays(float, (4, 3), elements=st.floats(-5, 5)), order=st.integers(1, 3), dt=st.floats(0.01, 5))
def test_sigma_bar_symmetric_and_psd(w, order, dt):
    S = sigma_bar(w[: order + 1], dt, fd_coefficients(order))
    assert np.array_equal(S, S.T)
    if order == 1:
        assert np.linalg.eigvalsh(S).min() >= -1e-12 * max(1.0, np.abs(S).max())


def test_model_based_ou_example():
    est = model_mu_sigma_hat(ClosedFormProvider(OU1D(0.05, 1.0)), 1.0, 1.0, fd_coefficients(1))
    assert est.mu_bar[0] == pytest.approx(math.exp(0.05) - 1, rel=1e-13)
    assert est.sigma_bar[0, 0] == pytest.approx(1.0517091807564762 + (math.exp(0.05) - 1) ** 2, rel=1e-13)
    assert est.sigma_bar[0, 0] == pytest.approx(1.0543379, abs=1e-7)
    np.testing.assert_array_equal(est.anchor, [1.0])


@pytest.mark.parametrize("order", [1, 2, 3])
def test_deterministic_linear_sigma_hat(order):
    lam, dt = 0.05, 2.0
    s = np.linspace(-3, 3, 7)[:, None]
    a = fd_coefficients(order).weights
    _, sig = mu_sigma_hat(ClosedFormProvider(Linear1D(lam)), s, dt, fd_coefficients(order))
    ref = sum(a[j] * math.expm1(lam * j * dt) ** 2 for j in range(1, order + 1)) * s[:, 0] ** 2 / dt
    np.testing.assert_allclose(sig[:, 0, 0], ref, rtol=1e-12, atol=1e-15)


def test_mu_hat_consistent_as_dt_shrinks():
    s = np.linspace(-math.pi, math.pi, 21)[:, None]
    prov = ClosedFormProvider(Linear1D(0.05))
    errs = [np.abs(mu_sigma_hat(prov, s, dt, fd_coefficients(1))[0][:, 0] - 0.05 * s[:, 0]).max()
            for dt in (1e-2, 1e-3)]
    assert errs[1] < errs[0]
    assert errs[0] / errs[1] == pytest.approx(10, rel=0.05)
    assert errs[0] <= 1e-2 * 0.05**2 * math.pi


@pytest.mark.parametrize("order", [1, 2, 3])
def test_estimator_order_slope(order):
    chk = estimator_order_check(Linear1D(0.05), fd_coefficients(order), DT_GRID)
    assert abs(chk.slope - order) <= 0.25
    chk_nd = estimator_order_check(LinearND(np.diag([0.05, -0.1]), np.zeros(2)), fd_coefficients(order), DT_GRID)
    assert abs(chk_nd.slope - order) <= 0.25


def test_estimator_order_zero_rate():
    chk = estimator_order_check(Linear1D(0.0), fd_coefficients(2), DT_GRID)
    assert chk.errors == (0.0,) * 4 and math.isnan(chk.slope)
    with pytest.raises(ValueError):
        estimator_order_check(Linear1D(0.05), fd_coefficients(1), [1.0, 0.5])


@pytest.mark.parametrize("order", [1, 2, 3])
def test_mu_hat_sup_norm_order(order):
    s = np.linspace(-math.pi, math.pi, 201)[:, None]
    prov = ClosedFormProvider(Linear1D(0.05))
    errs = [np.abs(mu_sigma_hat(prov, s, dt, fd_coefficients(order))[0][:, 0] - 0.05 * s[:, 0]).max()
            for dt in DT_GRID]
    assert abs(fit_order(DT_GRID, errs).slope - order) <= 0.25


@pytest.mark.parametrize("order", [1, 2])
def test_window_estimates_unbiased_on_ou(order):
    n, dt, s0 = 100_000, 1.0, 1.0
    model = OU1D(0.05, 1.0)
    X = simulate_batch(model, np.full(n, s0), dt, order, seed=order, exact=True)
    mu, sig = window_estimates(X, dt, fd_coefficients(order))
    ref = model_mu_sigma_hat(ClosedFormProvider(model), s0, dt, fd_coefficients(order))
    for samples, target in ((mu[:, 0], ref.mu_bar[0]), (sig[:, 0, 0], ref.sigma_bar[0, 0])):
        se = samples.std(ddof=1) / math.sqrt(n)
        assert abs(samples.mean() - target) < 4 * se


def test_flow_provider_matches_closed_form():
    s = np.linspace(-2, 2, 9)[:, None]
    a = mu_sigma_hat(FlowProvider(Linear1D(0.3), 20000), s, 0.5, fd_coefficients(2))
    b = mu_sigma_hat(ClosedFormProvider(Linear1D(0.3)), s, 0.5, fd_coefficients(2))
    np.testing.assert_allclose(a[0], b[0], atol=1e-4)
    np.testing.assert_allclose(a[1], b[1], atol=1e-4)
    with pytest.raises(ValueError):
        FlowProvider(OU1D(0.1, 1.0), 10)


def test_monte_carlo_provider_matches_closed_form():
    model = CubicStabilization1D(0.0, 0.25, 0.25, 2, 0.5)
    s = np.array([[-0.5], [0.8]])
    mc = mu_sigma_hat(MonteCarloProvider(model, 40000, 50, seed=1), s, 0.1, fd_coefficients(1))
    ex = mu_sigma_hat(ClosedFormProvider(model), s, 0.1, fd_coefficients(1))
    np.testing.assert_allclose(mc[0], ex[0], atol=0.02)
    np.testing.assert_allclose(mc[1], ex[1], atol=0.02)


def test_moment_provider_dispatch():
    assert isinstance(moment_provider(OU1D(0.1, 1.0)), ClosedFormProvider)
    assert isinstance(moment_provider(NonlinearSin1D(0.1)), FlowProvider)
    assert isinstance(moment_provider(CubicStabilization1D(0.1, 0.1, 0.1, 2, 0.1)), MonteCarloProvider)
    with pytest.raises(ValueError):
        ClosedFormProvider(NonlinearSin1D(0.1))
