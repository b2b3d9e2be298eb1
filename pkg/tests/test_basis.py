import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phibe.basis import (
    FourierBasis, PolynomialBasis, Quadrature, eval_basis, gauss_legendre, gram_matrix, make_basis, monte_carlo,
    trapezoid,
)


class ConstantBasis(PolynomialBasis):
    def __init__(self):
        super().__init__(1, 0)


def test_fourier_values():
    phi, g, h = eval_basis(FourierBasis(1), 0.0)
    np.testing.assert_allclose(phi, [1 / math.sqrt(2 * math.pi), 1 / math.sqrt(math.pi), 0.0], atol=1e-15)
    assert FourierBasis(30).p == 61


def test_polynomial_values():
    phi, g, h = eval_basis(PolynomialBasis(1, 2), 2.0)
    np.testing.assert_array_equal(phi, [1, 2, 4])
    np.testing.assert_array_equal(g[:, 0], [0, 1, 4])
    np.testing.assert_array_equal(h[:, 0, 0], [0, 0, 2])
    assert PolynomialBasis(10, 2).p == 66
    phi = PolynomialBasis(2, 2).values(np.array([[2.0, 3.0]]))[0]
    np.testing.assert_array_equal(phi, [1, 2, 3, 4, 6, 9])


@settings(max_examples=30, deadline=None)
@given(M=st.integers(1, 12), s=st.floats(-10, 10))
def test_fourier_second_derivative_identity(M, s):
    phi, _, h = eval_basis(FourierBasis(M), s)
    m = np.arange(1, M + 1)
    np.testing.assert_allclose(h[1::2, 0, 0], -(m**2) * np.cos(m * s) / math.sqrt(math.pi), atol=1e-10)
    np.testing.assert_allclose(h[2::2, 0, 0], -(m**2) * phi[2::2], atol=1e-10)


def test_fourier_wraps():
    B = FourierBasis(3)
    s = np.array([0.3, 1.7, -2.9])
    np.testing.assert_allclose(B.values(s + 2 * math.pi), B.values(s), atol=1e-12)


@pytest.mark.parametrize("basis", [FourierBasis(4), FourierBasis(30), PolynomialBasis(1, 4), PolynomialBasis(3, 2),
                                   PolynomialBasis(10, 2)], ids=lambda b: f"{type(b).__name__}-{b.p}")
def test_derivatives_match_central_differences(basis):
    rng = np.random.default_rng(5)
    h = 1e-5
    low = -math.pi if isinstance(basis, FourierBasis) else -1.0
    s = rng.uniform(low, -low, size=(100, basis.dim))
    _, g, H = basis.evaluate(s)
    for k in range(basis.dim):
        e = np.zeros(basis.dim)
        e[k] = h
        fd_g = (basis.values(s + e) - basis.values(s - e)) / (2 * h)
        assert np.abs(g[:, :, k] - fd_g).max() <= 1e-5
        _, gp, _ = basis.evaluate(s + e)
        _, gm, _ = basis.evaluate(s - e)
        assert np.abs(H[:, :, :, k] - (gp - gm) / (2 * h)).max() <= 1e-4


@pytest.mark.parametrize("basis", [FourierBasis(4), PolynomialBasis(2, 3)], ids=["fourier", "poly"])
def test_generator_matches_evaluate(basis):
    rng = np.random.default_rng(1)
    s = rng.uniform(-1, 1, size=(50, basis.dim))
    mu = rng.normal(size=(50, basis.dim))
    A = rng.normal(size=(50, basis.dim, basis.dim))
    Sig = A @ np.swapaxes(A, 1, 2)
    _, g, H = basis.evaluate(s)
    ref = np.einsum("npk,nk->np", g, mu) + 0.5 * np.einsum("npkl,nkl->np", H, Sig)
    np.testing.assert_allclose(basis.generator(s, mu, Sig), ref, atol=1e-12)
    np.testing.assert_allclose(basis.generator(s, mu), np.einsum("npk,nk->np", g, mu), atol=1e-12)


def test_gram_examples():
    G = gram_matrix(FourierBasis(4), gauss_legendre(-math.pi, math.pi, 200))
    np.testing.assert_allclose(G, np.eye(9), atol=1e-8)
    assert gram_matrix(ConstantBasis(), gauss_legendre(-math.pi, math.pi, 10))[0, 0] == pytest.approx(2 * math.pi)
    G = gram_matrix(PolynomialBasis(1, 2), gauss_legendre(-1, 1, 10))
    assert G[0, 2] == pytest.approx(2 / 3, abs=1e-14)
    G = gram_matrix(PolynomialBasis(1, 1), gauss_legendre(0, 1, 10), weight=lambda s: 2 * s[:, 0])
    np.testing.assert_allclose(G, [[1, 2 / 3], [2 / 3, 1 / 2]], atol=1e-14)


@pytest.mark.parametrize("basis,quad", [
    (FourierBasis(4), gauss_legendre(-math.pi, math.pi, 400)),
    (FourierBasis(30), gauss_legendre(-math.pi, math.pi, 400)),
    (PolynomialBasis(1, 2), gauss_legendre(-1, 1, 400)),
    (PolynomialBasis(1, 8), gauss_legendre(-1, 1, 400)),
    (PolynomialBasis(10, 2), monte_carlo(-1, 1, 10, 20000, seed=0)),
], ids=["F4", "F30", "P2", "P8", "P2-d10"])
def test_gram_is_symmetric_positive_definite(basis, quad):
    G = gram_matrix(basis, quad)
    assert np.abs(G - G.T).max() <= 1e-12
    assert np.linalg.eigvalsh(G).min() > 0


@pytest.mark.filterwarnings("ignore:invalid value")
def test_gram_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        gram_matrix(PolynomialBasis(1, 1), gauss_legendre(-1, 1, 4), weight=lambda s: np.full(len(s), np.inf))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 60), data=st.data())
def test_gauss_legendre_exactness(n, data):
    deg = data.draw(st.integers(0, 2 * n - 1))
    low = data.draw(st.floats(-3, 0))
    high = low + data.draw(st.floats(0.1, 4))
    q = gauss_legendre(low, high, n)
    assert q.measure == pytest.approx(high - low, abs=1e-10)
    P = np.polynomial.Legendre.basis(deg, domain=[low, high]).convert(kind=np.polynomial.Polynomial)
    exact = P.integ()(high) - P.integ()(low)
    scale = np.abs(P.coef).sum() * max(abs(low), abs(high), 1) ** deg * (high - low)
    assert abs(q.integrate(P(q.nodes[:, 0])) - exact) <= 1e-12 * max(abs(exact), scale)


def test_quadrature_measures():
    assert trapezoid(-1, 2, 31).measure == pytest.approx(3.0, abs=1e-12)
    assert monte_carlo(-1, 1, 3, 100).measure == pytest.approx(8.0, abs=1e-12)
    with pytest.raises(ValueError):
        trapezoid(0, 1, 1)
    assert isinstance(gauss_legendre(0, 1, 3), Quadrature)


def test_make_basis():
    assert make_basis("fourier:7").p == 15
    assert make_basis("poly:2", dim=3).p == 10
    with pytest.raises(ValueError):
        make_basis("rbf:3")
