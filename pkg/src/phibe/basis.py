"""Basis families, quadrature rules and Gram matrices."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

_BLOCK = 2048


def _as_states(s, dim: int) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        s = s.reshape(1, 1)
    elif s.ndim == 1:
        s = s[:, None] if dim == 1 else s[None, :]
    if s.shape[1] != dim:
        raise ValueError(f"expected states of dimension {dim}, got shape {s.shape}")
    return s


class BasisSet:
    """Common interface: ``values``, ``evaluate`` and ``generator`` on ``(N, d)`` states."""

    dim: int
    p: int
    name: str

    def values(self, s) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Values ``(N, p)``, gradients ``(N, p, d)`` and Hessians ``(N, p, d, d)``."""
        raise NotImplementedError

    def generator(self, s, mu, Sigma=None) -> np.ndarray:
        """``mu . grad(phi) + 1/2 Sigma : hess(phi)`` for every basis function, ``(N, p)``.

        ``mu`` is ``(N, d)``; ``Sigma`` is ``(N, d, d)``, ``(d, d)`` or ``None``.
        """
        s = _as_states(s, self.dim)
        mu = np.asarray(mu, dtype=float).reshape(s.shape)
        out = np.empty((s.shape[0], self.p))
        for start in range(0, s.shape[0], _BLOCK):
            sl = slice(start, start + _BLOCK)
            _, g, h = self.evaluate(s[sl])
            acc = np.einsum("npk,nk->np", g, mu[sl])
            if Sigma is not None:
                Sig = np.asarray(Sigma, dtype=float)
                Sig = np.broadcast_to(Sig, (s.shape[0], self.dim, self.dim))[sl]
                acc += 0.5 * np.einsum("npkl,nkl->np", h, Sig)
            out[sl] = acc
        return out

    def __call__(self, s) -> np.ndarray:
        return self.values(s)


@dataclass(frozen=True)
class FourierBasis(BasisSet):
    """``(1/sqrt(pi)) {1/sqrt(2), cos(m s), sin(m s)}_{m=1..M}`` on ``[-pi, pi)``."""

    M: int

    dim = 1

    @property
    def p(self) -> int:  # type: ignore[override]
        return 2 * self.M + 1

    @property
    def name(self) -> str:  # type: ignore[override]
        return f"fourier:{self.M}"

    @staticmethod
    def wrap(s: np.ndarray) -> np.ndarray:
        return np.mod(s + math.pi, 2 * math.pi) - math.pi

    def _trig(self, s):
        x = self.wrap(_as_states(s, 1)[:, 0])
        m = np.arange(1, self.M + 1)
        arg = x[:, None] * m[None, :]
        return m, np.cos(arg), np.sin(arg)

    def values(self, s):
        m, c, sn = self._trig(s)
        out = np.empty((c.shape[0], self.p))
        out[:, 0] = 1.0 / math.sqrt(2 * math.pi)
        out[:, 1::2] = c / math.sqrt(math.pi)
        out[:, 2::2] = sn / math.sqrt(math.pi)
        return out

    def _derivs(self, s):
        m, c, sn = self._trig(s)
        n = c.shape[0]
        k = 1.0 / math.sqrt(math.pi)
        d1 = np.zeros((n, self.p))
        d2 = np.zeros((n, self.p))
        d1[:, 1::2] = -m * sn * k
        d1[:, 2::2] = m * c * k
        d2[:, 1::2] = -(m**2) * c * k
        d2[:, 2::2] = -(m**2) * sn * k
        return d1, d2

    def evaluate(self, s):
        d1, d2 = self._derivs(s)
        return self.values(s), d1[:, :, None], d2[:, :, None, None]

    def generator(self, s, mu, Sigma=None):
        d1, d2 = self._derivs(s)
        mu = np.asarray(mu, dtype=float).reshape(-1, 1)
        out = mu * d1
        if Sigma is not None:
            Sig = np.broadcast_to(np.asarray(Sigma, dtype=float).reshape(-1), (d1.shape[0],))
            out = out + 0.5 * Sig[:, None] * d2
        return out


class PolynomialBasis(BasisSet):
    """All monomials ``prod_i s_i^{alpha_i}`` with total degree ``<= degree``.

    Ordered by total degree, then lexicographically over ``i <= j <= ...``;
    for ``degree = 2`` this is ``{1, s_i, s_i s_j (i <= j)}``.
    """

    def __init__(self, dim: int, degree: int = 2):
        if dim < 1 or degree < 0:
            raise ValueError("dim must be positive and degree nonnegative")
        self.dim = dim
        self.degree = degree
        alphas = []
        for deg in range(degree + 1):
            for combo in itertools.combinations_with_replacement(range(dim), deg):
                a = [0] * dim
                for i in combo:
                    a[i] += 1
                alphas.append(tuple(a))
        self.alphas = alphas
        self.p = len(alphas)
        index = {a: n for n, a in enumerate(alphas)}
        # sparse first/second derivative tables: (basis idx, k[, l], coef, reduced idx)
        self._grad_terms = []
        self._hess_terms = []
        for n, a in enumerate(alphas):
            for k in range(dim):
                if a[k] == 0:
                    continue
                ak = list(a)
                ak[k] -= 1
                self._grad_terms.append((n, k, float(a[k]), index[tuple(ak)]))
                for l in range(dim):
                    if ak[l] == 0:
                        continue
                    akl = list(ak)
                    akl[l] -= 1
                    self._hess_terms.append((n, k, l, float(a[k] * ak[l]), index[tuple(akl)]))

    def __repr__(self) -> str:
        return f"PolynomialBasis(dim={self.dim}, degree={self.degree})"

    @property
    def name(self) -> str:  # type: ignore[override]
        return f"poly:{self.degree}"

    def values(self, s):
        s = _as_states(s, self.dim)
        powers = [np.ones_like(s)]
        for _ in range(self.degree):
            powers.append(powers[-1] * s)
        out = np.ones((s.shape[0], self.p))
        for n, a in enumerate(self.alphas):
            for i, e in enumerate(a):
                if e:
                    out[:, n] *= powers[e][:, i]
        return out

    def evaluate(self, s):
        s = _as_states(s, self.dim)
        phi = self.values(s)
        N = s.shape[0]
        grad = np.zeros((N, self.p, self.dim))
        hess = np.zeros((N, self.p, self.dim, self.dim))
        for n, k, c, r in self._grad_terms:
            grad[:, n, k] += c * phi[:, r]
        for n, k, l, c, r in self._hess_terms:
            hess[:, n, k, l] += c * phi[:, r]
        return phi, grad, hess

    def generator(self, s, mu, Sigma=None):
        s = _as_states(s, self.dim)
        phi = self.values(s)
        mu = np.asarray(mu, dtype=float).reshape(s.shape)
        out = np.zeros((s.shape[0], self.p))
        for n, k, c, r in self._grad_terms:
            out[:, n] += c * mu[:, k] * phi[:, r]
        if Sigma is not None:
            Sig = np.asarray(Sigma, dtype=float)
            if Sig.ndim == 0:
                Sig = Sig.reshape(1, 1)
            for n, k, l, c, r in self._hess_terms:
                coef = Sig[..., k, l] if Sig.ndim == 3 else Sig[k, l]
                out[:, n] += 0.5 * c * coef * phi[:, r]
        return out


def eval_basis(basis: BasisSet, s):
    """Evaluate ``(phi, grad, hess)`` at a single state."""
    phi, g, h = basis.evaluate(_as_states(np.atleast_1d(np.asarray(s, dtype=float)), basis.dim)[:1])
    return phi[0], g[0], h[0]


def make_basis(spec: str, dim: int = 1) -> BasisSet:
    """Build a basis from ``"fourier:M"`` or ``"poly:DEGREE"``."""
    kind, _, arg = spec.partition(":")
    if kind == "fourier":
        return FourierBasis(int(arg or 4))
    if kind in ("poly", "polynomial"):
        return PolynomialBasis(dim, int(arg or 2))
    raise ValueError(f"unknown basis {spec!r}")


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Quadrature:
    kind: str
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def gauss_legendre(low: float, high: float, n: int) -> Quadrature:
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (high - low)
    return Quadrature("gauss-legendre", (half * x + 0.5 * (high + low))[:, None], half * w)


def trapezoid(low: float, high: float, n: int) -> Quadrature:
    if n < 2:
        raise ValueError("trapezoid rule needs at least two nodes")
    x = np.linspace(low, high, n)
    w = np.full(n, (high - low) / (n - 1))
    w[[0, -1]] *= 0.5
    return Quadrature("trapezoid", x[:, None], w)


def monte_carlo(low: float, high: float, dim: int, n: int, seed: int = 0) -> Quadrature:
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=(n, dim))
    return Quadrature("monte-carlo", x, np.full(n, (high - low) ** dim / n))


def node_weights(quadrature: Quadrature, weight: Optional[Callable] = None) -> np.ndarray:
    """Quadrature weights times the density ``weight`` (Lebesgue when ``None``)."""
    if weight is None:
        return quadrature.weights
    rho = np.asarray(weight(quadrature.nodes), dtype=float).reshape(-1)
    return quadrature.weights * rho


def gram_matrix(basis: BasisSet, quadrature: Quadrature, weight: Optional[Callable] = None) -> np.ndarray:
    phi = basis.values(quadrature.nodes)
    w = node_weights(quadrature, weight)
    G = phi.T @ (w[:, None] * phi)
    if not np.all(np.isfinite(G)):
        raise FloatingPointError("Gram matrix has non-finite entries")
    return 0.5 * (G + G.T)
