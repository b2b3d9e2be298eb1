"""Model-based projected equations and analytic reference values.

The PhiBE system of order ``i`` on basis ``Phi`` under weight ``rho`` is

    A[k, l] = < beta phi_l - L_{mu_hat, Sigma_hat} phi_l , phi_k >_rho
    b[k]    = < r, phi_k >_rho

and the projected discrete-time Bellman equation is

    A[k, l] = < phi_l - e^{-beta dt} E[phi_l(s') | s] , phi_k >_rho
    b[k]    = < r dt, phi_k >_rho.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .basis import BasisSet, Quadrature, node_weights
from .dynamics import DynamicsModel, simulate_batch
from .estimators import TransitionMomentProvider, mu_sigma_hat
from .fdcoeff import fd_coefficients

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12
GAUSS_HERMITE_NODES = 64


class IllConditionedSystem(np.linalg.LinAlgError):
    def __init__(self, condition: float, detail: str = ""):
        msg = f"linear system is singular or ill-conditioned (condition estimate {condition:.3e})"
        super().__init__(msg + (f"; {detail}" if detail else ""))
        self.condition = condition


class DivergentValue(ValueError):
    """The discounted value (or its discrete analogue) is infinite."""


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    b: np.ndarray
    condition: float = field(default=math.nan)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape != (b.size, b.size):
            raise ValueError("A must be square and match b")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise FloatingPointError("linear system has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if math.isnan(self.condition):
            object.__setattr__(self, "condition", float(np.linalg.cond(A)))


@dataclass(frozen=True, eq=False)
class ValueApprox:
    theta: np.ndarray
    basis: BasisSet
    residual: float = math.nan
    condition: float = math.nan

    def __call__(self, s) -> np.ndarray:
        return self.basis.values(s) @ self.theta

    def grad(self, s) -> np.ndarray:
        _, g, _ = self.basis.evaluate(s)
        return np.einsum("npk,p->nk", g, self.theta)

    def hess(self, s) -> np.ndarray:
        _, _, h = self.basis.evaluate(s)
        return np.einsum("npkl,p->nkl", h, self.theta)


def solve(system: LinearSystem, basis: Optional[BasisSet] = None) -> ValueApprox:
    """Column-pivoted QR solve refusing condition numbers above ``1e12``."""
    A, b = system.A, system.b
    cond = system.condition
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedSystem(cond)
    Q, R, piv = scipy.linalg.qr(A, pivoting=True)
    y = scipy.linalg.solve_triangular(R, Q.T @ b)
    theta = np.empty_like(y)
    theta[piv] = y
    residual = float(np.linalg.norm(A @ theta - b))
    scale = np.linalg.norm(A, 2) * np.linalg.norm(theta) + np.linalg.norm(b)
    if residual > 1e-8 * max(scale, np.finfo(float).tiny):
        raise IllConditionedSystem(cond, f"residual {residual:.3e}")
    return ValueApprox(theta=theta, basis=basis, residual=residual, condition=cond)


# ---------------------------------------------------------------------------
# target value functions and designed rewards
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CosCubeTarget:
    """``V(s) = cos(k s)^3`` in one dimension."""

    k: float = 1.0

    def __call__(self, s):
        x = np.asarray(s, dtype=float).reshape(-1)
        return np.cos(self.k * x) ** 3

    def grad(self, s):
        x = np.asarray(s, dtype=float).reshape(-1)
        c, sn = np.cos(self.k * x), np.sin(self.k * x)
        return (-3 * self.k * c**2 * sn)[:, None]

    def hess(self, s):
        x = np.asarray(s, dtype=float).reshape(-1)
        c, sn = np.cos(self.k * x), np.sin(self.k * x)
        return (self.k**2 * (6 * c * sn**2 - 3 * c**3))[:, None, None]


@dataclass(frozen=True, eq=False)
class QuadraticTarget:
    """``V(s) = s^T P s + c``."""

    P: np.ndarray
    c: float = 0.0

    def __call__(self, s):
        P = np.atleast_2d(self.P)
        s = np.asarray(s, dtype=float).reshape(-1, P.shape[0])
        return np.einsum("ni,ij,nj->n", s, P, s) + self.c


def designed_reward(target, model: DynamicsModel, beta: float) -> Callable[[np.ndarray], np.ndarray]:
    """``r = beta V - mu . grad V - 1/2 Sigma : hess V`` so that ``V`` is the exact value."""
    Sigma = model.diffusion()

    def reward(s):
        s = np.asarray(s, dtype=float).reshape(-1, model.dimension)
        out = beta * target(s) - np.einsum("nk,nk->n", model.drift(s), target.grad(s))
        if np.any(Sigma != 0):
            out = out - 0.5 * np.einsum("kl,nkl->n", Sigma, target.hess(s))
        return out

    return reward


def quadratic_reward(Q) -> Callable[[np.ndarray], np.ndarray]:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))

    def reward(s):
        s = np.asarray(s, dtype=float).reshape(-1, Q.shape[0])
        return np.einsum("ni,ij,nj->n", s, Q, s)

    return reward


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _project(basis, quadrature, weight, rows, reward_values) -> LinearSystem:
    phi = basis.values(quadrature.nodes)
    w = node_weights(quadrature, weight)
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(reward_values))):
        raise FloatingPointError("non-finite integrand in Galerkin assembly")
    A = phi.T @ (w[:, None] * rows)
    b = phi.T @ (w * reward_values)
    return LinearSystem(A, b)


def assemble_phibe(
    basis: BasisSet,
    provider: TransitionMomentProvider,
    beta: float,
    dt: float,
    order: int,
    quadrature: Quadrature,
    *,
    reward: Callable,
    weight: Optional[Callable] = None,
    stochastic: Optional[bool] = None,
) -> LinearSystem:
    """Galerkin system of the order-``order`` PhiBE with model-based surrogates.

    ``stochastic=False`` drops the second-order term, as for deterministic flows
    where ``Sigma_hat`` is only an ``O(dt)`` artefact of the drift.  By default
    it follows the provider's model.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if stochastic is None:
        model = getattr(provider, "model", None)
        stochastic = True if model is None else model.stochastic
    coeffs = fd_coefficients(order)
    nodes = quadrature.nodes
    mu, sig = mu_sigma_hat(provider, nodes, dt, coeffs)
    rows = beta * basis.values(nodes) - basis.generator(nodes, mu, sig if stochastic else None)
    return _project(basis, quadrature, weight, rows, np.asarray(reward(nodes), dtype=float).reshape(-1))


def assemble_generator(
    basis: BasisSet,
    model: DynamicsModel,
    beta: float,
    quadrature: Quadrature,
    *,
    reward: Callable,
    weight: Optional[Callable] = None,
) -> LinearSystem:
    """Galerkin system of the continuous-time equation with the true drift and diffusion."""
    nodes = quadrature.nodes
    Sigma = model.diffusion()
    rows = beta * basis.values(nodes) - basis.generator(nodes, model.drift(nodes), Sigma)
    return _project(basis, quadrature, weight, rows, np.asarray(reward(nodes), dtype=float).reshape(-1))


class DeterministicLaw:
    """``s' = step(s)``."""

    def __init__(self, step: Callable[[np.ndarray], np.ndarray]):
        self.step = step

    def expect(self, basis: BasisSet, s: np.ndarray) -> np.ndarray:
        return basis.values(self.step(s))


class GaussianLaw:
    """One-dimensional Gaussian kernel integrated with Gauss-Hermite nodes."""

    def __init__(self, model: DynamicsModel, dt: float, n_nodes: int = GAUSS_HERMITE_NODES):
        if model.dimension != 1 or not model.has_exact_transition:
            raise ValueError("GaussianLaw needs a one-dimensional model with a closed-form law")
        self.model, self.dt = model, dt
        self.x, self.w = np.polynomial.hermite.hermgauss(n_nodes)

    def expect(self, basis: BasisSet, s: np.ndarray) -> np.ndarray:
        mean, cov = self.model.transition_moments(s, self.dt)
        sd = math.sqrt(2.0 * float(cov[0, 0]))
        pts = mean[:, 0][:, None] + sd * self.x[None, :]
        vals = basis.values(pts.reshape(-1, 1)).reshape(pts.shape[0], pts.shape[1], -1)
        return np.einsum("nqp,q->np", vals, self.w) / math.sqrt(math.pi)


def transition_law(model: DynamicsModel, dt: float, *, substeps: int = 1000):
    if model.has_exact_transition and model.stochastic:
        return GaussianLaw(model, dt)
    if model.has_exact_transition:
        return DeterministicLaw(lambda s: model.transition_moments(s, dt)[0])
    if not model.stochastic:
        return DeterministicLaw(lambda s: simulate_batch(model, s, dt, 1, substeps=substeps)[:, 1])
    raise ValueError(f"unsupported transition law for {model.model_id}")


def assemble_be_projection(
    basis: BasisSet,
    law,
    beta: float,
    dt: float,
    quadrature: Quadrature,
    *,
    reward: Callable,
    weight: Optional[Callable] = None,
) -> LinearSystem:
    """Galerkin projection of ``V = r dt + e^{-beta dt} E[V(s')]``."""
    if not hasattr(law, "expect"):
        raise ValueError("unsupported transition law")
    nodes = quadrature.nodes
    gamma = math.exp(-beta * dt)
    rows = basis.values(nodes) - gamma * law.expect(basis, nodes)
    return _project(basis, quadrature, weight, rows, dt * np.asarray(reward(nodes), dtype=float).reshape(-1))


# ---------------------------------------------------------------------------
# exact BE rollout for deterministic maps
# ---------------------------------------------------------------------------


class RolloutValue:
    """``V(s) = sum_{i=0}^{I} e^{-beta dt i} r(p^i(s)) dt`` evaluated lazily."""

    def __init__(self, reward, step, beta: float, dt: float, horizon_steps: int):
        self.reward, self.step = reward, step
        self.beta, self.dt, self.horizon = beta, dt, horizon_steps

    def __call__(self, s) -> np.ndarray:
        x = np.asarray(s, dtype=float)
        x = x.reshape(-1, 1) if x.ndim <= 1 else x
        gamma = math.exp(-self.beta * self.dt)
        total = np.zeros(x.shape[0])
        disc = 1.0
        for _ in range(self.horizon + 1):
            total += disc * np.asarray(self.reward(x), dtype=float).reshape(-1)
            disc *= gamma
            x = self.step(x)
        return total * self.dt

    def tail_bound(self, reward_sup: float) -> float:
        """Bound on the omitted terms given ``sup |r|``."""
        gamma = math.exp(-self.beta * self.dt)
        return gamma ** (self.horizon + 1) * reward_sup * self.dt / (1.0 - gamma)


def be_rollout_deterministic(reward, step, beta: float, dt: float, horizon_steps: Optional[int] = None) -> RolloutValue:
    if horizon_steps is None:
        horizon_steps = math.ceil(500.0 / dt)
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be at least 1")
    value = RolloutValue(reward, step, beta, dt, horizon_steps)
    log.debug("BE rollout horizon %d, geometric tail factor %.3e", horizon_steps, value.tail_bound(1.0))
    return value


# ---------------------------------------------------------------------------
# linear-quadratic closed forms
# ---------------------------------------------------------------------------


def lq_true_value(q, r_ctrl, K, alpha, b_ctrl, sigma, beta) -> tuple[float, float]:
    """``V(s) = a1 s^2 + a2`` for the closed loop ``ds = (alpha - b K) s dt + sigma dW``."""
    R = q + r_ctrl * K**2
    lam = alpha - b_ctrl * K
    if beta <= 2 * lam:
        raise DivergentValue(f"beta={beta} must exceed 2*lambda={2 * lam}")
    a1 = R / (beta - 2 * lam)
    return a1, sigma**2 * a1 / beta


def _sigma_hat_sq(lam: float, sigma: float, dt: float) -> float:
    x = 2 * lam * dt
    return sigma**2 * (math.expm1(x) / x if x != 0 else 1.0)


def lq_be_value(R, lam, sigma, beta, dt) -> tuple[float, float]:
    """Quadratic solution ``a1R s^2 + a0R`` of the discrete-time Bellman equation."""
    gamma = math.exp(-beta * dt)
    contraction = gamma * math.exp(2 * lam * dt)
    if contraction >= 1:
        raise DivergentValue(f"gamma * e^(2 lam dt) = {contraction} >= 1")
    a1 = R * dt / (1 - contraction)
    a0 = gamma * dt / (1 - gamma) * _sigma_hat_sq(lam, sigma, dt) * a1
    return a1, a0


def lq_phibe_value(R, lam, sigma, beta, dt) -> tuple[float, float]:
    """Quadratic solution ``a1P s^2 + a0P`` of the first-order PhiBE."""
    lam_hat = math.expm1(lam * dt) / dt
    eta = math.expm1(lam * dt) ** 2 / dt
    denom = beta - 2 * lam_hat - eta
    if denom <= 0:
        raise DivergentValue(f"beta - 2 lam_hat - eta = {denom} <= 0")
    a1 = R / denom
    return a1, _sigma_hat_sq(lam, sigma, dt) * a1 / beta


def lq_phibe_residual(R, lam, sigma, beta, dt) -> tuple[float, float]:
    """Coefficient residuals (``s^2`` and ``s^0``) of the PhiBE ODE at the closed form."""
    a1, a0 = lq_phibe_value(R, lam, sigma, beta, dt)
    lam_hat = math.expm1(lam * dt) / dt
    sig2 = _sigma_hat_sq(lam, sigma, dt)
    # beta V = R s^2 + lam_hat s V' + (sig2 + lam_hat^2 s^2 dt)/2 V''
    r2 = beta * a1 - (R + 2 * lam_hat * a1 + lam_hat**2 * dt * a1)
    r0 = beta * a0 - sig2 * a1
    return r2, r0


def lq_true_value_nd(A, Sigma, Q, beta) -> tuple[np.ndarray, float]:
    """``V(s) = s^T P s + c`` with ``A^T P + P A - beta P = -Q`` and ``c = tr(Sigma P) / beta``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = A.shape[0]
    if beta <= 2 * np.max(np.linalg.eigvals(A).real):
        raise DivergentValue("beta must exceed twice the largest real part of eig(A)")
    eye = np.eye(d)
    op = np.kron(eye, A.T) + np.kron(A.T, eye) - beta * np.eye(d * d)
    if np.linalg.cond(op) > MAX_CONDITION:
        raise IllConditionedSystem(float(np.linalg.cond(op)), "Lyapunov operator")
    P = np.linalg.solve(op, -Q.reshape(-1, order="F")).reshape(d, d, order="F")
    P = 0.5 * (P + P.T)
    return P, float(np.trace(Sigma @ P) / beta)
