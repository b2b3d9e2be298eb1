"""Drift and diffusion surrogates from multi-step transitions.

Model-based surrogates average over the transition law,

    mu_hat(s)    = (1/dt) sum_j a_j E[s_{j dt} - s_0 | s_0 = s]
    Sigma_hat(s) = (1/dt) sum_j a_j E[(s_{j dt} - s_0)(s_{j dt} - s_0)^T | s_0 = s]

and the data-driven ones replace the expectations by a single observed
window ``s_0, ..., s_{i dt}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .dynamics import DynamicsModel, simulate_batch
from .fdcoeff import FdCoefficients
from .metrics import OrderFit, fit_order


@dataclass(frozen=True, eq=False)
class LocalDynamicsEstimate:
    mu_bar: np.ndarray
    sigma_bar: np.ndarray
    anchor: np.ndarray


def _window_array(window, coeffs: FdCoefficients) -> np.ndarray:
    w = np.asarray(window, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.shape[-2] != coeffs.order + 1:
        raise ValueError(f"window holds {w.shape[-2]} states, order {coeffs.order} needs {coeffs.order + 1}")
    return w


def window_estimates(windows: np.ndarray, dt: float, coeffs: FdCoefficients) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(mu_bar, sigma_bar)`` for windows of shape ``(W, i+1, d)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = _window_array(windows, coeffs)
    a = coeffs.weights[1:]
    disp = w[..., 1:, :] - w[..., :1, :]
    mu = np.einsum("j,...jd->...d", a, disp) / dt
    sig = np.einsum("j,...jd,...je->...de", a, disp, disp) / dt
    # summation order can differ between (d, e) and (e, d); make symmetry exact
    return mu, 0.5 * (sig + np.swapaxes(sig, -1, -2))


def mu_bar(window, dt: float, coeffs: FdCoefficients) -> np.ndarray:
    return window_estimates(_window_array(window, coeffs)[None], dt, coeffs)[0][0]


def sigma_bar(window, dt: float, coeffs: FdCoefficients) -> np.ndarray:
    return window_estimates(_window_array(window, coeffs)[None], dt, coeffs)[1][0]


# ---------------------------------------------------------------------------
# transition moment providers
# ---------------------------------------------------------------------------


class TransitionMomentProvider:
    """Displacement moments of ``s_{j dt} - s_0`` for ``j = 1 .. order``."""

    def moments(self, s: np.ndarray, dt: float, order: int) -> tuple[np.ndarray, np.ndarray]:
        """First moments ``(order, N, d)`` and second moments ``(order, N, d, d)``."""
        raise NotImplementedError


class ClosedFormProvider(TransitionMomentProvider):
    """Exact moments for models with a Gaussian (or degenerate) transition law."""

    def __init__(self, model: DynamicsModel):
        if not model.has_exact_transition:
            raise ValueError(f"{model.model_id} has no closed-form transition law")
        self.model = model

    def moments(self, s, dt, order):
        s = np.asarray(s, dtype=float).reshape(-1, self.model.dimension)
        first, second = [], []
        for j in range(1, order + 1):
            mean, cov = self.model.transition_moments(s, j * dt)
            disp = mean - s
            first.append(disp)
            second.append(cov[None] + disp[:, :, None] * disp[:, None, :])
        return np.stack(first), np.stack(second)


class FlowProvider(TransitionMomentProvider):
    """Deterministic models without a closed form: integrate the flow with Euler steps."""

    def __init__(self, model: DynamicsModel, substeps: int):
        if model.stochastic:
            raise ValueError("FlowProvider requires deterministic dynamics")
        self.model = model
        self.substeps = substeps

    def moments(self, s, dt, order):
        s = np.asarray(s, dtype=float).reshape(-1, self.model.dimension)
        path = simulate_batch(self.model, s, dt, order, substeps=self.substeps)
        disp = np.moveaxis(path[:, 1:] - path[:, :1], 1, 0)
        return disp, disp[..., :, None] * disp[..., None, :]


class MonteCarloProvider(TransitionMomentProvider):
    """Sample-average moments from ``n_samples`` Euler-Maruyama paths per state."""

    def __init__(self, model: DynamicsModel, n_samples: int, substeps: int, seed: int = 0):
        self.model = model
        self.n_samples = n_samples
        self.substeps = substeps
        self.seed = seed

    def moments(self, s, dt, order):
        s = np.asarray(s, dtype=float).reshape(-1, self.model.dimension)
        N, d = s.shape
        reps = np.repeat(s, self.n_samples, axis=0)
        path = simulate_batch(self.model, reps, dt, order, substeps=self.substeps, seed=self.seed)
        disp = (path[:, 1:] - path[:, :1]).reshape(N, self.n_samples, order, d)
        first = disp.mean(axis=1)
        second = np.einsum("nkjd,nkje->njde", disp, disp) / self.n_samples
        return np.moveaxis(first, 1, 0), np.moveaxis(second, 1, 0)


def moment_provider(model: DynamicsModel, *, substeps: int = 1000, n_samples: int = 1000, seed: int = 0):
    """Closed form where available, otherwise Euler flow or Monte Carlo."""
    if model.has_exact_transition:
        return ClosedFormProvider(model)
    if not model.stochastic:
        return FlowProvider(model, substeps)
    return MonteCarloProvider(model, n_samples, substeps, seed)


def mu_sigma_hat(provider: TransitionMomentProvider, s, dt: float, coeffs: FdCoefficients):
    """Batched ``(mu_hat (N, d), Sigma_hat (N, d, d))``."""
    first, second = provider.moments(s, dt, coeffs.order)
    a = coeffs.weights[1:]
    mu = np.tensordot(a, first, axes=1) / dt
    sig = np.tensordot(a, second, axes=1) / dt
    return mu, 0.5 * (sig + np.swapaxes(sig, -1, -2))


def model_mu_sigma_hat(provider: TransitionMomentProvider, s, dt: float, coeffs: FdCoefficients) -> LocalDynamicsEstimate:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    mu, sig = mu_sigma_hat(provider, s[None, :], dt, coeffs)
    return LocalDynamicsEstimate(mu_bar=mu[0], sigma_bar=sig[0], anchor=s)


# ---------------------------------------------------------------------------
# order check on exact linear flows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderCheck:
    dts: tuple[float, ...]
    errors: tuple[float, ...]
    fit: OrderFit | None

    @property
    def slope(self) -> float:
        return math.nan if self.fit is None else self.fit.slope


def linear_generator_estimate(rate, dt: float, coeffs: FdCoefficients):
    """``(1/dt) sum_j a_j (e^{rate j dt} - I)``, the surrogate drift rate of a linear flow."""
    a = coeffs.weights
    rate_arr = np.asarray(rate, dtype=float)
    if rate_arr.ndim == 0:
        lam = float(rate_arr)
        return sum(a[j] * math.expm1(lam * j * dt) for j in range(1, coeffs.order + 1)) / dt
    eye = np.eye(rate_arr.shape[0])
    return sum(a[j] * (scipy.linalg.expm(rate_arr * j * dt) - eye) for j in range(1, coeffs.order + 1)) / dt


def estimator_order_check(model, coeffs: FdCoefficients, dt_grid: Sequence[float]) -> OrderCheck:
    """Fit ``log ||A_hat_i - A||_inf`` against ``log dt`` over ``dt_grid``.

    ``model`` is a :class:`Linear1D`, :class:`LinearND` or a bare rate.  If the
    error vanishes identically (``A = 0``) no fit is made and ``slope`` is NaN.
    """
    if len(dt_grid) < 3:
        raise ValueError("order fit needs at least three step sizes")
    rate = getattr(model, "A", getattr(model, "lam", model))
    errs = []
    for dt in dt_grid:
        diff = np.asarray(linear_generator_estimate(rate, dt, coeffs) - np.asarray(rate, dtype=float))
        errs.append(float(np.abs(diff).max() if diff.ndim == 0 else np.linalg.norm(diff, ord=np.inf)))
    fit = None if all(e == 0 for e in errs) else fit_order(dt_grid, errs)
    return OrderCheck(dts=tuple(float(x) for x in dt_grid), errors=tuple(errs), fit=fit)
