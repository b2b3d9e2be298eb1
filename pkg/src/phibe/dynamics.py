"""Dynamics families, trajectory simulation and exact transition laws.

States are handled as ``(N, d)`` arrays throughout; single states may be
passed as ``(d,)`` vectors (or scalars for one-dimensional models).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

#: Trajectories per RNG stream.  Streams are keyed by (seed, purpose, chunk),
#: so results do not depend on how chunks are scheduled across workers.
CHUNK = 1024

_INIT_STREAM = 0
_NOISE_STREAM = 1


class SimulationDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state encountered at step {step}")
        self.step = step


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class DynamicsModel:
    """Base class for ``ds = mu(s) dt + sigma dB`` with additive noise."""

    dimension: int = 1

    @property
    def model_id(self) -> str:
        raise NotImplementedError

    @property
    def stochastic(self) -> bool:
        return bool(np.any(self.noise_matrix() != 0))

    @property
    def has_exact_transition(self) -> bool:
        return False

    def drift(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def noise_matrix(self) -> np.ndarray:
        """Constant ``sigma`` with ``Sigma = sigma sigma^T``."""
        return np.zeros((self.dimension, self.dimension))

    def diffusion(self) -> np.ndarray:
        sig = self.noise_matrix()
        return sig @ sig.T

    def transition_moments(self, s: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean ``(N, d)`` and covariance ``(d, d)`` of ``s_t | s_0 = s``."""
        raise NotImplementedError(f"{self.model_id} has no closed-form transition law")


@dataclass(frozen=True)
class Linear1D(DynamicsModel):
    lam: float

    @property
    def model_id(self) -> str:
        return f"linear1d(lam={self.lam:g})"

    @property
    def has_exact_transition(self) -> bool:
        return True

    def drift(self, s):
        return self.lam * s

    def transition_moments(self, s, t):
        with np.errstate(over="ignore"):
            factor = np.exp(self.lam * t)
        return factor * s, np.zeros((1, 1))


@dataclass(frozen=True)
class NonlinearSin1D(DynamicsModel):
    lam: float

    @property
    def model_id(self) -> str:
        return f"sin1d(lam={self.lam:g})"

    def drift(self, s):
        return self.lam * np.sin(s) ** 2

    def flow(self, s, t: float) -> np.ndarray:
        """Analytic flow map: ``cot(s_t) = cot(s_0) - lam t`` within each cell ``(k pi, (k+1) pi)``."""
        s = np.asarray(s, dtype=float)
        k = np.floor(s / math.pi)
        x = s - k * math.pi
        fixed = np.isclose(x, 0.0, atol=1e-15) | np.isclose(x, math.pi, atol=1e-15)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.cos(x) / np.sin(x) - self.lam * t
            xt = 0.5 * math.pi - np.arctan(c)
        return np.where(fixed, s, k * math.pi + xt)


@dataclass(frozen=True)
class OU1D(DynamicsModel):
    lam: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def model_id(self) -> str:
        return f"ou1d(lam={self.lam:g},sigma={self.sigma:g})"

    @property
    def has_exact_transition(self) -> bool:
        return True

    def drift(self, s):
        return self.lam * s

    def noise_matrix(self):
        return np.array([[self.sigma]])

    def transition_moments(self, s, t):
        mean, var = ou_transition_moments(self.lam, self.sigma, 1.0, t)
        return mean * s, np.array([[var]])


@dataclass(frozen=True)
class CubicStabilization1D(DynamicsModel):
    """Closed loop of ``ds = (-kappa s^3 + alpha s - b u) dt + sigma dW`` with ``u = K s``."""

    kappa: float
    alpha: float
    b: float
    K: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def model_id(self) -> str:
        return (
            f"cubic1d(kappa={self.kappa:g},alpha={self.alpha:g},b={self.b:g},"
            f"K={self.K:g},sigma={self.sigma:g})"
        )

    @property
    def linear_rate(self) -> float:
        return self.alpha - self.b * self.K

    @property
    def has_exact_transition(self) -> bool:
        return self.kappa == 0

    def drift(self, s):
        return -self.kappa * s**3 + self.linear_rate * s

    def noise_matrix(self):
        return np.array([[self.sigma]])

    def transition_moments(self, s, t):
        if self.kappa != 0:
            return super().transition_moments(s, t)
        mean, var = ou_transition_moments(self.linear_rate, self.sigma, 1.0, t)
        return mean * s, np.array([[var]])


@dataclass(frozen=True, eq=False)
class LinearND(DynamicsModel):
    """``ds = A s dt + sigma dW`` with diagonal diffusion ``Sigma = diag(sigma_diag)``."""

    A: np.ndarray
    sigma_diag: np.ndarray
    name: str = field(default="linearnd")

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sigma_diag, dtype=float))
        if A.shape[0] != A.shape[1] or sd.shape != (A.shape[0],):
            raise ValueError("A must be square and sigma_diag must match its size")
        if np.any(sd < 0):
            raise ValueError("diffusion entries must be nonnegative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma_diag", sd)

    @property
    def dimension(self) -> int:  # type: ignore[override]
        return self.A.shape[0]

    @property
    def model_id(self) -> str:
        return f"{self.name}(d={self.dimension})"

    @property
    def has_exact_transition(self) -> bool:
        return True

    def drift(self, s):
        return s @ self.A.T

    def noise_matrix(self):
        return np.diag(np.sqrt(self.sigma_diag))

    def diffusion(self):
        return np.diag(self.sigma_diag)

    def transition_moments(self, s, t):
        expA, cov = linear_transition(self.A, self.diffusion(), t)
        return s @ expA.T, cov


def drift(model: DynamicsModel, s) -> np.ndarray:
    """Drift at a single state, validating its dimension."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (model.dimension,):
        raise ValueError(f"state has shape {s.shape}, model dimension is {model.dimension}")
    return model.drift(s[None, :])[0]


# ---------------------------------------------------------------------------
# exact laws
# ---------------------------------------------------------------------------


def exact_linear_step(rate, s, dt: float) -> np.ndarray:
    """``e^{rate dt} s`` for a scalar rate or a square matrix."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    rate_arr = np.asarray(rate, dtype=float)
    if rate_arr.ndim == 0:
        return math.exp(float(rate_arr) * dt) * np.asarray(s, dtype=float)
    return scipy.linalg.expm(rate_arr * dt) @ np.asarray(s, dtype=float)


def ou_transition_moments(lam: float, sigma: float, s, t: float):
    """Mean and variance of the 1D OU state at time ``t`` from ``s``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    mean = np.asarray(s, dtype=float) * math.exp(lam * t)
    if abs(lam) * t < 1e-8:
        var = sigma**2 * t
    else:
        var = sigma**2 * math.expm1(2 * lam * t) / (2 * lam)
    return mean, var


def linear_transition(A: np.ndarray, Sigma: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """``e^{At}`` and ``int_0^t e^{Au} Sigma e^{A^T u} du`` via Van Loan's block exponential."""
    d = A.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -A
    block[:d, d:] = Sigma
    block[d:, d:] = A.T
    E = scipy.linalg.expm(block * t)
    expA = E[d:, d:].T
    cov = expA @ E[:d, d:]
    return expA, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    dt: float
    seed: int
    model_id: str

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[0] == 0:
            raise ValueError("trajectory is empty")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory contains non-finite states")
        object.__setattr__(self, "states", states)

    @property
    def m(self) -> int:
        return self.states.shape[0] - 1


@dataclass(frozen=True, eq=False)
class TransitionPairs:
    starts: np.ndarray
    ends: np.ndarray
    dt: float
    rewards: Optional[np.ndarray] = None

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=float)
        ends = np.asarray(self.ends, dtype=float)
        if starts.ndim == 1:
            starts, ends = starts[:, None], ends[:, None]
        if starts.shape != ends.shape:
            raise ValueError("starts and ends must have equal shapes")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "ends", ends)
        if self.rewards is not None:
            r = np.asarray(self.rewards, dtype=float).reshape(-1)
            if r.shape[0] != starts.shape[0]:
                raise ValueError("one reward per pair is required")
            object.__setattr__(self, "rewards", r)

    def __len__(self) -> int:
        return self.starts.shape[0]


# ---------------------------------------------------------------------------
# initial distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformBox:
    low: float
    high: float
    dim: int = 1

    def sample(self, n: int, seed: int) -> np.ndarray:
        out = np.empty((n, self.dim))
        for sl, rng in _chunk_streams(seed, n, _INIT_STREAM):
            out[sl] = rng.uniform(self.low, self.high, size=(sl.stop - sl.start, self.dim))
        return out

    @property
    def volume(self) -> float:
        return (self.high - self.low) ** self.dim


@dataclass(frozen=True)
class UniformMesh:
    low: float
    high: float

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        return np.linspace(self.low, self.high, n)[:, None]


@dataclass(frozen=True, eq=False)
class FixedStates:
    states: np.ndarray

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if states.shape[0] == 1 and states.shape[1] > 1 and n > 1:
            states = states.T
        if states.shape[0] != n:
            raise ValueError(f"fixed list holds {states.shape[0]} states, {n} requested")
        return states


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _stream(seed: int, purpose: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=(purpose, chunk))
    return np.random.Generator(np.random.PCG64(ss))


def _chunk_streams(seed: int, n: int, purpose: int):
    for c, start in enumerate(range(0, n, CHUNK)):
        yield slice(start, min(start + CHUNK, n)), _stream(seed, purpose, c)


def _advance_em(model: DynamicsModel, x: np.ndarray, delta: float, substeps: int, rng) -> np.ndarray:
    sig = model.noise_matrix()
    noisy = bool(np.any(sig != 0))
    sq = math.sqrt(delta)
    for _ in range(substeps):
        inc = model.drift(x) * delta
        if noisy:
            inc = inc + (rng.standard_normal(x.shape) * sq) @ sig.T
        x = x + inc
    return x


def _advance_exact(model: DynamicsModel, x: np.ndarray, dt: float, rng) -> np.ndarray:
    mean, cov = model.transition_moments(x, dt)
    if not np.any(cov != 0):
        return mean
    L = np.linalg.cholesky(cov + 1e-300 * np.eye(cov.shape[0]))
    return mean + rng.standard_normal(x.shape) @ L.T


def simulate_batch(
    model: DynamicsModel,
    s0: np.ndarray,
    dt: float,
    m: int,
    *,
    substeps: int = 1,
    seed: int = 0,
    exact: bool = False,
) -> np.ndarray:
    """Simulate ``len(s0)`` independent trajectories; returns ``(J, m+1, d)``.

    With ``exact`` the closed-form transition law is sampled directly;
    otherwise Euler-Maruyama with ``substeps`` internal steps per ``dt``.
    """
    if dt <= 0 or m < 1 or substeps < 1:
        raise ValueError("need dt > 0, m >= 1 and substeps >= 1")
    if exact and not model.has_exact_transition:
        raise ValueError(f"{model.model_id} has no exact transition sampler")
    s0 = np.asarray(s0, dtype=float).reshape(-1, model.dimension)
    J = s0.shape[0]
    out = np.empty((J, m + 1, model.dimension))
    out[:, 0] = s0
    delta = dt / substeps

    if not model.stochastic:
        # no randomness: advance the whole batch at once
        x = s0.copy()
        for step in range(1, m + 1):
            x = _advance_exact(model, x, dt, None) if exact else _advance_em(model, x, delta, substeps, None)
            if not np.all(np.isfinite(x)):
                raise SimulationDiverged(step)
            out[:, step] = x
        return out

    for sl, rng in _chunk_streams(seed, J, _NOISE_STREAM):
        x = s0[sl].copy()
        for step in range(1, m + 1):
            x = _advance_exact(model, x, dt, rng) if exact else _advance_em(model, x, delta, substeps, rng)
            if not np.all(np.isfinite(x)):
                raise SimulationDiverged(step)
            out[sl, step] = x
    return out


def simulate_trajectory(
    model: DynamicsModel,
    s0,
    dt: float,
    m: int,
    substeps: int = 1,
    seed: int = 0,
    *,
    exact: bool = False,
) -> Trajectory:
    states = simulate_batch(model, np.atleast_1d(s0), dt, m, substeps=substeps, seed=seed, exact=exact)
    return Trajectory(states=states[0], dt=dt, seed=seed, model_id=model.model_id)


def sample_transition_pairs(
    model: DynamicsModel,
    initial_sampler,
    dt: float,
    n: int,
    *,
    substeps: int = 1,
    seed: int = 0,
    reward: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    exact: Optional[bool] = None,
) -> TransitionPairs:
    """Draw ``n`` starts from ``initial_sampler`` and one successor each.

    ``exact`` defaults to the model's capability.  ``reward`` maps ``(n, d)``
    starts to ``(n,)`` rewards.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if exact is None:
        exact = model.has_exact_transition
    starts = initial_sampler.sample(n, seed)
    paths = simulate_batch(model, starts, dt, 1, substeps=substeps, seed=seed, exact=exact)
    rewards = None if reward is None else np.asarray(reward(starts), dtype=float).reshape(-1)
    return TransitionPairs(starts=starts, ends=paths[:, 1], dt=dt, rewards=rewards)


def trajectories_from_batch(batch: np.ndarray, dt: float, seed: int, model_id: str) -> list[Trajectory]:
    return [Trajectory(states=b, dt=dt, seed=seed, model_id=model_id) for b in batch]


def as_state_batch(trajectories: Sequence[Trajectory] | np.ndarray) -> np.ndarray:
    """Stack trajectories of equal length into a ``(J, m+1, d)`` array."""
    if isinstance(trajectories, np.ndarray):
        arr = trajectories.astype(float, copy=False)
        return arr[..., None] if arr.ndim == 2 else arr
    lengths = {t.states.shape for t in trajectories}
    if len(lengths) != 1:
        raise ValueError("trajectories must share a common length and dimension")
    return np.stack([t.states for t in trajectories])
