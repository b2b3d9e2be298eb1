"""Data-driven Galerkin solvers: PhiBE from trajectories or pairs, and LSTD.

All solvers share :class:`EmpiricalSystem`, a mergeable accumulator of the
un-normalised sums ``A = sum Phi(s) row(s)^T`` and ``b = sum r(s) Phi(s)``.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .basis import BasisSet
from .dynamics import Trajectory, TransitionPairs, as_state_batch
from .estimators import window_estimates
from .fdcoeff import FdCoefficients, fd_coefficients
from .galerkin import IllConditionedSystem, LinearSystem, ValueApprox, solve

_BLOCK = 65536

Rewards = Union[np.ndarray, Callable[[np.ndarray], np.ndarray], None]


class EmpiricalSystem:
    """Compensated running sums of rank-one updates."""

    def __init__(self, p: int):
        self.p = p
        self.A = np.zeros((p, p))
        self.b = np.zeros(p)
        self.count = 0
        self._cA = np.zeros((p, p))
        self._cb = np.zeros(p)

    @classmethod
    def identity(cls, p: int) -> "EmpiricalSystem":
        sys = cls(p)
        sys.A = np.eye(p)
        # counts as a full-rank sample set; theta is unaffected by the count
        sys.count = p
        return sys

    def add(self, dA: np.ndarray, db: np.ndarray, count: int) -> "EmpiricalSystem":
        if not (np.all(np.isfinite(dA)) and np.all(np.isfinite(db))):
            raise FloatingPointError("non-finite update to the empirical system")
        y = dA - self._cA
        t = self.A + y
        self._cA = (t - self.A) - y
        self.A = t
        y = db - self._cb
        t = self.b + y
        self._cb = (t - self.b) - y
        self.b = t
        self.count += count
        return self

    def merge(self, other: "EmpiricalSystem") -> "EmpiricalSystem":
        if other.p != self.p:
            raise ValueError("cannot merge systems of different size")
        out = self.copy()
        out.add(other.A - other._cA, other.b - other._cb, other.count)
        return out

    __add__ = merge

    def copy(self) -> "EmpiricalSystem":
        out = EmpiricalSystem(self.p)
        out.A, out.b, out.count = self.A.copy(), self.b.copy(), self.count
        out._cA, out._cb = self._cA.copy(), self._cb.copy()
        return out

    def normalized(self) -> LinearSystem:
        n = max(self.count, 1)
        return LinearSystem(self.A / n, self.b / n)


def _ensure(system: Optional[EmpiricalSystem], basis: BasisSet) -> EmpiricalSystem:
    if system is None:
        return EmpiricalSystem(basis.p)
    if system.p != basis.p:
        raise ValueError(f"system has size {system.p}, basis has {basis.p} functions")
    return system


def _absorb(system, basis, anchors, rows, rewards):
    phi = basis.values(anchors)
    system.add(phi.T @ rows, phi.T @ rewards, anchors.shape[0])


def _trajectory_data(trajectories, dt):
    if isinstance(trajectories, np.ndarray):
        if dt is None:
            raise ValueError("dt is required when trajectories are given as an array")
        return as_state_batch(trajectories), float(dt)
    trajectories = list(trajectories)
    dts = {t.dt for t in trajectories}
    if dt is None:
        if len(dts) != 1:
            raise ValueError("trajectories have inconsistent dt")
        dt = dts.pop()
    return as_state_batch(trajectories), float(dt)


def _reward_array(rewards: Rewards, states: np.ndarray) -> np.ndarray:
    """Rewards aligned with ``states[..., :]`` as an array of shape ``states.shape[:-1]``."""
    if rewards is None:
        raise ValueError("rewards are required")
    if callable(rewards):
        flat = states.reshape(-1, states.shape[-1])
        return np.asarray(rewards(flat), dtype=float).reshape(states.shape[:-1])
    r = np.asarray(rewards, dtype=float)
    if r.shape != states.shape[:-1]:
        raise ValueError(f"rewards have shape {r.shape}, expected {states.shape[:-1]} (one per state)")
    return r


def accumulate_phibe(
    system: Optional[EmpiricalSystem],
    trajectories: Union[Sequence[Trajectory], np.ndarray],
    rewards: Rewards,
    beta: float,
    coeffs: FdCoefficients,
    basis: BasisSet,
    stochastic: bool = True,
    *,
    dt: Optional[float] = None,
) -> EmpiricalSystem:
    """Absorb every full window ``s_j .. s_{j+i}`` of every trajectory.

    Each window contributes ``Phi(s_j) [beta Phi(s_j) - mu_bar . grad Phi(s_j)
    - 1/2 Sigma_bar : hess Phi(s_j)]^T`` to ``A`` (the Hessian term only when
    ``stochastic``) and ``r_j Phi(s_j)`` to ``b``.
    """
    system = _ensure(system, basis)
    states, dt = _trajectory_data(trajectories, dt)
    i = coeffs.order
    J, length, d = states.shape
    if length < i + 1:
        raise ValueError(f"trajectories of {length} states are too short for order {i}")
    r = _reward_array(rewards, states)
    n_win = length - i
    # windows (J * n_win, i+1, d), anchored at s_j
    idx = np.arange(n_win)[:, None] + np.arange(i + 1)[None, :]
    windows = states[:, idx, :].reshape(-1, i + 1, d)
    anchor_r = r[:, :n_win].reshape(-1)
    for start in range(0, windows.shape[0], _BLOCK):
        sl = slice(start, start + _BLOCK)
        w = windows[sl]
        mu, sig = window_estimates(w, dt, coeffs)
        anchors = w[:, 0, :]
        rows = beta * basis.values(anchors) - basis.generator(anchors, mu, sig if stochastic else None)
        _absorb(system, basis, anchors, rows, anchor_r[sl])
    return system


def accumulate_pairs_first_order(
    system: Optional[EmpiricalSystem],
    pairs: TransitionPairs,
    beta: float,
    basis: BasisSet,
    *,
    reward: Optional[Callable] = None,
    stochastic: bool = True,
) -> EmpiricalSystem:
    """First-order PhiBE from independent ``(s, s')`` pairs."""
    system = _ensure(system, basis)
    if len(pairs) == 0:
        raise ValueError("no transition pairs")
    rewards = pairs.rewards if pairs.rewards is not None else _reward_array(reward, pairs.starts)
    coeffs = fd_coefficients(1)
    for start in range(0, len(pairs), _BLOCK):
        sl = slice(start, start + _BLOCK)
        s, sp = pairs.starts[sl], pairs.ends[sl]
        mu, sig = window_estimates(np.stack([s, sp], axis=1), pairs.dt, coeffs)
        rows = beta * basis.values(s) - basis.generator(s, mu, sig if stochastic else None)
        _absorb(system, basis, s, rows, rewards[sl])
    return system


def accumulate_lstd(
    system: Optional[EmpiricalSystem],
    data: Union[Sequence[Trajectory], np.ndarray, TransitionPairs],
    rewards: Rewards,
    beta: float,
    dt: Optional[float],
    basis: BasisSet,
) -> EmpiricalSystem:
    """LSTD: ``A += Phi(s)[Phi(s) - e^{-beta dt} Phi(s')]^T`` and ``b += r(s) dt Phi(s)``."""
    system = _ensure(system, basis)
    if isinstance(data, TransitionPairs):
        dt = data.dt if dt is None else dt
        s, sp = data.starts, data.ends
        if data.rewards is not None and rewards is None:
            r = data.rewards
        else:
            r = _reward_array(rewards, s)
    else:
        states, dt = _trajectory_data(data, dt)
        if states.shape[1] < 2:
            raise ValueError("LSTD needs trajectories with at least two states")
        r = _reward_array(rewards, states)[:, :-1].reshape(-1)
        d = states.shape[2]
        s = states[:, :-1, :].reshape(-1, d)
        sp = states[:, 1:, :].reshape(-1, d)
    gamma = math.exp(-beta * dt)
    for start in range(0, s.shape[0], _BLOCK):
        sl = slice(start, start + _BLOCK)
        rows = basis.values(s[sl]) - gamma * basis.values(sp[sl])
        _absorb(system, basis, s[sl], rows, dt * r[sl])
    return system


def solve_empirical(system: EmpiricalSystem, basis: Optional[BasisSet] = None) -> ValueApprox:
    if system.count < system.p:
        warnings.warn(
            f"only {system.count} samples for {system.p} unknowns; the system may be rank deficient",
            RuntimeWarning,
            stacklevel=2,
        )
    lin = system.normalized()
    try:
        return solve(lin, basis)
    except IllConditionedSystem as exc:
        raise IllConditionedSystem(exc.condition, f"{system.count} samples absorbed") from None
