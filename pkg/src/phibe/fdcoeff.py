"""Backward-looking multi-step difference weights.

For order ``i`` the weights ``a_0 .. a_i`` satisfy the moment conditions

    sum_j a_j * j**k = 1 if k == 1 else 0,     k = 0 .. i

(with ``0**0 == 1``), so that ``(1/dt) * sum_j a_j * f(j*dt)`` approximates
``f'(0)`` to ``O(dt**i)``.  The Vandermonde system is solved exactly over the
rationals and converted to floats afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

MAX_ORDER = 8


@dataclass(frozen=True)
class FdCoefficients:
    order: int
    exact: tuple[Fraction, ...]

    @property
    def weights(self) -> np.ndarray:
        return np.array([float(a) for a in self.exact])

    def moment_residuals(self, relative: bool = True) -> np.ndarray:
        """Residual of every moment condition ``k = 0 .. order`` for the float weights.

        Evaluated in exact arithmetic on the rounded weights, so it measures the
        float representation and not summation error.  With ``relative`` each
        residual is divided by ``sum_j |a_j| j^k``, the size of the terms that
        cancel; large ``j^k`` otherwise amplify the unavoidable rounding.
        """
        out = np.empty(self.order + 1)
        rounded = [Fraction(float(a)) for a in self.exact]
        for k in range(self.order + 1):
            terms = [a * Fraction(j) ** k for j, a in enumerate(rounded)]
            res = sum(terms) - (1 if k == 1 else 0)
            scale = sum(abs(t) for t in terms) if relative else 1
            out[k] = float(res / scale)
        return out


def _solve_rational(matrix: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    n = len(rhs)
    aug = [row[:] + [rhs[r]] for r, row in enumerate(matrix)]
    for col in range(n):
        pivot = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[pivot] = aug[pivot], aug[col]
        piv = aug[col][col]
        aug[col] = [x / piv for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return [aug[r][n] for r in range(n)]


@lru_cache(maxsize=None)
def fd_coefficients(order: int) -> FdCoefficients:
    """Weights ``a^(order)`` solving ``A a = e_1`` with ``A[k, j] = j**k``.

    Raises
    ------
    ValueError
        If ``order`` is not an integer in ``[1, 8]``.
    """
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)):
        raise ValueError(f"order must be an integer, got {order!r}")
    order = int(order)
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must lie in [1, {MAX_ORDER}], got {order}")
    # Fraction(0) ** 0 == 1, which gives the all-ones k = 0 row.
    matrix = [[Fraction(j) ** k for j in range(order + 1)] for k in range(order + 1)]
    rhs = [Fraction(1 if k == 1 else 0) for k in range(order + 1)]
    return FdCoefficients(order=order, exact=tuple(_solve_rational(matrix, rhs)))


def order_constant(coeffs: FdCoefficients) -> float:
    """``C_i = sum_j |a_j| j**(i+1) / (i+1)!`` for the truncation bound."""
    i = coeffs.order
    total = sum(abs(a) * Fraction(j) ** (i + 1) for j, a in enumerate(coeffs.exact))
    return float(total / math.factorial(i + 1))
