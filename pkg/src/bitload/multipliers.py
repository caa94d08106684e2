"""Nonnegative Lagrange multipliers for a set of linear resource caps.

The allocators in this package share one structure: every subcarrier's power
is a nonincreasing function of a per-subcarrier price, and each price is a
base value plus a nonnegative combination of constraint multipliers.  The
constraint slack ``cap_k - sum_i W[k, i] p_i`` is therefore nondecreasing in
each multiplier, and complementary slackness can be reached by cyclic 1-D root
finding followed by a joint Newton polish.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

__all__ = ["MultiplierResult", "InfeasibleConstraint", "solve_multipliers"]


class InfeasibleConstraint(ValueError):
    """A slack stays negative however large its multiplier grows."""


@dataclass
class MultiplierResult:
    lambdas: np.ndarray
    slack: np.ndarray
    iterations: int
    converged: bool


def _kkt_error(lam: np.ndarray, slack: np.ndarray, scale: np.ndarray) -> float:
    # Active multipliers need zero slack; idle ones need nonnegative slack.
    err = np.where(lam > 0, np.abs(slack), np.maximum(-slack, 0.0))
    return float(np.max(err / scale)) if err.size else 0.0


def solve_multipliers(
    residual: Callable[[np.ndarray], np.ndarray],
    caps,
    init=None,
    tol: float = 1e-8,
    max_sweeps: int = 200,
    hi_init: float = 1.0,
    max_doublings: int = 200,
) -> MultiplierResult:
    """Find multipliers with ``lambda >= 0``, ``slack >= 0`` and ``lambda * slack = 0``.

    Parameters
    ----------
    residual : callable
        Maps a multiplier vector to the constraint slacks.  Slack ``k`` must be
        nondecreasing in multiplier ``k``.
    caps : array_like
        Cap of each constraint, used to scale the tolerance.
    init : array_like, optional
        Starting multipliers (default zeros).
    tol : float
        Accept when every active slack is within ``tol * cap``.

    Raises
    ------
    InfeasibleConstraint
        If a slack is still negative after the bracket has doubled
        ``max_doublings`` times.
    """
    caps = np.atleast_1d(np.asarray(caps, dtype=float))
    k = caps.size
    scale = np.where(np.isfinite(caps) & (caps > 0), caps, 1.0)
    lam = np.zeros(k) if init is None else np.maximum(np.asarray(init, dtype=float).copy(), 0.0)
    evals = 0

    def slack_at(v: np.ndarray) -> np.ndarray:
        nonlocal evals
        evals += 1
        return np.asarray(residual(v), dtype=float)

    s = slack_at(lam)
    if _kkt_error(lam, s, scale) <= tol:
        return MultiplierResult(lam, s, evals, True)

    for sweep in range(max_sweeps):
        for j in range(k):
            def f(x, j=j):
                v = lam.copy()
                v[j] = x
                return slack_at(v)[j]

            if f(0.0) >= 0.0:
                lam[j] = 0.0
                continue
            lo, hi = 0.0, max(hi_init, 2.0 * lam[j])
            for _ in range(max_doublings):
                if f(hi) >= 0.0:
                    break
                lo, hi = hi, 2.0 * hi
            else:
                raise InfeasibleConstraint(f"constraint {j} cannot be met")
            # Interpolation needs finite endpoint values; a zero price can give infinite power.
            f_lo = f(lo)
            while not np.isfinite(f_lo):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                f_mid = f(mid)
                if f_mid >= 0.0:
                    hi = mid
                else:
                    lo, f_lo = mid, f_mid
            # Brent's method: inverse interpolation steps safeguarded by bisection.
            lam[j] = optimize.brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        s = slack_at(lam)
        if _kkt_error(lam, s, scale) <= tol:
            return MultiplierResult(lam, s, evals, True)
        if k > 1 and sweep >= 2:
            polished = _newton_polish(slack_at, lam, scale, tol)
            if polished is not None:
                lam = polished
                s = slack_at(lam)
                if _kkt_error(lam, s, scale) <= tol:
                    return MultiplierResult(lam, s, evals, True)
    return MultiplierResult(lam, s, evals, _kkt_error(lam, s, scale) <= tol)


def _newton_polish(slack_at, lam: np.ndarray, scale: np.ndarray, tol: float, steps: int = 30):
    """Joint Newton on the currently active multipliers with a finite-difference Jacobian."""
    act = np.flatnonzero(lam > 0)
    if act.size < 2:
        return None
    x = lam.copy()
    s = slack_at(x)
    for _ in range(steps):
        r = s[act] / scale[act]
        if np.max(np.abs(r)) <= tol:
            return x
        jac = np.empty((act.size, act.size))
        for c, j in enumerate(act):
            h = 1e-7 * max(x[j], 1e-12)
            v = x.copy()
            v[j] += h
            jac[:, c] = (slack_at(v)[act] - s[act]) / scale[act] / h
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        base = np.max(np.abs(r))
        while t > 1e-6:
            v = x.copy()
            v[act] = np.maximum(x[act] + t * step, 0.0)
            sv = slack_at(v)
            if np.max(np.abs(sv[act] / scale[act])) < base:
                x, s = v, sv
                break
            t *= 0.5
        else:
            return None
    return x
