"""Energy-efficient power loading with imperfect channel estimates.

Energy per delivered bit, ``(kappa * sum(p) + p_c) / c(p)``, is minimized with
Dinkelbach's method: for a fixed ratio ``q`` the subtractive problem
``min kappa * sum(p) + p_c - q * c(p)`` is convex and has a per-subcarrier
closed form once the multipliers of the caps and of the rate floor are known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .bitpower import LN2, MultiplierSet
from .multipliers import InfeasibleConstraint, solve_multipliers

__all__ = [
    "EeConfig",
    "UncertainChannel",
    "EeCaps",
    "InfeasibleRate",
    "DinkelbachResult",
    "statistical_cap",
    "build_ee_caps",
    "capacity_uncertain",
    "ee_metric",
    "power_for_price",
    "inner_allocate",
    "dinkelbach_solve",
]


class InfeasibleRate(ValueError):
    """The rate floor cannot be met within the caps."""


@dataclass(frozen=True)
class EeConfig:
    kappa: float = 7.8
    circuit_power_w: float = 2.0
    rate_floor: float = 0.0
    tol: float = 1e-8
    q_init: float | None = None
    max_iter: int = 100

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if self.circuit_power_w < 0:
            raise ValueError("circuit power must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.rate_floor < 0:
            raise ValueError("rate_floor must be >= 0")


@dataclass(frozen=True)
class UncertainChannel:
    """Channel estimates and the statistics needed to discount their error."""

    est_gains: np.ndarray
    est_var: float
    path_loss_lin: float
    noise_var: float
    interference: np.ndarray = 0.0
    spacing: float = 1.0

    def __post_init__(self):
        a = np.array(self.est_gains, dtype=float, copy=True).reshape(-1)
        j = np.broadcast_to(np.asarray(self.interference, dtype=float), a.shape).copy()
        if np.any(a < 0) or np.any(j < 0) or self.est_var < 0:
            raise ValueError("gains, variances and interference must be nonnegative")
        if not (self.path_loss_lin > 0 and self.noise_var > 0 and self.spacing > 0):
            raise ValueError("path loss, noise and spacing must be > 0")
        a.setflags(write=False)
        j.setflags(write=False)
        object.__setattr__(self, "est_gains", a)
        object.__setattr__(self, "interference", j)

    @property
    def n(self) -> int:
        return self.est_gains.size

    @property
    def noise_total(self) -> np.ndarray:
        return self.noise_var + self.interference


@dataclass(frozen=True)
class EeCaps:
    power_cap_w: float
    aci_caps_w: tuple[float, ...] = ()
    leakage: np.ndarray = None

    def __post_init__(self):
        caps = tuple(float(c) for c in self.aci_caps_w)
        leak = np.zeros((0, 0)) if self.leakage is None else np.array(self.leakage, dtype=float, ndmin=2)
        if caps and leak.shape[0] != len(caps):
            raise ValueError("one leakage row per ACI cap is needed")
        if self.power_cap_w < 0 or any(c < 0 for c in caps):
            raise ValueError("caps must be nonnegative")
        leak.setflags(write=False)
        object.__setattr__(self, "aci_caps_w", caps)
        object.__setattr__(self, "leakage", leak)


@dataclass
class DinkelbachResult:
    q_star: float
    power_w: np.ndarray
    iterations: int
    q_history: list
    phi_history: list
    multipliers: MultiplierSet
    rate_bps: float
    diagnostics: dict = field(default_factory=dict)


def statistical_cap(posterior: float, nu: float, gain_lin: float, psi_th: float, threshold: float) -> float:
    """Transmit-side cap that keeps interference below ``threshold`` with confidence ``psi_th``.

    The fading power toward the primary receiver is exponential with rate
    ``nu``; ``posterior`` is the probability that the receiver is present.
    """
    if not 0.0 <= psi_th < 1.0:
        raise ValueError("psi_th must lie in [0, 1)")
    if posterior == 0.0 or psi_th == 0.0:
        return math.inf
    return nu * threshold / (posterior * gain_lin * -math.log1p(-psi_th))


def build_ee_caps(
    p_th: float,
    beta_ov: float,
    co_gain_lin: float,
    co_threshold: float,
    nu: float,
    psi_th: float,
    beta_oo: Sequence[float] = (),
    band_gains_lin: Sequence[float] = (),
    band_thresholds: Sequence[float] = (),
    leakage=None,
) -> EeCaps:
    """Total-power cap and per-band ACI caps from statistical interference constraints."""
    power_cap = min(p_th, statistical_cap(beta_ov, nu, co_gain_lin, psi_th, co_threshold))
    aci = tuple(
        statistical_cap(b, nu, g, psi_th, thr) for b, g, thr in zip(beta_oo, band_gains_lin, band_thresholds)
    )
    return EeCaps(power_cap, aci, leakage if aci else None)


def _per_subcarrier_rate(p, ch: UncertainChannel) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    g = ch.path_loss_lin
    return np.log2(1.0 + ch.est_gains * g * p / (ch.est_var * g * p + ch.noise_total))


def capacity_uncertain(p, ch: UncertainChannel) -> float:
    """Achievable rate (bits/s) when the estimation error acts as extra noise."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("power must be nonnegative")
    return float(ch.spacing * np.sum(_per_subcarrier_rate(p, ch)))


def ee_metric(p, ch: UncertainChannel, cfg: EeConfig) -> float:
    """Energy per bit in J/bit."""
    rate = capacity_uncertain(p, ch)
    if not rate > 0:
        raise ValueError("energy per bit is undefined at zero rate")
    return (cfg.kappa * float(np.sum(p)) + cfg.circuit_power_w) / rate


def power_for_price(theta: float, price, ch: UncertainChannel) -> np.ndarray:
    """Minimizer of ``price * p - theta * ln(1 + SINR(p))`` on each subcarrier.

    Stationarity is a quadratic in ``p``; the positive root is taken in a
    cancellation-free form so that it stays accurate as the estimation error
    variance goes to zero, where it becomes plain water-filling.
    """
    a = ch.est_gains
    s = ch.est_var
    g = ch.path_loss_lin
    n = ch.noise_total
    price = np.broadcast_to(np.asarray(price, dtype=float), a.shape)
    qa = s * (s + a) * g * g
    qb = n * g * (2.0 * s + a)
    with np.errstate(divide="ignore", invalid="ignore"):
        qc = n * n - theta * a * g * n / price
        disc = np.sqrt(np.maximum(qb * qb - 4.0 * qa * qc, 0.0))
        root = -2.0 * qc / (qb + disc)
    live = (a > 0) & (qc < 0)
    return np.where(live, np.maximum(root, 0.0), 0.0)


def _constraints(caps: EeCaps, n: int) -> tuple[np.ndarray, np.ndarray]:
    rows = [np.ones(n)]
    vals = [caps.power_cap_w]
    for row, cap in zip(caps.leakage, caps.aci_caps_w):
        rows.append(np.asarray(row, dtype=float))
        vals.append(cap)
    return np.array(rows), np.array(vals, dtype=float)


def _solve_caps(theta: float, ch: UncertainChannel, caps: EeCaps, kappa: float, tol: float, init=None):
    weights, cap_vec = _constraints(caps, ch.n)
    finite = np.isfinite(cap_vec)
    wf, cf = weights[finite], cap_vec[finite]

    def power(lam):
        price = kappa + (lam @ wf if cf.size else 0.0)
        return power_for_price(theta, price, ch)

    if cf.size and np.any(cf == 0.0):
        # A zero cap allows no power wherever it applies.
        blocked = np.any(wf[cf == 0.0] > 0, axis=0)
        if np.all(blocked):
            return np.zeros(ch.n), np.zeros(cap_vec.size)
    lam = np.zeros(cf.size)
    if cf.size:
        res = solve_multipliers(lambda v: cf - wf @ power(v), cf, init=init, tol=tol)
        lam = res.lambdas
    full = np.zeros(cap_vec.size)
    full[finite] = lam
    return power(lam), full


def inner_allocate(
    q: float,
    ch: UncertainChannel,
    caps: EeCaps,
    cfg: EeConfig,
    tol: float = 1e-12,
) -> tuple[np.ndarray, MultiplierSet]:
    """Minimize ``kappa * sum(p) - q * c(p)`` under the caps and the rate floor.

    The rate floor's multiplier is found by root finding on the monotone map
    from that multiplier to the achieved rate; the cap multipliers are
    re-solved at every trial value.
    """
    if q < 0:
        raise ValueError("q must be >= 0")
    scale = ch.spacing / LN2

    def at(lam3: float):
        return _solve_caps(scale * (q + lam3), ch, caps, cfg.kappa, tol)

    p, lam = at(0.0)
    lam3 = 0.0
    if cfg.rate_floor > 0 and capacity_uncertain(p, ch) < cfg.rate_floor * (1.0 - 1e-12):
        # Every subcarrier at the full power cap bounds the reachable rate.
        if capacity_uncertain(np.full(ch.n, caps.power_cap_w), ch) < cfg.rate_floor:
            raise InfeasibleRate(f"rate floor {cfg.rate_floor:.6g} b/s is out of reach within the caps")

        def gap(x):
            return capacity_uncertain(at(x)[0], ch) - cfg.rate_floor

        hi = max(1.0, q)
        try:
            for _ in range(200):
                if gap(hi) >= 0:
                    break
                hi *= 2.0
            else:
                raise InfeasibleConstraint("no multiplier reaches the rate floor")
        except InfeasibleConstraint:
            raise InfeasibleRate(f"rate floor {cfg.rate_floor:.6g} b/s is out of reach within the caps") from None
        lo = 0.0 if hi <= max(1.0, q) else hi / 2.0
        lam3 = optimize.brentq(gap, lo, hi, xtol=1e-300, rtol=1e-14, maxiter=500)
        p, lam = at(lam3)
        if capacity_uncertain(p, ch) < cfg.rate_floor:
            # Land on the feasible side of the root.
            p, lam = at(lam3 * (1.0 + 1e-12) + 1e-300)
    mult = MultiplierSet(float(lam[0]), tuple(float(v) for v in lam[1:]), float(lam3))
    return p, mult


def _initial_q(ch: UncertainChannel, caps: EeCaps, cfg: EeConfig) -> float:
    """Energy per bit of equal power at the largest level every cap allows."""
    weights, cap_vec = _constraints(caps, ch.n)
    p = np.ones(ch.n)
    use = weights @ p
    with np.errstate(divide="ignore"):
        scale = np.min(np.where(use > 0, cap_vec / use, np.inf))
    if not math.isfinite(scale) or scale <= 0:
        raise ValueError("initial ratio needs a finite positive total-power cap")
    p = p * scale
    if capacity_uncertain(p, ch) <= 0:
        raise InfeasibleRate("zero rate at the initial allocation")
    return ee_metric(p, ch, cfg)


def dinkelbach_solve(ch: UncertainChannel, caps: EeCaps, cfg: EeConfig) -> DinkelbachResult:
    """Minimize energy per bit by Dinkelbach iterations.

    Stops once ``Phi(q) = kappa*sum(p) + p_c - q*c(p)`` reaches ``-tol`` or above
    and returns the energy per bit of the last inner solution.
    """
    q = cfg.q_init if cfg.q_init is not None else _initial_q(ch, caps, cfg)
    q_hist, phi_hist = [], []
    p = np.zeros(ch.n)
    mult = MultiplierSet()
    for it in range(1, cfg.max_iter + 1):
        p, mult = inner_allocate(q, ch, caps, cfg)
        rate = capacity_uncertain(p, ch)
        num = cfg.kappa * float(np.sum(p)) + cfg.circuit_power_w
        phi = num - q * rate
        q_hist.append(q)
        phi_hist.append(phi)
        if rate <= 0:
            raise InfeasibleRate("inner solution delivers no rate")
        # A start below the optimum gives phi > 0; the update then moves q above it.
        if -cfg.tol <= phi <= cfg.tol:
            break
        q = num / rate
    rate = capacity_uncertain(p, ch)
    q_star = (cfg.kappa * float(np.sum(p)) + cfg.circuit_power_w) / rate
    return DinkelbachResult(q_star, p, it, q_hist, phi_hist, mult, rate)
