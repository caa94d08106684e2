"""Power loading that trades rate against co- and adjacent-channel interference.

Three normalized objectives are scalarized: rate (maximized), interference at
the co-channel primary receiver and interference at each adjacent primary
receiver (minimized).  The transmitter knows the links toward the primary
receivers only through a channel-knowledge coefficient ``X``, so interference
is modeled as ``sum(p) / X``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bitpower import LN2, MultiplierSet
from .channel import ChannelRealization, db_to_linear
from .multipliers import solve_multipliers

__all__ = [
    "KNOWLEDGE_MODES",
    "TriWeights",
    "KnowledgeCoeff",
    "RateAllocation",
    "knowledge_coeff",
    "interference_caps",
    "rate_bps",
    "allocate_rate_interference",
    "max_achievable_rate",
    "tri_objective",
]

KNOWLEDGE_MODES = ("path_loss", "statistical", "full_csi")


@dataclass(frozen=True)
class TriWeights:
    w_rate: float
    w_cci: float
    w_aci: tuple[float, ...] = ()
    u_rate: float = 1.0
    u_cci: float = 1.0
    u_aci: tuple[float, ...] = ()

    def __post_init__(self):
        w_aci = tuple(float(v) for v in self.w_aci)
        u_aci = tuple(float(v) for v in self.u_aci) or (1.0,) * len(w_aci)
        if len(u_aci) != len(w_aci):
            raise ValueError("w_aci and u_aci must have the same length")
        weights = (self.w_rate, self.w_cci, *w_aci)
        if any(v < 0 for v in weights):
            raise ValueError("weights must be nonnegative")
        if not math.isclose(sum(weights), 1.0, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"weights must sum to 1, got {sum(weights)}")
        if any(v < 0 for v in (self.u_rate, self.u_cci, *u_aci)):
            raise ValueError("normalizations must be nonnegative")
        object.__setattr__(self, "w_aci", w_aci)
        object.__setattr__(self, "u_aci", u_aci)

    @classmethod
    def from_thresholds(cls, w_rate, w_cci, w_aci, p_th_m, p_th_l, u_rate=1.0) -> "TriWeights":
        """Weights with interference objectives normalized by their thresholds."""
        w_aci = tuple(w_aci)
        p_th_l = tuple(p_th_l)
        return cls(w_rate, w_cci, w_aci, u_rate, 1.0 / p_th_m, tuple(1.0 / v for v in p_th_l))

    def with_u_rate(self, u_rate: float) -> "TriWeights":
        return TriWeights(self.w_rate, self.w_cci, self.w_aci, u_rate, self.u_cci, self.u_aci)


@dataclass(frozen=True)
class KnowledgeCoeff:
    x_m: float
    x_bands: tuple[float, ...] = ()
    mode: str = "path_loss"

    def __post_init__(self):
        if self.mode not in KNOWLEDGE_MODES:
            raise ValueError(f"unknown knowledge mode {self.mode!r}")
        xb = tuple(float(v) for v in self.x_bands)
        if not self.x_m > 0 or any(not v > 0 for v in xb):
            raise ValueError("knowledge coefficients must be > 0")
        object.__setattr__(self, "x_bands", xb)


@dataclass
class RateAllocation:
    power_w: np.ndarray
    multipliers: MultiplierSet
    objective: float
    rate_bps: float
    diagnostics: dict = field(default_factory=dict)


def knowledge_coeff(mode: str, pl_db: float, nu: float = 1.0, psi_th: float = 0.9, gain: float | None = None) -> float:
    """Inverse of the effective link gain assumed toward a primary receiver.

    ``path_loss`` uses the mean link only; ``statistical`` adds the exponential
    fading quantile at confidence ``psi_th``; ``full_csi`` uses a known fading
    power ``gain``.
    """
    if mode == "path_loss":
        return float(db_to_linear(pl_db))
    if mode == "statistical":
        if not 0.0 <= psi_th < 1.0:
            raise ValueError("psi_th must lie in [0, 1)")
        if psi_th == 0.0:
            return math.inf
        return nu / (-math.log1p(-psi_th) * float(db_to_linear(-pl_db)))
    if mode == "full_csi":
        if gain is None or not gain > 0:
            raise ValueError("full_csi mode needs a positive fading gain")
        return float(db_to_linear(pl_db)) / gain
    raise ValueError(f"unknown knowledge mode {mode!r}")


def interference_caps(k: KnowledgeCoeff, p_th_m: float, p_th_l: Sequence[float]) -> tuple[float, tuple[float, ...]]:
    """Thresholds at the primary receivers mapped to the transmitter side."""
    if len(p_th_l) != len(k.x_bands):
        raise ValueError("one adjacent threshold per band is needed")
    return p_th_m * k.x_m, tuple(v * x for v, x in zip(p_th_l, k.x_bands))


def rate_bps(power, cnr, spacing: float) -> float:
    return float(spacing * np.sum(np.log2(1.0 + np.asarray(cnr) * np.asarray(power))))


def tri_objective(power, ch: ChannelRealization, w: TriWeights, k: KnowledgeCoeff, spacing: float, leakage) -> float:
    """Scalarized value to be minimized."""
    power = np.asarray(power, dtype=float)
    leak = np.array(leakage, dtype=float, ndmin=2) if len(w.w_aci) else np.zeros((0, power.size))
    val = -w.w_rate * w.u_rate * rate_bps(power, ch.cnr, spacing)
    val += w.w_cci * w.u_cci * power.sum() / k.x_m
    for l in range(len(w.w_aci)):
        val += w.w_aci[l] * w.u_aci[l] * float(leak[l] @ power) / k.x_bands[l]
    return val


def _solve(cnr, numer, base, caps_vec, weights, tol):
    """Water-filling with per-subcarrier base price and linear caps."""
    n = cnr.size
    live = cnr > 0
    inv = np.where(live, 1.0 / np.where(live, cnr, 1.0), np.inf)
    finite = np.isfinite(caps_vec)
    wf = weights[finite]
    cf = caps_vec[finite]

    def power(lam):
        price = base + (lam @ wf if cf.size else 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(price > 0, numer / np.maximum(price, 1e-300), np.inf) - inv
        return np.where(live, np.clip(p, 0.0, None), 0.0)

    if np.any(cf == 0.0):
        # A zero cap forces every subcarrier it weighs to zero power.
        blocked = np.any(wf[cf == 0.0] > 0, axis=0)
        live = live & ~blocked
        inv = np.where(live, inv, np.inf)
        keep = cf > 0
        wf, cf = wf[keep], cf[keep]
    if not cf.size:
        lam = np.zeros(0)
        iters = 0
    else:
        res = solve_multipliers(lambda v: cf - wf @ power(v), cf, tol=tol)
        lam, iters = res.lambdas, res.iterations
    p = power(lam)
    if np.any(np.isinf(p)):
        raise ValueError("unbounded power: no price and no finite cap on some subcarrier")
    full = np.zeros(caps_vec.size)
    idx = np.flatnonzero(finite)
    keep_idx = idx if cf.size == idx.size else idx[caps_vec[idx] > 0]
    full[keep_idx] = lam
    return p, full, iters


def allocate_rate_interference(
    ch: ChannelRealization,
    w: TriWeights,
    k: KnowledgeCoeff,
    caps: tuple[float, Sequence[float]],
    spacing: float,
    leakage=None,
    tol: float = 1e-10,
) -> RateAllocation:
    """Optimal power for the weighted rate and interference objective.

    Parameters
    ----------
    caps : (float, sequence of float)
        Transmitter-side caps: ``P_th_m * X_m`` for total power and
        ``P_th_l * X_l`` for the leakage-weighted power of each band.
    leakage : array_like, shape (L, N)
        Leakage factors of each subcarrier into each adjacent band.
    """
    n = ch.n
    cci_cap, aci_caps = caps
    aci_caps = tuple(aci_caps)
    n_bands = len(aci_caps)
    leak = np.array(leakage, dtype=float, ndmin=2) if n_bands else np.zeros((0, n))
    if leak.shape != (n_bands, n):
        raise ValueError(f"leakage must have shape ({n_bands}, {n})")
    if len(w.w_aci) not in (0, n_bands) or len(k.x_bands) != n_bands:
        raise ValueError("weights, knowledge coefficients and caps disagree on the number of bands")
    w_aci = w.w_aci if w.w_aci else (0.0,) * n_bands
    u_aci = w.u_aci if w.u_aci else (0.0,) * n_bands
    if w.w_rate == 0.0:
        zero = np.zeros(n)
        mult = MultiplierSet(0.0, (0.0,) * n_bands)
        return RateAllocation(zero, mult, 0.0, 0.0)
    numer = w.w_rate * w.u_rate * spacing / LN2
    base = np.full(n, w.w_cci * w.u_cci / k.x_m)
    for l in range(n_bands):
        base = base + w_aci[l] * u_aci[l] * leak[l] / k.x_bands[l]
    weights = np.vstack([np.ones((1, n)), leak])
    caps_vec = np.array([cci_cap, *aci_caps], dtype=float)
    p, lam, iters = _solve(ch.cnr, numer, base, caps_vec, weights, tol)
    mult = MultiplierSet(float(lam[0]), tuple(float(v) for v in lam[1:]), iterations=iters)
    obj = tri_objective(p, ch, TriWeights(w.w_rate, w.w_cci, w_aci, w.u_rate, w.u_cci, u_aci), k, spacing, leak)
    out = RateAllocation(p, mult, obj, rate_bps(p, ch.cnr, spacing))
    out.diagnostics.update(numer=numer, base_price=base)
    return out


def max_achievable_rate(ch: ChannelRealization, caps: tuple[float, Sequence[float]], spacing: float, leakage=None) -> float:
    """Largest rate (bits/s) reachable under the caps; infinite when nothing binds."""
    n = ch.n
    cci_cap, aci_caps = caps
    aci_caps = tuple(aci_caps)
    leak = np.array(leakage, dtype=float, ndmin=2) if aci_caps else np.zeros((0, n))
    weights = np.vstack([np.ones((1, n)), leak])
    caps_vec = np.array([cci_cap, *aci_caps], dtype=float)
    live = ch.cnr > 0
    finite = np.isfinite(caps_vec)
    covered = np.any(weights[finite] > 0, axis=0) if finite.any() else np.zeros(n, bool)
    if np.any(live & ~covered):
        return math.inf
    p, _, _ = _solve(ch.cnr, spacing / LN2, np.zeros(n), caps_vec, weights, 1e-12)
    return rate_bps(p, ch.cnr, spacing)
