"""Bit and power loading for an OFDM secondary user next to primary-user bands.

The secondary user sees two kinds of caps.  A total-power cap that also
protects a co-channel primary user the sensing stage may have missed, and one
leakage-weighted cap per adjacent primary band.  Both are scaled by the
sensing posteriors and by a fading margin because only the path loss toward
the primary receivers is known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bitpower import (
    LN2,
    Allocation,
    BerTargets,
    MoopWeights,
    MultiplierSet,
    _unit_power,
    best_discrete,
    moop_objective,
)
from .channel import (
    ChannelRealization,
    OfdmConfig,
    PathLossModel,
    PuBand,
    SensingModel,
    db_to_linear,
    leakage_vector,
    path_loss_db,
    sensing_posteriors,
)
from .multipliers import InfeasibleConstraint, MultiplierResult, solve_multipliers

__all__ = [
    "CrCaps",
    "build_caps",
    "constraint_list",
    "allocate_cr_relaxed",
    "allocate_cr",
    "solve_multipliers",
    "measure_violation",
]


@dataclass(frozen=True)
class CrCaps:
    """Effective caps seen by the allocator.

    ``leakage[l, i]`` is the share of subcarrier ``i``'s power falling in band ``l``.
    """

    power_cap_w: float
    aci_caps_w: tuple[float, ...] = ()
    leakage: np.ndarray = None

    def __post_init__(self):
        if not self.power_cap_w > 0:
            raise ValueError("power cap must be > 0")
        caps = tuple(float(c) for c in self.aci_caps_w)
        if any(not c > 0 for c in caps):
            raise ValueError("ACI caps must be > 0")
        leak = np.zeros((0, 0)) if self.leakage is None else np.array(self.leakage, dtype=float, ndmin=2)
        if caps and leak.shape[0] != len(caps):
            raise ValueError(f"{leak.shape[0]} leakage rows for {len(caps)} ACI caps")
        if np.any((leak < 0) | (leak > 1)):
            raise ValueError("leakage entries must lie in [0, 1]")
        leak.setflags(write=False)
        object.__setattr__(self, "aci_caps_w", caps)
        object.__setattr__(self, "leakage", leak)

    @classmethod
    def unconstrained(cls) -> "CrCaps":
        return cls(math.inf)


def _interference_cap(posterior: float, pl_db: float, margin_db: float, threshold: float) -> float:
    if posterior == 0.0:
        return math.inf
    # The margin tightens the cap so that larger margins protect the primary user more.
    return float(db_to_linear(pl_db - margin_db)) * threshold / posterior


def build_caps(
    p_th: float,
    bands: Sequence[PuBand],
    co_channel: PuBand | None,
    s_m: SensingModel,
    s_l: Sequence[SensingModel],
    pl: PathLossModel,
    cfg: OfdmConfig,
    leakage=None,
) -> CrCaps:
    """Translate thresholds at the primary receivers into caps at the secondary transmitter.

    ``leakage`` may hold precomputed leakage rows, one per band; they depend
    only on the geometry, so Monte Carlo loops can reuse them.
    """
    if not p_th > 0:
        raise ValueError("p_th must be > 0")
    if len(s_l) != len(bands):
        raise ValueError(f"{len(s_l)} sensing models for {len(bands)} adjacent bands")
    power_cap = float(p_th)
    if co_channel is not None:
        beta_ov, _ = sensing_posteriors(s_m)
        cci = _interference_cap(
            beta_ov,
            path_loss_db(co_channel.distance_m, pl),
            co_channel.fading_margin_db,
            co_channel.interference_threshold_w,
        )
        power_cap = min(power_cap, cci)
    aci, leak = [], []
    for l, (band, sens) in enumerate(zip(bands, s_l)):
        _, beta_oo = sensing_posteriors(sens)
        aci.append(
            _interference_cap(
                beta_oo, path_loss_db(band.distance_m, pl), band.fading_margin_db, band.interference_threshold_w
            )
        )
        leak.append(leakage_vector(cfg, band) if leakage is None else np.asarray(leakage[l], dtype=float))
    leakage = np.array(leak).reshape(len(bands), cfg.n_subcarriers)
    return CrCaps(power_cap, tuple(aci), leakage)


def constraint_list(caps: CrCaps, n: int) -> list[tuple[np.ndarray, float]]:
    """Finite caps as ``(weights, cap)`` pairs: total power first, then each band."""
    out = []
    if math.isfinite(caps.power_cap_w):
        out.append((np.ones(n), caps.power_cap_w))
    for row, cap in zip(caps.leakage, caps.aci_caps_w):
        if math.isfinite(cap):
            out.append((np.asarray(row, dtype=float), cap))
    return out


def _relaxed_powers(level: np.ndarray, unit: np.ndarray, top: np.ndarray, live: np.ndarray) -> np.ndarray:
    """Water-filling powers for a per-subcarrier level, capped at the b_max power."""
    with np.errstate(invalid="ignore"):
        p = np.clip(np.minimum(level, top) - unit, 0.0, None)
    return np.where(live, p, 0.0)


def allocate_cr_relaxed(
    ch: ChannelRealization,
    w: MoopWeights,
    t: BerTargets,
    b_max: float,
    caps: CrCaps,
    tol: float = 1e-8,
) -> Allocation:
    """Continuous solution with multipliers for every cap.

    Subcarrier ``i`` pays ``alpha/u_p + lambda_1 + sum_l lambda_2l * leakage[l, i]``
    per unit power.  Multipliers are found numerically for the current active
    set; subcarriers whose bits fall below two are then nulled (weakest first)
    and the multipliers re-solved until the active set is stable.
    """
    n = ch.n
    unit = _unit_power(ch, t)
    cons = constraint_list(caps, n)
    weights = np.array([wv for wv, _ in cons]).reshape(len(cons), n)
    cap_vec = np.array([c for _, c in cons])
    top = unit * 2.0**b_max
    live = np.isfinite(unit)
    if w.alpha == 0.0 and math.isinf(b_max) and not cons:
        raise ValueError("alpha = 0 with unbounded b_max and no caps gives unbounded bits")

    def levels(lam: np.ndarray) -> np.ndarray:
        price = w.power_price + (lam @ weights if cons else 0.0)
        with np.errstate(divide="ignore"):
            return np.where(price > 0, w.bit_value / (np.maximum(price, 1e-300) * LN2), np.inf)

    active = live.copy()
    lam = np.zeros(len(cons))
    result = MultiplierResult(lam, cap_vec.copy(), 0, True)
    total_iters = 0
    for _ in range(n + 1):
        def slack(v, active=active):
            return cap_vec - weights @ _relaxed_powers(levels(v), unit, top, active)

        if cons:
            try:
                result = solve_multipliers(slack, cap_vec, init=lam, tol=tol)
            except InfeasibleConstraint:
                # Only possible when b_max is unbounded and alpha = 0; fall back to all-null.
                active[:] = False
                break
            lam = result.lambdas
            total_iters += result.iterations
        lev = levels(lam)
        with np.errstate(divide="ignore", invalid="ignore"):
            bits = np.where(active, np.minimum(np.log2(lev / unit), b_max), 0.0)
        short = np.flatnonzero(active & (bits < 2.0))
        if short.size == 0:
            break
        dead = short[~(bits[short] > 0)]
        if dead.size:
            active[dead] = False
        else:
            active[short[np.argmin(bits[short])]] = False
    lev = levels(lam)
    power = _relaxed_powers(lev, unit, top, active)
    with np.errstate(divide="ignore", invalid="ignore"):
        bits = np.where(active & (power > 0), np.minimum(np.log2(lev / unit), b_max), 0.0)
    bits = np.where(bits >= 2.0, bits, 0.0)
    power = np.where(bits > 0, power, 0.0)
    lam_full = np.zeros(1 + len(caps.aci_caps_w))
    idx = 0
    if math.isfinite(caps.power_cap_w):
        lam_full[0] = lam[idx]
        idx += 1
    for l, cap in enumerate(caps.aci_caps_w):
        if math.isfinite(cap):
            lam_full[1 + l] = lam[idx]
            idx += 1
    mult = MultiplierSet(lambda_power=float(lam_full[0]), lambda_aci=tuple(lam_full[1:]), iterations=total_iters)
    alloc = Allocation(bits, power, moop_objective(bits, power, w), relaxed=True)
    extra = np.full(n, mult.lambda_power)
    if caps.aci_caps_w:
        extra = extra + np.asarray(mult.lambda_aci) @ caps.leakage
    alloc.diagnostics.update(multipliers=mult, price_extra=extra, converged=result.converged)
    return alloc


def allocate_cr(
    ch: ChannelRealization,
    w: MoopWeights,
    t: BerTargets,
    b_max: int,
    caps: CrCaps,
    refine: bool = True,
) -> Allocation:
    """Integer bit allocation meeting every cap.

    The continuous solution is rounded to the nearest integer, repaired
    against all caps at once and, with ``refine``, improved by a price sweep
    and local search.
    """
    relaxed = allocate_cr_relaxed(ch, w, t, b_max, caps)
    cons = constraint_list(caps, ch.n)
    out = best_discrete(relaxed, ch, t, w, int(b_max), cons, relaxed.diagnostics["price_extra"], refine=refine)
    out.diagnostics["multipliers"] = relaxed.diagnostics["multipliers"]
    return out


def measure_violation(
    a: Allocation,
    true_gains,
    pl_lin,
    caps_nominal,
    leakage=None,
    posterior=None,
) -> np.ndarray:
    """Flag each primary receiver whose realized interference exceeds its threshold.

    Parameters
    ----------
    a : Allocation
        Allocation to check.
    true_gains : array_like
        Sampled fading power toward the co-channel receiver, then each adjacent one.
    pl_lin : array_like
        Linear path-loss gains ``10**(-PL/10)`` in the same order.
    caps_nominal : array_like
        Thresholds at the primary receivers in the same order.
    leakage : array_like, optional
        Leakage rows for the adjacent receivers.
    posterior : array_like, optional
        Probability the primary user is present (default 1 for each).

    Returns
    -------
    numpy.ndarray of bool
        Strict ``>`` comparison, so interference exactly at the threshold passes.
    """
    g = np.atleast_1d(np.asarray(true_gains, dtype=float))
    loss = np.broadcast_to(np.asarray(pl_lin, dtype=float), g.shape)
    thr = np.broadcast_to(np.asarray(caps_nominal, dtype=float), g.shape)
    beta = np.ones(g.shape) if posterior is None else np.broadcast_to(np.asarray(posterior, dtype=float), g.shape)
    power = np.asarray(a.power_w, dtype=float)
    usage = [power.sum()]
    if g.size > 1:
        leak = np.array(leakage, dtype=float, ndmin=2)
        if leak.shape[0] != g.size - 1:
            raise ValueError("need one leakage row per adjacent receiver")
        usage.extend(leak @ power)
    interference = beta * g * loss * np.asarray(usage)
    return interference > thr
