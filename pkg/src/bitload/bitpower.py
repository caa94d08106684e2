"""Joint bit and power loading for a multicarrier link.

The scalarized objective is ``(alpha/u_p) * sum(p) - ((1 - alpha)/u_b) * sum(b)``
subject to a per-subcarrier BER target.  At the optimum the BER constraint is
always tight, so power follows from bits through the SNR gap and the problem
reduces to choosing bits.  The continuous relaxation has a closed form; a
total-power cap turns it into a water-filling problem on the power scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .channel import ChannelRealization

__all__ = [
    "LN2",
    "MoopWeights",
    "BerTargets",
    "Allocation",
    "MultiplierSet",
    "InfeasibleError",
    "snr_gap",
    "ber_mqam",
    "power_from_bits",
    "moop_objective",
    "allocate_relaxed",
    "allocate_power_capped",
    "round_allocation",
    "rounding_repair",
    "greedy_fill",
    "price_sweep_candidates",
    "polish",
    "best_discrete",
    "solve_discrete",
    "bisect_alpha",
    "exp_integral_ei",
    "analytic_averages",
]

LN2 = math.log(2.0)


class InfeasibleError(ValueError):
    """Raised when a constraint set cannot be met by any allocation."""


@dataclass(frozen=True)
class MoopWeights:
    alpha: float
    u_power: float = 1.0
    u_bits: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (self.u_power > 0 and self.u_bits > 0):
            raise ValueError("normalizations must be > 0")

    @property
    def power_price(self) -> float:
        return self.alpha / self.u_power

    @property
    def bit_value(self) -> float:
        return (1.0 - self.alpha) / self.u_bits


def snr_gap(ber_th):
    """Gap between M-QAM at the target BER and Shannon capacity (linear)."""
    ber_th = np.asarray(ber_th, dtype=float)
    if np.any((ber_th <= 0) | (ber_th >= 0.2)):
        raise ValueError("BER targets must lie in (0, 0.2)")
    return -np.log(5.0 * ber_th) / 1.6


@dataclass(frozen=True)
class BerTargets:
    per_subcarrier: np.ndarray
    snr_gap: np.ndarray = field(init=False)

    def __post_init__(self):
        ber = np.array(self.per_subcarrier, dtype=float, copy=True).reshape(-1)
        gap = snr_gap(ber)
        ber.setflags(write=False)
        gap.setflags(write=False)
        object.__setattr__(self, "per_subcarrier", ber)
        object.__setattr__(self, "snr_gap", gap)

    @classmethod
    def uniform(cls, ber_th: float, n: int) -> "BerTargets":
        return cls(np.full(n, float(ber_th)))

    def __len__(self) -> int:
        return self.per_subcarrier.size


@dataclass(frozen=True)
class MultiplierSet:
    lambda_power: float = 0.0
    lambda_aci: tuple[float, ...] = ()
    lambda_rate: float = 0.0
    iterations: int = 0


@dataclass
class Allocation:
    """Bits, powers and objective of one solution.

    ``bits`` holds integers for discrete solutions and floats for relaxed
    ones (``relaxed`` flag set).
    """

    bits: np.ndarray
    power_w: np.ndarray
    objective: float
    diagnostics: dict = field(default_factory=dict)
    relaxed: bool = False

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.bits > 0)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.power_w))

    @property
    def total_bits(self) -> float:
        return float(np.sum(self.bits))


def ber_mqam(p, b, cnr):
    """Approximate M-QAM bit error rate."""
    p, b, cnr = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, b, cnr)))
    if np.any(b < 1):
        raise ValueError("ber_mqam needs b >= 1; nulled subcarriers have no BER")
    if np.any(p < 0) or np.any(cnr < 0):
        raise ValueError("power and cnr must be nonnegative")
    out = 0.2 * np.exp(-1.6 * p * cnr / (np.exp2(b) - 1.0))
    return out if out.ndim else float(out)


def power_from_bits(b, cnr, gap):
    """Power that makes the BER constraint tight for ``b`` bits."""
    b, cnr, gap = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (b, cnr, gap)))
    if np.any(b < 0):
        raise ValueError("bits must be nonnegative")
    loaded = b > 0
    if np.any(loaded & (cnr <= 0)):
        raise InfeasibleError("cannot load bits on a subcarrier with zero cnr")
    out = np.zeros(b.shape)
    out[loaded] = gap[loaded] / cnr[loaded] * (np.exp2(b[loaded]) - 1.0)
    return out if out.ndim else float(out)


def moop_objective(bits, power, w: MoopWeights) -> float:
    return w.power_price * float(np.sum(power)) - w.bit_value * float(np.sum(bits))


def _unit_power(ch: ChannelRealization, t: BerTargets) -> np.ndarray:
    """Gamma_i / gamma_i, infinite on dead subcarriers."""
    if len(t) != ch.n:
        raise ValueError(f"{len(t)} BER targets for {ch.n} subcarriers")
    with np.errstate(divide="ignore"):
        return np.where(ch.cnr > 0, t.snr_gap / np.where(ch.cnr > 0, ch.cnr, 1.0), np.inf)


def _fill(a: np.ndarray, level: float, b_max: float, nulled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Continuous bits and powers for a water level on the power scale."""
    bits = np.zeros(a.size)
    ok = ~nulled & np.isfinite(a)
    if level > 0:
        bits[ok] = np.minimum(np.log2(level / a[ok]), b_max)
    bits[bits < 2.0] = 0.0
    power = np.zeros(a.size)
    on = bits > 0
    power[on] = a[on] * (np.exp2(bits[on]) - 1.0)
    return bits, power


def allocate_relaxed(ch: ChannelRealization, w: MoopWeights, t: BerTargets, b_max: float = math.inf) -> Allocation:
    """Unconstrained continuous solution.

    Bits are ``log2(K * gamma / Gamma)`` with ``K = bit_value / (power_price ln2)``,
    capped at ``b_max`` and nulled below two bits.
    """
    a = _unit_power(ch, t)
    if w.alpha == 0.0:
        if math.isinf(b_max):
            raise ValueError("alpha = 0 with unbounded b_max gives unbounded bits")
        level = math.inf
    elif w.alpha == 1.0:
        level = 0.0
    else:
        level = w.bit_value / (w.power_price * LN2)
    if math.isinf(level):
        bits = np.where(np.isfinite(a), float(b_max), 0.0)
        power = np.where(bits > 0, a * (np.exp2(bits) - 1.0), 0.0)
    else:
        bits, power = _fill(a, level, b_max, np.zeros(a.size, bool))
    alloc = Allocation(bits, power, moop_objective(bits, power, w), relaxed=True)
    alloc.diagnostics.update(water_level=level, multipliers=MultiplierSet())
    return alloc


def _water_level(a: np.ndarray, top: np.ndarray, budget: float) -> float:
    """Solve ``sum(min(W, top_i) - a_i) = budget`` for W over the given subcarriers."""
    # Each term is a_i-shifted and saturates at top_i, so the sum is piecewise linear.
    order = np.argsort(top)
    top_s = top[order]
    base = budget + float(np.sum(a))
    capped_sum = 0.0
    m = top.size
    for k in range(m):
        free = m - k
        level = (base - capped_sum) / free
        if level <= top_s[k]:
            return level
        capped_sum += top_s[k]
    return math.inf


def allocate_power_capped(
    ch: ChannelRealization,
    w: MoopWeights,
    t: BerTargets,
    b_max: float,
    p_cap: float,
) -> Allocation:
    """Continuous solution under a total-power cap.

    The multiplier of the cap is reported in closed form from the water level
    over the active set.  Subcarriers whose bits fall below two are nulled one
    at a time (weakest first) and the level is recomputed until stable.
    """
    if not p_cap > 0:
        raise ValueError("p_cap must be > 0")
    relaxed = allocate_relaxed(ch, w, t, b_max)
    if relaxed.total_power <= p_cap:
        return relaxed
    a = _unit_power(ch, t)
    level0 = relaxed.diagnostics["water_level"]
    nulled = relaxed.bits == 0
    top = a * 2.0**b_max
    level = level0
    for _ in range(a.size + 1):
        idx = np.flatnonzero(~nulled)
        if idx.size == 0:
            level = 0.0
            break
        level = min(_water_level(a[idx], top[idx], p_cap), level0)
        short = idx[level < 4.0 * a[idx]]
        if short.size == 0:
            break
        nulled[short[np.argmax(a[short])]] = True
    bits, power = _fill(a, level, b_max, nulled)
    if level > 0 and math.isfinite(level):
        lam = max(w.bit_value / (level * LN2) - w.power_price, 0.0)
    else:
        lam = 0.0
    alloc = Allocation(bits, power, moop_objective(bits, power, w), relaxed=True)
    alloc.diagnostics.update(water_level=level, multipliers=MultiplierSet(lambda_power=lam))
    return alloc


def round_allocation(a: Allocation, ch: ChannelRealization, t: BerTargets, w: MoopWeights, b_max: float = math.inf) -> Allocation:
    """Round relaxed bits to the nearest integer, null anything below two, recompute power."""
    bits = np.floor(np.asarray(a.bits, dtype=float) + 0.5)
    bits = np.minimum(bits, b_max)
    bits[bits < 2] = 0
    bits = bits.astype(np.int64)
    power = power_from_bits(bits, ch.cnr, t.snr_gap)
    return Allocation(bits, power, moop_objective(bits, power, w), dict(a.diagnostics))


Constraint = tuple  # (weights, cap)


def _normalize_constraints(constraints: Iterable[Constraint], n: int) -> list[tuple[np.ndarray, float]]:
    out = []
    for weights, cap in constraints:
        wv = np.broadcast_to(np.asarray(weights, dtype=float), (n,)).copy()
        if np.any(wv < 0):
            raise ValueError("constraint weights must be nonnegative")
        if cap < 0:
            raise InfeasibleError("negative cap cannot be met even with all subcarriers nulled")
        out.append((wv, float(cap)))
    return out


def _step_down(bits: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Power released by removing one bit (two bits when stepping 2 -> 0)."""
    drop = np.zeros(bits.size)
    hi = bits >= 3
    drop[hi] = a[hi] * np.exp2(bits[hi] - 1.0)
    two = bits == 2
    drop[two] = 3.0 * a[two]
    return drop


def rounding_repair(
    a: Allocation,
    ch: ChannelRealization,
    t: BerTargets,
    w: MoopWeights,
    constraints: Sequence[Constraint],
) -> Allocation:
    """Remove bits until every linear power constraint holds.

    Each step takes a bit from the subcarrier whose removal releases the most
    power weighted by the currently violated constraints (lowest index on ties).
    """
    unit = _unit_power(ch, t)
    cons = _normalize_constraints(constraints, ch.n)
    bits = np.asarray(a.bits, dtype=np.int64).copy()
    power = power_from_bits(bits, ch.cnr, t.snr_gap)
    steps = 0
    while True:
        violated = [wv for wv, cap in cons if float(wv @ power) > cap]
        if not violated:
            break
        score = _step_down(bits, unit) * np.sum(violated, axis=0)
        i = int(np.argmax(score))
        if score[i] <= 0:
            raise InfeasibleError("constraint cannot be met by removing bits")
        bits[i] = 0 if bits[i] == 2 else bits[i] - 1
        power[i] = power_from_bits(bits[i], ch.cnr[i], t.snr_gap[i])
        steps += 1
    diag = dict(a.diagnostics)
    diag["repair_steps"] = steps
    return Allocation(bits, power, moop_objective(bits, power, w), diag)


def _step_up(bits: np.ndarray) -> np.ndarray:
    return np.where(bits == 0, 2, bits + 1)


def _step_dn(bits: np.ndarray) -> np.ndarray:
    return np.where(bits <= 2, 0, bits - 1)


def greedy_fill(
    a: Allocation,
    ch: ChannelRealization,
    t: BerTargets,
    w: MoopWeights,
    b_max: int,
    constraints: Sequence[Constraint],
    swaps: bool = True,
) -> Allocation:
    """Best-improvement local search on the bit vector.

    Moves are one step up or down on a single subcarrier and, with ``swaps``,
    one step down on one subcarrier paired with one step up on another.  Only
    moves that keep every cap satisfied are taken, so the result is never
    worse than the input and never infeasible.
    """
    unit = _unit_power(ch, t)
    cons = _normalize_constraints(constraints, ch.n)
    cw = np.array([wv for wv, _ in cons]).reshape(len(cons), ch.n)
    caps = np.array([cap for _, cap in cons])
    bits = np.asarray(a.bits, dtype=np.int64).copy()
    power = power_from_bits(bits, ch.cnr, t.snr_gap)
    ok = np.isfinite(unit)
    safe_unit = np.where(ok, unit, 0.0)
    steps = 0
    for _ in range(64 * ch.n * max(int(b_max), 1)):
        up = _step_up(bits)
        dn = _step_dn(bits)
        can_up = ok & (up <= b_max)
        p_up = np.where(can_up, safe_unit * (np.exp2(up) - 1.0), 0.0)
        p_dn = np.where(dn > 0, safe_unit * (np.exp2(dn) - 1.0), 0.0)
        d_up, d_dn = p_up - power, p_dn - power
        g_up = np.where(can_up, w.bit_value * (up - bits) - w.power_price * d_up, -np.inf)
        g_dn = np.where(bits > 0, w.bit_value * (dn - bits) - w.power_price * d_dn, -np.inf)
        use = cw @ power
        slack = caps - use
        # gain[i, j]: step i down and j up (diagonal holds the single moves)
        if swaps:
            gain = g_dn[:, None] + g_up[None, :]
            fits = np.ones(gain.shape, bool)
            for k in range(caps.size):
                fits &= cw[k][:, None] * d_dn[:, None] + cw[k][None, :] * d_up[None, :] <= slack[k]
            gain = np.where(fits, gain, -np.inf)
            np.fill_diagonal(gain, -np.inf)
        else:
            gain = np.full((ch.n, ch.n), -np.inf)
        fit_up = np.all(cw * d_up[None, :] <= slack[:, None], axis=0) if caps.size else np.ones(ch.n, bool)
        diag = np.maximum(np.where(fit_up, g_up, -np.inf), g_dn)
        gain[np.diag_indices(ch.n)] = diag
        k = int(np.argmax(gain))
        i, j = divmod(k, ch.n)
        if not gain[i, j] > 1e-15 * max(abs(moop_objective(bits, power, w)), 1e-300):
            break
        if i == j:
            if g_dn[i] >= np.where(fit_up, g_up, -np.inf)[i]:
                bits[i], power[i] = dn[i], p_dn[i]
            else:
                bits[i], power[i] = up[i], p_up[i]
        else:
            bits[i], power[i] = dn[i], p_dn[i]
            bits[j], power[j] = up[j], p_up[j]
        steps += 1
    diag_out = dict(a.diagnostics)
    diag_out["fill_steps"] = steps
    return Allocation(bits, power, moop_objective(bits, power, w), diag_out)


def _power_table(ch: ChannelRealization, t: BerTargets, b_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Bit domain and the power each subcarrier needs for every entry of it."""
    dom = np.array([0] + list(range(2, int(b_max) + 1)), dtype=np.int64)
    unit = _unit_power(ch, t)
    live = np.isfinite(unit)
    table = np.where(
        live[:, None],
        np.where(live, unit, 0.0)[:, None] * (np.exp2(dom) - 1.0)[None, :],
        np.where(dom == 0, 0.0, np.inf)[None, :],
    )
    return dom, table


def _best_response(dom: np.ndarray, table: np.ndarray, value: float, price: np.ndarray) -> np.ndarray:
    cost = np.where(np.isfinite(table), price[:, None] * table - value * dom[None, :], np.inf)
    return dom[np.argmin(cost, axis=1)]


def _price_breakpoints(dom, table, value, base, extra) -> np.ndarray:
    """Scales ``s`` at which some subcarrier's best bit load changes under price ``base + s*extra``."""
    out = [np.zeros(1)]
    dd = (dom[None, :] - dom[:, None]).astype(float)
    for i in np.flatnonzero(extra > 0):
        dp = table[i][None, :] - table[i][:, None]
        m = np.isfinite(dp) & (dp > 0)
        s = (value * dd[m] / dp[m] - base[i]) / extra[i]
        out.append(s[s > 0])
    return np.unique(np.concatenate(out))


def _satisfies(power: np.ndarray, cons) -> bool:
    return all(float(wv @ power) <= cap for wv, cap in cons)


def price_sweep_candidates(
    ch: ChannelRealization,
    t: BerTargets,
    w: MoopWeights,
    b_max: int,
    constraints: Sequence[Constraint],
    extra_price=None,
    width: int = 3,
) -> list[np.ndarray]:
    """Discrete best responses to prices near the feasibility frontier.

    The per-subcarrier price is ``alpha/u_p + s * extra_price``.  Each
    subcarrier then picks its bit load independently, which settles the
    zero-versus-two-bits choice exactly.  ``s`` is searched over the finitely
    many breakpoints for the smallest value whose response meets every cap,
    and ``width`` neighbours on each side are returned.
    """
    cons = _normalize_constraints(constraints, ch.n)
    dom, table = _power_table(ch, t, b_max)
    base = np.full(ch.n, w.power_price)
    if extra_price is None or not np.any(np.asarray(extra_price) > 0):
        extra = np.sum([wv for wv, _ in cons], axis=0) if cons else np.ones(ch.n)
    else:
        extra = np.broadcast_to(np.asarray(extra_price, dtype=float), (ch.n,)).copy()
    if not np.any(extra > 0):
        extra = np.ones(ch.n)
    bps = _price_breakpoints(dom, table, w.bit_value, base, extra)
    grid = np.concatenate([[0.0], 0.5 * (bps[1:] + bps[:-1]), [2.0 * bps[-1] + 1.0]])

    def respond(k: int) -> np.ndarray:
        return _best_response(dom, table, w.bit_value, base + grid[k] * extra)

    def feasible(b: np.ndarray) -> bool:
        return _satisfies(power_from_bits(b, ch.cnr, t.snr_gap), cons)

    lo, hi = 0, grid.size - 1
    if feasible(respond(0)):
        hi = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(respond(mid)):
            hi = mid
        else:
            lo = mid
    return [respond(k) for k in range(max(0, hi - width), min(grid.size, hi + width))]


def polish(
    start: np.ndarray,
    ch: ChannelRealization,
    t: BerTargets,
    w: MoopWeights,
    b_max: int,
    constraints: Sequence[Constraint],
    diagnostics: dict | None = None,
) -> Allocation:
    """Repair a bit vector against the caps, then improve it by local search."""
    bits = np.asarray(start, dtype=np.int64)
    seed = Allocation(bits, power_from_bits(bits, ch.cnr, t.snr_gap), 0.0, dict(diagnostics or {}))
    return greedy_fill(rounding_repair(seed, ch, t, w, constraints), ch, t, w, b_max, constraints)


def best_discrete(
    relaxed: Allocation,
    ch: ChannelRealization,
    t: BerTargets,
    w: MoopWeights,
    b_max: int,
    constraints: Sequence[Constraint],
    extra_price=None,
    refine: bool = True,
) -> Allocation:
    """Round a relaxed solution and repair it; with ``refine`` also try price-sweep starts.

    The rounded closed form is always among the candidates, so refinement can
    only improve the objective.
    """
    rounded = round_allocation(relaxed, ch, t, w, b_max)
    base = rounding_repair(rounded, ch, t, w, constraints)
    if not refine:
        base.diagnostics["source"] = "rounded"
        return base
    best = greedy_fill(base, ch, t, w, b_max, constraints)
    best.diagnostics["source"] = "rounded"
    directions = [extra_price]
    if len(constraints) > 1:
        directions += [wv for wv, _ in _normalize_constraints(constraints, ch.n)]
    starts = {}
    for d in directions:
        for c in price_sweep_candidates(ch, t, w, b_max, constraints, d):
            starts.setdefault(c.tobytes(), c)
    for cand in starts.values():
        alloc = polish(cand, ch, t, w, b_max, constraints, relaxed.diagnostics)
        if alloc.objective < best.objective - 1e-15 * abs(best.objective):
            alloc.diagnostics["source"] = "price_sweep"
            best = alloc
    return best


def solve_discrete(
    ch: ChannelRealization,
    w: MoopWeights,
    t: BerTargets,
    b_max: int,
    p_cap: float = math.inf,
    refine: bool = True,
) -> Allocation:
    """Closed form under a power cap followed by rounding, repair and refinement."""
    if math.isinf(p_cap):
        relaxed = allocate_relaxed(ch, w, t, b_max)
        cons = []
    else:
        relaxed = allocate_power_capped(ch, w, t, b_max, p_cap)
        cons = [(1.0, p_cap)]
    return best_discrete(relaxed, ch, t, w, b_max, cons, refine=refine)


def bisect_alpha(
    ch: ChannelRealization,
    t: BerTargets,
    b_max: float,
    p_cap: float,
    alpha_init: float = 0.5,
    tol: float = 1e-12,
    u_power: float = 1.0,
    u_bits: float = 1.0,
) -> tuple[float, Allocation]:
    """Raise alpha until the rounded unconstrained allocation fits the power cap.

    Rounded power is a step function of alpha, so the cap can sit inside a jump.
    The search then stops once the bracket is narrower than 1e-12 and the upper
    end (feasible side) is returned; ``diagnostics['within_tol']`` records which
    stopping rule fired.
    """
    if not 0.0 < alpha_init < 1.0:
        raise ValueError("alpha_init must lie in (0, 1)")
    if not tol > 0:
        raise ValueError("tol must be > 0")

    def solve(alpha: float) -> Allocation:
        w = MoopWeights(alpha, u_power, u_bits)
        return round_allocation(allocate_relaxed(ch, w, t, b_max), ch, t, w, b_max)

    alloc = solve(alpha_init)
    if alloc.total_power <= p_cap:
        alloc.diagnostics.update(within_tol=True, iterations=0, lower_power=None)
        return alpha_init, alloc
    lo, hi = alpha_init, 1.0
    lo_power = alloc.total_power
    best = solve(hi)
    it = 0
    within = p_cap - best.total_power <= tol
    while not within and hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        cand = solve(mid)
        it += 1
        if cand.total_power <= p_cap:
            if cand.total_power < best.total_power:
                raise RuntimeError("rounded power increased with alpha")
            hi, best = mid, cand
            within = p_cap - cand.total_power <= tol
        else:
            lo, lo_power = mid, cand.total_power
    best.diagnostics.update(within_tol=within, iterations=it, lower_power=lo_power, lower_alpha=lo)
    return hi, best


def exp_integral_ei(x):
    """Exponential integral Ei for negative real arguments."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x < 0)):
        raise ValueError("exp_integral_ei is defined here for x < 0 only")
    out = special.expi(x)
    return out if out.ndim else float(out)


def analytic_averages(nu: float, w: MoopWeights, t: BerTargets, n: int | None = None) -> tuple[float, float]:
    """Mean throughput (bits) and power of the unconstrained continuous solution.

    Gains are exponential with rate ``nu`` (mean 1/nu) and no bit cap applies.
    """
    if not nu > 0:
        raise ValueError("nu must be > 0")
    if not 0.0 < w.alpha < 1.0:
        raise ValueError("closed-form averages need 0 < alpha < 1")
    gap = t.snr_gap if n is None else np.resize(t.snr_gap, n)
    if math.isinf(nu):
        return 0.0, 0.0
    level = w.bit_value / (w.power_price * LN2)
    x = nu * 4.0 * gap / level
    e = np.exp(-x)
    ei = special.expi(-x)
    throughput = float(np.sum(2.0 * e - ei / LN2))
    power = float(np.sum(level * (e + x / 4.0 * ei)))
    return throughput, power
