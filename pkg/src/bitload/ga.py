"""Real-coded genetic algorithm for bit and power loading under an average-BER cap.

With the BER constrained only on average across subcarriers, power no longer
follows from bits and the problem is non-convex in ``(b, p)``.  The search
uses tournament selection with feasibility rules, Laplace crossover, power
mutation, and random rounding of the integer genes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bitpower import MoopWeights, ber_mqam
from .channel import ChannelRealization

__all__ = [
    "GaConfig",
    "Individual",
    "Op1Problem",
    "GaResult",
    "average_ber",
    "violations",
    "fitness",
    "tournament_select",
    "laplace_crossover",
    "power_mutation",
    "integer_truncate",
    "evolve",
]


@dataclass(frozen=True)
class GaConfig:
    population: int = 100
    max_generations: int = 1500
    objective_tol: float = 1e-12
    stall_window: int = 50
    elite_count: int = 5
    crossover_fraction: float = 0.8
    tournament_size: int = 2
    laplace_location: float = 0.0
    laplace_scale: float | None = None
    laplace_scale_int: float = 0.35
    laplace_scale_real: float = 0.15
    adaptive_scale: bool = False
    mutation_index_real: float = 0.25
    mutation_index_int: float = 4.0
    mutation_rate: float | None = None
    seed_closed_form: bool = False
    bit_gene_floor: float = 0.0
    power_encoding: str = "relative"
    relative_power_max: float = 2.0

    def __post_init__(self):
        if self.population <= self.elite_count:
            raise ValueError("population must exceed elite_count")
        if self.elite_count < 0 or self.max_generations < 1:
            raise ValueError("elite_count must be >= 0 and max_generations >= 1")
        if not 0.0 <= self.crossover_fraction <= 1.0:
            raise ValueError("crossover_fraction must lie in [0, 1]")
        if self.tournament_size < 2:
            raise ValueError("tournament_size must be >= 2")
        if self.laplace_scale is not None and not self.laplace_scale > 0:
            raise ValueError("laplace_scale must be > 0")
        if self.power_encoding not in ("relative", "absolute"):
            raise ValueError("power_encoding must be 'relative' or 'absolute'")
        if not self.relative_power_max > 0:
            raise ValueError("relative_power_max must be > 0")
        if self.mutation_rate is not None and not 0.0 < self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in (0, 1]")

    @property
    def n_crossover(self) -> int:
        return int(round(self.crossover_fraction * (self.population - self.elite_count)))

    @property
    def n_mutation(self) -> int:
        return self.population - self.elite_count - self.n_crossover


@dataclass
class Individual:
    bits: np.ndarray
    power: np.ndarray
    fitness: float = math.nan
    feasible: bool = False
    objective: float = math.nan
    violation: float = math.nan


@dataclass(frozen=True)
class Op1Problem:
    """Minimize the scalarized objective subject to average BER and total power."""

    channel: ChannelRealization
    weights: MoopWeights
    ber_th: float
    p_th: float
    b_max: int

    def __post_init__(self):
        if not 0.0 < self.ber_th < 0.2:
            raise ValueError("ber_th must lie in (0, 0.2)")
        if not self.p_th > 0:
            raise ValueError("p_th must be > 0")
        if self.b_max < 2:
            raise ValueError("b_max must be >= 2")

    @property
    def n(self) -> int:
        return self.channel.n


@dataclass
class GaResult:
    best: Individual
    log: list = field(default_factory=list)
    generations: int = 0

    def log_csv(self) -> str:
        rows = ["generation,best,mean,feasible_fraction"]
        rows += [f"{g},{b:.12g},{m:.12g},{f:.12g}" for g, b, m, f in self.log]
        return "\n".join(rows) + "\n"


def _ber_matrix(bits: np.ndarray, power: np.ndarray, cnr: np.ndarray) -> np.ndarray:
    safe_b = np.maximum(bits, 1)
    with np.errstate(invalid="ignore"):
        snr = power * cnr
    # infinite power on a dead subcarrier carries no signal
    snr = np.where(np.isnan(snr), 0.0, snr)
    return np.where(bits > 0, 0.2 * np.exp(-1.6 * snr / (np.exp2(safe_b) - 1.0)), 0.0)


def average_ber(ind: Individual, ch: ChannelRealization) -> float:
    """Bit-weighted mean of the per-subcarrier BERs."""
    bits = np.asarray(ind.bits, dtype=float)
    total = bits.sum()
    if total <= 0:
        raise ValueError("average BER is undefined with no loaded bits")
    loaded = bits > 0
    ber = ber_mqam(np.asarray(ind.power)[loaded], bits[loaded], ch.cnr[loaded])
    return float(np.sum(bits[loaded] * ber) / total)


def _batch_violation(bits: np.ndarray, power: np.ndarray, prob: Op1Problem) -> np.ndarray:
    """Relative constraint violation of each row (0 when feasible)."""
    total_bits = bits.sum(axis=1)
    ber = _ber_matrix(bits, power, prob.channel.cnr)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(total_bits > 0, (bits * ber).sum(axis=1) / np.where(total_bits > 0, total_bits, 1), 0.0)
    v_ber = np.maximum(avg - prob.ber_th, 0.0) / prob.ber_th
    v_pow = np.maximum(power.sum(axis=1) - prob.p_th, 0.0) / prob.p_th
    return v_ber + v_pow


def violations(ind: Individual, prob: Op1Problem) -> float:
    """Sum of the relative average-BER and total-power violations."""
    return float(_batch_violation(np.atleast_2d(ind.bits), np.atleast_2d(ind.power), prob)[0])


def _objective(bits: np.ndarray, power: np.ndarray, w: MoopWeights) -> np.ndarray:
    return w.power_price * power.sum(axis=-1) - w.bit_value * bits.sum(axis=-1)


def fitness(ind: Individual, prob: Op1Problem, f_worst: float) -> float:
    """Objective when feasible, otherwise the worst feasible objective plus the violation."""
    v = violations(ind, prob)
    if v == 0.0:
        return float(_objective(np.asarray(ind.bits), np.asarray(ind.power), prob.weights))
    return f_worst + v


def _batch_fitness(bits, power, prob: Op1Problem):
    obj = _objective(bits, power, prob.weights)
    viol = _batch_violation(bits, power, prob)
    feas = viol == 0.0
    f_worst = float(obj[feas].max()) if feas.any() else 0.0
    fit = np.where(feas, obj, f_worst + viol)
    return fit, feas, obj, viol


def tournament_select(fit: np.ndarray, feasible: np.ndarray, k: int, rng: np.random.Generator) -> int:
    """Index of the tournament winner among ``k`` random entrants.

    Feasible beats infeasible; otherwise lower fitness wins and ties go to the
    lower index.
    """
    if k < 2:
        raise ValueError("tournament size must be >= 2")
    entrants = np.sort(rng.choice(fit.size, size=k, replace=True))
    key = np.lexsort((entrants, fit[entrants], ~feasible[entrants]))
    return int(entrants[key[0]])


def _tournaments(fit: np.ndarray, feasible: np.ndarray, k: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` independent tournaments at once, same rules as :func:`tournament_select`."""
    entrants = np.sort(rng.choice(fit.size, size=(m, k), replace=True), axis=1)
    # Rank every member once: feasible first, then fitness, then index.
    rank = np.empty(fit.size, dtype=np.int64)
    rank[np.lexsort((np.arange(fit.size), fit, ~feasible))] = np.arange(fit.size)
    return entrants[np.arange(m), np.argmin(rank[entrants], axis=1)]


def laplace_crossover(z1, z2, a: float, xi, rng: np.random.Generator):
    """Two children spread around the parents by a Laplace-distributed factor."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    xi = np.broadcast_to(np.asarray(xi, dtype=float), z1.shape)
    if np.any(xi <= 0):
        raise ValueError("laplace scale must be > 0")
    u = 1.0 - rng.random(z1.shape)  # in (0, 1], keeps log finite
    r = rng.random(z1.shape)
    beta = np.where(r <= 0.5, a - xi * np.log(u), a + xi * np.log(u))
    spread = np.abs(z1 - z2)
    return z1 + beta * spread, z2 + beta * spread


def power_mutation(z, lower, upper, index: float, rng: np.random.Generator):
    """Mutant drawn between the parent and one of its bounds.

    The step fraction ``s`` follows the power law ``P(s <= x) = x**index``.
    Parents at the upper bound always move down.
    """
    z = np.asarray(z, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), z.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), z.shape)
    if np.any(z < lower) or np.any(z > upper):
        raise ValueError("parent gene outside its bounds")
    s = rng.random(z.shape) ** (1.0 / index)
    r = rng.random(z.shape)
    room = upper - z
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(room > 0, (z - lower) / np.where(room > 0, room, 1.0), np.inf)
    down = (t < r) | (room <= 0)
    # Downward when t < r per the operator; at the upper bound t is undefined.
    out = np.where(down, z - s * (z - lower), z + s * room)
    out = np.clip(out, lower, upper)
    return out if out.ndim else float(out)


def integer_truncate(x, rng: np.random.Generator):
    """Floor or floor + 1 with equal probability; integers pass through."""
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)):
        raise ValueError("cannot truncate a non-finite gene")
    fl = np.floor(x)
    up = rng.random(x.shape) < 0.5
    out = np.where(x == fl, fl, fl + up)
    return out.astype(np.int64) if out.ndim else int(out)


def _legalize_genes(b: np.ndarray, floor, b_max: int, rng: np.random.Generator) -> np.ndarray:
    """Clip to ``[floor, b_max]`` and send one-bit loads to zero or two at random."""
    b = np.clip(b, floor, b_max)
    one = b == 1
    if one.any():
        b = b.copy()
        b[one] = np.where(rng.random(int(one.sum())) < 0.5, 0, 2)
    return b


def _decode(bits: np.ndarray, genes: np.ndarray, unit: np.ndarray | None = None) -> np.ndarray:
    """Phenotype power from power genes.

    With ``unit`` (the power that meets the BER target with one unit of
    ``2**b - 1``) the genes are multiples of the active-BER power for the
    current bit load, so bits and power move together.  Power on an unloaded
    subcarrier carries nothing and is dropped.
    """
    if unit is not None:
        # Dead subcarriers have infinite unit power; they are dropped below.
        with np.errstate(invalid="ignore"):
            genes = genes * unit * (np.exp2(bits) - 1.0)
    return np.where(bits > 0, genes, 0.0)


def _encode(bits: np.ndarray, power: np.ndarray, unit: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        scale = unit * (np.exp2(bits) - 1.0)
    return np.where(bits > 0, power / np.where(bits > 0, scale, 1.0), 1.0)


def _closed_form_seed(prob: Op1Problem):
    from .bitpower import BerTargets, solve_discrete

    t = BerTargets.uniform(prob.ber_th, prob.n)
    a = solve_discrete(prob.channel, prob.weights, t, prob.b_max, prob.p_th)
    return a.bits.astype(float), a.power_w.copy()


def evolve(prob: Op1Problem, cfg: GaConfig, rng: np.random.Generator) -> GaResult:
    """Run the GA and return the best individual found plus a per-generation log."""
    n = prob.n
    pop = cfg.population
    # Bit genes at or below zero all decode to a nulled subcarrier; a floor below
    # zero keeps such genes off the bound, where power mutation cannot move them.
    lo = np.concatenate([np.full(n, min(cfg.bit_gene_floor, 0.0)), np.zeros(n)])
    relative = cfg.power_encoding == "relative"
    p_hi = cfg.relative_power_max if relative else prob.p_th
    hi = np.concatenate([np.full(n, float(prob.b_max)), np.full(n, p_hi)])
    gap = -math.log(5.0 * prob.ber_th) / 1.6
    cnr = prob.channel.cnr
    unit = np.where(cnr > 0, gap / np.where(cnr > 0, cnr, 1.0), np.inf) if relative else None
    rate = cfg.mutation_rate if cfg.mutation_rate is not None else min(1.0, 2.0 / n)
    mut_index = np.concatenate([np.full(n, cfg.mutation_index_int), np.full(n, cfg.mutation_index_real)])

    bit_genes = _legalize_genes(integer_truncate(rng.uniform(lo[:n], prob.b_max, (pop, n)), rng), lo[:n], prob.b_max, rng)
    raw_power = rng.uniform(0, p_hi, (pop, n))
    if cfg.seed_closed_form:
        b0, p0 = _closed_form_seed(prob)
        bit_genes[0] = b0
        raw_power[0] = _encode(b0, p0, unit) if relative else p0
    bits = np.maximum(bit_genes, 0).astype(np.int64)
    power = _decode(bits, raw_power, unit)

    fit, feas, obj, viol = _batch_fitness(bits, power, prob)
    best_bits, best_power = bits[0].copy(), power[0].copy()
    best_key = (True, math.inf)  # (infeasible, score): smaller is better

    def update_best():
        nonlocal best_bits, best_power, best_key
        if feas.any():
            i = int(np.flatnonzero(feas)[np.argmin(obj[feas])])
            key = (False, float(obj[i]))
        else:
            i = int(np.argmin(viol))
            key = (True, float(viol[i]))
        if key < best_key:
            best_key = key
            best_bits, best_power = bits[i].copy(), power[i].copy()

    update_best()
    log = [(0, best_key[1] if not best_key[0] else math.nan, float(np.mean(obj)), float(np.mean(feas)))]
    history = [best_key]
    gen = 0
    for gen in range(1, cfg.max_generations + 1):
        order = np.lexsort((np.arange(pop), fit, ~feas))
        elite = order[: cfg.elite_count]
        # The genotype keeps power genes of unloaded subcarriers so they can be reloaded later.
        genes = np.hstack([bit_genes.astype(float), raw_power])
        children = [genes[elite]]

        n_x = cfg.n_crossover
        if n_x:
            pairs = (n_x + 1) // 2
            p1 = _tournaments(fit, feas, cfg.tournament_size, pairs, rng)
            p2 = _tournaments(fit, feas, cfg.tournament_size, pairs, rng)
            z1, z2 = genes[p1], genes[p2]
            if cfg.laplace_scale is not None:
                xi = cfg.laplace_scale
            elif cfg.adaptive_scale:
                xi = np.clip(0.5 * np.abs(z1 - z2) / (hi - lo), 0.01, 0.5)
            else:
                xi = np.concatenate([np.full(n, cfg.laplace_scale_int), np.full(n, cfg.laplace_scale_real)])
            c1, c2 = laplace_crossover(z1, z2, cfg.laplace_location, xi, rng)
            children.append(np.vstack([c1, c2])[:n_x])

        n_m = cfg.n_mutation
        if n_m:
            par = _tournaments(fit, feas, cfg.tournament_size, n_m, rng)
            base = genes[par]
            mutant = power_mutation(base, lo, hi, mut_index, rng)
            hit = rng.random(base.shape) < rate
            children.append(np.where(hit, mutant, base))

        genes = np.clip(np.vstack(children), lo, hi)
        bit_genes = genes[:, :n].copy()
        fresh = slice(cfg.elite_count, None)
        bit_genes[fresh] = _legalize_genes(integer_truncate(bit_genes[fresh], rng), lo[:n], prob.b_max, rng)
        bits = np.maximum(bit_genes, 0).astype(np.int64)
        raw_power = genes[:, n:]
        power = _decode(bits, raw_power, unit)

        fit, feas, obj, viol = _batch_fitness(bits, power, prob)
        update_best()
        log.append((gen, best_key[1] if not best_key[0] else math.nan, float(np.mean(obj)), float(np.mean(feas))))
        history.append(best_key)
        w = cfg.stall_window
        if len(history) > w and not history[-1][0] and not history[-1 - w][0]:
            if history[-1 - w][1] - history[-1][1] < cfg.objective_tol:
                break

    b_obj = float(_objective(best_bits, best_power, prob.weights))
    v = float(_batch_violation(best_bits[None, :], best_power[None, :], prob)[0])
    best = Individual(best_bits, best_power, b_obj if v == 0 else v, v == 0.0, b_obj, v)
    return GaResult(best, log, gen)
