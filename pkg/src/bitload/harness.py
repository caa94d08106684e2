"""Monte Carlo experiment driver.

An experiment is a resolved flat configuration (see :mod:`bitload.config`).
For each grid point of the swept key, ``trials`` channel realizations are
drawn from per-trial seed substreams, the configured allocator runs on each,
and per-trial metrics are averaged with exactly rounded summation.  Trials can
fan out over worker processes; since every trial owns its generator and the
sums do not depend on order, the output is the same for any worker count.
"""

from __future__ import annotations

import csv
import functools
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Any, Sequence

import numpy as np

from .bitpower import (
    Allocation,
    BerTargets,
    InfeasibleError,
    MoopWeights,
    ber_mqam,
    bisect_alpha,
    moop_objective,
    power_from_bits,
    solve_discrete,
)
from .channel import (
    ChannelRealization,
    EstimationConfig,
    OfdmConfig,
    PathLossModel,
    PuBand,
    SensingModel,
    adjacent_band_offsets,
    db_to_linear,
    leakage_vector,
    mmse_estimation_variance,
    path_loss_db,
    sensing_posteriors,
    trial_rng,
)
from .config import ConfigError, _convert, echo_lines
from .cr import allocate_cr, build_caps, constraint_list, measure_violation
from .ee import EeCaps, EeConfig, InfeasibleRate, UncertainChannel, build_ee_caps, dinkelbach_solve
from .ga import GaConfig, Op1Problem, evolve
from .multipliers import InfeasibleConstraint
from .oracle import SearchSpaceError, exhaustive_search
from .rate_interference import (
    KnowledgeCoeff,
    TriWeights,
    allocate_rate_interference,
    interference_caps,
    knowledge_coeff,
    max_achievable_rate,
)

__all__ = [
    "MetricRecord",
    "ExperimentConfig",
    "run_experiment",
    "run_trial",
    "cr_instance",
    "ee_instance",
    "baseline_uniform_power",
    "baseline_uniform_bits",
    "records_to_csv",
    "default_workers",
    "WORKERS_ENV",
]

WORKERS_ENV = "BITLOAD_WORKERS"
# Relative slack when asserting caps, to absorb rounding in the sums.
CAP_RTOL = 1e-9
INFEASIBLE = (InfeasibleError, InfeasibleRate, InfeasibleConstraint)


@dataclass
class MetricRecord:
    """Aggregated metrics of one grid point; ``None`` marks a metric the experiment does not produce."""

    sweep_value: Any
    trials: int
    infeasible_fraction: float = 0.0
    avg_throughput_bits: float | None = None
    avg_power_w: float | None = None
    avg_rate_bps: float | None = None
    ee_j_per_bit: float | None = None
    bits_per_joule: float | None = None
    violation_ratio_cci: float | None = None
    violation_ratio_aci: float | None = None
    expected_violation_cci: float | None = None
    expected_violation_aci: float | None = None
    avg_iterations: float | None = None
    objective_gap_vs_oracle: float | None = None
    max_objective_gap: float | None = None

    def present(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved parameters plus the grid to sweep."""

    params: dict
    sweep: str
    grid: tuple

    @classmethod
    def from_params(cls, params: dict) -> "ExperimentConfig":
        return cls(dict(params), params["experiment.sweep"], tuple(params["experiment.grid"]))

    @property
    def kind(self) -> str:
        return self.params["experiment.kind"]

    @property
    def trials(self) -> int:
        return self.params["experiment.trials"]

    def points(self) -> list[tuple[Any, dict]]:
        """(sweep value, parameters) for each grid point."""
        if not self.sweep:
            return [(None, self.params)]
        out = []
        for raw in self.grid:
            name, value = _convert(self.sweep, raw)
            p = dict(self.params)
            p[name] = value
            shown = float(raw) if _is_number(raw) else raw
            out.append((shown, p))
        return out


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if k < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return k


# ---------------------------------------------------------------- baselines


def baseline_uniform_power(ch: ChannelRealization, total_power: float, t: BerTargets, b_max: int) -> Allocation:
    """Equal power on every subcarrier with the most bits each can carry at its BER target."""
    if total_power < 0:
        raise ValueError("total_power must be >= 0")
    n = ch.n
    p = np.full(n, total_power / n)
    gap = t.snr_gap
    with np.errstate(divide="ignore"):
        b = np.floor(np.log2(1.0 + ch.cnr * p / gap))
    b = np.minimum(b, b_max)
    b = np.where(b >= 2, b, 0).astype(np.int64)
    p = np.where(b > 0, p, 0.0)
    w = MoopWeights(0.5)
    return Allocation(b, p, moop_objective(b, p, w), {"source": "uniform_power"})


def baseline_uniform_bits(ch: ChannelRealization, bits_per_subcarrier: int, t: BerTargets) -> Allocation:
    """The same constellation on every subcarrier, powered to meet the BER target."""
    if bits_per_subcarrier < 2:
        raise ValueError("bits_per_subcarrier must be >= 2")
    if np.any(ch.cnr <= 0):
        raise InfeasibleError("a subcarrier with zero gain cannot carry bits")
    b = np.full(ch.n, int(bits_per_subcarrier), dtype=np.int64)
    p = power_from_bits(b, ch.cnr, t.snr_gap)
    return Allocation(b, p, moop_objective(b, p, MoopWeights(0.5)), {"source": "uniform_bits"})


# ---------------------------------------------------------------- model construction


def _ofdm(p: dict) -> OfdmConfig:
    return OfdmConfig(p["channel.n_subcarriers"], p["channel.spacing_hz"])


def _path_loss(p: dict) -> PathLossModel:
    return PathLossModel(p["pathloss.reference_m"], p["pathloss.exponent"], p["pathloss.wavelength_m"])


def _gain(p: dict, distance: float) -> float:
    return float(db_to_linear(-path_loss_db(distance, _path_loss(p))))


def _su_channel(p: dict, rng: np.random.Generator) -> ChannelRealization:
    n = p["channel.n_subcarriers"]
    if p["channel.model"] == "cnr":
        return ChannelRealization(rng.exponential(p["channel.avg_cnr"], n), 1.0)
    g = _gain(p, p["channel.su_distance_m"]) * rng.exponential(p["channel.avg_gain"], n)
    return ChannelRealization(g, p["channel.noise_var"], p["channel.interference_w"])


def _weights(p: dict) -> MoopWeights:
    if p["moop.normalize"] == "caps":
        if not math.isfinite(p["moop.p_cap"]):
            raise ConfigError("moop.normalize = caps needs a finite moop.p_cap")
        return MoopWeights(p["moop.alpha"], p["moop.p_cap"], p["channel.n_subcarriers"] * p["moop.b_max"])
    return MoopWeights(p["moop.alpha"], p["moop.u_power"], p["moop.u_bits"])


def _band(p: dict) -> PuBand:
    cfg = _ofdm(p)
    bw = p["pu.bandwidth_hz"] or cfg.n_subcarriers * cfg.subcarrier_spacing_hz
    return PuBand(
        bandwidth_hz=bw,
        spectral_offsets_hz=adjacent_band_offsets(cfg, bw, p["pu.guard_hz"]),
        distance_m=p["pu.d_l"],
        interference_threshold_w=p["pu.p_th_l"],
        fading_margin_db=p["pu.fading_margin_db"],
    )


def _co_channel(p: dict) -> PuBand:
    cfg = _ofdm(p)
    return PuBand(
        bandwidth_hz=cfg.n_subcarriers * cfg.subcarrier_spacing_hz,
        distance_m=p["pu.d_m"],
        interference_threshold_w=p["pu.p_th_m"],
        fading_margin_db=p["pu.fading_margin_db"],
    )


@functools.lru_cache(maxsize=32)
def _leakage_cached(n: int, spacing: float, bw: float, guard: float) -> np.ndarray:
    cfg = OfdmConfig(n, spacing)
    band = PuBand(bandwidth_hz=bw, spectral_offsets_hz=adjacent_band_offsets(cfg, bw, guard))
    out = leakage_vector(cfg, band)
    out.setflags(write=False)
    return out


def _leakage(p: dict) -> np.ndarray:
    n, df = p["channel.n_subcarriers"], p["channel.spacing_hz"]
    bw = p["pu.bandwidth_hz"] or n * df
    return _leakage_cached(n, df, bw, p["pu.guard_hz"])


def _sample_sensing(p: dict, rng: np.random.Generator) -> tuple[SensingModel, SensingModel]:
    """True sensing models of the co-channel and the adjacent PU for one trial."""

    def draw(name):
        return rng.uniform(p[f"sensing.{name}_lo"], p[f"sensing.{name}_hi"])

    m = SensingModel(draw("p_md"), draw("p_fa"), draw("p_active"))
    l = SensingModel(draw("p_md"), draw("p_fa"), draw("p_active"))
    return m, l


def _assumed(p: dict, s: SensingModel) -> SensingModel:
    return SensingModel.perfect(s.p_active) if p["sensing.model"] == "perfect" else s


def _nudged(s: SensingModel) -> SensingModel:
    # Activity at exactly 0 or 1 leaves one posterior undefined; move it into the interior.
    if s.p_active in (0.0, 1.0) or (s.p_md == 0.0 and s.p_fa == 0.0):
        return SensingModel(s.p_md, s.p_fa, min(max(s.p_active, 1e-12), 1.0 - 1e-12))
    return s


def _posteriors(s: SensingModel) -> tuple[float, float]:
    return sensing_posteriors(_nudged(s))


# ---------------------------------------------------------------- per-trial work


def _check_cap(used: float, cap: float, what: str) -> None:
    if used > cap * (1.0 + CAP_RTOL) + 0.0:
        raise AssertionError(f"{what} exceeded: {used!r} > {cap!r}")


def _check_ber(a: Allocation, ch: ChannelRealization, t: BerTargets) -> None:
    on = a.bits > 0
    if np.any(on):
        ber = ber_mqam(a.power_w[on], a.bits[on], ch.cnr[on])
        if np.any(ber > t.per_subcarrier[on] * (1.0 + CAP_RTOL)):
            raise AssertionError("per-subcarrier BER target exceeded")


def _trial_moop(p: dict, rng: np.random.Generator) -> dict:
    ch = _su_channel(p, rng)
    t = BerTargets.uniform(p["moop.ber_th"], ch.n)
    b_max, cap = p["moop.b_max"], p["moop.p_cap"]
    kind = p["experiment.allocator"]
    if kind == "proposed":
        a = solve_discrete(ch, _weights(p), t, b_max, cap, refine=p["experiment.refine"])
    elif kind == "uniform_power":
        budget = cap if math.isfinite(cap) else solve_discrete(ch, _weights(p), t, b_max, refine=False).total_power
        a = baseline_uniform_power(ch, budget, t, b_max)
    elif kind == "uniform_bits":
        a = baseline_uniform_bits(ch, p["moop.uniform_bits"], t)
    else:
        if not math.isfinite(cap):
            raise ConfigError("allocator = bisect_alpha needs a finite moop.p_cap")
        w = _weights(p)
        _, a = bisect_alpha(ch, t, b_max, cap, p["moop.alpha"], u_power=w.u_power, u_bits=w.u_bits)
    if kind != "uniform_bits":
        _check_cap(a.total_power, cap, "total power")
    _check_ber(a, ch, t)
    return {"avg_throughput_bits": a.total_bits, "avg_power_w": a.total_power}


def cr_instance(p: dict, rng: np.random.Generator):
    """One cognitive-radio trial: ``(channel, targets, true s_m, true s_l, caps)``."""
    ch = _su_channel(p, rng)
    t = BerTargets.uniform(p["moop.ber_th"], ch.n)
    s_m, s_l = _sample_sensing(p, rng)
    caps = build_caps(
        p["moop.p_cap"],
        [_band(p)],
        _co_channel(p),
        _nudged(_assumed(p, s_m)),
        [_nudged(_assumed(p, s_l))],
        _path_loss(p),
        _ofdm(p),
        leakage=_leakage(p)[None, :],
    )
    return ch, t, s_m, s_l, caps


def _trial_cr(p: dict, rng: np.random.Generator) -> dict:
    ch, t, _, _, caps = cr_instance(p, rng)
    a = allocate_cr(ch, _weights(p), t, p["moop.b_max"], caps, refine=p["experiment.refine"])
    for row, cap in constraint_list(caps, ch.n):
        _check_cap(float(row @ a.power_w), cap, "CR cap")
    _check_ber(a, ch, t)
    return {"avg_throughput_bits": a.total_bits, "avg_power_w": a.total_power}


def _trial_violation(p: dict, rng: np.random.Generator) -> dict:
    ch, t, s_m, s_l, caps = cr_instance(p, rng)
    a = allocate_cr(ch, _weights(p), t, p["moop.b_max"], caps, refine=p["experiment.refine"])
    for row, cap in constraint_list(caps, ch.n):
        _check_cap(float(row @ a.power_w), cap, "CR cap")
    beta = np.array([_posteriors(s_m)[0], _posteriors(s_l)[1]])
    loss = np.array([_gain(p, p["pu.d_m"]), _gain(p, p["pu.d_l"])])
    thr = np.array([p["pu.p_th_m"], p["pu.p_th_l"]])
    leak = _leakage(p)[None, :]
    g = rng.exponential(p["pu.avg_gain"], 2)
    hit = measure_violation(a, g, loss, thr, leak, beta)
    usage = np.array([a.total_power, float(leak[0] @ a.power_w)])
    expected = beta * p["pu.avg_gain"] * loss * usage > thr * (1.0 + CAP_RTOL)
    return {
        "avg_throughput_bits": a.total_bits,
        "avg_power_w": a.total_power,
        "violation_ratio_cci": float(hit[0]),
        "violation_ratio_aci": float(hit[1]),
        "expected_violation_cci": float(expected[0]),
        "expected_violation_aci": float(expected[1]),
    }


def _trial_ri(p: dict, rng: np.random.Generator) -> dict:
    ch = _su_channel(p, rng)
    mode = p["ri.mode"]
    pl = _path_loss(p)
    nu = 1.0 / p["pu.avg_gain"]
    g_true = rng.exponential(p["pu.avg_gain"], 2)
    x = [
        knowledge_coeff(mode, path_loss_db(d, pl), nu, p["pu.psi_th"], gain=g)
        for d, g in ((p["pu.d_m"], g_true[0]), (p["pu.d_l"], g_true[1]))
    ]
    k = KnowledgeCoeff(x[0], (x[1],), mode)
    caps = interference_caps(k, p["pu.p_th_m"], (p["pu.p_th_l"],))
    leak = _leakage(p)[None, :]
    spacing = p["channel.spacing_hz"]
    w = TriWeights.from_thresholds(p["ri.w_rate"], p["ri.w_cci"], (p["ri.w_aci"],), p["pu.p_th_m"], (p["pu.p_th_l"],))
    r_max = max_achievable_rate(ch, caps, spacing, leak)
    w = w.with_u_rate(1.0 / r_max if math.isfinite(r_max) and r_max > 0 else 1.0 / (ch.n * spacing))
    a = allocate_rate_interference(ch, w, k, caps, spacing, leak)
    _check_cap(float(a.power_w.sum()), caps[0], "CCI cap")
    _check_cap(float(leak[0] @ a.power_w), caps[1][0], "ACI cap")
    total = float(a.power_w.sum())
    return {
        "avg_rate_bps": a.rate_bps,
        "avg_power_w": total,
        # unit amplifier, no circuit power; a silent link scores zero
        "bits_per_joule": a.rate_bps / total if total > 0 else 0.0,
        "avg_iterations": float(a.multipliers.iterations),
    }


def ee_instance(p: dict, rng: np.random.Generator):
    """One energy-efficiency trial.

    Returns
    -------
    tuple
        ``(channel, caps, cfg, sensing)`` where ``sensing`` holds the true
        co-channel and adjacent sensing models.
    """
    n = p["channel.n_subcarriers"]
    g_su = _gain(p, p["channel.su_distance_m"])
    order = p["ee.channel_order"]
    avg = p["channel.avg_gain"]
    est_cfg = EstimationConfig(order, avg / (order + 1), p["ee.pilot_power_w"], g_su)
    est_var = mmse_estimation_variance(est_cfg, p["channel.noise_var"])
    est = rng.exponential(max(avg - est_var, 1e-300), n)
    ch = UncertainChannel(est, est_var, g_su, p["channel.noise_var"], p["channel.interference_w"], p["channel.spacing_hz"])
    s_m, s_l = _sample_sensing(p, rng)
    beta_ov, _ = _posteriors(_assumed(p, s_m))
    _, beta_oo = _posteriors(_assumed(p, s_l))
    nu = 1.0 / p["pu.avg_gain"]
    leak = _leakage(p)[None, :]
    caps = build_ee_caps(
        p["ee.p_th"],
        beta_ov,
        _gain(p, p["pu.d_m"]),
        p["pu.p_th_m"],
        nu,
        p["pu.psi_th"],
        [beta_oo],
        [_gain(p, p["pu.d_l"])],
        [p["pu.p_th_l"]],
        leak,
    )
    cfg = EeConfig(p["ee.kappa"], p["ee.circuit_power_w"], p["ee.rate_floor"], p["ee.tol"])
    return ch, caps, cfg, (s_m, s_l)


def _trial_ee(p: dict, rng: np.random.Generator) -> dict:
    ch, caps, cfg, _ = ee_instance(p, rng)
    r = dinkelbach_solve(ch, caps, cfg)
    _check_cap(float(r.power_w.sum()), caps.power_cap_w, "total power / CCI cap")
    for row, cap in zip(caps.leakage, caps.aci_caps_w):
        _check_cap(float(row @ r.power_w), cap, "ACI cap")
    if r.rate_bps < cfg.rate_floor * (1.0 - CAP_RTOL):
        raise AssertionError("rate floor missed")
    return {
        "ee_j_per_bit": r.q_star,
        "avg_rate_bps": r.rate_bps,
        "avg_power_w": float(r.power_w.sum()),
        "avg_iterations": float(r.iterations),
    }


def _ga_config(p: dict) -> GaConfig:
    return GaConfig(
        population=p["ga.population"],
        max_generations=p["ga.max_generations"],
        elite_count=p["ga.elite_count"],
        crossover_fraction=p["ga.crossover_fraction"],
        seed_closed_form=p["ga.seed_closed_form"],
    )


def _trial_ga(p: dict, rng: np.random.Generator) -> dict:
    cap = p["moop.p_cap"]
    if not math.isfinite(cap):
        raise ConfigError("ga_compare needs a finite moop.p_cap")
    ch = _su_channel(p, rng)
    w = _weights(p)
    b_max = p["moop.b_max"]
    t = BerTargets.uniform(p["moop.ber_th"], ch.n)
    res = evolve(Op1Problem(ch, w, p["moop.ber_th"], cap, b_max), _ga_config(p), rng)
    best = res.best
    if not best.feasible:
        raise InfeasibleError("GA found no feasible individual")
    _check_cap(float(best.power.sum()), cap, "total power")
    if ch.n <= 8:
        ref = exhaustive_search(ch, w, t, b_max, [(np.ones(ch.n), cap)]).objective
    else:
        ref = solve_discrete(ch, w, t, b_max, cap).objective
    gap = (best.objective - ref) / abs(ref) if ref != 0 else 0.0
    return {
        "avg_throughput_bits": float(best.bits.sum()),
        "avg_power_w": float(best.power.sum()),
        "avg_iterations": float(res.generations),
        "objective_gap_vs_oracle": gap,
        "max_objective_gap": gap,
    }


def _trial_oracle(p: dict, rng: np.random.Generator) -> dict:
    w = _weights(p)
    b_max = p["moop.b_max"]
    if p["experiment.problem"] == "cr":
        ch, t, _, _, caps = cr_instance(p, rng)
        a = allocate_cr(ch, w, t, b_max, caps, refine=p["experiment.refine"])
        cons = constraint_list(caps, ch.n)
    else:
        ch = _su_channel(p, rng)
        t = BerTargets.uniform(p["moop.ber_th"], ch.n)
        cap = p["moop.p_cap"]
        a = solve_discrete(ch, w, t, b_max, cap, refine=p["experiment.refine"])
        cons = [(np.ones(ch.n), cap)] if math.isfinite(cap) else []
    ref = exhaustive_search(ch, w, t, b_max, cons).objective
    gap = (a.objective - ref) / abs(ref) if ref != 0 else 0.0
    return {
        "avg_throughput_bits": a.total_bits,
        "avg_power_w": a.total_power,
        "objective_gap_vs_oracle": gap,
        "max_objective_gap": gap,
    }


TRIALS = {
    "moop_sweep": _trial_moop,
    "cr_sweep": _trial_cr,
    "violation_ratio": _trial_violation,
    "rate_interference_sweep": _trial_ri,
    "ee_sweep": _trial_ee,
    "ga_compare": _trial_ga,
    "oracle_compare": _trial_oracle,
}

# Metrics aggregated by maximum rather than mean.
_MAX_METRICS = {"max_objective_gap"}


def run_trial(p: dict, point: int, trial: int) -> dict | None:
    """Metrics of one trial, or ``None`` when the allocator reports infeasibility."""
    rng = trial_rng(p["experiment.seed"], trial)
    try:
        return TRIALS[p["experiment.kind"]](p, rng)
    except INFEASIBLE:
        return None
    except SearchSpaceError as exc:
        raise ConfigError(str(exc)) from None


def _run_chunk(args) -> list:
    p, point, start, stop = args
    return [run_trial(p, point, i) for i in range(start, stop)]


def _aggregate(value, params: dict, results: Sequence[dict | None]) -> MetricRecord:
    n = len(results)
    ok = [r for r in results if r is not None]
    rec = MetricRecord(sweep_value=value, trials=n, infeasible_fraction=(n - len(ok)) / n)
    if ok:
        for key in ok[0]:
            vals = [r[key] for r in ok]
            setattr(rec, key, max(vals) if key in _MAX_METRICS else math.fsum(vals) / len(vals))
    return rec


def run_experiment(cfg: ExperimentConfig | dict, workers: int = 1) -> list[MetricRecord]:
    """Run every grid point and return one record per point.

    Trials are split into contiguous chunks for the workers.  Trial ``i`` always
    uses substream ``(seed, i)``, so the same channels are seen at every grid
    point and the records do not depend on ``workers``.
    """
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_params(cfg)
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    trials = cfg.trials
    if trials < 1:
        raise ConfigError("experiment.trials must be >= 1")
    out = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for point, (value, params) in enumerate(cfg.points()):
            if pool is None:
                results = [run_trial(params, point, i) for i in range(trials)]
            else:
                step = max(1, math.ceil(trials / (4 * workers)))
                chunks = [(params, point, s, min(s + step, trials)) for s in range(0, trials, step)]
                results = [r for part in pool.map(_run_chunk, chunks) for r in part]
            out.append(_aggregate(value, params, results))
    finally:
        if pool is not None:
            pool.shutdown()
    return out


def records_to_csv(records: Sequence[MetricRecord], params: dict | None = None) -> str:
    """CSV text: config echo as ``#`` lines, one header row, one row per record.

    Columns are the fields present in at least one record; floats carry 12
    significant digits.
    """
    buf = io.StringIO()
    if params is not None:
        for line in echo_lines(params):
            buf.write(f"# {line}\n")
    names = [f.name for f in fields(MetricRecord)]
    cols = [c for c in names if any(getattr(r, c) is not None for r in records)]
    writer = csv.writer(buf, lineterminator="\n")
    header = list(cols)
    if params is not None and params.get("experiment.sweep"):
        header[0] = params["experiment.sweep"]
    writer.writerow(header)
    for r in records:
        writer.writerow([_fmt(getattr(r, c)) for c in cols])
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)
