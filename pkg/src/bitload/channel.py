"""Propagation, fading, sensing and spectral-leakage models.

Everything here is a pure function of its inputs.  Channel realizations are
frozen dataclasses holding read-only numpy arrays so they can be shared
between trial workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "OfdmConfig",
    "PathLossModel",
    "ChannelRealization",
    "SensingModel",
    "PuBand",
    "EstimationConfig",
    "db_to_linear",
    "linear_to_db",
    "path_loss_db",
    "trial_rng",
    "sample_rayleigh_channel",
    "sensing_posteriors",
    "leakage_factor",
    "leakage_vector",
    "adjacent_band_offsets",
    "mmse_estimation_variance",
]


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    arr.setflags(write=False)
    if np.any(~np.isfinite(arr)) and name != "interference_w":
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class OfdmConfig:
    n_subcarriers: int
    subcarrier_spacing_hz: float
    symbol_duration_s: float | None = None

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if not self.subcarrier_spacing_hz > 0:
            raise ValueError("subcarrier_spacing_hz must be > 0")
        if self.symbol_duration_s is None:
            object.__setattr__(self, "symbol_duration_s", 1.0 / self.subcarrier_spacing_hz)
        if not self.symbol_duration_s > 0:
            raise ValueError("symbol_duration_s must be > 0")


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance path loss with a free-space intercept at the reference distance."""

    reference_distance_m: float = 100.0
    exponent: float = 4.0
    wavelength_m: float = 3e8 / 900e6

    def __post_init__(self):
        for name in ("reference_distance_m", "exponent", "wavelength_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class ChannelRealization:
    """One Monte Carlo draw of the SU link.

    ``cnr`` is always derived from the other fields, never passed in.
    """

    gains: np.ndarray
    noise_var_w: float
    interference_w: np.ndarray = field(default=None)
    cnr: np.ndarray = field(init=False)

    def __post_init__(self):
        gains = _frozen(self.gains, "gains")
        if np.any(gains < 0):
            raise ValueError("gains must be nonnegative")
        if not self.noise_var_w > 0:
            raise ValueError("noise_var_w must be > 0")
        if self.interference_w is None:
            interf = np.zeros_like(gains)
        else:
            interf = np.broadcast_to(np.asarray(self.interference_w, dtype=float), gains.shape)
        interf = _frozen(interf, "interference_w")
        if np.any(interf < 0):
            raise ValueError("interference_w must be nonnegative")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "interference_w", interf)
        cnr = gains / (self.noise_var_w + interf)
        cnr.setflags(write=False)
        object.__setattr__(self, "cnr", cnr)

    @property
    def n(self) -> int:
        return self.gains.size

    @classmethod
    def from_cnr(cls, cnr: Sequence[float]) -> "ChannelRealization":
        """Unit-noise realization whose CNR equals ``cnr``; handy for tests and the CLI."""
        return cls(gains=np.asarray(cnr, dtype=float), noise_var_w=1.0)


@dataclass(frozen=True)
class SensingModel:
    p_md: float = 0.0
    p_fa: float = 0.0
    p_active: float = 0.5

    def __post_init__(self):
        for name in ("p_md", "p_fa", "p_active"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def perfect(cls, p_active: float = 0.5) -> "SensingModel":
        return cls(0.0, 0.0, p_active)


@dataclass(frozen=True)
class PuBand:
    """A primary-user band as seen from the SU transmitter.

    ``spectral_offsets_hz[i]`` is the distance between SU subcarrier ``i`` and
    the band centre.  For the co-channel PU the offsets are unused.
    """

    bandwidth_hz: float
    spectral_offsets_hz: tuple[float, ...] = ()
    distance_m: float = 1000.0
    interference_threshold_w: float = 1e-14
    fading_margin_db: float = 0.0
    exp_mean_inv: float = 1.0
    confidence: float = 0.9

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be > 0")
        if not self.interference_threshold_w > 0:
            raise ValueError("interference_threshold_w must be > 0")
        if not 0.0 <= self.confidence < 1.0:
            raise ValueError("confidence must lie in [0, 1)")
        if not self.exp_mean_inv > 0:
            raise ValueError("exp_mean_inv must be > 0")
        object.__setattr__(self, "spectral_offsets_hz", tuple(float(f) for f in self.spectral_offsets_hz))


@dataclass(frozen=True)
class EstimationConfig:
    channel_order: int = 5
    tap_var: float = 1.0
    pilot_power_w: float = 1.0
    path_loss_lin: float = 1.0

    def __post_init__(self):
        if self.channel_order < 0:
            raise ValueError("channel_order must be >= 0")
        for name in ("tap_var", "pilot_power_w", "path_loss_lin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


def path_loss_db(d: float, model: PathLossModel) -> float:
    if not d >= model.reference_distance_m:
        raise ValueError(f"distance {d} m is below the reference distance {model.reference_distance_m} m")
    d0 = model.reference_distance_m
    free_space = 20.0 * math.log10(4.0 * math.pi * d0 / model.wavelength_m)
    return free_space + 10.0 * model.exponent * math.log10(d / d0)


def trial_rng(master_seed: int, trial_index: int, *stream: int) -> np.random.Generator:
    """Independent generator for one trial; identical regardless of scheduling order."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial_index), *map(int, stream)]))


def sample_rayleigh_channel(
    cfg: OfdmConfig,
    avg_gain: float,
    noise_var: float,
    interference=0.0,
    rng: np.random.Generator | None = None,
) -> ChannelRealization:
    if not avg_gain > 0:
        raise ValueError("avg_gain must be > 0")
    if rng is None:
        rng = np.random.default_rng()
    gains = rng.exponential(avg_gain, size=cfg.n_subcarriers)
    return ChannelRealization(gains=gains, noise_var_w=noise_var, interference_w=interference)


def sensing_posteriors(s: SensingModel) -> tuple[float, float]:
    """Posterior occupancy probabilities (vacant-declared, occupied-declared)."""
    rho = s.p_active
    num_ov = s.p_md * rho
    den_ov = num_ov + (1.0 - s.p_fa) * (1.0 - rho)
    num_oo = (1.0 - s.p_md) * rho
    den_oo = num_oo + s.p_fa * (1.0 - rho)
    if den_ov <= 0.0 or den_oo <= 0.0:
        raise ValueError(f"sensing posterior undefined for {s}")
    return num_ov / den_ov, num_oo / den_oo


def _sinc2_antiderivative(x: float) -> float:
    """``F(x) = Si(2 pi x)/pi - sin(pi x)^2 / (pi^2 x)``, with ``F(0) = 0``."""
    if x == 0.0:
        return 0.0
    si, _ = special.sici(2.0 * math.pi * x)
    return float(si) / math.pi - math.sin(math.pi * x) ** 2 / (math.pi**2 * x)


def _sinc2_integral(x0: float, x1: float) -> float:
    """Integral of sinc^2 over [x0, x1] for moderate finite bounds."""
    if x1 <= x0:
        return 0.0
    return _sinc2_antiderivative(x1) - _sinc2_antiderivative(x0)


# Past this point the antiderivative difference cancels too many digits, so the
# integrand is split into a closed-form 1/x^2 envelope and a cosine-weighted remainder.
_TAIL_START = 64.0
# Finite tail pieces longer than this are taken as a difference of half lines.
_LONG_TAIL = 1e4


def _tail_integral(a: float, b: float) -> float:
    """Integral of sinc^2 over [a, b] with ``_TAIL_START <= a < b <= inf``.

    Uses ``sin(pi x)^2 = (1 - cos(2 pi x)) / 2``; the cosine part goes to
    QUADPACK's Fourier-weighted rules, which handle the oscillation and the
    infinite endpoint.
    """
    if math.isfinite(b) and b - a > _LONG_TAIL:
        return _tail_integral(a, math.inf) - _tail_integral(b, math.inf)
    k = 1.0 / (2.0 * math.pi**2)
    inv_b = 0.0 if math.isinf(b) else 1.0 / b
    envelope = k * (1.0 / a - inv_b)
    if math.isinf(b):
        osc, _ = integrate.quad(lambda x: 1.0 / (x * x), a, math.inf, weight="cos", wvar=2.0 * math.pi, epsabs=1e-14)
    else:
        osc, _ = integrate.quad(
            lambda x: 1.0 / (x * x), a, b, weight="cos", wvar=2.0 * math.pi, epsabs=1e-16, epsrel=1e-11, limit=200
        )
    return envelope - k * osc


def _positive_integral(lo: float, hi: float) -> float:
    """Integral over [lo, hi] with ``0 <= lo < hi <= inf``."""
    core_hi = min(hi, _TAIL_START)
    out = _sinc2_integral(lo, core_hi) if lo < core_hi else 0.0
    tail_lo = max(lo, _TAIL_START)
    if hi > tail_lo:
        out += _tail_integral(tail_lo, hi)
    return out


def sinc2_band_integral(lo: float, hi: float) -> float:
    """Integral of sinc^2 over [lo, hi] in units of 1/T_s; bounds may be infinite."""
    if math.isnan(lo) or math.isnan(hi):
        raise ValueError("integration bounds must not be NaN")
    if hi <= lo:
        return 0.0
    if math.isinf(lo) and math.isinf(hi):
        return 1.0
    # sinc^2 is even, so negative parts are folded onto the positive axis.
    out = 0.0
    if hi > 0.0:
        out += _positive_integral(max(lo, 0.0), hi)
    if lo < 0.0:
        out += _positive_integral(max(-hi, 0.0), -lo)
    return out


def leakage_factor(cfg: OfdmConfig, band: PuBand, i: int) -> float:
    """Fraction of subcarrier ``i``'s spectrum that lands inside ``band``."""
    try:
        f = band.spectral_offsets_hz[i]
    except IndexError:
        raise ValueError(f"band has no spectral offset for subcarrier {i}") from None
    ts = cfg.symbol_duration_s
    lo, hi = ts * (f - band.bandwidth_hz / 2.0), ts * (f + band.bandwidth_hz / 2.0)
    if not (math.isfinite(lo) or math.isfinite(hi)) and not (math.isinf(lo) and math.isinf(hi)):
        raise ValueError("non-finite integration bounds")
    value = sinc2_band_integral(lo, hi)
    return min(max(value, 0.0), 1.0)


def leakage_vector(cfg: OfdmConfig, band: PuBand) -> np.ndarray:
    return np.array([leakage_factor(cfg, band, i) for i in range(cfg.n_subcarriers)])


def adjacent_band_offsets(cfg: OfdmConfig, bandwidth_hz: float, guard_hz: float = 0.0) -> tuple[float, ...]:
    """Offsets from each SU subcarrier to a PU band sitting just above the SU band."""
    n, df = cfg.n_subcarriers, cfg.subcarrier_spacing_hz
    centre = n * df + guard_hz + bandwidth_hz / 2.0
    return tuple(centre - (i + 0.5) * df for i in range(n))


def mmse_estimation_variance(cfg: EstimationConfig, noise_var: float) -> float:
    if not noise_var > 0:
        raise ValueError("noise_var must be > 0")
    num = (cfg.channel_order + 1) * cfg.tap_var * noise_var
    return num / (noise_var + cfg.tap_var * cfg.path_loss_lin * cfg.pilot_power_w)
