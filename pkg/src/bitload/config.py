"""Flat ``section.key = value`` experiment configuration.

Keys carry SI values.  A key that names a linear quantity may instead be given
in decibels by appending ``_db`` (``channel.avg_cnr_db = 50``).  Unknown keys
and missing required keys are errors, and every key has a declared type so
the resolved configuration can be echoed and parsed back unchanged.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Any, Callable

__all__ = [
    "ConfigError",
    "EXPERIMENT_KINDS",
    "SCHEMA",
    "REQUIRED",
    "parse_config",
    "load_config",
    "resolve",
    "format_value",
    "echo_lines",
]

EXPERIMENT_KINDS = (
    "moop_sweep",
    "cr_sweep",
    "rate_interference_sweep",
    "ee_sweep",
    "ga_compare",
    "oracle_compare",
    "violation_ratio",
)


class ConfigError(ValueError):
    """Malformed, unknown, missing or out-of-range configuration entry."""


REQUIRED = object()


@dataclass(frozen=True)
class Param:
    parse: Callable[[str], Any]
    default: Any
    doc: str = ""
    db_ok: bool = False


def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    v = float(s)
    if not v.is_integer():
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _str(s: str) -> str:
    return s.strip()


def _list(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"{v!r} is not one of {', '.join(options)}")
        return v

    return parse


SCHEMA: dict[str, Param] = {
    # run control
    "experiment.kind": Param(_choice(*EXPERIMENT_KINDS), REQUIRED, "experiment type"),
    "experiment.trials": Param(_int, 10000, "channel realizations per grid point"),
    "experiment.seed": Param(_int, 0, "master seed"),
    "experiment.sweep": Param(_str, "", "key varied across the grid (empty for a single point)"),
    "experiment.grid": Param(_list, (), "comma-separated values of the swept key"),
    "experiment.allocator": Param(
        _choice("proposed", "uniform_power", "uniform_bits", "bisect_alpha"), "proposed", "moop_sweep allocator"
    ),
    "experiment.problem": Param(_choice("moop", "cr"), "moop", "oracle_compare instance type"),
    "experiment.refine": Param(_bool, True, "price sweep and local search after rounding"),
    # SU link
    "channel.n_subcarriers": Param(_int, 32),
    "channel.spacing_hz": Param(_float, 9765.625),
    "channel.model": Param(_choice("cnr", "path_loss"), "cnr", "exponential CNR or path loss + Rayleigh"),
    "channel.avg_cnr": Param(_float, 1e6, "mean CNR per watt for model = cnr", db_ok=True),
    "channel.su_distance_m": Param(_float, 1000.0),
    "channel.avg_gain": Param(_float, 1.0, "mean Rayleigh power gain", db_ok=True),
    "channel.noise_var": Param(_float, 1e-16, "noise variance in W", db_ok=True),
    "channel.interference_w": Param(_float, 0.0, "PU interference at the SU receiver per subcarrier", db_ok=True),
    "pathloss.reference_m": Param(_float, 100.0),
    "pathloss.exponent": Param(_float, 4.0),
    "pathloss.wavelength_m": Param(_float, 3e8 / 900e6),
    # bit and power loading
    "moop.alpha": Param(_float, 0.5),
    "moop.u_power": Param(_float, 1.0),
    "moop.u_bits": Param(_float, 1.0),
    "moop.normalize": Param(_choice("fixed", "caps"), "fixed", "caps: u_power = p_cap, u_bits = N*b_max"),
    "moop.ber_th": Param(_float, 1e-4),
    "moop.b_max": Param(_int, 6),
    "moop.p_cap": Param(_float, math.inf, "SU total power limit in W", db_ok=True),
    "moop.uniform_bits": Param(_int, 4, "bits per subcarrier for allocator = uniform_bits"),
    # primary users
    "pu.d_m": Param(_float, 1000.0, "distance to the co-channel PU receiver"),
    "pu.d_l": Param(_float, 1500.0, "distance to the adjacent PU receiver"),
    "pu.p_th_m": Param(_float, 1e-16, "CCI threshold in W", db_ok=True),
    "pu.p_th_l": Param(_float, 1e-16, "ACI threshold in W", db_ok=True),
    "pu.fading_margin_db": Param(_float, 0.0),
    "pu.bandwidth_hz": Param(_float, 0.0, "adjacent band width (0: same as the SU band)"),
    "pu.guard_hz": Param(_float, 0.0),
    "pu.avg_gain": Param(_float, 1.0, "mean fading power toward the PU receivers", db_ok=True),
    "pu.psi_th": Param(_float, 0.9, "confidence of the statistical caps"),
    "sensing.model": Param(_choice("imperfect", "perfect"), "imperfect", "what the allocator assumes"),
    "sensing.p_md_lo": Param(_float, 0.01),
    "sensing.p_md_hi": Param(_float, 0.05),
    "sensing.p_fa_lo": Param(_float, 0.01),
    "sensing.p_fa_hi": Param(_float, 0.2),
    "sensing.p_active_lo": Param(_float, 0.0),
    "sensing.p_active_hi": Param(_float, 1.0),
    # rate versus interference
    "ri.w_rate": Param(_float, 0.5),
    "ri.w_cci": Param(_float, 0.5),
    "ri.w_aci": Param(_float, 0.0),
    "ri.mode": Param(_choice("path_loss", "statistical", "full_csi"), "statistical"),
    # energy efficiency
    "ee.kappa": Param(_float, 7.8),
    "ee.circuit_power_w": Param(_float, 2.0),
    "ee.p_th": Param(_float, 2.0, "SU total power limit in W"),
    "ee.rate_floor": Param(_float, 0.0, "minimum rate in bits/s"),
    "ee.tol": Param(_float, 1e-8),
    "ee.channel_order": Param(_int, 5),
    "ee.pilot_power_w": Param(_float, 1.0),
    # genetic algorithm
    "ga.population": Param(_int, 100),
    "ga.max_generations": Param(_int, 1500),
    "ga.elite_count": Param(_int, 5),
    "ga.crossover_fraction": Param(_float, 0.8),
    "ga.seed_closed_form": Param(_bool, False),
}


def _lookup(key: str) -> tuple[str, bool]:
    """Schema key for ``key`` and whether the value was given in dB."""
    if key in SCHEMA:
        return key, False
    if key.endswith("_db") and key[:-3] in SCHEMA and SCHEMA[key[:-3]].db_ok:
        return key[:-3], True
    raise ConfigError(f"unknown key: {key}")


def _convert(key: str, raw: str) -> Any:
    name, in_db = _lookup(key)
    try:
        value = SCHEMA[name].parse(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None
    if in_db:
        value = 10.0 ** (value / 10.0)
    return name, value


def resolve(entries: dict[str, str]) -> dict[str, Any]:
    """Typed configuration with defaults filled in.

    Raises
    ------
    ConfigError
        For unknown keys, duplicate keys (linear and dB forms), bad values,
        missing required keys and failed range checks.
    """
    out: dict[str, Any] = {}
    for key, raw in entries.items():
        name, value = _convert(key, raw)
        if name in out:
            raise ConfigError(f"{name} given twice")
        out[name] = value
    for name, p in SCHEMA.items():
        if name not in out:
            if p.default is REQUIRED:
                raise ConfigError(f"missing required key: {name}")
            out[name] = p.default
    sweep = out["experiment.sweep"]
    if sweep:
        target, _ = _lookup(sweep)
        if target.startswith("experiment."):
            raise ConfigError(f"cannot sweep {sweep}")
        if not out["experiment.grid"]:
            raise ConfigError("experiment.grid must be nonempty when experiment.sweep is set")
        for raw in out["experiment.grid"]:
            _convert(sweep, raw)
    elif out["experiment.grid"]:
        raise ConfigError("experiment.grid given without experiment.sweep")
    _check(out)
    return out


def _check(cfg: dict[str, Any]) -> None:
    if cfg["experiment.trials"] < 1:
        raise ConfigError("experiment.trials must be >= 1")
    if cfg["channel.n_subcarriers"] < 1:
        raise ConfigError("channel.n_subcarriers must be >= 1")
    if not 0.0 <= cfg["moop.alpha"] <= 1.0:
        raise ConfigError("moop.alpha must lie in [0, 1]")
    if not 0.0 < cfg["moop.ber_th"] < 0.2:
        raise ConfigError("moop.ber_th must lie in (0, 0.2)")
    if cfg["moop.b_max"] < 2:
        raise ConfigError("moop.b_max must be >= 2")
    for name in ("channel.noise_var", "channel.spacing_hz", "channel.avg_cnr", "channel.avg_gain"):
        if not cfg[name] > 0:
            raise ConfigError(f"{name} must be > 0")
    for lo, hi in (("p_md_lo", "p_md_hi"), ("p_fa_lo", "p_fa_hi"), ("p_active_lo", "p_active_hi")):
        a, b = cfg["sensing." + lo], cfg["sensing." + hi]
        if not 0.0 <= a <= b <= 1.0:
            raise ConfigError(f"sensing.{lo} and sensing.{hi} must satisfy 0 <= lo <= hi <= 1")


def parse_config(text: str) -> dict[str, Any]:
    """Parse config text (``#`` or ``;`` comments) and resolve it."""
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",), interpolation=None
    )
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("[line  ", "[line ")) from None
    return resolve(dict(parser["config"]))


def load_config(path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_value(v: Any) -> str:
    """Text form that parses back to the same value."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(v)
    return str(v)


def echo_lines(cfg: dict[str, Any]) -> list[str]:
    return [f"{k} = {format_value(cfg[k])}" for k in sorted(cfg)]
