"""Quick randomized invariant checks that ship with the package.

The full test suite lives in ``tests/``; this module covers the core
invariants in a few seconds so an installed copy can be sanity-checked
without the test dependencies.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .bitpower import BerTargets, MoopWeights, allocate_relaxed, ber_mqam, snr_gap, solve_discrete
from .channel import ChannelRealization, OfdmConfig, PuBand, adjacent_band_offsets, leakage_vector
from .cr import CrCaps, allocate_cr, constraint_list
from .ee import EeCaps, EeConfig, UncertainChannel, dinkelbach_solve
from .oracle import exhaustive_search

__all__ = ["CHECKS", "run_selftest"]


def _active_ber(rng) -> None:
    n = 16
    ch = ChannelRealization.from_cnr(rng.exponential(100.0, n))
    t = BerTargets.uniform(1e-4, n)
    a = solve_discrete(ch, MoopWeights(0.5), t, 6, p_cap=0.5 * allocate_relaxed(ch, MoopWeights(0.5), t, 6).total_power)
    on = a.bits > 0
    ber = ber_mqam(a.power_w[on], a.bits[on], ch.cnr[on])
    assert np.allclose(ber, 1e-4, rtol=1e-9, atol=0.0), "loaded subcarriers must sit exactly on the BER target"


def _snr_gap(rng) -> None:
    assert abs(10.0 * math.log10(snr_gap(1e-4)) - 6.77) < 0.01


def _cr_caps(rng) -> None:
    n = 8
    cfg = OfdmConfig(n, 1.0)
    leak = leakage_vector(cfg, PuBand(n * 1.0, adjacent_band_offsets(cfg, n * 1.0)))
    ch = ChannelRealization.from_cnr(rng.exponential(100.0, n))
    t = BerTargets.uniform(1e-4, n)
    w = MoopWeights(0.5)
    free = allocate_relaxed(ch, w, t, 6).power_w
    caps = CrCaps(0.6 * free.sum(), (0.4 * float(leak @ free),), leak[None, :])
    a = allocate_cr(ch, w, t, 6, caps)
    for row, cap in constraint_list(caps, n):
        assert float(row @ a.power_w) <= cap * (1 + 1e-12)


def _oracle_gap(rng) -> None:
    n = 4
    ch = ChannelRealization.from_cnr(rng.exponential(100.0, n))
    t = BerTargets.uniform(1e-4, n)
    w = MoopWeights(0.5)
    cap = 0.5 * allocate_relaxed(ch, w, t, 6).total_power
    a = solve_discrete(ch, w, t, 6, cap)
    o = exhaustive_search(ch, w, t, 6, [(np.ones(n), cap)])
    assert a.objective <= o.objective + 0.05 * abs(o.objective)


def _dinkelbach(rng) -> None:
    n = 16
    ch = UncertainChannel(rng.exponential(1.0, n), 1e-3, 1e-11, 1e-15, spacing=1e4)
    r = dinkelbach_solve(ch, EeCaps(2.0), EeConfig())
    assert abs(r.phi_history[-1]) <= 1e-8
    assert all(b <= a * (1 + 1e-12) for a, b in zip(r.q_history[1:], r.q_history[2:]))


CHECKS: dict[str, Callable] = {
    "snr_gap": _snr_gap,
    "active_ber": _active_ber,
    "cr_caps": _cr_caps,
    "oracle_gap": _oracle_gap,
    "dinkelbach": _dinkelbach,
}


def run_selftest(repeats: int = 20, seed: int = 0, out=print) -> bool:
    """Run every check ``repeats`` times; print one line per check and return overall success."""
    ok_all = True
    for name, check in CHECKS.items():
        rng = np.random.default_rng(seed)
        try:
            for _ in range(repeats):
                check(rng)
            out(f"PASS {name}")
        except AssertionError as exc:
            ok_all = False
            out(f"FAIL {name}: {exc}")
    return ok_all
