import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitload.bitpower import (
    LN2,
    Allocation,
    BerTargets,
    InfeasibleError,
    MoopWeights,
    allocate_power_capped,
    allocate_relaxed,
    analytic_averages,
    ber_mqam,
    best_discrete,
    bisect_alpha,
    exp_integral_ei,
    greedy_fill,
    moop_objective,
    power_from_bits,
    round_allocation,
    rounding_repair,
    snr_gap,
    solve_discrete,
)
from bitload.channel import ChannelRealization

from conftest import random_instance, tight_power_cap

# Frozen oracle values, mpmath at 30 digits.
GAP_1E4 = 4.7505640372138015
GAP_1E4_DB = 6.7674517672106641
BER_B2_G100_P01425 = 0.0001000902866881221
POWER_B4_G500 = 0.14251692111641404
BITS_G1000_HALF = 8.2464518419777612
CNR_TWO_BITS = 13.17136027385687
CNR_SIX_BITS = 210.74176438170993
EI_MINUS_1 = -0.21938393439552027368
EI_MINUS_001 = -4.037929576538113811
EI_MINUS_20 = -9.8355252906498816904e-11
# Mean bits and power of the unconstrained relaxed solution, integrated
# numerically against the exponential CNR density (mpmath quad).
AVG_MEAN100_HALF = (4.02890573275374826671903526394, 1.18971907335470534740300653956)
AVG_MEAN1000_W = (10.6353128802374787373035700638, 13.4177208691388975128158867167)


cnr_arrays = st.lists(st.floats(0.5, 5e3), min_size=2, max_size=12).map(np.array)


class TestBerModel:
    def test_snr_gap_value(self):
        assert snr_gap(1e-4) == pytest.approx(GAP_1E4, rel=1e-15)
        assert 10 * math.log10(snr_gap(1e-4)) == pytest.approx(GAP_1E4_DB, rel=1e-14)

    def test_snr_gap_matches_quoted_db(self):
        assert abs(10 * math.log10(snr_gap(1e-4)) - 6.77) < 0.01

    @pytest.mark.parametrize("ber", [0.0, 0.2, -1e-3, 0.5])
    def test_snr_gap_domain(self, ber):
        with pytest.raises(ValueError):
            snr_gap(ber)

    def test_ber_value(self):
        assert ber_mqam(0.1425, 2, 100.0) == pytest.approx(BER_B2_G100_P01425, rel=1e-14)

    def test_power_value(self):
        assert power_from_bits(4, 500.0, GAP_1E4) == pytest.approx(POWER_B4_G500, rel=1e-14)

    def test_ber_needs_bits(self):
        with pytest.raises(ValueError):
            ber_mqam(1.0, 0, 1.0)

    @given(b=st.integers(1, 12), g=st.floats(1e-3, 1e6), ber=st.floats(1e-9, 0.19))
    def test_power_inverts_ber(self, b, g, ber):
        p = power_from_bits(b, g, snr_gap(ber))
        assert ber_mqam(p, b, g) == pytest.approx(ber, rel=1e-9)

    def test_zero_bits_zero_power(self):
        assert power_from_bits(0, 0.0, GAP_1E4) == 0.0

    def test_bits_on_dead_subcarrier(self):
        with pytest.raises(InfeasibleError):
            power_from_bits(2, 0.0, GAP_1E4)

    def test_ber_decreases_with_power(self):
        p = np.linspace(0.0, 1.0, 50)
        assert np.all(np.diff(ber_mqam(p, 4, 100.0)) < 0)


class TestRelaxed:
    def test_bits_at_known_cnr(self):
        a = allocate_relaxed(ChannelRealization.from_cnr([1000.0]), MoopWeights(0.5), BerTargets.uniform(1e-4, 1))
        assert a.bits[0] == pytest.approx(BITS_G1000_HALF, rel=1e-14)

    def test_two_bit_threshold(self):
        t = BerTargets.uniform(1e-4, 2)
        ch = ChannelRealization.from_cnr([CNR_TWO_BITS * (1 - 1e-9), CNR_TWO_BITS * (1 + 1e-9)])
        a = allocate_relaxed(ch, MoopWeights(0.5), t, 6)
        assert a.bits[0] == 0 and a.power_w[0] == 0
        assert a.bits[1] == pytest.approx(2.0, rel=1e-8)

    def test_bmax_threshold(self):
        t = BerTargets.uniform(1e-4, 3)
        ch = ChannelRealization.from_cnr([CNR_SIX_BITS * 0.99, CNR_SIX_BITS * 1.01, 1e6])
        a = allocate_relaxed(ch, MoopWeights(0.5), t, 6)
        assert a.bits[0] < 6
        assert a.bits[1] == 6 and a.bits[2] == 6

    @given(cnr=cnr_arrays, alpha=st.floats(0.05, 0.95))
    def test_structure(self, cnr, alpha):
        ch = ChannelRealization.from_cnr(cnr)
        t = BerTargets.uniform(1e-4, ch.n)
        a = allocate_relaxed(ch, MoopWeights(alpha), t, 8)
        assert np.all((a.bits == 0) | ((a.bits >= 2) & (a.bits <= 8)))
        order = np.argsort(cnr)
        assert np.all(np.diff(a.bits[order]) >= -1e-12)
        on = a.bits > 0
        if on.any():
            assert np.allclose(ber_mqam(a.power_w[on], a.bits[on], cnr[on]), 1e-4, rtol=1e-9)

    @given(cnr=cnr_arrays, a1=st.floats(0.05, 0.95), a2=st.floats(0.05, 0.95))
    def test_alpha_monotone(self, cnr, a1, a2):
        lo, hi = sorted((a1, a2))
        ch = ChannelRealization.from_cnr(cnr)
        t = BerTargets.uniform(1e-4, ch.n)
        x, y = allocate_relaxed(ch, MoopWeights(lo), t, 10), allocate_relaxed(ch, MoopWeights(hi), t, 10)
        assert y.total_bits <= x.total_bits + 1e-9
        assert y.total_power <= x.total_power * (1 + 1e-12) + 1e-300

    def test_alpha_zero_needs_bmax(self):
        ch, t = random_instance(0, 4)
        with pytest.raises(ValueError):
            allocate_relaxed(ch, MoopWeights(0.0), t)
        assert np.all(allocate_relaxed(ch, MoopWeights(0.0), t, 6).bits == 6)

    def test_alpha_one_loads_nothing(self):
        ch, t = random_instance(0, 4)
        assert allocate_relaxed(ch, MoopWeights(1.0), t, 6).total_bits == 0

    def test_stationarity(self):
        # d/db of the objective vanishes on interior subcarriers.
        ch, t = random_instance(3, 16, 300.0)
        w = MoopWeights(0.4, 0.7, 2.0)
        a = allocate_relaxed(ch, w, t, 12)
        inner = (a.bits > 2) & (a.bits < 12)
        unit = t.snr_gap[inner] / ch.cnr[inner]
        grad = w.power_price * unit * np.exp2(a.bits[inner]) * LN2 - w.bit_value
        assert np.max(np.abs(grad)) < 1e-12


def _bisect_level(unit, top, cap):
    lo, hi = 0.0, float(np.max(top)) + cap
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if np.sum(np.clip(np.minimum(mid, top) - unit, 0, None)) > cap:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class TestPowerCapped:
    @pytest.mark.parametrize("seed", range(8))
    def test_cap_binds_and_level_matches_bisection(self, seed):
        ch, t = random_instance(seed, 12, 500.0)
        w = MoopWeights(0.3)
        cap = tight_power_cap(ch, t, w, 0.4, 8)
        a = allocate_power_capped(ch, w, t, 8, cap)
        assert a.total_power == pytest.approx(cap, rel=1e-10)
        on = a.bits > 0
        unit = t.snr_gap / ch.cnr
        level = _bisect_level(unit[on], unit[on] * 2.0**8, cap)
        assert a.diagnostics["water_level"] == pytest.approx(level, rel=1e-10)
        lam = a.diagnostics["multipliers"].lambda_power
        assert lam == pytest.approx(w.bit_value / (level * LN2) - w.power_price, rel=1e-9)
        assert lam > 0

    def test_slack_cap_returns_relaxed(self):
        ch, t = random_instance(1, 8)
        w = MoopWeights(0.5)
        free = allocate_relaxed(ch, w, t, 6)
        a = allocate_power_capped(ch, w, t, 6, 2 * free.total_power)
        assert np.array_equal(a.bits, free.bits)
        assert a.diagnostics["multipliers"].lambda_power == 0.0

    @given(seed=st.integers(0, 10**6), frac=st.floats(0.05, 0.99))
    def test_capped_never_exceeds(self, seed, frac):
        ch, t = random_instance(seed, 10)
        w = MoopWeights(0.5)
        cap = tight_power_cap(ch, t, w, frac)
        a = allocate_power_capped(ch, w, t, 6, cap)
        assert a.total_power <= cap * (1 + 1e-9)
        assert np.all((a.bits == 0) | (a.bits >= 2 - 1e-12))

    def test_bad_cap(self):
        ch, t = random_instance(0, 3)
        with pytest.raises(ValueError):
            allocate_power_capped(ch, MoopWeights(0.5), t, 6, 0.0)


class TestDiscrete:
    def test_rounding_nulls_below_two(self):
        ch = ChannelRealization.from_cnr([10.0, 100.0, 1000.0])
        t = BerTargets.uniform(1e-4, 3)
        relaxed = Allocation(np.array([1.4, 2.5, 6.6]), np.zeros(3), 0.0, relaxed=True)
        r = round_allocation(relaxed, ch, t, MoopWeights(0.5), 6)
        assert r.bits.tolist() == [0, 3, 6]
        assert np.allclose(r.power_w, power_from_bits(r.bits, ch.cnr, t.snr_gap))

    def test_repair_removes_largest_release_first(self):
        ch = ChannelRealization.from_cnr([100.0, 100.0])
        t = BerTargets.uniform(1e-4, 2)
        start = Allocation(np.array([4, 2]), np.zeros(2), 0.0)
        power = power_from_bits(np.array([3, 2]), ch.cnr, t.snr_gap)
        r = rounding_repair(start, ch, t, MoopWeights(0.5), [(1.0, power.sum())])
        assert r.bits.tolist() == [3, 2]
        assert r.diagnostics["repair_steps"] == 1

    def test_repair_two_to_zero(self):
        ch = ChannelRealization.from_cnr([100.0])
        t = BerTargets.uniform(1e-4, 1)
        r = rounding_repair(Allocation(np.array([2]), np.zeros(1), 0.0), ch, t, MoopWeights(0.5), [(1.0, 1e-9)])
        assert r.bits.tolist() == [0]

    def test_repair_negative_cap(self):
        ch, t = random_instance(0, 3)
        with pytest.raises(InfeasibleError):
            rounding_repair(Allocation(np.zeros(3, int), np.zeros(3), 0.0), ch, t, MoopWeights(0.5), [(1.0, -1.0)])

    @given(seed=st.integers(0, 10**6), frac=st.floats(0.01, 1.5), alpha=st.floats(0.05, 0.95))
    def test_solve_discrete_feasible_and_exact_ber(self, seed, frac, alpha):
        ch, t = random_instance(seed, 12)
        w = MoopWeights(alpha)
        cap = tight_power_cap(ch, t, w, frac)
        if cap <= 0:
            return
        a = solve_discrete(ch, w, t, 6, cap)
        assert a.total_power <= cap
        assert np.all(np.isin(a.bits, [0, 2, 3, 4, 5, 6]))
        on = a.bits > 0
        if on.any():
            assert np.allclose(ber_mqam(a.power_w[on], a.bits[on], ch.cnr[on]), 1e-4, rtol=1e-9, atol=0)
        assert a.objective == pytest.approx(moop_objective(a.bits, a.power_w, w), rel=1e-12, abs=1e-15)

    @given(seed=st.integers(0, 10**6), frac=st.floats(0.05, 0.95))
    def test_refinement_never_hurts(self, seed, frac):
        ch, t = random_instance(seed, 10)
        w = MoopWeights(0.5)
        cap = tight_power_cap(ch, t, w, frac)
        plain = solve_discrete(ch, w, t, 6, cap, refine=False)
        refined = solve_discrete(ch, w, t, 6, cap)
        assert refined.objective <= plain.objective + 1e-15 * abs(plain.objective)

    def test_greedy_fill_respects_caps(self, rng):
        for _ in range(30):
            n = 8
            ch = ChannelRealization.from_cnr(rng.exponential(100.0, n))
            t = BerTargets.uniform(1e-4, n)
            w = MoopWeights(0.5)
            rows = [(np.ones(n), 0.3), (rng.uniform(0, 1, n), 0.05)]
            a = greedy_fill(Allocation(np.zeros(n, int), np.zeros(n), 0.0), ch, t, w, 6, rows)
            for wv, cap in rows:
                assert float(wv @ a.power_w) <= cap

    def test_unconstrained_discrete_is_per_subcarrier_optimum(self):
        ch, t = random_instance(5, 10, 400.0)
        w = MoopWeights(0.5)
        a = solve_discrete(ch, w, t, 6)
        dom = np.array([0, 2, 3, 4, 5, 6])
        for i in range(ch.n):
            cost = w.power_price * power_from_bits(dom, ch.cnr[i], t.snr_gap[i]) - w.bit_value * dom
            assert a.bits[i] == dom[np.argmin(cost)]

    def test_best_discrete_without_refine_is_rounded(self):
        ch, t = random_instance(2, 6)
        w = MoopWeights(0.5)
        relaxed = allocate_relaxed(ch, w, t, 6)
        out = best_discrete(relaxed, ch, t, w, 6, [], refine=False)
        assert np.array_equal(out.bits, round_allocation(relaxed, ch, t, w, 6).bits)


class TestBisectAlpha:
    @pytest.mark.parametrize("seed", range(6))
    def test_power_cap_met(self, seed):
        ch, t = random_instance(seed, 16, 1000.0)
        cap = tight_power_cap(ch, t, MoopWeights(0.5), 0.5, 8)
        alpha, a = bisect_alpha(ch, t, 8, cap, 0.5)
        assert 0.5 <= alpha <= 1.0
        assert a.total_power <= cap
        if not a.diagnostics["within_tol"]:
            # the cap falls inside a jump of the rounded power
            assert a.diagnostics["lower_power"] > cap
            assert alpha - a.diagnostics["lower_alpha"] <= 1e-12

    def test_already_feasible(self):
        ch, t = random_instance(0, 4)
        alpha, a = bisect_alpha(ch, t, 6, 1e9, 0.3)
        assert alpha == 0.3 and a.diagnostics["iterations"] == 0

    def test_bad_init(self):
        ch, t = random_instance(0, 4)
        with pytest.raises(ValueError):
            bisect_alpha(ch, t, 6, 1.0, 1.0)


class TestExpIntegral:
    @pytest.mark.parametrize(
        "x,ref", [(-1.0, EI_MINUS_1), (-0.01, EI_MINUS_001), (-20.0, EI_MINUS_20)]
    )
    def test_values(self, x, ref):
        assert exp_integral_ei(x) == pytest.approx(ref, rel=1e-13)

    def test_domain(self):
        with pytest.raises(ValueError):
            exp_integral_ei(0.0)

    @given(st.floats(-50, -1e-6))
    def test_derivative(self, x):
        h = 1e-6 * abs(x)
        d = (exp_integral_ei(x + h) - exp_integral_ei(x - h)) / (2 * h)
        assert d == pytest.approx(math.exp(x) / x, rel=1e-5)


class TestAnalyticAverages:
    def test_against_quadrature(self):
        got = analytic_averages(1 / 100, MoopWeights(0.5), BerTargets.uniform(1e-4, 1))
        assert got == pytest.approx(AVG_MEAN100_HALF, rel=1e-12)
        got = analytic_averages(1 / 1000, MoopWeights(0.3, 2.0, 0.5), BerTargets.uniform(1e-4, 1))
        assert got == pytest.approx(AVG_MEAN1000_W, rel=1e-12)

    def test_scales_with_n(self):
        one = analytic_averages(0.01, MoopWeights(0.5), BerTargets.uniform(1e-4, 1))
        many = analytic_averages(0.01, MoopWeights(0.5), BerTargets.uniform(1e-4, 1), n=16)
        assert many == pytest.approx((16 * one[0], 16 * one[1]), rel=1e-13)

    def test_monte_carlo_small(self, rng):
        n = 8
        cnr = rng.exponential(100.0, (20000, n))
        w = MoopWeights(0.5)
        t = BerTargets.uniform(1e-4, n)
        bits = np.mean([allocate_relaxed(ChannelRealization.from_cnr(c), w, t).total_bits for c in cnr])
        ref = analytic_averages(0.01, w, t)[0]
        assert bits == pytest.approx(ref, rel=0.02)

    @pytest.mark.parametrize("alpha", [0.0, 1.0])
    def test_alpha_bounds(self, alpha):
        with pytest.raises(ValueError):
            analytic_averages(0.01, MoopWeights(alpha), BerTargets.uniform(1e-4, 1))
