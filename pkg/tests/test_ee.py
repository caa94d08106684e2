import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitload.ee import (
    EeCaps,
    EeConfig,
    InfeasibleRate,
    UncertainChannel,
    build_ee_caps,
    capacity_uncertain,
    dinkelbach_solve,
    ee_metric,
    inner_allocate,
    power_for_price,
    statistical_cap,
)

from conftest import band_leakage
from oracles import fista, project_capped_simplex, with_linear_cap

LN2 = math.log(2.0)


def unit_channel(seed, n=8, est_var=0.05):
    rng = np.random.default_rng(seed)
    return UncertainChannel(rng.exponential(1.0, n), est_var, 1.0, 1.0, 0.0, 1.0)


def realistic_channel(seed, n=16, est_var=1e-3):
    rng = np.random.default_rng(seed)
    return UncertainChannel(rng.exponential(1.0, n), est_var, 1e-11, 1e-15, 0.0, 1e4)


def inner_objective(p, q, ch, kappa):
    return kappa * p.sum() - q * capacity_uncertain(p, ch)


def inner_oracle(q, ch, caps, kappa):
    a, s, g, n0 = ch.est_gains, ch.est_var, ch.path_loss_lin, ch.noise_total
    theta = q * ch.spacing / LN2

    def log_term(p):
        return np.log1p(a * g * p / (s * g * p + n0))

    def dlog(p):
        den = s * g * p + n0
        sinr = a * g * p / den
        return (a * g * n0 / den**2) / (1 + sinr)

    row = caps.leakage[0] if caps.aci_caps_w else np.zeros(ch.n)

    def solve(mu, x0=None):
        def f(p):
            return kappa * p.sum() + mu * row @ p - theta * np.sum(log_term(p))

        def grad(p):
            return kappa + mu * row - theta * dlog(p)

        return fista(f, grad, lambda y: project_capped_simplex(y, caps.power_cap_w), np.zeros(ch.n) if x0 is None else x0)

    if caps.aci_caps_w:
        return with_linear_cap(solve, row, caps.aci_caps_w[0])[0]
    return solve(0.0, None)


class TestCapacity:
    def test_zero_power(self):
        assert capacity_uncertain(np.zeros(4), unit_channel(0, 4)) == 0.0

    def test_error_floor(self):
        # with infinite power the rate saturates at log2(1 + a/s)
        ch = unit_channel(1, 4)
        big = capacity_uncertain(np.full(4, 1e12), ch)
        assert big == pytest.approx(np.sum(np.log2(1 + ch.est_gains / ch.est_var)), rel=1e-9)

    def test_perfect_estimate_is_shannon(self):
        ch = UncertainChannel([2.0, 0.5], 0.0, 1.0, 1.0, 0.0, 3.0)
        assert capacity_uncertain([1.0, 2.0], ch) == pytest.approx(3.0 * (math.log2(3.0) + 1.0), rel=1e-15)

    @given(seed=st.integers(0, 10**6), p=st.floats(0.0, 50.0), h=st.floats(0.01, 5.0))
    def test_concave_increasing(self, seed, p, h):
        ch = unit_channel(seed, 1)
        c = [capacity_uncertain([p + k * h], ch) for k in range(3)]
        assert c[1] >= c[0]
        assert c[2] - 2 * c[1] + c[0] <= 1e-12 * max(c)

    def test_negative_power(self):
        with pytest.raises(ValueError):
            capacity_uncertain([-1.0], unit_channel(0, 1))


class TestMetric:
    def test_value(self):
        ch = UncertainChannel([1.0], 0.0, 1.0, 1.0, 0.0, 1.0)
        cfg = EeConfig(kappa=2.0, circuit_power_w=1.0)
        # (2*3 + 1) / log2(4)
        assert ee_metric([3.0], ch, cfg) == pytest.approx(3.5, rel=1e-15)

    def test_zero_rate(self):
        with pytest.raises(ValueError):
            ee_metric([0.0], unit_channel(0, 1), EeConfig())

    def test_statistical_cap(self):
        assert statistical_cap(0.5, 2.0, 1e-10, 0.9, 1e-14) == pytest.approx(
            2.0 * 1e-14 / (0.5 * 1e-10 * math.log(10.0)), rel=1e-14
        )
        assert statistical_cap(0.0, 1.0, 1.0, 0.9, 1.0) == math.inf

    def test_build_caps_takes_smaller(self):
        caps = build_ee_caps(1e9, 0.5, 1e-10, 1e-14, 1.0, 0.9)
        assert caps.power_cap_w == pytest.approx(statistical_cap(0.5, 1.0, 1e-10, 0.9, 1e-14), rel=1e-15)
        assert build_ee_caps(1e-9, 0.5, 1e-10, 1e-14, 1.0, 0.9).power_cap_w == 1e-9


class TestWaterFillingLimit:
    @pytest.mark.parametrize("seed", range(5))
    def test_small_error_variance(self, seed):
        ch = realistic_channel(seed, 32, est_var=1e-12)
        cfg = EeConfig()
        q = 1e-4
        p, _ = inner_allocate(q, ch, EeCaps(math.inf), cfg)
        level = ch.spacing * q / (LN2 * cfg.kappa)
        wf = np.clip(level - ch.noise_var / (ch.est_gains * ch.path_loss_lin), 0, None)
        assert np.count_nonzero(wf) > 0
        on = wf > 0
        assert np.allclose(p[on], wf[on], rtol=1e-4, atol=0)
        assert np.all(p[~on] <= 1e-4 * wf.max())

    def test_price_form_is_stable_at_zero_variance(self):
        ch = UncertainChannel([1.0, 2.0], 0.0, 1.0, 1.0)
        p = power_for_price(2.0, 1.0, ch)
        assert np.allclose(p, [1.0, 1.5], rtol=1e-15)


class TestInner:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("aci", [False, True])
    def test_matches_projected_gradient(self, seed, aci):
        ch = unit_channel(seed)
        leak = band_leakage(ch.n)[None, :]
        caps = EeCaps(3.0, (0.005,), leak) if aci else EeCaps(3.0)
        cfg = EeConfig(kappa=1.0, circuit_power_w=1.0)
        q = 4.0
        p, mult = inner_allocate(q, ch, caps, cfg)
        ref = inner_oracle(q, ch, caps, cfg.kappa)
        got, want = inner_objective(p, q, ch, 1.0), inner_objective(ref, q, ch, 1.0)
        assert got == pytest.approx(want, rel=1e-6)
        if aci:
            assert mult.lambda_aci[0] > 0

    @given(seed=st.integers(0, 10**6), cap=st.floats(0.05, 20.0), aci=st.floats(1e-3, 0.5), q=st.floats(0.5, 50.0))
    def test_kkt(self, seed, cap, aci, q):
        ch = unit_channel(seed, 12)
        leak = band_leakage(ch.n)[None, :]
        caps = EeCaps(cap, (aci,), leak)
        cfg = EeConfig(kappa=1.0, circuit_power_w=1.0)
        p, mult = inner_allocate(q, ch, caps, cfg)
        a, s, n0 = ch.est_gains, ch.est_var, ch.noise_total
        den = s * p + n0
        dlog = (a * n0 / den**2) / (1 + a * p / den)
        theta = q / LN2
        lam = np.array([mult.lambda_power, mult.lambda_aci[0]])
        grad = 1.0 + lam[0] + lam[1] * leak[0] - theta * dlog
        scale = 1.0 + theta * a / n0
        on = p > 0
        assert np.all(np.abs(grad[on]) <= 1e-6 * scale[on])
        assert np.all(grad[~on] >= -1e-6 * scale[~on])
        caps_vec = np.array([cap, aci])
        slack = caps_vec - np.array([p.sum(), leak[0] @ p])
        assert np.all(slack >= -1e-9 * caps_vec)
        assert np.all(lam * np.abs(slack) <= 1e-6 * caps_vec * np.maximum(lam, 1.0))


class TestDinkelbach:
    @pytest.mark.parametrize("seed", range(10))
    def test_stops_on_phi_and_q_nonincreasing(self, seed):
        ch = realistic_channel(seed)
        r = dinkelbach_solve(ch, EeCaps(2.0), EeConfig())
        assert abs(r.phi_history[-1]) <= 1e-8
        assert all(b <= a for a, b in zip(r.q_history, r.q_history[1:]))
        assert r.q_star == pytest.approx(ee_metric(r.power_w, ch, EeConfig()), rel=1e-15)
        assert 2 <= r.iterations <= 10

    @given(seed=st.integers(0, 10**6))
    def test_beats_random_feasible(self, seed):
        ch = unit_channel(seed % 40)
        leak = band_leakage(ch.n)[None, :]
        caps = EeCaps(3.0, (0.05,), leak)
        cfg = EeConfig(kappa=1.0, circuit_power_w=1.0)
        r = dinkelbach_solve(ch, caps, cfg)
        rng = np.random.default_rng(seed)
        p = rng.exponential(1.0, ch.n)
        p *= min(3.0 / p.sum(), 0.05 / (leak[0] @ p)) * rng.uniform(0.01, 1)
        assert r.q_star <= ee_metric(p, ch, cfg) * (1 + 1e-9)

    def test_matches_oracle_fixed_point(self):
        # at q* the oracle's inner minimum is zero as well
        ch = unit_channel(7)
        caps = EeCaps(3.0)
        cfg = EeConfig(kappa=1.0, circuit_power_w=1.0)
        r = dinkelbach_solve(ch, caps, cfg)
        ref = inner_oracle(r.q_star, ch, caps, 1.0)
        phi = inner_objective(ref, r.q_star, ch, 1.0) + 1.0
        assert abs(phi) <= 1e-6 * r.q_star * capacity_uncertain(ref, ch)

    def test_q_init_below_optimum(self):
        ch = realistic_channel(1)
        base = dinkelbach_solve(ch, EeCaps(2.0), EeConfig())
        low = dinkelbach_solve(ch, EeCaps(2.0), EeConfig(q_init=0.5 * base.q_star))
        assert low.q_star == pytest.approx(base.q_star, rel=1e-7)

    def test_more_power_allowed_never_hurts(self):
        ch = realistic_channel(2)
        q = [dinkelbach_solve(ch, EeCaps(c), EeConfig()).q_star for c in (0.01, 0.1, 1.0, 10.0)]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(q, q[1:]))

    def test_rate_floor(self):
        ch = realistic_channel(3)
        free = dinkelbach_solve(ch, EeCaps(2.0), EeConfig())
        floor = 1.2 * free.rate_bps
        r = dinkelbach_solve(ch, EeCaps(2.0), EeConfig(rate_floor=floor))
        assert r.rate_bps >= floor
        assert r.rate_bps == pytest.approx(floor, rel=1e-6)
        assert r.multipliers.lambda_rate > 0
        assert r.q_star >= free.q_star

    def test_unreachable_rate_floor(self):
        ch = realistic_channel(3)
        with pytest.raises(InfeasibleRate):
            dinkelbach_solve(ch, EeCaps(1e-3), EeConfig(rate_floor=1e9))
