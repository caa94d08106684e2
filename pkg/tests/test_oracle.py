import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitload.bitpower import BerTargets, MoopWeights, power_from_bits, solve_discrete
from bitload.channel import ChannelRealization
from bitload.oracle import MAX_TUPLES, SearchSpaceError, bit_domain, exhaustive_search

from conftest import random_instance, tight_power_cap


def _brute(ch, w, t, b_max, cons):
    """Plain nested-loop search, no pruning or vectorization."""
    best, arg = np.inf, None
    for combo in itertools.product(bit_domain(b_max), repeat=ch.n):
        bits = np.array(combo)
        p = power_from_bits(bits, ch.cnr, t.snr_gap)
        if any(float(np.dot(wv, p)) > cap for wv, cap in cons):
            continue
        val = w.power_price * p.sum() - w.bit_value * bits.sum()
        if val < best:
            best, arg = val, bits
    return best, arg


def test_domain():
    assert bit_domain(6).tolist() == [0, 2, 3, 4, 5, 6]


@given(seed=st.integers(0, 10**6), n=st.integers(1, 4), frac=st.floats(0.05, 1.5), alpha=st.floats(0.1, 0.9))
def test_matches_plain_enumeration(seed, n, frac, alpha):
    ch, t = random_instance(seed, n)
    w = MoopWeights(alpha)
    rng = np.random.default_rng(seed)
    cons = [(np.ones(n), tight_power_cap(ch, t, w, frac) + 1e-12), (rng.uniform(0, 1, n), 0.5)]
    o = exhaustive_search(ch, w, t, 5, cons)
    val, bits = _brute(ch, w, t, 5, cons)
    assert o.objective == pytest.approx(val, rel=1e-12, abs=1e-15)
    assert o.bits.tolist() == bits.tolist()


def test_ties_go_to_smallest_tuple():
    ch = ChannelRealization.from_cnr([100.0, 100.0])
    t = BerTargets.uniform(1e-4, 2)
    # room for two bits on one subcarrier only; [0, 2] and [2, 0] tie
    cap = power_from_bits(2, 100.0, t.snr_gap[0]) * 1.0000001
    o = exhaustive_search(ch, MoopWeights(0.01), t, 3, [(1.0, cap)])
    assert o.bits.tolist() == [0, 2]


def test_dead_subcarrier_stays_empty():
    ch = ChannelRealization.from_cnr([0.0, 50.0])
    o = exhaustive_search(ch, MoopWeights(0.5), BerTargets.uniform(1e-4, 2), 6)
    assert o.bits[0] == 0


def test_search_space_limit():
    ch, t = random_instance(0, 12)
    assert 6.0**12 > MAX_TUPLES
    with pytest.raises(SearchSpaceError):
        exhaustive_search(ch, MoopWeights(0.5), t, 6)


@pytest.mark.parametrize("seed", range(10))
def test_closed_form_within_five_percent(seed):
    ch, t = random_instance(seed, 6)
    w = MoopWeights(0.5)
    cap = tight_power_cap(ch, t, w, 0.5)
    a = solve_discrete(ch, w, t, 6, cap)
    o = exhaustive_search(ch, w, t, 6, [(np.ones(6), cap)])
    assert o.objective <= a.objective + 1e-12 * abs(o.objective)
    assert a.objective <= o.objective + 0.05 * abs(o.objective)
