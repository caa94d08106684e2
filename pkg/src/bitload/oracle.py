"""Exhaustive search over discrete bit allocations for small instances."""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .bitpower import (
    Allocation,
    BerTargets,
    MoopWeights,
    _normalize_constraints,
    moop_objective,
    power_from_bits,
)
from .channel import ChannelRealization

__all__ = ["SearchSpaceError", "bit_domain", "exhaustive_search"]

MAX_TUPLES = 10**8
# Trailing subcarriers enumerated as one dense numpy block.
_BLOCK = 5


class SearchSpaceError(ValueError):
    """Raised when the enumeration would exceed ``MAX_TUPLES``."""


def bit_domain(b_max: int) -> np.ndarray:
    """Valid bit loads: zero or any M-QAM order from 2 to b_max."""
    return np.array([0] + list(range(2, int(b_max) + 1)), dtype=np.int64)


def exhaustive_search(
    ch: ChannelRealization,
    w: MoopWeights,
    t: BerTargets,
    b_max: int,
    constraints: Sequence = (),
) -> Allocation:
    """Best feasible bit tuple by brute force.

    Ties go to the lexicographically smallest tuple.  Prefixes whose partial
    weighted power already exceeds a cap are skipped, which is safe because
    power is nonnegative.
    """
    n = ch.n
    dom = bit_domain(b_max)
    size = float(dom.size) ** n
    if size > MAX_TUPLES:
        raise SearchSpaceError(f"{dom.size}^{n} = {size:.3g} tuples exceeds {MAX_TUPLES:.0e}")
    cons = _normalize_constraints(constraints, n)
    gap = t.snr_gap
    # table[i, k]: power of subcarrier i at bit load dom[k]
    table = np.empty((n, dom.size))
    for i in range(n):
        if ch.cnr[i] > 0:
            table[i] = power_from_bits(dom, ch.cnr[i], gap[i])
        else:
            table[i] = np.where(dom == 0, 0.0, np.inf)
    cost = w.power_price * table - w.bit_value * dom[None, :]
    cost = np.where(np.isfinite(table), cost, np.inf)

    split = max(n - _BLOCK, 0)
    tail = range(split, n)

    def outer_sum(rows: np.ndarray) -> np.ndarray:
        acc = np.zeros(())
        for row in rows:
            acc = np.add.outer(acc, row)
        return acc

    tail_cost = outer_sum(cost[split:])
    tail_use = [outer_sum(table[split:] * wv[split:, None]) for wv, _ in cons]

    best_val, best_tuple = np.inf, None
    for prefix in itertools.product(range(dom.size), repeat=split):
        idx = np.arange(split)
        pre_use = [float(np.sum(table[idx, prefix] * wv[:split])) if split else 0.0 for wv, _ in cons]
        if any(u > cap for u, (_, cap) in zip(pre_use, cons)):
            continue
        pre_cost = float(np.sum(cost[idx, prefix])) if split else 0.0
        if not np.isfinite(pre_cost):
            continue
        total = pre_cost + tail_cost
        mask = np.isfinite(total)
        for u, tu, (_, cap) in zip(pre_use, tail_use, cons):
            mask &= u + tu <= cap
        if not mask.any():
            continue
        masked = np.where(mask, total, np.inf)
        k = int(np.argmin(masked))
        val = float(masked.flat[k])
        # Strict comparison keeps the earlier (lexicographically smaller) prefix.
        if val < best_val:
            best_val = val
            best_tuple = tuple(prefix) + np.unravel_index(k, total.shape) if total.ndim else tuple(prefix)
    if best_tuple is None:
        # All-zero has zero power, so this only happens with negative caps, rejected above.
        raise AssertionError("no feasible tuple found")
    bits = dom[np.asarray(best_tuple, dtype=np.int64)]
    power = power_from_bits(bits, ch.cnr, gap)
    alloc = Allocation(bits, power, moop_objective(bits, power, w))
    alloc.diagnostics["tuples"] = int(size)
    return alloc
