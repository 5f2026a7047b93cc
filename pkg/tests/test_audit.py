from __future__ import annotations

import itertools
from fractions import Fraction

import pytest

from abccore.audit import (
    coverage,
    is_lambda_stable,
    stability_ratio_exact,
    stability_ratio_heuristic,
)
from abccore.gen import make_rng
from abccore.model import Instance
from suites import small_suite

A, B, C, D, E = range(5)


def brute_ratio(inst, S, K):
    best = Fraction(0)
    for r in range(1, inst.m + 1):
        for T in itertools.combinations(range(inst.m), r):
            best = max(best, Fraction(coverage(inst, S, T) * K, r * inst.n))
    return best


def test_two_party_unstable_committee(ex1):
    res = stability_ratio_exact(ex1, {A, B, C}, 3, size_cap=5)
    assert res.ratio == pytest.approx(1.2)
    assert res.worst_T == {D} and res.coverage == 2
    assert not is_lambda_stable(ex1, {A, B, C}, 3, 1.0)


def test_two_party_stable_committee(ex1):
    res = stability_ratio_exact(ex1, {A, B, D}, 3, size_cap=5)
    assert res.ratio == pytest.approx(0.6)
    assert is_lambda_stable(ex1, {A, B, D}, 3, 1.0)


def test_full_committee_has_ratio_zero(ex1):
    assert stability_ratio_exact(ex1, range(5), 3).ratio == 0
    assert stability_ratio_heuristic(ex1, range(5), 3).ratio == 0


def test_heuristic_finds_two_party_violation(ex1):
    res = stability_ratio_heuristic(ex1, {A, B, C}, 3)
    assert res.worst_T == {D} and res.ratio == pytest.approx(1.2)
    assert res.mode == "heuristic"


def test_large_lambda_is_vacuous():
    for inst in small_suite(10, 10, 8):
        K = max(1, inst.m // 2)
        assert is_lambda_stable(inst, set(), K, K + 1)


def test_threshold_equality_blocks():
    # 2 of 4 voters prefer {1}: coverage 2 equals 1 * 1 * 4 / 2 at lambda 1
    inst = Instance.from_approvals(2, [{0}, {0}, {1}, {1}])
    res = stability_ratio_exact(inst, {0}, 2)
    assert res.ratio == 1.0 and res.blocks(1.0)
    assert not is_lambda_stable(inst, {0}, 2, 1.0)
    assert is_lambda_stable(inst, {0}, 2, 1.0 + 1e-12)


def test_exact_matches_brute_force():
    rng = make_rng(1)
    for inst in small_suite(40, 9, 8, seed0=50):
        K = int(rng.integers(1, inst.m + 1))
        S = set(rng.choice(inst.m, size=min(K, inst.m), replace=False).tolist())
        res = stability_ratio_exact(inst, S, K, size_cap=inst.m)
        assert Fraction(res.coverage * K, max(1, len(res.worst_T)) * inst.n) == brute_ratio(inst, S, K) or (
            res.ratio == 0 and brute_ratio(inst, S, K) == 0
        )
        # the default cap decides stability for every lambda >= 1
        default = stability_ratio_exact(inst, S, K)
        assert default.blocks(1.0) == res.blocks(1.0)


def test_heuristic_is_a_lower_bound():
    rng = make_rng(2)
    for inst in small_suite(40, 14, 14, seed0=80):
        K = int(rng.integers(1, min(inst.m, 8) + 1))
        S = set(rng.choice(inst.m, size=K, replace=False).tolist())
        h = stability_ratio_heuristic(inst, S, K, budget=3, rng=make_rng(3))
        e = stability_ratio_exact(inst, S, K)
        assert h.ratio <= e.ratio + 1e-12
        if h.worst_T:
            assert coverage(inst, S, h.worst_T) == h.coverage


def test_enumerated_ratios_are_bounded():
    for inst in small_suite(20, 10, 7, seed0=120):
        K = max(1, inst.m // 2)
        res = stability_ratio_exact(inst, {0}, K)
        assert res.coverage <= inst.n
        if res.worst_T:
            assert res.ratio <= K / len(res.worst_T) + 1e-12


def test_guards():
    inst = Instance.from_approvals(26, [{0}])
    with pytest.raises(ValueError):
        stability_ratio_exact(inst, set(), 10)
    assert stability_ratio_exact(inst, set(), 10, size_cap=2).ratio == 10.0
    with pytest.raises(ValueError):
        stability_ratio_exact(inst, {30}, 3)
    with pytest.raises(ValueError):
        stability_ratio_heuristic(inst, set(), 3, budget=0)
    with pytest.raises(ValueError):
        is_lambda_stable(inst, set(), 3, 1.0, mode="psychic")


def test_result_serializes_with_names(ex1):
    d = stability_ratio_exact(ex1, {A, B, C}, 3).to_dict(ex1)
    assert d["worst_T"] == ["d"] and d["mode"] == "exact" and d["examined"] > 0
