"""Exact and heuristic audits of approximate core stability.

A committee ``S`` is ``lambda``-stable for target size ``K`` when every
nonempty ``T`` is strictly preferred by fewer than ``lambda |T| n / K``
voters.  The audits report the worst ratio ``coverage(T) K / (|T| n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .model import Instance

# enumeration guard of the exact auditor
EXACT_MAX_M = 24
EXACT_ANY_M_CAP = 6
# masks processed per vectorized step
_CHUNK = 1 << 18


@dataclass
class AuditResult:
    ratio: float
    worst_T: frozenset[int]
    coverage: int
    mode: str
    examined: int
    K: int
    n: int

    def to_dict(self, inst: Instance | None = None) -> dict:
        names = sorted(self.worst_T)
        if inst is not None:
            names = [inst.candidates[i] for i in names]
        return {
            "ratio": self.ratio,
            "worst_T": names,
            "coverage": self.coverage,
            "mode": self.mode,
            "examined": self.examined,
            "K": self.K,
            "n": self.n,
        }

    def blocks(self, lam: float) -> bool:
        """Whether the worst coalition reaches ``lam |T| n / K`` (exact rationals)."""
        if not self.worst_T:
            return False
        lhs = Fraction(self.coverage) * self.K
        return lhs >= Fraction(lam) * len(self.worst_T) * self.n


def _voter_groups(inst: Instance, S: Iterable[int]):
    """Distinct (approval mask, utility) pairs with multiplicities; empty sets dropped."""
    S = frozenset(S)
    table: dict[tuple[int, int], int] = {}
    for a in inst.approvals:
        if not a:
            continue
        key = (sum(1 << i for i in a), len(a & S))
        table[key] = table.get(key, 0) + 1
    masks = np.array([k[0] for k in table], dtype=np.int64)
    utils = np.array([k[1] for k in table], dtype=np.int64)
    counts = np.array(list(table.values()), dtype=np.int64)
    return masks, utils, counts


def _masks_by_size(m: int, size: int) -> np.ndarray:
    """All ``size``-subsets of ``range(m)`` as int64 bitmasks, lexicographic by bits."""
    masks = np.zeros(1, dtype=np.int64)
    high = np.full(1, -1, dtype=np.int64)
    for _ in range(size):
        parts, tops = [], []
        for b in range(m):
            sel = high < b
            if sel.any():
                parts.append(masks[sel] | (1 << b))
                tops.append(np.full(int(sel.sum()), b, dtype=np.int64))
        if not parts:
            return np.zeros(0, dtype=np.int64)
        masks, high = np.concatenate(parts), np.concatenate(tops)
    return masks


def _coverage(T_masks: np.ndarray, masks, utils, counts) -> np.ndarray:
    cov = np.zeros(len(T_masks), dtype=np.int64)
    for a, u, c in zip(masks, utils, counts):
        cov += c * (np.bitwise_count(T_masks & a) > u)
    return cov


def _check_committee(inst: Instance, S, K: int) -> frozenset[int]:
    S = frozenset(int(i) for i in S)
    if K < 1:
        raise ValueError("K must be positive")
    if any(not 0 <= i < inst.m for i in S):
        raise ValueError("committee contains an out-of-range candidate")
    return S


def stability_ratio_exact(inst: Instance, S, K: int, size_cap: int | None = None) -> AuditResult:
    """Worst ratio over every nonempty ``T`` with ``|T| <= size_cap``.

    ``size_cap`` defaults to ``min(m, K)``; since ``|T| >= K`` gives a ratio of
    at most ``K / |T| <= 1`` (equality only at ``|T| = K``), that default
    decides ``lambda``-stability for every ``lambda >= 1``.  Sizes whose best
    possible ratio ``K / |T|`` cannot beat the incumbent are skipped.
    """
    S = _check_committee(inst, S, K)
    m, n = inst.m, inst.n
    if size_cap is None:
        size_cap = min(m, K)
    if size_cap > m:
        raise ValueError("size_cap exceeds m")
    if m > EXACT_MAX_M and size_cap > EXACT_ANY_M_CAP:
        raise ValueError(
            f"exact audit limited to m <= {EXACT_MAX_M} or size_cap <= {EXACT_ANY_M_CAP}"
        )
    masks, utils, counts = _voter_groups(inst, S)
    best = AuditResult(0.0, frozenset(), 0, "exact", 0, K, n)
    if n == 0 or len(masks) == 0:
        return best
    best_num, best_den = 0, 1  # ratio as coverage / |T|, compared exactly
    examined = 0
    for size in range(1, size_cap + 1):
        # the best a size can reach is n / size
        if best_num * size >= n * best_den and best_num > 0:
            break
        T_masks = _masks_by_size(m, size)
        for lo in range(0, len(T_masks), _CHUNK):
            chunk = T_masks[lo : lo + _CHUNK]
            cov = _coverage(chunk, masks, utils, counts)
            examined += len(chunk)
            j = int(np.argmax(cov))
            if cov[j] * best_den > best_num * size:
                best_num, best_den = int(cov[j]), size
                T = frozenset(b for b in range(m) if int(chunk[j]) >> b & 1)
                best = AuditResult(best_num * K / (size * n), T, best_num, "exact", 0, K, n)
    best.examined = examined
    return best


def _cover_counts(mat: np.ndarray, T: list[int]) -> np.ndarray:
    return mat[:, T].sum(axis=1) if T else np.zeros(mat.shape[0], dtype=np.int64)


def stability_ratio_heuristic(
    inst: Instance, S, K: int, budget: int = 8, rng: np.random.Generator | None = None
) -> AuditResult:
    """Lower bound on the worst ratio from greedy construction plus swaps.

    For each size ``j = 1..ceil(K/2)`` a coalition target ``T`` is grown by
    adding the candidate with the best coverage gain (partial progress of the
    still-unsatisfied voters breaks ties), then improved by single swaps.
    The first restart is deterministic; the others perturb the greedy scores.
    """
    S = _check_committee(inst, S, K)
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if rng is None:
        rng = np.random.default_rng(0)
    n, m = inst.n, inst.m
    mat = inst.approval_matrix().astype(np.int64)
    u = mat[:, sorted(S)].sum(axis=1) if S else np.zeros(n, dtype=np.int64)
    need = u + 1
    # empty voters can never prefer anything
    need[mat.sum(axis=1) == 0] = m + 1
    best = AuditResult(0.0, frozenset(), 0, "heuristic", 0, K, n)
    if n == 0:
        return best
    examined = 0

    def consider(T: list[int], cov: int):
        nonlocal best
        if cov == 0:
            return
        ratio = cov * K / (len(T) * n)
        if ratio > best.ratio:
            best = AuditResult(ratio, frozenset(T), int(cov), "heuristic", 0, K, n)

    for restart in range(budget):
        noise = None if restart == 0 else rng.random(m) * 1e-3
        for j in range(1, min(m, math.ceil(K / 2)) + 1):
            T: list[int] = []
            counts = np.zeros(n, dtype=np.int64)
            for _ in range(j):
                new = counts[:, None] + mat
                covered = (new >= need[:, None]).sum(axis=0).astype(float)
                progress = (np.minimum(new, need[:, None]) / need[:, None]).sum(axis=0)
                score = covered + 1e-3 * progress / max(n, 1)
                if noise is not None:
                    score = score + noise * (1 + rng.random(m))
                score[T] = -np.inf
                i = int(np.argmax(score))
                T.append(i)
                counts += mat[:, i]
                examined += m
            cov = int((counts >= need).sum())
            # single-swap local search at fixed size
            improved = True
            while improved:
                improved = False
                for pos, i in enumerate(list(T)):
                    base = counts - mat[:, i]
                    cand = ((base[:, None] + mat) >= need[:, None]).sum(axis=0)
                    cand[T] = -1
                    examined += m
                    jbest = int(np.argmax(cand))
                    if cand[jbest] > cov:
                        T[pos] = jbest
                        counts = base + mat[:, jbest]
                        cov = int(cand[jbest])
                        improved = True
            consider(sorted(T), cov)
    best.examined = examined
    return best


def is_lambda_stable(
    inst: Instance, S, K: int, lam: float, mode: str = "exact", size_cap: int | None = None,
    budget: int = 8, rng: np.random.Generator | None = None,
) -> bool:
    """Whether no examined ``T`` gathers ``lam |T| n / K`` or more supporters.

    In heuristic mode a ``False`` answer is a certificate; ``True`` only means
    no violation was found.
    """
    if mode == "exact":
        res = stability_ratio_exact(inst, S, K, size_cap)
    elif mode == "heuristic":
        res = stability_ratio_heuristic(inst, S, K, budget, rng)
    else:
        raise ValueError(f"unknown audit mode {mode!r}")
    return not res.blocks(lam)


def coverage(inst: Instance, S, T) -> int:
    """Number of voters strictly preferring ``T`` to ``S``."""
    S, T = frozenset(S), frozenset(T)
    return sum(1 for a in inst.approvals if len(a & T) > len(a & S))
