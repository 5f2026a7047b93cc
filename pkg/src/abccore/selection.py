"""Randomized committee selection: sampling, greedy repair, recursion and base case.

One recursion level works on the voters and candidates still in play:

1. compute a certified Lindahl allocation ``x`` of mass ``k = ceil(eta K)``;
2. sample ``R`` of size ``kappa = ceil(alpha k)`` from the maximum-entropy
   distribution with marginals at least ``min(alpha x, 1)`` until the
   dissatisfaction shares ``delta_1, delta_2`` pass the acceptance test;
3. greedily add candidates approved by at least ``beta(t) n / k`` of the
   voters short of their fractional utility by exactly one;
4. recurse on the voters not yet accounted for, with the chosen candidates
   removed.

Small targets are solved by the base case, which returns an exactly stable
committee of size ``min(K, 8)`` padded with the lowest unused indices.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from . import audit
from .equilibrium import compute_equilibrium
from .gen import make_rng
from .model import Committee, Instance, fractional_utilities
from .sampler import fit_max_entropy, sample_many, scale_and_round_marginals

log = logging.getLogger(__name__)

# fractional utilities this close to an integer are snapped before flooring
FLOOR_SNAP = 1e-9
# committees scored per vectorized PAV step
_PAV_CHUNK = 1 << 18
# PAV enumeration is exact up to this many committees, MILP beyond
PAV_ENUM_LIMIT = 3_000_000
PAV_MAX_M = 30
# the largest size for which an exactly stable committee is known to exist
STABLE_SIZE = 8
# sizes up to which PAV itself is known to be exactly stable
PAV_STABLE_SIZE = 7
SAMPLE_BATCH = 32


class SelectionError(RuntimeError):
    """Raised when the resampling budget runs out or a level cannot proceed."""

    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        self.record = record or {}


@dataclass(frozen=True)
class ParamSet:
    alpha: float = 2.154564
    eta: float = 0.358696
    epsilon: float = 1e-10
    rho: float = 0.00703
    gamma: float = 0.30328
    lambda_inner: float = 3.606655
    lambda_final: float = 3.651
    base_threshold: int = 28
    max_resamples: int = 1000

    def __post_init__(self):
        if self.alpha < 2:
            raise ValueError("alpha must be at least 2")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.epsilon < 0 or self.rho < 0 or self.gamma < 0:
            raise ValueError("epsilon, rho and gamma must be nonnegative")
        if self.base_threshold < 1 or self.max_resamples < 1:
            raise ValueError("base_threshold and max_resamples must be positive")

    @property
    def c2(self) -> float:
        """Weight ``e^alpha - 1 - 2 alpha`` of the doubly dissatisfied share."""
        return math.exp(self.alpha) - 1 - 2 * self.alpha

    @property
    def t0(self) -> float:
        return math.exp(-self.alpha) / (math.exp(self.alpha) - 2 * self.alpha)

    def f(self, t: float) -> float:
        return math.exp(-self.alpha) - self.c2 * t

    def beta(self, t: float) -> float:
        top = self.lambda_inner * self.eta - 1
        return min(max(top * (1 - t / self.t0), 0.0), top)

    def lambda1(self, t: float) -> float:
        shrink = 1 - (self.alpha + self.gamma) * self.eta
        return 1 / self.eta + self.lambda_inner * (self.f(t) - self.beta(t) * self.gamma) / shrink

    def lambda2(self, t: float) -> float:
        shrink = 1 - (self.alpha + self.gamma) * self.eta
        return (1 + self.beta(t)) / self.eta + self.lambda_inner * t / shrink

    @property
    def certified_ratio(self) -> float:
        return self.lambda_inner * (1 + 2 * self.rho)


@dataclass
class ParamReport:
    lambda1: dict[str, float]
    lambda2: dict[str, float]
    f_t0_gap: float
    beta_t0: float
    beta_0: float
    ok: bool
    margins: dict[str, float]

    def to_dict(self) -> dict:
        return asdict(self)


def verify_parameters(params: ParamSet, tol: float = 1e-4, exact_tol: float = 1e-10) -> ParamReport:
    """Evaluate both ratio constraints at ``t = 0`` and ``t = t0``.

    With constant ``gamma`` and ``beta`` affine in ``t`` both constraints are
    affine in ``t``, so the two endpoints decide feasibility on ``[0, t0]``.
    """
    t0 = params.t0
    l1 = {"0": params.lambda1(0.0), "t0": params.lambda1(t0)}
    l2 = {"0": params.lambda2(0.0), "t0": params.lambda2(t0)}
    margins = {f"lambda{j}({key})": params.lambda_inner - val
               for j, d in ((1, l1), (2, l2)) for key, val in d.items()}
    f_gap = params.f(t0) - t0
    beta_t0 = params.beta(t0)
    ok = (
        all(mg >= -tol for mg in margins.values())
        and abs(f_gap) <= exact_tol
        and abs(beta_t0) <= exact_tol
    )
    return ParamReport(l1, l2, f_gap, beta_t0, params.beta(0.0), ok, margins)


# --------------------------------------------------------------------------
# one level


@dataclass(frozen=True)
class VoterSplit:
    V1: frozenset[int]
    V2: frozenset[int]
    delta1: float
    delta2: float


def classify_voters(inst: Instance, x, R) -> VoterSplit:
    """Voters whose sampled utility trails ``floor(u_v(x))`` by at least one / two."""
    x = np.asarray(getattr(x, "x", x), dtype=float)
    R = frozenset(R)
    u = fractional_utilities(inst, x)
    near = np.abs(u - np.round(u)) <= FLOOR_SNAP
    u = np.where(near, np.round(u), u)
    floors = np.floor(u).astype(int)
    V1, V2 = set(), set()
    for v, a in enumerate(inst.approvals):
        got = len(a & R)
        if got <= floors[v] - 1:
            V1.add(v)
            if got <= floors[v] - 2:
                V2.add(v)
    n = max(inst.n, 1)
    return VoterSplit(frozenset(V1), frozenset(V2), len(V1) / n, len(V2) / n)


def acceptance_value(split: VoterSplit, params: ParamSet) -> float:
    return split.delta1 + params.c2 * split.delta2


def accept_sample(split: VoterSplit, params: ParamSet) -> bool:
    return acceptance_value(split, params) <= (1 + params.epsilon) * math.exp(-params.alpha)


@dataclass
class GreedyOutcome:
    R_prime: list[int]
    removed: dict[int, frozenset[int]]
    case: str
    leftover: frozenset[int]


def greedy_phase(
    inst: Instance,
    V0,
    excluded,
    beta_val: float,
    gamma_cap: int,
    k: int,
    n: int,
) -> GreedyOutcome:
    """Pick candidates approved by at least ``beta_val n / k`` remaining voters.

    The candidate with the largest count wins, lowest index on ties; its
    approving voters leave the pool.  A zero threshold still asks for one
    approving voter.
    """
    threshold = beta_val * n / k
    pool = set(V0)
    taken = set(excluded)
    R_prime: list[int] = []
    removed: dict[int, frozenset[int]] = {}
    while len(R_prime) < gamma_cap:
        counts = np.zeros(inst.m, dtype=int)
        for v in pool:
            for i in inst.approvals[v]:
                counts[i] += 1
        if taken:
            counts[list(taken)] = -1
        best = int(np.argmax(counts))
        if counts[best] < max(threshold, 1):
            break
        voters = frozenset(v for v in pool if best in inst.approvals[v])
        R_prime.append(best)
        removed[best] = voters
        pool -= voters
        taken.add(best)
    case = "greedy-full" if len(R_prime) == gamma_cap else "greedy-exhausted"
    return GreedyOutcome(R_prime, removed, case, frozenset(pool))


# --------------------------------------------------------------------------
# base case


_LCM = 840  # lcm(1..8): harmonic numbers up to H_8 become integers


def _harmonic_units(s: int) -> np.ndarray:
    out = np.zeros(s + 1, dtype=np.int64)
    for j in range(1, s + 1):
        out[j] = out[j - 1] + _LCM // j
    return out


def _pav_groups(inst: Instance):
    table: dict[int, int] = {}
    for a in inst.approvals:
        if a:
            mask = sum(1 << i for i in a)
            table[mask] = table.get(mask, 0) + 1
    return (np.array(list(table), dtype=np.int64), np.array(list(table.values()), dtype=np.int64))


def pav_score(inst: Instance, S) -> float:
    """``sum_v H(|S & A_v|)`` with ``H`` the harmonic numbers."""
    S = frozenset(S)
    return float(sum(sum(1 / j for j in range(1, len(a & S) + 1)) for a in inst.approvals))


def _pav_scores(masks: np.ndarray, groups, counts, h: np.ndarray) -> np.ndarray:
    total = np.zeros(len(masks), dtype=np.int64)
    for a, c in zip(groups, counts):
        total += c * h[np.bitwise_count(masks & a)]
    return total


def _lex_key(mask: int) -> tuple[int, ...]:
    return tuple(b for b in range(mask.bit_length()) if mask >> b & 1)


def _mask_to_set(mask: int) -> frozenset[int]:
    return frozenset(_lex_key(int(mask)))


def pav_exact(inst: Instance, s: int) -> Committee:
    """PAV optimum of size ``s`` by enumeration; ties go to the lexicographically first set."""
    m = inst.m
    if not 0 < s <= m:
        raise ValueError(f"size {s} must lie in [1, m={m}]")
    if m > PAV_MAX_M:
        raise ValueError(f"exact PAV enumeration limited to m <= {PAV_MAX_M}")
    if s > STABLE_SIZE:
        raise ValueError(f"exact PAV supports s <= {STABLE_SIZE}")
    groups, counts = _pav_groups(inst)
    h = _harmonic_units(s)
    masks = audit._masks_by_size(m, s)
    best_score, best = -1, []
    for lo in range(0, len(masks), _PAV_CHUNK):
        chunk = masks[lo : lo + _PAV_CHUNK]
        sc = _pav_scores(chunk, groups, counts, h)
        top = int(sc.max())
        if top > best_score:
            best_score, best = top, chunk[sc == top].tolist()
        elif top == best_score:
            best.extend(chunk[sc == top].tolist())
    winner = min(best, key=_lex_key)
    return Committee(_mask_to_set(winner), s)


def pav_milp(inst: Instance, s: int) -> Committee:
    """PAV optimum of size ``s`` by mixed-integer programming (no tie-break guarantee)."""
    m = inst.m
    voters = [sorted(a) for a in inst.approvals if a]
    # variables: y_i (m), z_{v,j} for j = 1..min(s, |A_v|)
    cols = m
    z_index = []
    for a in voters:
        z_index.append(list(range(cols, cols + min(s, len(a)))))
        cols += min(s, len(a))
    c = np.zeros(cols)
    rows, lb, ub = [], [], []
    row = np.zeros(cols)
    row[:m] = 1
    rows.append(row)
    lb.append(s)
    ub.append(s)
    for a, zs in zip(voters, z_index):
        for j, col in enumerate(zs, start=1):
            c[col] = -1.0 / j
        row = np.zeros(cols)
        row[zs] = 1
        row[a] = -1
        rows.append(row)
        lb.append(-np.inf)
        ub.append(0)
    res = milp(
        c,
        constraints=LinearConstraint(np.array(rows), lb, ub),
        integrality=np.ones(cols),
        bounds=Bounds(0, 1),
    )
    if res.x is None:
        raise SelectionError(f"PAV integer program failed: {res.message}")
    return Committee(frozenset(np.flatnonzero(res.x[:m] > 0.5).tolist()), s)


def _exactly_stable(inst: Instance, S: frozenset[int], s: int) -> tuple[bool, str]:
    """Stability at ``lambda = 1`` for size ``s``; heuristic audit when enumeration is out of reach."""
    if inst.m <= audit.EXACT_MAX_M or s <= audit.EXACT_ANY_M_CAP:
        res = audit.stability_ratio_exact(inst, S, s, min(inst.m, s))
        return not res.blocks(1.0), "exact"
    res = audit.stability_ratio_heuristic(inst, S, s, budget=4)
    return not res.blocks(1.0), "heuristic"


@dataclass
class BaseOutcome:
    committee: Committee
    core: frozenset[int]
    s: int
    method: str
    verification: str
    candidates_checked: int


def _pad(members: set[int], m: int, K: int) -> set[int]:
    out = set(members)
    for i in range(m):
        if len(out) >= K:
            break
        out.add(i)
    return out


def base_case(inst: Instance, K: int) -> Committee:
    return base_case_detail(inst, K).committee


def base_case_detail(inst: Instance, K: int) -> BaseOutcome:
    """Exactly stable committee of size ``s = min(K, 8)``, padded to ``K``.

    The PAV optimum is tried first and kept when the exact audit accepts it.
    Otherwise size-``s`` committees are checked in decreasing PAV score until
    one is stable.
    """
    m = inst.m
    if K > m:
        raise ValueError(f"K={K} exceeds m={m}")
    if K < 1:
        raise ValueError("K must be positive")
    s = min(K, STABLE_SIZE)
    if s == m:
        full = frozenset(range(m))
        return BaseOutcome(Committee(full, K), full, s, "full", "trivial", 0)
    if math.comb(m, s) <= PAV_ENUM_LIMIT and m <= PAV_MAX_M:
        first, method = pav_exact(inst, s), "pav"
    else:
        first, method = pav_milp(inst, s), "pav-milp"
    ok, how = _exactly_stable(inst, first.members, s)
    checked = 1
    core = first.members
    if not ok:
        if math.comb(m, s) > PAV_ENUM_LIMIT:
            log.warning("PAV committee failed the audit and enumeration is out of reach")
            how = "failed"
        else:
            found = None
            groups, counts = _pav_groups(inst)
            masks = audit._masks_by_size(m, s)
            sc = _pav_scores(masks, groups, counts, _harmonic_units(s))
            order = sorted(range(len(masks)), key=lambda j: (-int(sc[j]), _lex_key(int(masks[j]))))
            for j in order:
                cand = _mask_to_set(int(masks[j]))
                if cand == first.members:
                    continue
                checked += 1
                ok, how = _exactly_stable(inst, cand, s)
                if ok:
                    found = cand
                    break
            if found is None:
                raise SelectionError(f"no stable committee of size {s} found")
            core, method = found, "enumeration"
    members = _pad(set(core), m, K)
    return BaseOutcome(Committee(frozenset(members), K), core, s, method, how, checked)


# --------------------------------------------------------------------------
# recursion


@dataclass
class LevelRecord:
    depth: int
    target: int
    n: int
    m: int
    case: str
    k: int | None = None
    kappa: int | None = None
    x: list[float] | None = None
    equilibrium: str | None = None
    resample_count: int | None = None
    R: list[str] = field(default_factory=list)
    delta1: float | None = None
    delta2: float | None = None
    t: float | None = None
    beta: float | None = None
    R_prime: list[str] = field(default_factory=list)
    removed: dict[str, list[str]] = field(default_factory=dict)
    next_target: int | None = None
    next_voters: int | None = None
    base: dict | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class SelectionResult:
    committee: Committee
    names: list[str]
    K: int
    K_prime: int
    levels: list[LevelRecord]
    seed: int
    params: ParamSet
    certified_ratio: float
    stated_ratio: float
    padding: list[str]

    def to_dict(self) -> dict:
        return {
            "committee": self.names,
            "indices": self.committee.sorted(),
            "K": self.K,
            "K_prime": self.K_prime,
            "seed": self.seed,
            "certified_ratio": self.certified_ratio,
            "stated_ratio": self.stated_ratio,
            "padding": self.padding,
            "params": asdict(self.params),
            "levels": [lvl.to_dict() for lvl in self.levels],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _names(inst: Instance, idx) -> list[str]:
    return [inst.candidates[i] for i in sorted(idx)]


def select_recursive(
    inst: Instance,
    K_target: int,
    params: ParamSet,
    rng: np.random.Generator,
    depth: int = 0,
    records: list[LevelRecord] | None = None,
) -> tuple[set[int], list[LevelRecord]]:
    """One level of the randomized selection; returns chosen indices of ``inst``.

    Candidate indices refer to ``inst``; deeper levels work on restricted
    instances and their choices are mapped back.
    """
    if records is None:
        records = []
    m, n = inst.m, inst.n
    if K_target < 1:
        return set(), records
    if K_target > m:
        raise ValueError(f"target {K_target} exceeds the {m} remaining candidates")
    if K_target == m:
        records.append(LevelRecord(depth, K_target, n, m, "all-candidates"))
        return set(range(m)), records
    if not any(inst.approvals):
        # nobody left to satisfy; the final padding fills the committee
        records.append(LevelRecord(depth, K_target, n, m, "no-voters"))
        return set(), records
    if K_target <= params.base_threshold:
        return _base_level(inst, K_target, depth, records)
    k = math.ceil(params.eta * K_target)
    eq = compute_equilibrium(inst, k)
    x = eq.alloc.x
    xp = scale_and_round_marginals(x, params.alpha, m)
    kappa = xp.kappa
    if kappa > K_target:
        log.info("kappa=%d exceeds target %d; using the base case", kappa, K_target)
        return _base_level(inst, K_target, depth, records)
    weights = fit_max_entropy(xp)
    record = LevelRecord(depth, K_target, n, m, "", k=k, kappa=kappa,
                         x=[float(v) for v in x], equilibrium=eq.method)
    R, split, draws = None, None, 0
    while R is None and draws < params.max_resamples:
        batch = sample_many(weights, kappa, rng, min(SAMPLE_BATCH, params.max_resamples - draws))
        for row in batch:
            draws += 1
            cand = frozenset(np.flatnonzero(row).tolist())
            split = classify_voters(inst, x, cand)
            if accept_sample(split, params):
                R = cand
                break
    if R is None:
        record.resample_count = draws
        record.delta1, record.delta2 = split.delta1, split.delta2
        raise SelectionError(
            f"no acceptable sample in {draws} draws at depth {depth} "
            f"(last delta1={split.delta1:.4g}, delta2={split.delta2:.4g})",
            record.to_dict(),
        )
    t = min(max(split.delta2, 0.0), params.t0)
    beta_val = params.beta(t)
    gamma_full = math.ceil(params.gamma * k)
    gamma_cap = min(gamma_full, K_target - kappa)
    V_prime = split.V1 - split.V2
    greedy = greedy_phase(inst, V_prime, R, beta_val, gamma_cap, k, n)
    if greedy.case == "greedy-full":
        next_voters = sorted(split.V2 | greedy.leftover)
    else:
        next_voters = sorted(split.V2)
    chosen = set(R) | set(greedy.R_prime)
    next_target = K_target - kappa - gamma_full
    if next_target <= 0:
        next_target = K_target - len(chosen)
    record.case = greedy.case
    record.resample_count = draws
    record.R = _names(inst, R)
    record.delta1, record.delta2 = split.delta1, split.delta2
    record.t, record.beta = t, beta_val
    record.R_prime = [inst.candidates[i] for i in greedy.R_prime]
    record.removed = {
        inst.candidates[i]: sorted(inst.voter_ids[v] for v in vs) for i, vs in greedy.removed.items()
    }
    record.next_target = max(next_target, 0)
    record.next_voters = len(next_voters)
    records.append(record)
    if next_target <= 0:
        return chosen, records
    rest = [i for i in range(m) if i not in chosen]
    sub = inst.restrict(next_voters, rest)
    sub_chosen, records = select_recursive(sub, next_target, params, rng, depth + 1, records)
    chosen |= {rest[j] for j in sub_chosen}
    return chosen, records


def _base_level(inst: Instance, K_target: int, depth: int, records: list[LevelRecord]):
    out = base_case_detail(inst, K_target)
    records.append(
        LevelRecord(
            depth, K_target, inst.n, inst.m, "base",
            base={
                "s": out.s,
                "core": _names(inst, out.core),
                "method": out.method,
                "verification": out.verification,
                "committees_checked": out.candidates_checked,
            },
        )
    )
    return set(out.committee.members), records


def select_committee(inst: Instance, K: int, params: ParamSet | None = None, seed: int = 42) -> SelectionResult:
    """Committee of size exactly ``K`` from the recursive selection plus padding."""
    params = params or ParamSet()
    if not 1 <= K <= inst.m:
        raise ValueError(f"K={K} must lie in [1, m={inst.m}]")
    K_prime = max(1, math.ceil(K / (1 + 2 * params.rho) - 1e-12))
    rng = make_rng(seed)
    chosen, levels = select_recursive(inst, K_prime, params, rng)
    if len(chosen) > K:
        raise SelectionError(f"recursion returned {len(chosen)} > K={K} candidates")
    padded = _pad(chosen, inst.m, K)
    padding = sorted(padded - chosen)
    committee = Committee(frozenset(padded), K)
    return SelectionResult(
        committee,
        _names(inst, padded),
        K,
        K_prime,
        levels,
        seed,
        params,
        params.certified_ratio,
        params.lambda_final,
        [inst.candidates[i] for i in padding],
    )


def with_overrides(params: ParamSet, **kw) -> ParamSet:
    return replace(params, **{k: v for k, v in kw.items() if v is not None})
