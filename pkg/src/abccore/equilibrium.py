"""Lindahl allocations: a capped Nash-welfare solver and a price certifier.

The allocation ``x`` is the maximizer of the (normalized) log-welfare

    (1/n') * sum_{v : A_v nonempty} log(sum_{i in A_v} x_i)

over ``{0 <= x <= 1, sum(x) = k}``, where ``n'`` counts voters with a nonempty
approval set.  Prices are then fitted by a linear program; the allocation is
only trusted once :func:`validate_lindahl` passes.

When caps bind, that optimum can lack equal-budget prices.
:func:`compute_equilibrium` then falls back on :func:`solve_lindahl`, a
spending program whose optimum is certified by the same price LP.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import linprog

from .model import Instance, fractional_utilities

log = logging.getLogger(__name__)

MASS_TOL = 1e-8
# coordinates this close to a bound are treated as sitting on it
BOUND_TOL = 1e-7


class EquilibriumError(RuntimeError):
    """The solver failed or produced an allocation that admits no prices."""

    def __init__(self, message: str, residual: float | None = None, certificate=None):
        super().__init__(message)
        self.residual = residual
        self.certificate = certificate


@dataclass(frozen=True)
class FractionalAllocation:
    x: np.ndarray
    k: int
    iterations: int = 0
    residual: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if np.any(x < -MASS_TOL) or np.any(x > 1 + MASS_TOL):
            raise ValueError("allocation entries must lie in [0, 1]")
        if abs(x.sum() - self.k) > MASS_TOL:
            raise ValueError(f"allocation mass {x.sum()!r} differs from k={self.k}")

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.x > BOUND_TOL)


@dataclass(frozen=True)
class PriceSystem:
    """Per-voter prices ``p[v, i]`` and the common budget."""

    p: np.ndarray
    budget: float
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    feasible: bool = True


@dataclass(frozen=True)
class PriceInfeasibility:
    """Returned by :func:`fit_prices` when no prices certify ``x``.

    ``violation`` is the least total budget/price-sum mismatch any price system
    satisfying the optimality structure can achieve; ``budget_gaps`` and
    ``price_gaps`` are the per-voter and per-candidate mismatches at that
    optimum, and ``duals`` the LP multipliers of those constraints.
    """

    violation: float
    budget_gaps: np.ndarray
    price_gaps: np.ndarray
    duals: np.ndarray
    feasible: bool = False

    def to_dict(self) -> dict:
        return {
            "violation": self.violation,
            "budget_gaps": self.budget_gaps.tolist(),
            "price_gaps": self.price_gaps.tolist(),
            "duals": self.duals.tolist(),
        }


@dataclass
class EquilibriumReport:
    budget: np.ndarray
    price_sum: np.ndarray
    voter_optimality: np.ndarray
    producer_optimality: np.ndarray
    tol: float

    @property
    def residuals(self) -> dict[str, float]:
        out = {}
        for name in ("budget", "price_sum", "voter_optimality", "producer_optimality"):
            arr = getattr(self, name)
            out[name] = float(arr.max()) if arr.size else 0.0
        return out

    @property
    def checks(self) -> dict[str, bool]:
        return {name: r <= self.tol for name, r in self.residuals.items()}

    @property
    def verdict(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "residuals": self.residuals,
            "checks": self.checks,
            "verdict": "pass" if self.verdict else "fail",
        }


# --------------------------------------------------------------------------
# solver


def project_capped_simplex(y: np.ndarray, mass: float) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``{0 <= x <= 1, sum(x) = mass}``."""
    m = y.size
    if not 0 <= mass <= m:
        raise ValueError("mass outside [0, m]")
    lo, hi = float(y.min()) - 1.0, float(y.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(y - mid, 0.0, 1.0).sum() > mass:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    x = np.clip(y - hi, 0.0, 1.0)
    free = (x > 0) & (x < 1)
    if free.any():
        # recover the exact shift on the free coordinates
        ones = np.count_nonzero(x >= 1)
        shift = (y[free].sum() - (mass - ones)) / free.sum()
        x = np.clip(y - shift, 0.0, 1.0)
    return x


class _LogWelfare:
    """Normalized log-welfare of grouped voters over a subset of candidates."""

    def __init__(self, A: np.ndarray, weights: np.ndarray, reg: float):
        self.A = A
        self.w = weights / weights.sum()
        self.reg = reg

    def utilities(self, x):
        return self.A @ x

    def value(self, x, u=None):
        u = self.utilities(x) if u is None else u
        if np.any(u <= 0):
            return -np.inf
        return float(self.w @ np.log(u) - self.reg * (x @ x))

    def gradient(self, x, u=None):
        u = self.utilities(x) if u is None else u
        return self.A.T @ (self.w / u) - 2.0 * self.reg * x

    def increase(self, x, y, ux, uy) -> float:
        """``value(y) - value(x)`` without cancellation."""
        if np.any(uy <= 0):
            return -np.inf
        return float(self.w @ np.log1p((uy - ux) / ux) - self.reg * ((y - x) @ (y + x)))


def solve_capped_mnw(
    inst: Instance,
    k: int,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    reg: float = 1e-9,
    history: list | None = None,
    weights: np.ndarray | None = None,
    x0: np.ndarray | None = None,
) -> FractionalAllocation:
    """Capped maximum-Nash-welfare allocation of total mass ``k``.

    Projected-gradient ascent with Barzilai-Borwein step proposals and
    backtracking, so iterate objectives never decrease.  Stops once the
    projected-gradient residual ``||x - P(x + grad)||_inf`` is at most ``tol``.
    If ``history`` is given, the objective of every iterate is appended to it.
    Optional per-voter ``weights`` turn the objective into a weighted
    log-welfare; ``x0`` warm-starts the ascent.

    Candidates approved by nobody stay at zero unless the approved ones cannot
    absorb mass ``k``; the remainder then goes to unapproved candidates, lowest
    index first.
    """
    m = inst.m
    if not 1 <= k <= m:
        raise EquilibriumError(f"need 1 <= k <= m, got k={k}, m={m}")
    if weights is None:
        weights = np.ones(inst.n)
    sets, group_w = _group_voters(inst, np.asarray(weights, dtype=float))
    if not sets:
        raise EquilibriumError("every approval set is empty")
    approved = sorted(set().union(*sets))
    x_full = np.zeros(m)
    inner = min(k, len(approved))
    iterations, residual = 0, 0.0
    if inner == len(approved):
        x_full[approved] = 1.0
    else:
        pos = {c: j for j, c in enumerate(approved)}
        A = np.zeros((len(sets), len(approved)))
        for r, s in enumerate(sets):
            A[r, [pos[i] for i in s]] = 1.0
        start = None
        if x0 is not None:
            start = np.asarray(x0, dtype=float)[approved]
            # pull the warm start into the interior so every utility is positive
            start = 0.9 * start + 0.1 * inner / len(approved)
        x, iterations, residual = _ascend(
            _LogWelfare(A, group_w, reg), inner, tol, max_iter, history, start
        )
        x_full[approved] = x
    leftover = k - inner
    for i in range(m):
        if leftover <= 0:
            break
        if x_full[i] == 0.0 and i not in approved:
            x_full[i] = 1.0
            leftover -= 1
    return FractionalAllocation(x_full, k, iterations, residual)


def _group_voters(inst: Instance, weights: np.ndarray):
    totals: dict[frozenset[int], float] = {}
    for a, w in zip(inst.approvals, weights):
        if a:
            totals[a] = totals.get(a, 0.0) + float(w)
    sets = sorted(totals, key=lambda s: sorted(s))
    return sets, np.array([totals[s] for s in sets], dtype=float)


def _ascend(obj: _LogWelfare, mass: int, tol: float, max_iter: int, history, x0=None):
    dim = obj.A.shape[1]
    x = np.full(dim, mass / dim) if x0 is None else project_capped_simplex(x0, mass)
    u = obj.utilities(x)
    if np.any(u <= 0):
        x = np.full(dim, mass / dim)
        u = obj.utilities(x)
    g = obj.gradient(x, u)
    val = obj.value(x, u)
    if history is not None:
        history.append(val)
    step = 1.0 / max(1.0, float(np.abs(g).max()))
    residual = np.inf
    for it in range(1, max_iter + 1):
        residual = float(np.abs(project_capped_simplex(x + g, mass) - x).max())
        if residual <= tol:
            return x, it - 1, residual
        while True:
            y = project_capped_simplex(x + step * g, mass)
            uy = obj.utilities(y)
            gain = obj.increase(x, y, u, uy)
            predicted = float(g @ (y - x))
            if gain >= 1e-4 * predicted and gain >= 0:
                break
            if predicted <= 1e-15 * (1.0 + abs(val)) and np.all(uy > 0):
                # ascent direction below rounding: accept the tiny move
                gain = max(gain, 0.0)
                break
            step *= 0.5
            if step < 1e-30:
                raise EquilibriumError("line search failed", residual)
        gy = obj.gradient(y, uy)
        dx, dg = y - x, gy - g
        curv = -float(dx @ dg)
        step = float(dx @ dx) / curv if curv > 0 else step * 2.0
        step = min(max(step, 1e-12), 1e12)
        x, u, g = y, uy, gy
        val += gain
        if history is not None:
            history.append(val)
    raise EquilibriumError(
        f"no convergence within {max_iter} iterations (residual {residual:.3g})", residual
    )


def _spill_floor(groups: np.ndarray, counts: np.ndarray, cap: float) -> float:
    """Least total spending on unapproved candidates any feasible budget split needs.

    Budgets are in units of ``b`` so each group holds ``counts[g]`` and each
    candidate absorbs at most ``cap = 1 / b``.
    """
    g, m = groups.shape
    res = linprog(
        (~groups).astype(float).ravel(),
        A_ub=np.kron(np.ones(g), np.eye(m)),
        b_ub=np.full(m, cap),
        A_eq=np.kron(np.eye(g), np.ones(m)),
        b_eq=counts.astype(float),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise EquilibriumError(f"budget split LP failed: {res.message}")
    return float(res.fun)


def _spending_program(groups, counts, cap, spill, keep):
    """Maximize ``-sum rel_entr(s_gi, x_i)`` over spendings ``s`` with ``x = sum_g s_g``."""
    import cvxpy as cp

    mask = groups if spill <= 1e-9 else np.ones_like(groups)
    rows, cols = np.nonzero(mask & keep[None, :])
    L = len(rows)
    g, m = groups.shape
    owner = np.zeros((g, L))
    owner[rows, np.arange(L)] = 1.0
    item = np.zeros((m, L))
    item[cols, np.arange(L)] = 1.0
    s = cp.Variable(L, nonneg=True)
    x = item @ s
    cons = [owner @ s == counts.astype(float), x <= cap]
    if spill > 1e-9:
        foreign = np.flatnonzero(~groups[rows, cols])
        cons.append(cp.sum(s[foreign]) <= spill * (1 + 1e-9))
    prob = cp.Problem(cp.Maximize(-cp.sum(cp.rel_entr(s, x[cols]))), cons)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    if s.value is None:
        raise EquilibriumError(f"spending program failed with status {prob.status}")
    return item @ s.value


def solve_lindahl(inst: Instance, k: int, tol: float = 1e-6) -> FractionalAllocation:
    """Lindahl allocation of mass ``k`` from the spending convex program.

    Each voter splits the budget ``b`` over candidates, ``x_i`` is the total
    spent on ``i`` and the objective ``-sum rel_entr(s_vi, x_i)`` makes the
    per-voter prices ``s_vi / x_i`` sum to one on every funded candidate.
    Voters only spend on unapproved candidates as far as the caps force them
    to; that least amount comes from a transport LP solved first.  The interior
    point answer is then re-solved on its own support (entries below
    ``1e-6 .. 1e-3`` dropped) and the first candidate allocation that the price
    certifier accepts at ``tol`` is returned.
    """
    if k > inst.m:
        raise ValueError(f"k={k} exceeds the number of candidates m={inst.m}")
    active = [v for v, a in enumerate(inst.approvals) if a]
    if not active:
        raise ValueError("all approval sets are empty")
    mat = inst.approval_matrix()[active]
    groups, counts = np.unique(mat, axis=0, return_counts=True)
    b = k / len(active)
    cap = 1.0 / b
    spill = _spill_floor(groups, counts, cap)

    def finish(raw):
        x = np.clip(raw * b, 0.0, 1.0)
        return FractionalAllocation(x * (k / x.sum()), k)

    best, best_violation = None, np.inf
    full = np.ones(inst.m, dtype=bool)
    raw = _spending_program(groups, counts, cap, spill, full)
    candidates = [finish(raw)]
    for cut in (1e-6, 1e-5, 1e-4, 1e-3):
        keep = raw * b > cut
        if keep.sum() >= k and not keep.all():
            candidates.append(finish(_spending_program(groups, counts, cap, spill, keep)))
    for alloc in candidates:
        prices = fit_prices(inst, alloc, tol=tol)
        if prices.feasible and validate_lindahl(inst, alloc, prices, tol=tol).verdict:
            return alloc
        violation = getattr(prices, "violation", 0.0)
        if violation < best_violation:
            best, best_violation = alloc, violation
    log.warning("no spending-program candidate certified (best violation %.3g)", best_violation)
    return best


# --------------------------------------------------------------------------
# prices


def _classify(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    zero = x <= BOUND_TOL
    capped = x >= 1 - BOUND_TOL
    return zero, capped, ~(zero | capped)


def active_budget(inst: Instance, k: int) -> float:
    """Budget per voter: ``k`` split over voters with nonempty approval sets."""
    active = sum(1 for a in inst.approvals if a)
    return k / active


def fit_prices(inst: Instance, alloc: FractionalAllocation, tol: float = 1e-6):
    """Fit Lindahl prices to ``alloc`` by linear programming.

    Constraints (``b`` is the common budget, ``tau_v`` a per-voter threshold):

    * ``p_v . x = b`` for voters with a nonempty approval set, ``p_v = 0`` otherwise;
    * ``sum_v p_vi = 1`` for funded candidates, ``<= 1`` for unfunded ones;
    * for approved ``i``: ``p_vi <= tau_v`` if ``x_i = 1``, ``p_vi = tau_v`` if
      ``0 < x_i < 1`` and ``p_vi >= tau_v`` if ``x_i = 0``;
    * ``p_vi = 0`` on funded unapproved candidates, unless every approved
      candidate of ``v`` is fully funded (such a voter cannot gain utility and
      may spend anywhere).

    Budget and price-sum equalities carry slack variables whose total is
    minimized; a positive optimum yields a :class:`PriceInfeasibility`.
    """
    x = np.asarray(alloc.x, dtype=float)
    n, m = inst.n, inst.m
    b = active_budget(inst, alloc.k)
    zero, capped, frac = _classify(x)
    funded = ~zero

    var_index: dict[tuple[int, int], int] = {}
    for v, a in enumerate(inst.approvals):
        if not a:
            continue
        satiated = all(capped[i] for i in a)
        for i in range(m):
            if i in a or (satiated and funded[i]):
                var_index[(v, i)] = len(var_index)
    n_p = len(var_index)
    voters = [v for v, a in enumerate(inst.approvals) if a]
    tau = {v: n_p + j for j, v in enumerate(voters)}
    n_main = n_p + len(voters)
    funded_idx = np.flatnonzero(funded)
    # slack pairs: one per budget row, one per funded price-sum row
    n_slack = 2 * (len(voters) + len(funded_idx))
    n_var = n_main + n_slack

    A_eq, b_eq, A_ub, b_ub = [], [], [], []

    def row():
        return np.zeros(n_var)

    for j, v in enumerate(voters):
        r = row()
        for i in range(m):
            if (v, i) in var_index:
                r[var_index[(v, i)]] = x[i]
        r[n_main + 2 * j] = 1.0
        r[n_main + 2 * j + 1] = -1.0
        A_eq.append(r)
        b_eq.append(b)
    offset = n_main + 2 * len(voters)
    for j, i in enumerate(funded_idx):
        r = row()
        for v in voters:
            if (v, i) in var_index:
                r[var_index[(v, i)]] = 1.0
        r[offset + 2 * j] = 1.0
        r[offset + 2 * j + 1] = -1.0
        A_eq.append(r)
        b_eq.append(1.0)
    for i in np.flatnonzero(zero):
        r = row()
        for v in voters:
            if (v, i) in var_index:
                r[var_index[(v, i)]] = 1.0
        A_ub.append(r)
        b_ub.append(1.0)
    for v in voters:
        for i in sorted(inst.approvals[v]):
            r = row()
            r[var_index[(v, i)]] = 1.0
            r[tau[v]] = -1.0
            if frac[i]:
                A_eq.append(r)
                b_eq.append(0.0)
            elif capped[i]:
                A_ub.append(r)
                b_ub.append(0.0)
            else:
                A_ub.append(-r)
                b_ub.append(0.0)

    cost = np.zeros(n_var)
    cost[n_main:] = 1.0
    res = linprog(
        cost,
        A_ub=np.array(A_ub) if A_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(A_eq),
        b_eq=np.array(b_eq),
        bounds=[(0, None)] * n_var,
        method="highs",
    )
    if res.status != 0:
        raise EquilibriumError(f"price LP failed: {res.message}")
    sol = res.x
    violation = float(sol[n_main:].sum())
    if violation > tol:
        slack = sol[n_main:]
        budget_gaps = np.zeros(n)
        for j, v in enumerate(voters):
            budget_gaps[v] = slack[2 * j] - slack[2 * j + 1]
        price_gaps = np.zeros(m)
        base = 2 * len(voters)
        for j, i in enumerate(funded_idx):
            price_gaps[i] = slack[base + 2 * j] - slack[base + 2 * j + 1]
        duals = np.asarray(res.eqlin.marginals[: len(voters) + len(funded_idx)])
        return PriceInfeasibility(violation, budget_gaps, price_gaps, duals)
    p = np.zeros((n, m))
    for (v, i), col in var_index.items():
        p[v, i] = sol[col]
    thresholds = np.zeros(n)
    for v in voters:
        thresholds[v] = sol[tau[v]]
    return PriceSystem(p, b, thresholds)


def _knapsack_utility(prices: np.ndarray, approved: Iterable[int], budget: float) -> float:
    """Best utility a voter can buy with ``budget`` when items cost ``prices``."""
    items = sorted(approved, key=lambda i: (prices[i], i))
    total, left = 0.0, budget
    for i in items:
        c = prices[i]
        if c <= 0:
            total += 1.0
            continue
        take = min(1.0, left / c)
        if take <= 0:
            break
        total += take
        left -= take * c
    return total


def validate_lindahl(
    inst: Instance, alloc: FractionalAllocation, prices: PriceSystem, tol: float = 1e-6
) -> EquilibriumReport:
    """Check budgets, price sums, voter optimality and producer optimality."""
    x = np.asarray(alloc.x, dtype=float)
    p = np.asarray(prices.p, dtype=float)
    if p.shape != (inst.n, inst.m):
        raise ValueError("price matrix has wrong shape")
    b = active_budget(inst, alloc.k)
    spend = p @ x
    budget_res = np.array(
        [abs(spend[v] - b) if a else float(np.abs(p[v]).sum()) for v, a in enumerate(inst.approvals)]
    )
    col = p.sum(axis=0)
    support = x > tol
    price_res = np.where(support, np.abs(col - 1.0), np.maximum(col - 1.0, 0.0))
    u = fractional_utilities(inst, x)
    voter_res = np.zeros(inst.n)
    for v, a in enumerate(inst.approvals):
        if a:
            voter_res[v] = max(0.0, _knapsack_utility(p[v], a, b) - u[v])
    producer_res = np.maximum(col - 1.0, 0.0)
    producer_res = np.where(support, np.maximum(producer_res, 1.0 - col), producer_res)
    producer_res = np.maximum(producer_res, np.maximum(-p.min(initial=0.0), 0.0))
    return EquilibriumReport(budget_res, price_res, voter_res, producer_res, tol)


def certify(inst: Instance, alloc: FractionalAllocation, tol: float = 1e-6):
    """Fit prices and validate; returns ``(prices, report)`` with ``report`` None if infeasible."""
    prices = fit_prices(inst, alloc, tol=tol)
    if not prices.feasible:
        return prices, None
    return prices, validate_lindahl(inst, alloc, prices, tol=tol)


@dataclass
class Equilibrium:
    """A certified allocation together with its prices and report."""

    alloc: FractionalAllocation
    prices: PriceSystem
    report: EquilibriumReport
    method: str
    # certificate of the capped Nash-welfare optimum when it was rejected
    rejected: PriceInfeasibility | EquilibriumReport | None = None


def compute_equilibrium(inst: Instance, k: int, tol: float = 1e-6, solver_tol: float = 1e-8,
                        max_iter: int = 100_000) -> Equilibrium:
    """Certified Lindahl equilibrium with mass ``k``.

    The capped Nash-welfare optimum is tried first.  When binding caps leave it
    without equal-budget prices, the allocation from :func:`solve_lindahl` is
    certified instead.  Raises :class:`EquilibriumError` with the certificate if
    neither passes.
    """
    alloc = solve_capped_mnw(inst, k, tol=solver_tol, max_iter=max_iter)
    prices, report = certify(inst, alloc, tol)
    if report is not None and report.verdict:
        return Equilibrium(alloc, prices, report, "capped-mnw")
    rejected = prices if report is None else report
    log.info("capped Nash-welfare optimum rejected by the certifier; solving the spending program")
    alloc = solve_lindahl(inst, k, tol=tol)
    prices, report = certify(inst, alloc, tol)
    if report is None:
        raise EquilibriumError(
            f"allocation admits no Lindahl prices (violation {prices.violation:.3g})",
            prices.violation,
            prices,
        )
    if not report.verdict:
        raise EquilibriumError(f"equilibrium check failed: {report.residuals}", certificate=report)
    return Equilibrium(alloc, prices, report, "spending-program", rejected)


def fractional_stability_spotcheck(
    inst: Instance, alloc: FractionalAllocation, T: Iterable[int], tol: float = 1e-6
) -> tuple[int, float, bool]:
    """Count voters preferring the integral committee ``T`` to ``alloc``.

    Returns ``(coverage, threshold, ok)`` with threshold ``|T| n / k``.  A
    voter counts only if ``|A_v & T|`` beats ``u_v(x)`` by more than ``tol``:
    ``x`` is a numerical solution, and utilities that equal an integer at the
    exact equilibrium come out a few 1e-8 short.
    """
    T = frozenset(T)
    if not T:
        raise ValueError("T must be nonempty")
    u = fractional_utilities(inst, alloc.x)
    coverage = sum(1 for v, a in enumerate(inst.approvals) if len(a & T) > u[v] + tol)
    threshold = len(T) * inst.n / alloc.k
    return coverage, threshold, coverage < threshold
