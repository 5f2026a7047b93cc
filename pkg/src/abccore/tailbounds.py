"""Exact lower tails of Poisson-binomial sums and the bounds they must respect.

For independent ``Y_i ~ Ber(p_i)`` with ``sum(p) >= alpha * mu`` and
``alpha >= 2`` the sum ``Y`` satisfies

    P[Y <= floor(mu) - 1] <= 0, e^-alpha, (1 + 2 alpha) e^-2alpha
    P[Y <= floor(mu) - 2] <= 0, e^-2alpha

for ``floor(mu)`` equal to 0, 1 and at least 2 respectively (the second bound
is 0 for ``floor(mu) <= 1``).  Everything here is evaluated exactly by
convolution, never through Chernoff-type surrogates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, pdtr
from scipy.stats import binom

# slack for the precondition sum(p) >= alpha * mu
PRECONDITION_TOL = 1e-12


def genbin_pmf(p, upto: int | None = None) -> np.ndarray:
    """Probability mass function of ``sum Ber(p_i)`` on ``0..upto``.

    The full support ``0..len(p)`` is returned when ``upto`` is None.
    """
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("Bernoulli means must lie in [0, 1]")
    size = len(p) if upto is None else min(int(upto), len(p))
    if size < 0:
        return np.zeros(0)
    pmf = np.zeros(size + 1)
    pmf[0] = 1.0
    for q in p:
        # truncated convolution with (1 - q, q); the dropped mass lies above `size`
        pmf[1:] = pmf[1:] * (1.0 - q) + pmf[:-1] * q
        pmf[0] *= 1.0 - q
    return pmf


def genbin_lower_tail(p, t: int) -> float:
    """Exact ``P[sum Ber(p_i) <= t]``; zero for ``t < 0``."""
    if t < 0:
        return 0.0
    p = np.asarray(p, dtype=float)
    if t >= len(p):
        return 1.0
    # exactly rounded sum keeps the tail monotone in t
    return min(1.0, math.fsum(genbin_pmf(p, t)))


def poisson_lower_tail(rate: float, t: int) -> float:
    """``P[Pois(rate) <= t]`` via the regularized incomplete gamma function."""
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    if t < 0:
        return 0.0
    if rate == 0:
        return 1.0
    return float(pdtr(int(t), rate))


def poisson_lower_tail_logsum(rate: float, t: int) -> float:
    """Same quantity by log-space summation of the individual masses."""
    if t < 0:
        return 0.0
    if rate == 0:
        return 1.0
    j = np.arange(int(t) + 1)
    terms = -rate + j * math.log(rate) - gammaln(j + 1)
    top = terms.max()
    return float(math.exp(top) * np.exp(terms - top).sum())


def tail_bound_rhs(mu_floor: int, alpha: float, ell: int) -> float:
    """Right-hand side of the main tail bound for ``ell`` in {1, 2}."""
    if alpha < 2:
        raise ValueError("alpha must be at least 2")
    if mu_floor < 0:
        raise ValueError("mu_floor must be nonnegative")
    if ell == 1:
        if mu_floor == 0:
            return 0.0
        if mu_floor == 1:
            return math.exp(-alpha)
        return (1 + 2 * alpha) * math.exp(-2 * alpha)
    if ell == 2:
        return 0.0 if mu_floor <= 1 else math.exp(-2 * alpha)
    raise ValueError("ell must be 1 or 2")


@dataclass(frozen=True)
class TailQuery:
    p: np.ndarray
    mu: float
    alpha: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("Bernoulli means must lie in [0, 1]")
        if self.alpha < 2:
            raise ValueError("alpha must be at least 2")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if p.sum() < self.alpha * self.mu - PRECONDITION_TOL:
            raise ValueError(f"sum(p)={p.sum():.6g} is below alpha*mu={self.alpha * self.mu:.6g}")


@dataclass
class MainTailReport:
    mu_floor: int
    lhs: dict[int, float]
    rhs: dict[int, float]

    @property
    def ok(self) -> bool:
        return all(self.lhs[ell] <= self.rhs[ell] for ell in (1, 2))

    def to_dict(self) -> dict:
        return {"mu_floor": self.mu_floor, "lhs": self.lhs, "rhs": self.rhs, "ok": self.ok}


def verify_main_tail(p, mu: float, alpha: float) -> MainTailReport:
    """Compare both exact lower tails with their bounds."""
    q = TailQuery(p, mu, alpha)
    mf = math.floor(q.mu)
    lhs = {ell: genbin_lower_tail(q.p, mf - ell) for ell in (1, 2)}
    rhs = {ell: tail_bound_rhs(mf, alpha, ell) for ell in (1, 2)}
    return MainTailReport(mf, lhs, rhs)


@dataclass
class PoissonClaimReport:
    alpha: float
    mu_max: int
    values: dict[int, np.ndarray]  # f_ell(mu) for mu = 2..mu_max
    margins: dict[int, np.ndarray]  # log f_ell(2) - log f_ell(mu)
    argmax: dict[int, int]

    @property
    def ok(self) -> bool:
        return all(bool(np.all(self.margins[ell] >= 0)) for ell in (1, 2))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "mu_max": self.mu_max,
            "argmax": self.argmax,
            "min_margin": {ell: float(self.margins[ell][1:].min(initial=np.inf)) for ell in (1, 2)},
            "ok": self.ok,
        }


def poisson_claim_values(alpha: float, mu: int, ell: int) -> float:
    """``f_ell(mu) = P[Pois(alpha mu) <= mu - ell]``."""
    return poisson_lower_tail(alpha * mu, mu - ell)


def check_claim_pois(alpha: float, mu_max: int) -> PoissonClaimReport:
    """Check that ``f_ell(mu) <= f_ell(2)`` for every integer ``2 <= mu <= mu_max``.

    Margins are log-ratios so that deep tails (``f`` near 1e-300) still compare
    meaningfully.
    """
    if alpha < 2:
        raise ValueError("alpha must be at least 2")
    if mu_max < 2:
        raise ValueError("mu_max must be at least 2")
    mus = np.arange(2, mu_max + 1)
    values, margins, argmax = {}, {}, {}
    for ell in (1, 2):
        logs = np.array([_log_poisson_lower_tail(alpha * mu, mu - ell) for mu in mus])
        values[ell] = np.exp(logs)
        margins[ell] = logs[0] - logs
        argmax[ell] = int(mus[np.argmax(logs)])
    return PoissonClaimReport(alpha, mu_max, values, margins, argmax)


def _log_poisson_lower_tail(rate: float, t: int) -> float:
    if t < 0:
        return -np.inf
    j = np.arange(int(t) + 1)
    terms = -rate + j * math.log(rate) - gammaln(j + 1)
    top = terms.max()
    return float(top + math.log(np.exp(terms - top).sum()))


@dataclass
class DominationWitness:
    a: int | None
    m: int | None
    ok: bool
    checked_t: list[int] = field(default_factory=list)

    def __iter__(self):
        return iter((self.a, self.m, self.ok))


def shifted_binomial_cdf(a: int, m: int, s: float, ts) -> np.ndarray:
    """CDF of ``a + Bin(m, (s - a) / m)`` at the integers ``ts``."""
    q = 0.0 if m == 0 else (s - a) / m
    q = min(max(q, 0.0), 1.0)
    return binom.cdf(np.asarray(ts) - a, m, q)


def check_domination(p, search_limit: int = 64, tol: float = 1e-12) -> DominationWitness:
    """Find ``a, m`` with ``a + Bin(m, (s - a)/m)`` below ``Y`` in lower tails.

    The lower tails ``P[Y <= t] <= P[Z <= t]`` are compared at every integer
    ``0 <= t <= floor(s) - 1``, the range the main tail bound uses.  Because
    ``Z`` and ``Y`` share the mean ``s``, domination over all ``t`` would force
    equal laws, so the check stops below the mean.  Among the valid pairs the
    one whose CDF is closest to ``Y``'s over the whole support (L1 distance) is
    returned, ties going to the larger ``a`` and then the smaller ``m``.
    """
    p = np.asarray(p, dtype=float)
    s = float(p.sum())
    if s <= 0:
        raise ValueError("sum(p) must be positive")
    ts = list(range(0, math.floor(s + 1e-12)))
    pmf = genbin_pmf(p)
    cdf_y = np.minimum(np.cumsum(pmf), 1.0)
    support = np.arange(len(pmf))
    best, best_key = None, None
    for a in range(0, math.floor(s + 1e-12) + 1):
        frac = s - a
        lo = max(1, math.ceil(frac - 1e-12))
        for m in range(lo, search_limit + 1):
            if frac > m + 1e-12:
                continue
            cdf_z = shifted_binomial_cdf(a, m, s, support)
            if ts and np.any(cdf_y[ts] > cdf_z[ts] + tol):
                continue
            # compare on a common support; beyond both supports the CDFs are 1
            top = max(len(pmf), a + m + 1)
            grid = np.arange(top)
            cy = np.ones(top)
            cy[: len(cdf_y)] = cdf_y
            dist = float(np.abs(cy - shifted_binomial_cdf(a, m, s, grid)).sum())
            if (
                best_key is None
                or dist < best_key - 1e-12
                or (dist <= best_key + 1e-12 and a > best[0])
            ):
                best, best_key = (a, m), dist
    if best is None:
        return DominationWitness(None, None, False, ts)
    return DominationWitness(best[0], best[1], True, ts)


def binomial_mass_check(m: int, mu: int, alpha: float) -> dict:
    """Binomial masses at ``mu - 1`` and ``mu - 2`` against the Poisson masses.

    Uses ``Bin(m, alpha mu / m)``; requires ``alpha mu <= m``.
    """
    rate = alpha * mu
    if rate > m:
        raise ValueError("alpha * mu exceeds m")
    q = rate / m
    out = {}
    for ell in (mu - 1, mu - 2):
        if ell < 0:
            continue
        lhs = float(binom.pmf(ell, m, q))
        rhs = math.exp(-rate + ell * math.log(rate) - math.lgamma(ell + 1)) if rate > 0 else float(ell == 0)
        out[ell] = (lhs, rhs, lhs <= rhs * (1 + 1e-12))
    return out
