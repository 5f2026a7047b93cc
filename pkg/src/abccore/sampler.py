"""Fixed-cardinality maximum-entropy sampling with prescribed marginals.

For weights ``w`` over ``M`` coordinates the distribution on ``kappa``-subsets

    mu(S) = prod_{i in S} w_i / e_kappa(w)

is strongly Rayleigh.  Its marginals, normalizer and sequential sampler are
all expressed through elementary symmetric polynomials (ESPs), which are kept
in log-space because fitted weights can span many orders of magnitude.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

SNAP = 1e-12
MASS_TOL = 1e-9


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarginalVector:
    """Target inclusion probabilities ``xp`` with integer total ``kappa``."""

    xp: np.ndarray
    kappa: int

    def __post_init__(self):
        xp = np.asarray(self.xp, dtype=float)
        object.__setattr__(self, "xp", xp)
        if np.any(xp < -SNAP) or np.any(xp > 1 + SNAP):
            raise ValueError("marginals must lie in [0, 1]")
        if abs(xp.sum() - self.kappa) > MASS_TOL * max(1, self.kappa):
            raise ValueError(f"marginals sum to {xp.sum()!r}, expected {self.kappa}")


@dataclass(frozen=True)
class WeightVector:
    """Weights on the fractional coordinates plus the forced partition.

    ``w[j]`` belongs to global coordinate ``frac[j]``; coordinates in
    ``forced_in`` are always sampled, those in ``forced_out`` never.
    """

    w: np.ndarray
    frac: tuple[int, ...]
    forced_in: tuple[int, ...]
    forced_out: tuple[int, ...]
    residual: float = 0.0
    iterations: int = 0

    @property
    def m(self) -> int:
        return len(self.frac) + len(self.forced_in) + len(self.forced_out)

    @property
    def log_w(self) -> np.ndarray:
        return np.log(self.w)

    @classmethod
    def plain(cls, w) -> "WeightVector":
        """All coordinates fractional with the given positive weights."""
        w = np.asarray(w, dtype=float)
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        return cls(w, tuple(range(w.size)), (), ())


def _as_weights(w) -> WeightVector:
    return w if isinstance(w, WeightVector) else WeightVector.plain(w)


# --------------------------------------------------------------------------
# elementary symmetric polynomials


@dataclass(frozen=True)
class EspTable:
    """``log_e[j, r] = log e_r(w_1, ..., w_j)``; entries of ``-inf`` are zeros."""

    log_e: np.ndarray

    def value(self, r: int, j: int | None = None) -> float:
        j = self.log_e.shape[0] - 1 if j is None else j
        return math.exp(self.log_e[j, r])

    def log_value(self, r: int, j: int | None = None) -> float:
        j = self.log_e.shape[0] - 1 if j is None else j
        return float(self.log_e[j, r])


def _prefix_log_esp(log_w: np.ndarray, kappa: int) -> np.ndarray:
    M = log_w.size
    table = np.full((M + 1, kappa + 1), -np.inf)
    table[:, 0] = 0.0
    for j in range(1, M + 1):
        prev = table[j - 1]
        table[j, 1:] = np.logaddexp(prev[1:], log_w[j - 1] + prev[:-1])
    return table


def _suffix_log_esp(log_w: np.ndarray, kappa: int) -> np.ndarray:
    """``out[j, r] = log e_r(w_j, ..., w_M)`` (0-based ``j``; row ``M`` is empty)."""
    return _prefix_log_esp(log_w[::-1], kappa)[::-1]


def esp_table(w, kappa: int) -> EspTable:
    """Prefix ESP table of the fractional weights up to degree ``kappa``."""
    wv = _as_weights(w)
    if kappa > len(wv.frac):
        raise SamplerError(f"kappa={kappa} exceeds the {len(wv.frac)} fractional coordinates")
    return EspTable(_prefix_log_esp(wv.log_w, kappa))


def _log_marginals(log_w: np.ndarray, kappa: int) -> np.ndarray:
    M = log_w.size
    if kappa == 0:
        return np.full(M, -np.inf)
    pre = _prefix_log_esp(log_w, kappa)
    suf = _suffix_log_esp(log_w, kappa)
    # e_{kappa-1}(w without i) = sum_r e_r(w_<i) e_{kappa-1-r}(w_>i)
    left = pre[:M, :kappa]
    right = suf[1:, :kappa][:, ::-1]
    leave_one_out = logsumexp(left + right, axis=1)
    return log_w + leave_one_out - pre[M, kappa]


def inclusion_probabilities(w, kappa: int) -> np.ndarray:
    """Marginals ``P[i in R]`` over the global coordinates."""
    wv = _as_weights(w)
    out = np.zeros(wv.m)
    out[list(wv.forced_in)] = 1.0
    k_frac = kappa - len(wv.forced_in)
    if wv.frac:
        out[list(wv.frac)] = np.exp(_log_marginals(wv.log_w, k_frac))
    return out


# --------------------------------------------------------------------------
# fitting


def partition(xp: MarginalVector) -> tuple[list[int], list[int], list[int]]:
    """Split coordinates into (fractional, forced-in, forced-out)."""
    frac, ones, zeros = [], [], []
    for i, v in enumerate(xp.xp):
        if v <= SNAP:
            zeros.append(i)
        elif v >= 1 - SNAP:
            ones.append(i)
        else:
            frac.append(i)
    return frac, ones, zeros


def fit_max_entropy(xp: MarginalVector, tol: float = 1e-9, max_iter: int = 100_000) -> WeightVector:
    """Weights whose fixed-size distribution reproduces the marginals ``xp``.

    Multiplicative updates on the odds, ``w_i <- w_i * odds(xp_i) / odds(pi_i)``
    with ``odds(p) = p / (1 - p)``, until the largest marginal error on the
    fractional coordinates is at most ``tol``.  The step (a power of the
    update factor) is halved whenever the error grows and recovers otherwise.
    """
    frac, ones, zeros = partition(xp)
    k_frac = xp.kappa - len(ones)
    if k_frac < 0 or k_frac > len(frac):
        raise SamplerError(
            f"infeasible partition: {len(ones)} forced-in, {len(frac)} fractional, kappa={xp.kappa}"
        )
    target = xp.xp[frac]
    if not frac or k_frac == 0:
        if frac:
            raise SamplerError("fractional coordinates present but no mass left for them")
        return WeightVector(np.ones(0), (), tuple(ones), tuple(zeros))
    log_odds = np.log(target) - np.log1p(-target)
    log_w = log_odds.copy()
    base, direction = log_w, None
    step, best = 1.0, np.inf
    residual = np.inf
    for it in range(max_iter + 1):
        log_pi = _log_marginals(log_w, k_frac)
        pi = np.exp(log_pi)
        residual = float(np.abs(pi - target).max())
        if residual <= tol:
            break
        if residual > best and direction is not None:
            step *= 0.5
            log_w = base + step * direction
            continue
        best = residual
        step = min(1.0, 1.5 * step)
        base = log_w - log_w.max()
        direction = log_odds - (log_pi - np.log1p(-np.minimum(pi, 1 - 1e-16)))
        log_w = base + step * direction
    else:
        raise SamplerError(f"max-entropy fit did not converge (worst marginal error {residual:.3g})")
    return WeightVector(np.exp(log_w - log_w.max()), tuple(frac), tuple(ones), tuple(zeros), residual, it)


# --------------------------------------------------------------------------
# sampling


def sample_many(w, kappa: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent draws as a boolean matrix over global coordinates.

    Coordinates are scanned in index order; with ``need`` elements still to
    choose, coordinate ``j`` is taken with probability
    ``w_j e_{need-1}(w_{j+1..}) / e_need(w_{j..})``.
    """
    wv = _as_weights(w)
    out = np.zeros((size, wv.m), dtype=bool)
    out[:, list(wv.forced_in)] = True
    k_frac = kappa - len(wv.forced_in)
    if k_frac == 0 or not wv.frac:
        return out
    log_w = wv.log_w
    suf = _suffix_log_esp(log_w, k_frac)
    need = np.full(size, k_frac)
    for j, coord in enumerate(wv.frac):
        active = need > 0
        if not active.any():
            break
        nd = need[active]
        log_p = log_w[j] + suf[j + 1, nd - 1] - suf[j, nd]
        take = rng.random(nd.size) < np.exp(log_p)
        idx = np.flatnonzero(active)[take]
        out[idx, coord] = True
        need[idx] -= 1
    return out


def sample_fixed_size(w, kappa: int, rng: np.random.Generator) -> frozenset[int]:
    """One draw ``R`` with ``|R| = kappa``."""
    row = sample_many(w, kappa, rng, 1)[0]
    return frozenset(np.flatnonzero(row).tolist())


def exact_subset_distribution(w, kappa: int) -> dict[frozenset[int], float]:
    """Exact probability of every ``kappa``-subset (at most 20 fractional coordinates)."""
    wv = _as_weights(w)
    if len(wv.frac) > 20:
        raise SamplerError("exact enumeration limited to 20 fractional coordinates")
    k_frac = kappa - len(wv.forced_in)
    if not 0 <= k_frac <= len(wv.frac):
        raise SamplerError("kappa incompatible with the forced coordinates")
    base = frozenset(wv.forced_in)
    probs = {}
    for combo in itertools.combinations(range(len(wv.frac)), k_frac):
        probs[base | {wv.frac[j] for j in combo}] = math.prod(wv.w[j] for j in combo)
    total = math.fsum(probs.values())
    return {s: p / total for s, p in probs.items()}


def scale_and_round_marginals(x, alpha: float, m: int | None = None) -> MarginalVector:
    """Scale ``x`` by ``alpha``, cap at one and spread the surplus to reach an integer size.

    ``kappa = min(m, ceil(alpha * k))``; the surplus ``kappa - sum(min(alpha x, 1))``
    is distributed proportionally to the slack ``1 - min(alpha x_i, 1)``.
    """
    x = np.asarray(getattr(x, "x", x), dtype=float)
    m = x.size if m is None else m
    k = int(round(x.sum()))
    kappa = min(m, math.ceil(alpha * k - 1e-12))
    base = np.minimum(alpha * x, 1.0)
    surplus = kappa - base.sum()
    slack = 1.0 - base
    if surplus > 0 and slack.sum() > 0:
        xp = base + surplus * slack / slack.sum()
    else:
        xp = base
    xp = np.clip(xp, 0.0, 1.0)
    return MarginalVector(xp, kappa)


# --------------------------------------------------------------------------
# one-dimensional projections


def projection_law(w, kappa: int, F) -> np.ndarray:
    """Exact law of ``|R & F|``: entry ``j`` is ``P[|R & F| = j]``."""
    wv = _as_weights(w)
    F = set(F)
    fixed = sum(1 for i in wv.forced_in if i in F)
    k_frac = kappa - len(wv.forced_in)
    inside = np.array([j for j, c in enumerate(wv.frac) if c in F], dtype=int)
    outside = np.array([j for j, c in enumerate(wv.frac) if c not in F], dtype=int)
    log_w = wv.log_w
    e_in = _prefix_log_esp(log_w[inside], min(k_frac, inside.size))[-1]
    e_out = _prefix_log_esp(log_w[outside], min(k_frac, outside.size))[-1]
    law = np.zeros(len(F) + 1)
    logs = np.full(len(F) + 1, -np.inf)
    for j in range(e_in.size):
        r = k_frac - j
        if 0 <= r < e_out.size:
            logs[fixed + j] = e_in[j] + e_out[r]
    law = np.exp(logs - logsumexp(logs))
    return law


def bernoulli_decomposition(pmf, tol: float = 1e-8) -> np.ndarray | None:
    """Bernoulli means whose independent sum has law ``pmf``, or ``None``.

    The generating polynomial ``sum_j pmf[j] z^j`` must have only real,
    nonpositive roots (up to ``tol``); a root ``-a`` gives mean ``1/(1+a)``.
    """
    pmf = np.asarray(pmf, dtype=float)
    nz = np.flatnonzero(pmf > 0)
    if nz.size == 0:
        return None
    low, high = nz[0], nz[-1]
    coeffs = pmf[low : high + 1]
    means = [1.0] * int(low)
    if high > low:
        roots = np.roots(coeffs[::-1])
        scale = max(1.0, float(np.abs(roots).max()))
        if np.any(np.abs(roots.imag) > tol * scale) or np.any(roots.real > tol * scale):
            return None
        a = np.maximum(-roots.real, 0.0)
        means += (1.0 / (1.0 + a)).tolist()
    return np.array(means)


def bernoulli_sum_pmf(means) -> np.ndarray:
    """Exact law of a sum of independent Bernoulli variables."""
    pmf = np.array([1.0])
    for p in means:
        nxt = np.zeros(pmf.size + 1)
        nxt[:-1] += pmf * (1 - p)
        nxt[1:] += pmf * p
        pmf = nxt
    return pmf
