"""Random instance generators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Instance

MODELS = ("impartial", "party_list", "euclidean1d")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for every random draw in the package."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class GenSpec:
    """Parameters of a random election.

    ``q`` is used by ``impartial``, ``voter_parties``/``candidate_parties`` by
    ``party_list`` and ``radius`` by ``euclidean1d``.
    """

    model: str
    n: int
    m: int
    seed: int = 0
    q: float = 0.3
    voter_parties: tuple[int, ...] = field(default=())
    candidate_parties: tuple[int, ...] = field(default=())
    radius: float = 0.15

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.model == "impartial" and not 0 < self.q < 1:
            raise ValueError("approval probability q must lie in (0, 1)")
        if self.model == "party_list":
            if not self.voter_parties or len(self.voter_parties) != len(self.candidate_parties):
                raise ValueError("voter and candidate party sizes must have equal length")
            if sum(self.voter_parties) != self.n or sum(self.candidate_parties) != self.m:
                raise ValueError("party sizes must sum to n (voters) and m (candidates)")
            if min(self.voter_parties) < 0 or min(self.candidate_parties) < 0:
                raise ValueError("party sizes must be nonnegative")
        if self.model == "euclidean1d" and not self.radius > 0:
            raise ValueError("approval radius must be positive")


def generate(spec: GenSpec) -> Instance:
    """Draw an instance; deterministic given ``spec.seed``."""
    spec.validate()
    rng = make_rng(spec.seed)
    if spec.model == "impartial":
        mat = rng.random((spec.n, spec.m)) < spec.q
    elif spec.model == "party_list":
        mat = np.zeros((spec.n, spec.m), dtype=bool)
        v0 = c0 = 0
        for nv, nc in zip(spec.voter_parties, spec.candidate_parties):
            mat[v0 : v0 + nv, c0 : c0 + nc] = True
            v0 += nv
            c0 += nc
    else:
        voters = rng.random(spec.n)
        cands = rng.random(spec.m)
        mat = np.abs(voters[:, None] - cands[None, :]) <= spec.radius
    approvals = [frozenset(np.flatnonzero(row).tolist()) for row in mat]
    return Instance.from_approvals(spec.m, approvals)
