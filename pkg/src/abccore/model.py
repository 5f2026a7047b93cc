"""Election data types, preference semantics and instance serialization.

Two text formats are supported:

``json``
    ``{"candidates": [...], "voters": [{"id": ..., "approves": [...]}, ...]}``
    with approvals given by candidate name.
``lines``
    first line ``m n``, then one line per voter holding the space-separated
    0-based indices of approved candidates (an empty line is an empty set).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class InstanceFormatError(ValueError):
    """Raised when an instance file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Instance:
    """An approval-based committee election.

    Parameters
    ----------
    candidates : tuple of str
        Candidate identifiers, in significant order.
    approvals : tuple of frozenset of int
        ``approvals[v]`` is the set of candidate indices approved by voter ``v``.
    voter_ids : tuple of str, optional
        Voter identifiers; defaults to ``"0", "1", ...``.
    """

    candidates: tuple[str, ...]
    approvals: tuple[frozenset[int], ...]
    voter_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(str(c) for c in self.candidates))
        object.__setattr__(
            self, "approvals", tuple(frozenset(int(i) for i in a) for a in self.approvals)
        )
        if not self.voter_ids:
            object.__setattr__(self, "voter_ids", tuple(str(v) for v in range(len(self.approvals))))
        else:
            object.__setattr__(self, "voter_ids", tuple(str(v) for v in self.voter_ids))
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidate identifiers must be unique")
        if len(set(self.voter_ids)) != len(self.voter_ids):
            raise ValueError("voter identifiers must be unique")
        if len(self.voter_ids) != len(self.approvals):
            raise ValueError("one identifier per voter required")
        m = len(self.candidates)
        for v, approved in enumerate(self.approvals):
            for i in approved:
                if not 0 <= i < m:
                    raise ValueError(f"voter {v} approves out-of-range candidate {i}")

    @classmethod
    def from_approvals(cls, m: int, approvals: Iterable[Iterable[int]]) -> "Instance":
        """Build an instance with candidates named ``"0".."m-1"``."""
        return cls(tuple(str(i) for i in range(m)), tuple(frozenset(a) for a in approvals))

    @property
    def n(self) -> int:
        return len(self.approvals)

    @property
    def m(self) -> int:
        return len(self.candidates)

    def approval_matrix(self) -> np.ndarray:
        """Boolean ``n x m`` matrix with ``[v, i]`` true iff ``v`` approves ``i``."""
        mat = np.zeros((self.n, self.m), dtype=bool)
        for v, approved in enumerate(self.approvals):
            mat[v, list(approved)] = True
        return mat

    def approval_masks(self) -> list[int]:
        """Approval sets as Python integer bitmasks (bit ``i`` = candidate ``i``)."""
        return [sum(1 << i for i in a) for a in self.approvals]

    def restrict(self, voters: Sequence[int], candidates: Sequence[int]) -> "Instance":
        """Sub-election on the given voters and candidates, approvals intersected.

        Candidate indices are renumbered to positions in ``candidates``.
        """
        position = {c: j for j, c in enumerate(candidates)}
        approvals = [
            frozenset(position[i] for i in self.approvals[v] if i in position) for v in voters
        ]
        return Instance(
            tuple(self.candidates[c] for c in candidates),
            tuple(approvals),
            tuple(self.voter_ids[v] for v in voters),
        )


@dataclass(frozen=True)
class Committee:
    """A set of candidate indices together with the target size ``K``."""

    members: frozenset[int]
    K: int

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(i) for i in self.members))
        if self.K < 1:
            raise ValueError("target size K must be positive")

    def __len__(self):
        return len(self.members)

    def sorted(self) -> list[int]:
        return sorted(self.members)


def utility(inst: Instance, v: int, S: Iterable[int]) -> int:
    """Number of approved candidates of voter ``v`` inside ``S``."""
    return len(inst.approvals[v].intersection(S))


def prefers(inst: Instance, v: int, T: Iterable[int], S: Iterable[int]) -> bool:
    """True iff voter ``v`` strictly prefers ``T`` to ``S``."""
    return utility(inst, v, T) > utility(inst, v, S)


def fractional_utility(inst: Instance, v: int, x: Sequence[float]) -> float:
    """Utility of voter ``v`` for the fractional allocation ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.m,):
        raise ValueError(f"allocation has dimension {x.shape}, expected ({inst.m},)")
    return float(sum(x[i] for i in sorted(inst.approvals[v])))


def fractional_utilities(inst: Instance, x: Sequence[float]) -> np.ndarray:
    """Vector of fractional utilities of all voters."""
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.m,):
        raise ValueError(f"allocation has dimension {x.shape}, expected ({inst.m},)")
    return inst.approval_matrix().astype(float) @ x


# --------------------------------------------------------------------------
# serialization


def parse_instance(text: str | bytes, fmt: str = "json") -> Instance:
    """Parse an instance from ``text`` in format ``"json"`` or ``"lines"``."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if fmt == "json":
        return _parse_json(text)
    if fmt == "lines":
        return _parse_lines(text)
    raise ValueError(f"unknown instance format {fmt!r}")


def serialize_instance(inst: Instance, fmt: str = "json") -> str:
    """Inverse of :func:`parse_instance`."""
    if fmt == "json":
        doc = {
            "candidates": list(inst.candidates),
            "voters": [
                {"id": vid, "approves": [inst.candidates[i] for i in sorted(a)]}
                for vid, a in zip(inst.voter_ids, inst.approvals)
            ],
        }
        return json.dumps(doc, indent=1) + "\n"
    if fmt == "lines":
        out = [f"{inst.m} {inst.n}"]
        out += [" ".join(str(i) for i in sorted(a)) for a in inst.approvals]
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown instance format {fmt!r}")


def guess_format(path: str) -> str:
    return "json" if str(path).endswith(".json") else "lines"


def _parse_json(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise InstanceFormatError(f"malformed JSON: {err.msg} (column {err.colno})", err.lineno)
    if not isinstance(doc, dict) or "candidates" not in doc or "voters" not in doc:
        raise InstanceFormatError("expected an object with 'candidates' and 'voters'")
    candidates = doc["candidates"]
    if not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates):
        raise InstanceFormatError("'candidates' must be a list of strings")
    index: dict[str, int] = {}
    for pos, c in enumerate(candidates):
        if c in index:
            raise InstanceFormatError(f"duplicate candidate {c!r} at position {pos}")
        index[c] = pos
    voter_ids, approvals = [], []
    seen: set[str] = set()
    for pos, voter in enumerate(doc["voters"]):
        if not isinstance(voter, dict) or "approves" not in voter:
            raise InstanceFormatError(f"voter at position {pos} lacks 'approves'")
        vid = str(voter.get("id", pos))
        if vid in seen:
            raise InstanceFormatError(f"duplicate voter id {vid!r} at position {pos}")
        seen.add(vid)
        approved = set()
        for name in voter["approves"]:
            if name not in index:
                raise InstanceFormatError(
                    f"voter {vid!r} (position {pos}) approves unknown candidate {name!r}"
                )
            approved.add(index[name])
        voter_ids.append(vid)
        approvals.append(frozenset(approved))
    return Instance(tuple(candidates), tuple(approvals), tuple(voter_ids))


def _parse_lines(text: str) -> Instance:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise InstanceFormatError("empty input", 1)
    head = lines[0].split()
    if len(head) != 2 or not all(tok.isdigit() for tok in head):
        raise InstanceFormatError("header must be 'm n'", 1)
    m, n = int(head[0]), int(head[1])
    body = lines[1:]
    # "m n\n" with one empty-set voter loses its line to the final newline
    if len(body) == n - 1:
        body.append("")
    if len(body) != n:
        raise InstanceFormatError(f"expected {n} voter lines, found {len(body)}", len(lines))
    approvals = []
    for lineno, line in enumerate(body, start=2):
        approved = set()
        for tok in line.split():
            if not tok.lstrip("-").isdigit():
                raise InstanceFormatError(f"bad candidate index {tok!r}", lineno)
            i = int(tok)
            if not 0 <= i < m:
                raise InstanceFormatError(f"candidate index {i} out of range [0, {m})", lineno)
            if i in approved:
                raise InstanceFormatError(f"duplicate candidate index {i}", lineno)
            approved.add(i)
        approvals.append(frozenset(approved))
    return Instance.from_approvals(m, approvals)


def read_instance(path: str, fmt: str | None = None) -> Instance:
    with open(path, "rb") as fh:
        return parse_instance(fh.read(), fmt or guess_format(path))


def write_instance(inst: Instance, path: str, fmt: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_instance(inst, fmt or guess_format(path)))
