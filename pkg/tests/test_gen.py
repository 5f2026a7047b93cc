from __future__ import annotations

import pytest

from abccore.gen import GenSpec, generate, make_rng


def test_party_list_reproduces_two_party_example(ex1):
    inst = generate(GenSpec("party_list", 5, 5, voter_parties=(3, 2), candidate_parties=(3, 2)))
    assert inst.approvals == ex1.approvals


def test_impartial_saturates():
    inst = generate(GenSpec("impartial", 20, 10, seed=3, q=0.999))
    assert inst.approval_matrix().mean() > 0.99


def test_same_seed_same_instance():
    for model in ("impartial", "euclidean1d"):
        spec = GenSpec(model, 12, 9, seed=77)
        assert generate(spec) == generate(spec)


def test_distinct_seeds_give_distinct_instances():
    seen = {generate(GenSpec("impartial", 10, 8, seed=s)).approvals for s in range(100)}
    assert len(seen) == 100


def test_party_list_blocks_are_disjoint():
    inst = generate(GenSpec("party_list", 9, 7, voter_parties=(4, 0, 5), candidate_parties=(2, 3, 2)))
    blocks = {a for a in inst.approvals}
    assert blocks == {frozenset({0, 1}), frozenset({5, 6})}
    for a, b in [(x, y) for x in blocks for y in blocks if x != y]:
        assert not a & b


def test_euclidean_radius_semantics():
    inst = generate(GenSpec("euclidean1d", 30, 10, seed=5, radius=0.1))
    rng = make_rng(5)
    voters, cands = rng.random(30), rng.random(10)
    for v in range(30):
        assert inst.approvals[v] == frozenset(i for i in range(10) if abs(voters[v] - cands[i]) <= 0.1)


@pytest.mark.parametrize(
    "spec",
    [
        GenSpec("mystery", 3, 3),
        GenSpec("impartial", 0, 3),
        GenSpec("impartial", 3, 3, q=1.0),
        GenSpec("party_list", 3, 3, voter_parties=(2,), candidate_parties=(3,)),
        GenSpec("party_list", 3, 3, voter_parties=(3,), candidate_parties=(1, 2)),
        GenSpec("euclidean1d", 3, 3, radius=0.0),
        GenSpec("impartial", 3, 3, seed=-1),
    ],
)
def test_invalid_specs_rejected(spec):
    with pytest.raises(ValueError):
        generate(spec)
