from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abccore.model import (
    Committee,
    Instance,
    InstanceFormatError,
    fractional_utilities,
    fractional_utility,
    parse_instance,
    prefers,
    read_instance,
    serialize_instance,
    utility,
    write_instance,
)

A, B, C, D, E = range(5)


@st.composite
def instances(draw, max_m=6, max_n=8):
    m = draw(st.integers(1, max_m))
    n = draw(st.integers(0, max_n))
    sets = draw(st.lists(st.frozensets(st.integers(0, m - 1)), min_size=n, max_size=n))
    return Instance.from_approvals(m, sets)


def test_parse_lines_two_party(ex1):
    inst = parse_instance("5 5\n0 1 2\n0 1 2\n0 1 2\n3 4\n3 4", "lines")
    assert inst.m == 5 and inst.n == 5
    assert inst.approvals == ex1.approvals


def test_parse_lines_single_empty_voter():
    inst = parse_instance("3 1\n", "lines")
    assert inst.n == 1 and inst.approvals[0] == frozenset()
    assert parse_instance("3 1\n\n", "lines").approvals == (frozenset(),)


def test_parse_json_maps_names_to_indices():
    inst = parse_instance('{"candidates": ["a", "b"], "voters": [{"id": "x", "approves": ["b"]}]}')
    assert inst.approvals == (frozenset({1}),)
    assert inst.voter_ids == ("x",)


@pytest.mark.parametrize(
    "text, fmt, line",
    [
        ("2 1\n0 2\n", "lines", 2),
        ("2 1\n0 0\n", "lines", 2),
        ("2 x\n", "lines", 1),
        ("2 3\n0\n", "lines", None),
        ("2 1\n0 a\n", "lines", 2),
        ('{"candidates": ["a", "a"], "voters": []}', "json", None),
        ('{"candidates": ["a"], "voters": [{"id": "1", "approves": []}, {"id": "1", "approves": []}]}', "json", None),
        ('{"candidates": ["a"], "voters": [{"id": "1", "approves": ["z"]}]}', "json", None),
        ('{"candidates": ["a"], ', "json", 1),
    ],
)
def test_parse_errors_carry_location(text, fmt, line):
    with pytest.raises(InstanceFormatError) as info:
        parse_instance(text, fmt)
    if line is not None:
        assert info.value.line == line
        assert f"line {line}" in str(info.value)


def test_instance_rejects_out_of_range_and_duplicates():
    with pytest.raises(ValueError):
        Instance.from_approvals(2, [{2}])
    with pytest.raises(ValueError):
        Instance(("a", "a"), ())
    with pytest.raises(ValueError):
        Instance(("a",), (frozenset(), frozenset()), ("v", "v"))


def test_utility_examples(ex1):
    assert utility(ex1, 0, {A, B, C}) == 3
    assert utility(ex1, 2, set()) == 0
    assert utility(ex1, 3, {A, B, D}) == 1


def test_prefers_examples(ex1):
    assert prefers(ex1, 3, {D}, {A, B, C})
    assert not prefers(ex1, 3, {D, E}, {D, E})
    assert prefers(ex1, 0, {A, B, C}, {A, B, D})


def test_fractional_utility_examples(ex1):
    x = np.full(5, 0.6)
    assert fractional_utility(ex1, 0, x) == pytest.approx(1.8)
    assert fractional_utility(ex1, 3, x) == pytest.approx(1.2)
    assert np.all(fractional_utilities(ex1, np.zeros(5)) == 0)
    with pytest.raises(ValueError):
        fractional_utility(ex1, 0, np.zeros(4))


def test_committee_validation():
    assert len(Committee(frozenset({1, 2}), 3)) == 2
    with pytest.raises(ValueError):
        Committee(frozenset(), 0)


def test_restrict_renumbers(ex1):
    sub = ex1.restrict([0, 3], [1, 3])
    assert sub.candidates == ("b", "d")
    assert sub.approvals == (frozenset({0}), frozenset({1}))
    assert sub.voter_ids == ("0", "3")


@settings(max_examples=150, deadline=None)
@given(instances())
def test_roundtrip_both_formats(inst):
    lines = serialize_instance(inst, "lines")
    back = parse_instance(lines, "lines")
    assert back.approvals == inst.approvals
    assert serialize_instance(back, "lines") == lines
    js = serialize_instance(inst, "json")
    back = parse_instance(js, "json")
    assert back == inst
    assert serialize_instance(back, "json") == js


@settings(max_examples=100, deadline=None)
@given(instances(), st.data())
def test_utility_monotone(inst, data):
    S = data.draw(st.frozensets(st.integers(0, inst.m - 1)))
    extra = data.draw(st.frozensets(st.integers(0, inst.m - 1)))
    for v in range(inst.n):
        assert utility(inst, v, S) <= utility(inst, v, S | extra)


def test_prefers_matches_utility_exhaustively():
    for m in range(1, 5):
        sets = [frozenset(c) for r in range(m + 1) for c in itertools.combinations(range(m), r)]
        inst = Instance.from_approvals(m, sets)
        for v, T, S in itertools.product(range(inst.n), sets, sets):
            assert prefers(inst, v, T, S) == (utility(inst, v, T) > utility(inst, v, S))


def test_file_io_guesses_format(tmp_path, ex1):
    for name in ("ex.json", "ex.txt"):
        path = tmp_path / name
        write_instance(ex1, str(path))
        assert read_instance(str(path)).approvals == ex1.approvals
    assert (tmp_path / "ex.txt").read_text().startswith("5 5\n")
