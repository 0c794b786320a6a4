import pytest
from hypothesis import given
from hypothesis import strategies as st

from xae.labels import (LabelSet, PartitionError, PartitionSpec, active_segments, require_valid,
                        semaphore, validate)

label_sets = st.frozensets(st.integers(0, 9), min_size=1, max_size=6)


def test_semaphore_examples():
    assert semaphore({0, 1}, {1}) == 1
    assert semaphore({0, 1}, {2}) == 0
    # the mutual segment is active for both groups
    assert semaphore({1, 2}, {1}) == 1


@given(label_sets, label_sets)
def test_semaphore_symmetric_and_matches_intersection(a, b):
    assert semaphore(a, b) == semaphore(b, a) == int(bool(a & b))


@given(label_sets)
def test_semaphore_reflexive(s):
    assert semaphore(s, s) == 1


def test_label_set_canonical():
    s = LabelSet([3, 1, 2])
    assert list(s) == [1, 2, 3]
    with pytest.raises(PartitionError):
        LabelSet([1, 1])
    with pytest.raises(PartitionError):
        LabelSet([-1])


def test_active_segments_toy(toy_spec):
    assert active_segments({0, 1}, toy_spec) == [0, 1]
    assert active_segments({1, 2}, toy_spec) == [1, 2]


def test_active_segments_identity_partition():
    spec = PartitionSpec([5], [[5]], [([5], 4)])
    assert active_segments({5}, spec) == [0]


def test_active_segments_unknown_group(toy_spec):
    with pytest.raises(PartitionError):
        active_segments({0, 2}, toy_spec)


@given(st.lists(label_sets, min_size=1, max_size=4), st.lists(label_sets, min_size=1, max_size=5))
def test_active_segments_brute_force(groups, segs):
    universe = sorted(set().union(*groups, *segs))
    spec = PartitionSpec(universe, [sorted(g) for g in groups], [(sorted(t), 1) for t in segs])
    for g in groups:
        got = active_segments(g, spec)
        assert got == [j for j, t in enumerate(segs) if g & t]
        assert got == sorted(set(got))


def test_offsets_and_total_width(toy_spec):
    assert toy_spec.total_width == 8
    assert toy_spec.offsets == [0, 3, 5]
    assert [toy_spec.segment_slice(j) for j in range(3)] == [slice(0, 3), slice(3, 5), slice(5, 8)]


def test_validate_examples(toy_spec):
    rep = validate(toy_spec)
    assert rep.ok and not rep.errors and not rep.warnings

    bad = PartitionSpec([0, 1, 2], [[0, 1]], [([9], 2)])
    assert any("label outside universe" in e for e in validate(bad).errors)

    idle = PartitionSpec([0, 1, 2, 3], [[0, 1], [1, 2]], [([0], 1), ([3], 1)])
    rep = validate(idle)
    assert rep.ok
    assert any("segment never activated" in w for w in rep.warnings)


def test_validate_reports_instead_of_raising():
    spec = PartitionSpec([0, 1], [[]], [([0], 0)])
    rep = validate(spec)
    assert not rep.ok
    assert any("empty" in e for e in rep.errors)
    assert any("width" in e for e in rep.errors)
    with pytest.raises(PartitionError):
        require_valid(spec)


def test_from_names_and_dict_round_trip():
    spec = PartitionSpec.from_names(["zero", "one", "two"], [["zero", "one"], ["one", "two"]],
                                    [{"labels": ["zero"], "width": 2}, {"labels": ["one"], "width": 1},
                                     {"labels": ["two"], "width": 2}])
    assert [list(s) for s in spec.source_groups] == [[0, 1], [1, 2]]
    back = PartitionSpec.from_dict(spec.to_dict())
    assert back.to_dict() == spec.to_dict()
    assert back.name_of(2) == "two"
    with pytest.raises(PartitionError):
        PartitionSpec.from_names(["a"], [["b"]], [{"labels": ["a"], "width": 1}])
