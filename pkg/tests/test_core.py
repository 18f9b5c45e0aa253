import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sporc.core import (
    Dataset,
    SplitSpec,
    dataset_io,
    four_way_split,
    make_rng,
    read_dataset,
    split_indices,
    write_dataset,
)
from sporc.datagen import KnapsackGenSpec, gen_knapsack
from sporc.errors import DimMismatch, EmptyPart, ParseError


def _random_dataset(n, p=3, d=2, m_c=1, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, p)), rng.normal(size=(n, d)), rng.normal(size=(n, m_c, d)))


def test_split_equal_quarters():
    parts = split_indices(100, SplitSpec((0.25, 0.25, 0.25, 0.25), seed=3))
    assert [p.size for p in parts] == [25, 25, 25, 25]
    joined = np.concatenate(parts)
    assert np.unique(joined).size == 100


def test_split_remainder_goes_to_training():
    sizes = [p.size for p in split_indices(10, SplitSpec((0.1, 0.1, 0.7, 0.1)))]
    assert sizes == [1, 1, 7, 1]
    assert SplitSpec((0.3, 0.3, 0.1, 0.3)).sizes(7) == [2, 2, 1, 2]


def test_split_is_deterministic():
    spec = SplitSpec(seed=11)
    a = split_indices(57, spec)
    b = split_indices(57, spec)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = split_indices(57, SplitSpec(seed=12))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_split_errors():
    with pytest.raises(EmptyPart):
        split_indices(3, SplitSpec())
    with pytest.raises(EmptyPart):
        split_indices(5, SplitSpec((0.1, 0.1, 0.7, 0.1)))
    with pytest.raises(ValueError):
        SplitSpec((0.5, 0.5, 0.1, 0.0))
    with pytest.raises(ValueError):
        SplitSpec((0.5, 0.5))


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 400), st.integers(0, 2**32 - 1))
def test_split_partitions_every_index(n, seed):
    parts = split_indices(n, SplitSpec(seed=seed))
    joined = np.sort(np.concatenate(parts))
    assert np.array_equal(joined, np.arange(n))


def test_four_way_split_is_multiset_partition():
    ds = _random_dataset(40)
    parts = four_way_split(ds, SplitSpec(seed=2))
    assert sum(p.n for p in parts) == 40
    rows = sorted(map(tuple, np.concatenate([p.x for p in parts])))
    assert rows == sorted(map(tuple, ds.x))


def test_dataset_rejects_bad_shapes():
    with pytest.raises(DimMismatch):
        Dataset(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((3, 1, 2)))
    with pytest.raises(DimMismatch):
        Dataset(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 1, 4)))
    with pytest.raises(ValueError):
        Dataset(np.full((1, 2), np.nan), np.zeros((1, 2)), np.zeros((1, 1, 2)))


def test_dataset_is_immutable():
    ds = _random_dataset(3)
    with pytest.raises(AttributeError):
        ds.x = None
    with pytest.raises(ValueError):
        ds.x[0, 0] = 1.0


def test_round_trip_knapsack(tmp_path):
    ds = gen_knapsack(KnapsackGenSpec(n=3, seed=4))
    path = tmp_path / "d.jsonl"
    dataset_io(path, "write", ds)
    assert dataset_io(path, "read") == ds


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(2, 4), st.integers(1, 3), st.integers(0, 10**6))
def test_round_trip_is_bit_exact(n, p, d, m_c, seed):
    import tempfile
    from pathlib import Path

    ds = _random_dataset(n, p, d, m_c, seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.jsonl"
        write_dataset(path, ds)
        back = read_dataset(path)
    assert back == ds


def test_read_missing_field_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"x":[1],"c":[1,2],"a":[[1,2]]}\n{"x":[1],"c":[1,2]}\n')
    with pytest.raises(ParseError, match="line 2"):
        read_dataset(path)


def test_read_inconsistent_dims(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"x":[1],"c":[1,2],"a":[[1,2]]}\n{"x":[1,2],"c":[1,2],"a":[[1,2]]}\n')
    with pytest.raises(DimMismatch):
        read_dataset(path)


def test_read_invalid_json(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("{not json}\n")
    with pytest.raises(ParseError, match="line 1"):
        read_dataset(path)


def test_read_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert read_dataset(path).n == 0


def test_rng_streams_are_independent_and_repeatable():
    a = make_rng(7, "split").random(5)
    b = make_rng(7, "split").random(5)
    c = make_rng(7, "noise").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
