import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorfeat.errors import (
    ArityError,
    BoundsError,
    DuplicateError,
    FormatError,
    OracleCapError,
)
from tensorfeat.tensor import (
    CooTensor,
    ModeOrder,
    load_frostt,
    permute,
    reference_extract,
    sort_by_mode_order,
    write_frostt,
)


def load_text(text, **kw):
    return load_frostt(io.BytesIO(text.encode()), **kw)


def dump(t):
    buf = io.BytesIO()
    write_frostt(t, buf)
    return buf.getvalue().decode()


class TestLoad:
    def test_example_dims_from_max_index(self):
        t = load_text("1 1 1 1.0\n1 2 2 0.5\n2 1 1 2.0\n")
        assert t.order == 3
        assert t.dims == (2, 2, 2)
        assert t.nnz == 3
        assert t.values.tolist() == [1.0, 0.5, 2.0]

    def test_comments_blank_lines_and_declared_dims(self):
        t = load_text("# header\n\n1 1 1 1e-3\n   \n3 2 1 4\n", declared_dims=(5, 5, 5))
        assert t.dims == (5, 5, 5)
        assert t.nnz == 2

    def test_empty_stream(self):
        with pytest.raises(FormatError):
            load_text("")

    def test_empty_stream_with_declared_dims(self):
        t = load_text("# nothing\n", declared_dims=(2, 3, 4))
        assert t.nnz == 0 and t.dims == (2, 3, 4)

    def test_duplicate_rejected(self):
        with pytest.raises(DuplicateError) as e:
            load_text("1 1 1 1.0\n1 1 1 2.0\n")
        assert "line 2" in str(e.value)

    def test_duplicate_sum_policy(self):
        t = load_text("1 1 1 1.0\n2 2 2 1.0\n1 1 1 2.0\n", duplicates="sum")
        assert t.nnz == 2
        assert dict(zip(map(tuple, t.coords1().tolist()), t.values.tolist()))[(1, 1, 1)] == 3.0

    def test_ragged_line_reports_line_number(self):
        with pytest.raises(FormatError) as e:
            load_text("1 1 1 1.0\n1 2 1.0\n")
        assert "line 2" in str(e.value)

    @pytest.mark.parametrize("bad", ["0 1 1 1.0\n", "-1 1 1 1.0\n"])
    def test_nonpositive_index(self, bad):
        with pytest.raises(IndexError):
            load_text(bad)

    def test_index_beyond_declared(self):
        with pytest.raises(BoundsError) as e:
            load_text("1 1 1 1\n1 4 1 1\n", declared_dims=(2, 3, 2))
        assert "line 2" in str(e.value)

    def test_non_integer_index(self):
        with pytest.raises(FormatError):
            load_text("1 a 1 1.0\n")

    def test_bad_value(self):
        with pytest.raises(FormatError):
            load_text("1 1 1 abc\n")

    def test_indices_beyond_int64(self):
        big = 2**63 + 5
        t = load_text(f"1 1 {big} 1.0\n1 2 1 1.0\n")
        assert t.dims[2] == big
        assert t.indices.dtype == np.uint64
        assert int(t.indices[2].max()) == big - 1

    def test_order_mismatch_with_declared(self):
        with pytest.raises(FormatError):
            load_text("1 1 1 1\n", declared_dims=(2, 2))


class TestWrite:
    def test_single_element(self):
        assert dump(CooTensor.from_coords((1, 1, 1), [(1, 1, 1)], [1.0])) == "1 1 1 1.0\n"

    def test_empty(self):
        assert dump(CooTensor((2, 2, 2), np.zeros((3, 0), dtype=np.uint64))) == ""

    def test_round_trip_example(self, example_tensor):
        back = load_text(dump(example_tensor))
        assert back.coordinate_set() == example_tensor.coordinate_set()

    @settings(max_examples=40, deadline=None)
    @given(
        dims=st.lists(st.integers(1, 6), min_size=3, max_size=5),
        seed=st.integers(0, 2**32 - 1),
        data=st.data(),
    )
    def test_round_trip_property(self, dims, seed, data):
        rng = np.random.default_rng(seed)
        n = data.draw(st.integers(1, 30))
        idx = np.unique(np.stack([rng.integers(0, d, n) for d in dims]).astype(np.uint64), axis=1)
        vals = rng.normal(size=idx.shape[1]) * 10.0 ** rng.integers(-30, 30, idx.shape[1])
        t = CooTensor(dims, idx, vals)
        back = load_text(dump(t), declared_dims=dims)
        assert back == t


class TestModeOrder:
    def test_rejects_non_permutation(self):
        with pytest.raises(ArityError):
            ModeOrder((1, 1, 2))

    def test_permute_length_mismatch(self, example_tensor):
        with pytest.raises(ArityError):
            permute(example_tensor, (1, 2))

    def test_identity(self, example_tensor):
        assert permute(example_tensor, (1, 2, 3)) == example_tensor

    def test_three_cycles_return_to_start(self, example_tensor):
        t = example_tensor
        for _ in range(3):
            t = permute(t, (2, 3, 1))
        assert t == example_tensor

    def test_coordinate_shuffle(self):
        t = CooTensor.from_coords((3, 4, 5), [(1, 2, 2)])
        p = permute(t, (3, 1, 2))
        assert p.dims == (5, 3, 4)
        assert p.coords1().tolist() == [[2, 1, 2]]


class TestSort:
    coords = [(2, 1, 1), (1, 2, 2), (1, 1, 1)]

    def test_identity_order(self):
        t = sort_by_mode_order(CooTensor.from_coords((2, 2, 2), self.coords), (1, 2, 3))
        assert t.coords1().tolist() == [[1, 1, 1], [1, 2, 2], [2, 1, 1]]

    def test_rotated_order(self):
        t = sort_by_mode_order(CooTensor.from_coords((2, 2, 2), self.coords), (3, 1, 2))
        assert t.coords1().tolist() == [[1, 1, 1], [2, 1, 1], [1, 2, 2]]

    def test_idempotent(self, example_tensor):
        once = sort_by_mode_order(example_tensor, (2, 3, 1))
        assert sort_by_mode_order(once, (2, 3, 1)) == once

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), perm=st.permutations([1, 2, 3, 4]))
    def test_sorted_permutation_of_input(self, seed, perm):
        rng = np.random.default_rng(seed)
        idx = np.unique(rng.integers(0, 4, (4, 40)).astype(np.uint64), axis=1)
        t = CooTensor((4, 4, 4, 4), idx, rng.random(idx.shape[1]))
        s = sort_by_mode_order(t, perm)
        assert s.coordinate_set() == t.coordinate_set()
        keys = [tuple(row[p - 1] for p in perm) for row in s.coords1().tolist()]
        assert keys == sorted(keys)


class TestReferenceExtract:
    def test_example(self, example_tensor):
        ca = reference_extract(example_tensor, (1, 2, 3))
        assert ca.n_nz_slc.tolist() == [2, 1]
        assert ca.n_fib_slc.tolist() == [2, 1]
        assert ca.n_nz_fib.tolist() == [1, 1, 1]

    def test_dense(self, dense222):
        ca = reference_extract(dense222, (1, 2, 3))
        assert ca.n_nz_slc.tolist() == [4, 4]
        assert ca.n_fib_slc.tolist() == [2, 2]
        assert ca.n_nz_fib.tolist() == [2, 2, 2, 2]

    def test_empty(self):
        ca = reference_extract(CooTensor((2, 2, 2), np.zeros((3, 0), dtype=np.uint64)), (1, 2, 3))
        assert ca.n_nz_slc.size == ca.n_fib_slc.size == ca.n_nz_fib.size == 0

    def test_cap(self):
        t = CooTensor((10**5, 10**5, 2), np.zeros((3, 1), dtype=np.uint64))
        with pytest.raises(OracleCapError):
            reference_extract(t, (1, 2, 3))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), perm=st.permutations([1, 2, 3, 4]))
    def test_sum_invariants(self, seed, perm):
        rng = np.random.default_rng(seed)
        idx = np.unique(rng.integers(0, 5, (4, 60)).astype(np.uint64), axis=1)
        t = CooTensor((5, 5, 5, 5), idx)
        assert reference_extract(t, perm).check_sums(t.nnz)
