import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_stats
from tensorfeat.errors import EmptyDomainError, NonPositiveCountError, ParseError, UnsupportedOrderError
from tensorfeat.extraction import MethodChoice, extract
from tensorfeat.features import (
    STAT_NAMES,
    compare,
    compute_global,
    compute_kind_stats,
    deserialize,
    feature_count,
    serialize,
)
from tensorfeat.tensor import CooTensor


class TestKindStats:
    def test_padded_example(self):
        s = compute_kind_stats([3, 1], 4)
        assert (s.n_nz, s.nz_density, s.max, s.min, s.dev, s.sum) == (2, 0.5, 3, 1, 2, 4)
        assert s.avg_all == 1.0
        assert s.imbal_all == pytest.approx(2 / 3, rel=1e-15)
        assert s.stdev_all == pytest.approx(math.sqrt(1.5), rel=1e-15)
        assert s.cv_all == pytest.approx(1.2247448713915890, rel=1e-15)
        assert s.avg_nz == 2.0
        assert s.imbal_nz == pytest.approx(1 / 3, rel=1e-15)
        assert s.stdev_nz == 1.0
        assert s.cv_nz == 0.5

    def test_uniform_counts(self):
        s = compute_kind_stats([5, 5, 5], 3)
        assert s.imbal_all == s.imbal_nz == 0
        assert s.stdev_all == s.stdev_nz == s.cv_all == s.cv_nz == 0

    def test_empty_kind(self):
        s = compute_kind_stats([], 7)
        assert s.n_all == 7
        assert all(getattr(s, n) == 0 for n in STAT_NAMES if n != "n_all")

    def test_errors(self):
        with pytest.raises(EmptyDomainError):
            compute_kind_stats([], 0)
        with pytest.raises(NonPositiveCountError):
            compute_kind_stats([2, 0], 3)

    def test_order_independent_bits(self):
        counts = np.random.default_rng(1).integers(1, 10**6, 5000)
        a = compute_kind_stats(counts, 10**5)
        b = compute_kind_stats(counts[::-1].copy(), 10**5)
        assert a == b

    def test_huge_counts_stay_exact(self):
        # squares overflow int64, forcing the Python-integer path
        counts = [2**40, 2**40 + 1, 3]
        s = compute_kind_stats(counts, 5)
        ref = exact_stats(counts, 5)
        assert s.stdev_nz == pytest.approx(ref["stdev_nz"], rel=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(
        counts=st.lists(st.integers(1, 10**6), min_size=1, max_size=60),
        extra=st.integers(0, 50),
    )
    def test_matches_rational_oracle(self, counts, extra):
        n_all = len(counts) + extra
        s = compute_kind_stats(counts, n_all)
        ref = exact_stats(counts, n_all)
        for name, want in ref.items():
            assert getattr(s, name) == pytest.approx(want, rel=1e-12, abs=1e-300), name
        assert s.dev == s.max - s.min
        assert s.sum >= s.n_nz
        assert 0 <= s.nz_density <= 1
        # avg_all <= avg_nz, so imbal_all >= imbal_nz
        assert s.imbal_all >= s.imbal_nz - 1e-15 >= -1e-15
        assert (s.cv_nz == 0) == (len(set(counts)) == 1)


class TestGlobal:
    def test_example(self):
        g = compute_global((2, 2, 2), 3, {1: 2, 2: 3, 3: 3}, {(1, 2): 2, (1, 3): 2, (2, 3): 2})
        assert g.d_nz == 3 / 8
        assert (g.nfib_all, g.nfib_nz, g.nslc_all, g.nslc_nz) == (12, 8, 6, 6)
        assert g.d_fib == pytest.approx(2 / 3, rel=1e-16)
        assert g.d_slc == 1.0

    def test_from_extraction(self, example_tensor, dense222):
        g = extract(example_tensor, MethodChoice("hash", "all")).global_features
        assert (g.nnz, g.nfib_nz, g.nslc_nz) == (3, 8, 6)
        d = extract(dense222, MethodChoice("sort", "all")).global_features
        assert d.d_nz == d.d_fib == d.d_slc == 1.0

    def test_empty(self):
        t = CooTensor((3, 3, 3), np.zeros((3, 0), dtype=np.uint64))
        g = extract(t, MethodChoice("hash", "all")).global_features
        assert g.d_nz == g.d_fib == g.d_slc == 0.0


class TestFeatureCount:
    @pytest.mark.parametrize("order,count", [(3, 146), (4, 251), (5, 386)])
    def test_all_modes(self, order, count):
        assert feature_count(order, "all_modes") == count

    def test_top3_matches_three_mode(self):
        assert feature_count(6, "only_3_mode") == 146

    def test_order_too_small(self):
        with pytest.raises(UnsupportedOrderError):
            feature_count(2)


@pytest.fixture
def four_mode_features():
    rng = np.random.default_rng(3)
    dims = (6, 5, 6, 4)
    idx = np.unique(np.stack([rng.integers(0, d, 80) for d in dims]).astype(np.uint64), axis=1)
    return extract(CooTensor(dims, idx), MethodChoice("hash", "all"))


class TestSerialization:
    def test_json_round_trip(self, four_mode_features):
        back = deserialize(serialize(four_mode_features))
        assert back.global_features == four_mode_features.global_features
        assert back.blocks == four_mode_features.blocks
        assert back.meta == four_mode_features.meta

    def test_csv_round_trip(self, four_mode_features):
        back = deserialize(serialize(four_mode_features, "csv"), "csv")
        assert back.global_features == four_mode_features.global_features
        assert back.blocks == four_mode_features.blocks

    def test_csv_rows(self, example_tensor):
        text = serialize(extract(example_tensor, MethodChoice("hash", "all")), "csv").decode()
        rows = [r for r in text.splitlines() if not r.startswith("#")]
        assert rows[0] == "feature_name,kind,modes,value"
        assert len(rows) - 1 == 146

    def test_four_mode_scalars(self, four_mode_features):
        assert len(four_mode_features) == 251
        text = serialize(four_mode_features, "csv").decode()
        assert len([r for r in text.splitlines() if not r.startswith("#")]) - 1 == 251

    def test_stable_block_order(self, four_mode_features):
        doc = json.loads(serialize(four_mode_features))
        keys = [(b["kind"], b["modes"]) for b in doc["blocks"]]
        kinds = ["nz_per_slice", "nz_per_fiber", "fib_per_slice"]
        assert keys == sorted(keys, key=lambda k: (kinds.index(k[0]), tuple(map(int, k[1].split("-")))))

    def test_seventeen_digits(self, example_tensor):
        doc = serialize(extract(example_tensor, MethodChoice("sort", "all"))).decode()
        assert "6.6666666666666663e-01" in doc

    def test_timing_switch(self, example_tensor):
        fs = extract(example_tensor, MethodChoice("sort", "all"))
        assert "wall_time_s" in json.loads(serialize(fs))["meta"]
        assert "wall_time_s" not in json.loads(serialize(fs, include_timing=False))["meta"]

    def test_unknown_kind(self, example_tensor):
        doc = json.loads(serialize(extract(example_tensor, MethodChoice("sort", "all"))))
        doc["blocks"][0]["kind"] = "nz_per_cube"
        with pytest.raises(ParseError):
            deserialize(json.dumps(doc))

    @pytest.mark.parametrize(
        "payload",
        [b"not json", b"[]", b'{"global": {}}', b"\xff\xfe", b'{"global": {"sizes": {"1": 2}}, "blocks": []}'],
    )
    def test_malformed_json(self, payload):
        with pytest.raises(ParseError):
            deserialize(payload)

    def test_malformed_csv(self):
        with pytest.raises(ParseError):
            deserialize("feature_name,kind,modes,value\nsize,global,1,abc\n", "csv")
        with pytest.raises(ParseError):
            deserialize("name,value\n", "csv")

    def test_compare(self, example_tensor, dense222):
        a = extract(example_tensor, MethodChoice("hash", "all"))
        b = extract(dense222, MethodChoice("hash", "all"))
        assert compare(a, a) == []
        assert compare(a, b)
