import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semhash import DataError, SemhashError
from semhash.index import (HashCode, HashCodeSet, MihIndex, build_mih, default_m, hamming,
                           linear_scan_knn, linear_scan_radius)


def random_set(rng, n, dim, shuffle_ids=True):
    ids = rng.permutation(n) * 7 + 3 if shuffle_ids else None
    return HashCodeSet.from_bits(rng.random((n, dim)) < 0.5, ids)


class TestHamming:
    def test_self(self, rng):
        c = HashCode.from_bits(rng.random(37) < 0.5)
        assert hamming(c, c) == 0

    def test_complement(self, rng):
        bits = rng.random(64) < 0.5
        assert hamming(HashCode.from_bits(bits), HashCode.from_bits(~bits)) == 64

    def test_hand_value(self):
        assert hamming(HashCode.from_string("10110"), HashCode.from_string("10011")) == 2

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            hamming(HashCode.from_string("10"), HashCode.from_string("100"))

    def test_round_trip_bits(self, rng):
        bits = rng.random((5, 130)) < 0.5
        assert np.array_equal(HashCodeSet.from_bits(bits).bits(), bits)


class TestMihBuild:
    def test_substring_widths(self, rng):
        idx = build_mih(random_set(rng, 100, 30), m=4)
        assert sorted(idx.widths) == [7, 7, 8, 8] and sum(idx.widths) == 30
        for t in idx.tables:
            assert sorted(t.postings.tolist()) == list(range(100))

    def test_m_too_large(self, rng):
        with pytest.raises(SemhashError):
            build_mih(random_set(rng, 10, 8), m=9)

    def test_default_m(self):
        assert default_m(64, 10**5) == round(64 / np.log2(10**5))
        assert default_m(16, 1) == 16
        assert default_m(128, 10**6) >= 2


class TestQueries:
    def test_radius_zero(self, rng):
        s = random_set(rng, 200, 32)
        idx = build_mih(s)
        ids, dist = idx.query_radius(s[17], 0)
        assert ids.tolist() == [s.ids[17]] and dist.tolist() == [0]

    def test_radius_full(self, rng):
        s = random_set(rng, 50, 16)
        ids, _ = build_mih(s).query_radius(s[0], 16)
        assert sorted(ids.tolist()) == sorted(s.ids.tolist())

    def test_radius_matches_scan(self, rng):
        s = random_set(rng, 1000, 32)
        idx = build_mih(s)
        for _ in range(20):
            q = HashCode.from_bits(rng.random(32) < 0.5)
            a = idx.query_radius(q, 6)
            b = linear_scan_radius(s, q, 6)
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_radius_monotone(self, rng):
        s = random_set(rng, 300, 16)
        idx = build_mih(s)
        q = s[5]
        prev = set()
        for r in range(17):
            cur = set(idx.query_radius(q, r)[0].tolist())
            assert prev <= cur
            prev = cur

    def test_knn_self(self, rng):
        s = random_set(rng, 300, 64)
        ids, dist = build_mih(s).query_knn(s[9], 1)
        assert ids[0] == s.ids[9] and dist[0] == 0

    def test_knn_all_and_clamp(self, rng):
        s = random_set(rng, 120, 32)
        idx = build_mih(s)
        q = HashCode.from_bits(rng.random(32) < 0.5)
        a = idx.query_knn(q, len(s))
        b = linear_scan_knn(s, q, len(s))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert len(idx.query_knn(q, len(s) + 10)[0]) == len(s)

    def test_duplicates_tie_by_id(self):
        bits = np.zeros((6, 8), dtype=bool)
        s = HashCodeSet.from_bits(bits, [50, 10, 40, 20, 30, 60])
        ids, _ = build_mih(s).query_knn(s[0], 4)
        assert ids.tolist() == [10, 20, 30, 40]

    def test_knn_equals_oracle_randomized(self):
        r = np.random.default_rng(2024)
        for trial in range(200):
            dim = [16, 32, 64, 128][trial % 4]
            n = int(r.integers(10, 5001)) if trial % 10 == 0 else int(r.integers(10, 600))
            # low-entropy codes produce many distance ties
            p = r.choice([0.5, 0.1])
            s = HashCodeSet.from_bits(r.random((n, dim)) < p, r.permutation(n))
            idx = build_mih(s)
            q = s[int(r.integers(n))] if trial % 2 else HashCode.from_bits(r.random(dim) < p)
            k = int(r.integers(1, n + 1))
            a, b = idx.query_knn(q, k), linear_scan_knn(s, q, k)
            assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 80), st.sampled_from([8, 16, 33]), st.integers(1, 8), st.integers(0, 2**31))
    def test_knn_property(self, n, dim, m, seed):
        r = np.random.default_rng(seed)
        s = HashCodeSet.from_bits(r.random((n, dim)) < 0.5)
        idx = MihIndex(s, min(m, dim))
        q = HashCode.from_bits(r.random(dim) < 0.5)
        k = int(r.integers(1, n + 1))
        assert np.array_equal(idx.query_knn(q, k)[0], linear_scan_knn(s, q, k)[0])

    def test_query_dim_mismatch(self, rng):
        idx = build_mih(random_set(rng, 20, 16))
        with pytest.raises(DataError):
            idx.query_knn(HashCode.from_bits(np.zeros(8, dtype=bool)), 3)

    def test_unique_ids_required(self):
        with pytest.raises(DataError):
            HashCodeSet.from_bits(np.zeros((2, 4), dtype=bool), [1, 1])


@pytest.mark.slow
def test_mih_faster_than_scan_report():
    # soft check: printed, not asserted
    r = np.random.default_rng(5)
    s = HashCodeSet.from_bits(r.random((100_000, 64)) < 0.5)
    idx = build_mih(s)
    qs = [HashCode.from_bits(r.random(64) < 0.5) for _ in range(30)]
    t0 = time.perf_counter()
    for q in qs:
        idx.query_knn(q, 100)
    t1 = time.perf_counter()
    for q in qs:
        linear_scan_knn(s, q, 100)
    t2 = time.perf_counter()
    print(f"\nMIH k=100 mean query {1e3 * (t1 - t0) / 30:.2f} ms, linear scan {1e3 * (t2 - t1) / 30:.2f} ms")
