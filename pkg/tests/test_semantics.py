import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from semhash import DataError
from semhash.semantics import (EmbeddingTable, TaxonomyError, binary_distance_matrix,
                               embedding_distance_matrix, label_distance_matrix,
                               load_taxonomy, wup_distance, wup_similarity)


class TestLoadTaxonomy:
    def test_minimal_tree(self):
        t = load_taxonomy("R\t-\nA\tR\nB\tR")
        assert t.root == "R"
        assert sorted(t.children("R")) == ["A", "B"]

    def test_depths(self, five_node):
        assert five_node.depth("R") == 1
        assert five_node.depth("A") == 2
        assert five_node.depth("a1") == 3

    def test_comments_and_blank_lines(self):
        t = load_taxonomy("# tree\nR\t-\n\nA\tR\n")
        assert t.nodes == ["R", "A"]

    def test_cycle(self):
        with pytest.raises(TaxonomyError, match="line 1: cycle"):
            load_taxonomy("A\tB\nB\tA")

    def test_cycle_beside_root(self):
        with pytest.raises(TaxonomyError, match="cycle"):
            load_taxonomy("R\t-\nA\tB\nB\tA")

    def test_multiple_roots(self):
        with pytest.raises(TaxonomyError, match="line 2: multiple roots"):
            load_taxonomy("R\t-\nS\t-")

    def test_orphan_parent(self):
        with pytest.raises(TaxonomyError, match="line 2: parent 'X'"):
            load_taxonomy("R\t-\nA\tX")

    def test_malformed_line(self):
        with pytest.raises(TaxonomyError, match="line 2"):
            load_taxonomy("R\t-\nA R")


class TestWup:
    def test_identical(self, five_node):
        assert wup_similarity(five_node, "a1", "a1") == 1.0
        assert wup_distance(five_node, "a1", "a1") == 0.0

    def test_siblings(self, five_node):
        assert abs(wup_similarity(five_node, "a1", "a2") - 2 * 2 / (3 + 3)) < 1e-12
        assert abs(wup_distance(five_node, "a1", "a2") - 1 / 3) < 1e-12

    def test_across_root(self, five_node):
        assert abs(wup_similarity(five_node, "a1", "B") - 0.4) < 1e-12
        assert abs(wup_distance(five_node, "a1", "B") - 0.6) < 1e-12

    def test_unknown_label(self, five_node):
        with pytest.raises(KeyError):
            wup_similarity(five_node, "a1", "zzz")

    def test_symmetric_and_ordering(self, five_node):
        nodes = five_node.nodes
        for u in nodes:
            for v in nodes:
                s = wup_similarity(five_node, u, v)
                assert s == wup_similarity(five_node, v, u)
                assert (s == 1.0) == (u == v)
                assert 0 < s <= 1
        # same node depths, shallower lcs -> smaller similarity
        deep = load_taxonomy("R\t-\nA\tR\nB\tR\nA1\tA\nB1\tB\nx\tA1\ny\tA1\nz\tB1\n")
        assert wup_similarity(deep, "x", "y") > wup_similarity(deep, "x", "z")


class TestDistanceMatrices:
    def test_label_matrix(self, five_node):
        assert np.array_equal(label_distance_matrix(five_node, ["a1", "a1"]), np.zeros((2, 2)))
        d = label_distance_matrix(five_node, ["a1", "a2"])
        assert abs(d[0, 1] - 1 / 3) < 1e-12 and d[0, 1] == d[1, 0]
        d = label_distance_matrix(five_node, ["a1", "a2", "B"])
        np.testing.assert_allclose(d, [[0, 1 / 3, 0.6], [1 / 3, 0, 0.6], [0.6, 0.6, 0]], atol=1e-12)

    def test_binary_matrix(self):
        assert not binary_distance_matrix(["a", "a"]).any()
        assert binary_distance_matrix(["a", "b"])[0, 1] == 1
        d = binary_distance_matrix(["a", "a", "b"])
        assert np.count_nonzero(d == 0) == 5  # 3 diagonal + the (a, a) pair both ways
        assert np.count_nonzero(d == 1) == 4

    def test_embedding_matrix(self):
        e = EmbeddingTable(np.array([[1.0, 1.0], [1.0, 1.0]]))
        assert not embedding_distance_matrix(e, [0, 1]).any()
        e = EmbeddingTable(np.array([[0.0], [3.0]]))
        assert embedding_distance_matrix(e, [0, 1])[0, 1] == 3
        e = EmbeddingTable(np.array([[1.0, 1.0], [2.0, 3.0]]))
        assert embedding_distance_matrix(e, [0, 1])[1, 0] == 3

    def test_embedding_table_rejects_nonfinite(self):
        with pytest.raises(DataError):
            EmbeddingTable(np.array([[np.nan]]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(3, 8), st.integers(1, 5)),
                  elements=st.floats(-100, 100)))
    def test_embedding_matrix_is_metric(self, v):
        d = embedding_distance_matrix(EmbeddingTable(v), range(len(v)))
        assert np.array_equal(d, d.T)
        assert np.all(np.diag(d) == 0) and np.all(d >= 0)
        n = len(v)
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    assert d[i, k] <= d[i, j] + d[j, k] + 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.sampled_from(["R", "A", "B", "a1", "a2"]), min_size=1, max_size=12))
    def test_label_matrix_invariants(self, labels):
        from tests.conftest import FIVE_NODE
        d = label_distance_matrix(load_taxonomy(FIVE_NODE), labels)
        assert np.array_equal(d, d.T)
        assert np.all(np.diag(d) == 0) and np.all(d >= 0) and np.all(d < 1)
