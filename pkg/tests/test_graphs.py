import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdiffusion.graphs import (GraphBatch, GraphSpec, SparseGraph, batch,
                                   canonicalize, from_dense, num_pairs,
                                   pair_from_index, pair_index, permute_nodes,
                                   to_dense, unbatch)

from conftest import random_graph


class TestPairIndex:
    def test_first_pair(self):
        assert pair_index(0, 1, 4) == 0

    def test_worked_example(self):
        # (1, 3) is the 5th linear position of the n=4 strict upper triangle
        assert pair_index(1, 3, 4) == 4

    def test_last_pair_n4(self):
        order = list(itertools.combinations(range(4), 2))
        assert order.index((2, 3)) == 5
        assert pair_index(2, 3, 4) == 5

    def test_row_major_enumeration(self):
        for n in (3, 5, 9):
            expected = list(itertools.combinations(range(n), 2))
            for idx, (i, j) in enumerate(expected):
                assert pair_index(i, j, n) == idx

    @pytest.mark.parametrize("i,j", [(1, 1), (3, 2), (-1, 2), (0, 4)])
    def test_preconditions(self, i, j):
        with pytest.raises(ValueError):
            pair_index(i, j, 4)


class TestPairFromIndex:
    def test_worked_examples(self):
        assert pair_from_index(0, 4) == (0, 1)
        assert pair_from_index(5, 4) == (2, 3)

    def test_round_trip_n7(self):
        for idx in range(num_pairs(7)):
            i, j = pair_from_index(idx, 7)
            assert pair_index(i, j, 7) == idx

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            pair_from_index(6, 4)
        with pytest.raises(ValueError):
            pair_from_index(-1, 4)

    def test_mutually_inverse_exhaustive(self):
        # all n up to 64, vectorized
        for n in range(2, 65):
            idx = np.arange(num_pairs(n))
            i, j = pair_from_index(idx, n)
            assert np.array_equal(pair_index(i, j, n), idx)
            assert np.all(i < j)


class TestGraphSpec:
    def test_rejects_bad_marginals(self):
        with pytest.raises(ValueError):
            GraphSpec(1, 2, np.array([1.0]), np.array([0.5, 0.499]))
        with pytest.raises(ValueError):
            GraphSpec(1, 2, np.array([1.0]), np.array([1.5, -0.5]))

    def test_dense_data_allowed(self):
        spec = GraphSpec(1, 2, np.array([1.0]), np.array([0.0, 1.0]))
        assert spec.edge_marginals[0] == 0.0


class TestCanonicalize:
    def test_orientation_normalized(self, labeled_spec):
        g = canonicalize([(1, 0)], [2], 3, labeled_spec)
        assert g.edge_index.tolist() == [[0, 1]]
        assert g.edge_labels.tolist() == [2]

    def test_duplicate_rejected(self, labeled_spec):
        with pytest.raises(ValueError, match="duplicate"):
            canonicalize([(0, 1), (0, 1)], [1, 1], 3, labeled_spec)
        with pytest.raises(ValueError, match="duplicate"):
            canonicalize([(0, 1), (1, 0)], [1, 2], 3, labeled_spec)

    def test_self_loop_rejected(self, labeled_spec):
        with pytest.raises(ValueError, match="self-loop"):
            canonicalize([(2, 2)], [1], 3, labeled_spec)

    def test_order_insensitive(self, labeled_spec):
        rng = np.random.default_rng(0)
        base = random_graph(8, labeled_spec, 0.4, rng)
        pairs = base.edge_index.tolist()
        labels = base.edge_labels.tolist()
        for _ in range(50):
            order = rng.permutation(len(pairs))
            flipped = [(pairs[k][1], pairs[k][0]) if rng.random() < 0.5
                       else tuple(pairs[k]) for k in order]
            g = canonicalize(flipped, [labels[k] for k in order], 8,
                             labeled_spec, node_labels=base.node_labels)
            assert g == base

    def test_idempotent(self, labeled_spec):
        rng = np.random.default_rng(1)
        g = random_graph(6, labeled_spec, 0.5, rng)
        again = canonicalize(g.edge_index, g.edge_labels, 6, labeled_spec,
                             node_labels=g.node_labels)
        assert again == g


class TestDense:
    def test_empty_graph(self, labeled_spec):
        g = SparseGraph(3, np.zeros(3, dtype=np.int64),
                        np.empty((0, 2), dtype=np.int64),
                        np.empty(0, dtype=np.int64))
        _, mat = to_dense(g, labeled_spec)
        assert np.array_equal(mat, np.zeros((3, 3), dtype=np.int64))

    def test_triangle_symmetry(self, labeled_spec):
        g = canonicalize([(0, 1), (1, 2), (0, 2)], [1, 1, 1], 3, labeled_spec)
        _, mat = to_dense(g, labeled_spec)
        assert mat.sum() == 6
        assert np.array_equal(mat, mat.T)
        assert np.all(np.diag(mat) == 0)

    def test_round_trip_random(self, labeled_spec):
        rng = np.random.default_rng(2)
        for _ in range(10):
            g = random_graph(10, labeled_spec, 0.3, rng)
            labels, mat = to_dense(g, labeled_spec)
            assert from_dense(labels, mat, labeled_spec) == g

    def test_from_dense_validates(self, labeled_spec):
        mat = np.zeros((3, 3), dtype=np.int64)
        mat[0, 1] = 1           # asymmetric
        with pytest.raises(ValueError):
            from_dense(np.zeros(3), mat, labeled_spec)
        mat = np.zeros((3, 3), dtype=np.int64)
        mat[1, 1] = 1           # diagonal
        with pytest.raises(ValueError):
            from_dense(np.zeros(3), mat, labeled_spec)


class TestPermute:
    def test_identity(self, labeled_spec):
        rng = np.random.default_rng(3)
        g = random_graph(6, labeled_spec, 0.4, rng)
        assert permute_nodes(g, np.arange(6)) == g

    def test_swap(self, labeled_spec):
        g = canonicalize([(0, 2)], [1], 3, labeled_spec)
        swapped = permute_nodes(g, [1, 0, 2])
        assert swapped.edge_index.tolist() == [[1, 2]]

    def test_degree_multiset_preserved(self, labeled_spec):
        rng = np.random.default_rng(4)
        for _ in range(20):
            g = random_graph(7, labeled_spec, 0.5, rng)
            perm = rng.permutation(7)
            h = permute_nodes(g, perm)
            assert sorted(g.degrees.tolist()) == sorted(h.degrees.tolist())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_composition(self, seed):
        spec = GraphSpec(2, 3, np.array([0.6, 0.4]), np.array([0.7, 0.2, 0.1]))
        rng = np.random.default_rng(seed)
        g = random_graph(6, spec, 0.5, rng)
        p1 = rng.permutation(6)
        p2 = rng.permutation(6)
        combined = p2[p1]
        assert permute_nodes(permute_nodes(g, p1), p2) == \
            permute_nodes(g, combined)

    def test_rejects_non_bijection(self, labeled_spec):
        g = canonicalize([(0, 1)], [1], 3, labeled_spec)
        with pytest.raises(ValueError):
            permute_nodes(g, [0, 0, 1])


class TestBatch:
    def _graph(self, n, spec, seed):
        return random_graph(n, spec, 0.4, np.random.default_rng(seed))

    def test_single(self, labeled_spec):
        b = batch([self._graph(4, labeled_spec, 0)])
        assert b.node_offsets.tolist() == [0, 4]

    def test_offsets(self, labeled_spec):
        b = batch([self._graph(3, labeled_spec, 0),
                   self._graph(5, labeled_spec, 1)])
        assert b.node_offsets.tolist() == [0, 3, 8]

    def test_round_trip(self, labeled_spec):
        rng = np.random.default_rng(5)
        graphs = [random_graph(int(rng.integers(2, 9)), labeled_spec, 0.4, rng)
                  for _ in range(20)]
        assert list(unbatch(batch(graphs))) == graphs

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            batch([])


class TestInvariantValidation:
    def test_unsorted_edges_rejected(self):
        with pytest.raises(ValueError):
            SparseGraph(4, np.zeros(4, dtype=np.int64),
                        np.array([[1, 2], [0, 1]]), np.array([1, 1]))

    def test_zero_label_rejected(self):
        with pytest.raises(ValueError):
            SparseGraph(3, np.zeros(3, dtype=np.int64),
                        np.array([[0, 1]]), np.array([0]))

    def test_immutable_arrays(self, labeled_spec):
        g = canonicalize([(0, 1)], [1], 3, labeled_spec)
        with pytest.raises(ValueError):
            g.edge_labels[0] = 2
