import json
import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings as hypothesis_settings, strategies as st
from pydantic import ValidationError

from hop.core.errors import InvalidTopologyError, NoPathError, PreconditionError
from hop.core.topology import (
    UNBOUNDED,
    BoundSetting,
    CommGraph,
    GapBoundQuery,
    TopologyKind,
    TopologySpec,
    WeightMatrix,
    build_clustered,
    build_complete,
    build_double_ring,
    build_ring,
    build_ring_based,
    build_topology,
    gap_bound,
    shortest_path_len,
    spectral_gap,
    uniform_spectral_gap,
    uniform_weights,
)


class TestBuilders(SimpleTestCase):
    def test_ring_neighbors(self):
        g = build_ring(4)
        self.assertEqual(g.in_neighbors(1), (0, 1, 2))
        self.assertEqual(g.out_neighbors(1), (0, 1, 2))
        self.assertEqual(g.in_degree(0), 3)
        self.assertEqual(g.kind, TopologyKind.RING)

    def test_ring_too_small(self):
        with self.assertRaises(InvalidTopologyError):
            build_ring(2)

    def test_ring_based_links_the_opposite_worker(self):
        g = build_ring_based(8)
        self.assertEqual(g.in_neighbors(0), (0, 1, 4, 7))
        self.assertEqual(g.diameter(), 2)

    def test_ring_based_needs_even_n(self):
        for n in (5, 2):
            with self.assertRaises(InvalidTopologyError):
                build_ring_based(n)

    def test_double_ring(self):
        g = build_double_ring(8)
        # Each half of 4 is complete, plus the cross link.
        self.assertEqual(g.in_neighbors(0), (0, 1, 2, 3, 4))
        self.assertEqual(g.in_neighbors(5), (1, 4, 5, 6, 7))
        with self.assertRaises(InvalidTopologyError):
            build_double_ring(6)

    def test_clustered_two_clusters_share_one_gateway_link(self):
        g = build_clustered([3, 3])
        self.assertEqual(g.in_neighbors(0), (0, 1, 2, 3))
        self.assertEqual(g.in_neighbors(1), (0, 1, 2))
        self.assertEqual(shortest_path_len(g, 1, 4), 3)
        self.assertEqual(g.diameter(), 3)

    def test_clustered_gateway_ring(self):
        g = build_clustered([2, 2, 2])
        self.assertEqual(g.in_neighbors(0), (0, 1, 2, 4))
        self.assertEqual(g.in_neighbors(3), (2, 3))

    def test_clustered_needs_two_clusters(self):
        with self.assertRaises(InvalidTopologyError):
            build_clustered([4])

    def test_complete(self):
        g = build_complete(3)
        self.assertEqual(g.in_degree(2), 3)
        self.assertEqual(g.diameter(), 1)

    def test_self_loops_are_added(self):
        g = CommGraph(2, [(0, 1), (1, 0)])
        self.assertIn((0, 0), g.edges)
        self.assertIn((1, 1), g.edges)

    def test_edge_outside_range(self):
        with self.assertRaises(InvalidTopologyError):
            CommGraph(3, [(0, 3)])

    def test_invalid_arguments(self):
        with self.assertRaises((TypeError, ValidationError)):
            CommGraph(0, [])
        with self.assertRaises((TypeError, ValidationError)):
            CommGraph(3, [(-1, 0)])
        with self.assertRaises((TypeError, ValidationError)):
            build_ring("many")

    def test_reverse(self):
        g = CommGraph(3, [(0, 1), (1, 2), (2, 0)])
        reversed_g = g.reverse()
        self.assertEqual(reversed_g.out_neighbors(1), (0, 1))
        for i in range(3):
            self.assertEqual(reversed_g.out_neighbors(i), g.in_neighbors(i))
            self.assertEqual(reversed_g.in_neighbors(i), g.out_neighbors(i))

    def test_adjacency_json(self):
        document = json.loads(build_ring(3).adjacency_json())
        self.assertEqual(document["kind"], "ring")
        self.assertEqual(document["n"], 3)
        self.assertEqual(document["adjacency"]["0"], [0, 1, 2])

    def test_not_strongly_connected(self):
        g = CommGraph(3, [(0, 1), (1, 2)])
        self.assertFalse(g.is_strongly_connected())
        with self.assertRaises(NoPathError):
            shortest_path_len(g, 2, 0)
        with self.assertRaises(NoPathError):
            g.diameter()

    def test_shortest_path_unknown_worker(self):
        with self.assertRaises(InvalidTopologyError):
            shortest_path_len(build_ring(4), 0, 4)

    def test_shortest_path_to_self(self):
        self.assertEqual(shortest_path_len(build_ring(5), 3, 3), 0)


class TestTopologySpec(SimpleTestCase):
    def test_build_from_spec(self):
        self.assertEqual(build_topology(TopologySpec(kind="ring_based", n=16)).n, 16)
        self.assertEqual(build_topology(TopologySpec(kind="clustered", cluster_sizes=[4, 4, 4])).n, 12)
        custom = build_topology(TopologySpec(kind="custom", n=2, edges=[(0, 1), (1, 0)]))
        self.assertEqual(custom.kind, TopologyKind.CUSTOM)
        for kind, n in (("ring", 5), ("double_ring", 8), ("complete", 3)):
            self.assertEqual(build_topology(TopologySpec(kind=kind, n=n)).n, n)

    def test_missing_fields(self):
        with self.assertRaises(ValidationError):
            TopologySpec(kind="ring")
        with self.assertRaises(ValidationError):
            TopologySpec(kind="clustered")
        with self.assertRaises(ValidationError):
            TopologySpec(kind="clustered", n=5, cluster_sizes=[2, 2])
        with self.assertRaises(ValidationError):
            TopologySpec(kind="custom", n=3)
        with self.assertRaises(ValidationError):
            TopologySpec(kind="torus", n=3)

    def test_worker_count(self):
        self.assertEqual(TopologySpec(kind="clustered", cluster_sizes=[3, 5]).worker_count, 8)
        self.assertEqual(TopologySpec(kind="ring", n=7).worker_count, 7)


class TestWeights(SimpleTestCase):
    def test_uniform_weights_on_ring(self):
        weights = uniform_weights(build_ring(4))
        self.assertTrue(weights.doubly_stochastic)
        np.testing.assert_allclose(weights.w[:, 0], [1 / 3, 1 / 3, 0.0, 1 / 3])
        self.assertEqual(weights.to_csv().splitlines()[0], "0.33333333333333331,0.33333333333333331,0,0.33333333333333331")

    def test_unequal_degrees_are_not_doubly_stochastic(self):
        weights = uniform_weights(build_clustered([2, 3]))
        self.assertFalse(weights.doubly_stochastic)
        np.testing.assert_allclose(weights.w.sum(axis=0), np.ones(5))
        with self.assertRaises(PreconditionError):
            spectral_gap(weights)

    def test_spectral_gap_of_ring(self):
        self.assertAlmostEqual(spectral_gap(uniform_weights(build_ring(4))), 2 / 3, places=12)

    def test_spectral_gap_of_complete_graph(self):
        self.assertAlmostEqual(spectral_gap(uniform_weights(build_complete(3))), 1.0, places=12)

    def test_spectral_gap_of_identity(self):
        self.assertEqual(spectral_gap(WeightMatrix(w=np.eye(2), doubly_stochastic=True)), 0.0)

    def test_spectral_gap_single_worker(self):
        self.assertEqual(spectral_gap(uniform_weights(build_complete(1))), 1.0)

    def test_spectral_gap_of_large_ring(self):
        n = 80
        expected = 1.0 - (1.0 + 2.0 * math.cos(2.0 * math.pi / n)) / 3.0
        self.assertAlmostEqual(spectral_gap(uniform_weights(build_ring(n))), expected, places=6)

    def test_uniform_spectral_gap(self):
        self.assertAlmostEqual(uniform_spectral_gap(build_ring_based(8)), 0.5, places=9)
        self.assertIsNone(uniform_spectral_gap(build_clustered([3, 3, 2])))


class TestGapBound(SimpleTestCase):
    def setUp(self):
        self.ring = build_ring(4)

    def bound(self, setting, i=0, j=2, **kwargs):
        return gap_bound(GapBoundQuery(setting=setting, i=i, j=j, **kwargs), self.ring)

    def test_base_settings(self):
        self.assertEqual(self.bound("standard"), 2)
        self.assertEqual(self.bound("staleness", staleness=2), 6)
        self.assertEqual(self.bound("notify_ack"), 2)
        self.assertIs(self.bound("backup"), UNBOUNDED)
        self.assertIs(self.bound("hybrid", staleness=1), UNBOUNDED)

    def test_token_settings(self):
        self.assertEqual(self.bound("token", max_ig=3, base="standard"), 2)
        self.assertEqual(self.bound("token", max_ig=2, base="backup"), 4)
        self.assertEqual(self.bound("token", max_ig=3, base="backup"), 6)
        self.assertEqual(self.bound("token", max_ig=1, base="staleness", staleness=2), 2)

    def test_same_worker(self):
        self.assertEqual(self.bound("backup", i=1, j=1), 0)

    def test_directed_cycle(self):
        g = CommGraph(3, [(0, 1), (1, 2), (2, 0)])
        self.assertEqual(gap_bound(GapBoundQuery(setting="standard", i=0, j=1), g), 2)
        self.assertEqual(gap_bound(GapBoundQuery(setting="notify_ack", i=0, j=1), g), 2)
        self.assertEqual(gap_bound(GapBoundQuery(setting="standard", i=1, j=0), g), 1)
        self.assertEqual(gap_bound(GapBoundQuery(setting="notify_ack", i=1, j=0), g), 1)

    def test_invalid_queries(self):
        with self.assertRaises(ValidationError):
            GapBoundQuery(setting="token", i=0, j=1)
        with self.assertRaises(ValidationError):
            GapBoundQuery(setting="staleness", i=0, j=1)
        with self.assertRaises(ValidationError):
            GapBoundQuery(setting="token", i=0, j=1, max_ig=2, base="token")
        with self.assertRaises(ValidationError):
            GapBoundQuery(setting="token", i=0, j=1, max_ig=0)

    @hypothesis_settings(max_examples=40, deadline=None)
    @given(n=st.integers(min_value=3, max_value=12), i=st.integers(min_value=0, max_value=11), j=st.integers(min_value=0, max_value=11), max_ig=st.integers(min_value=1, max_value=6))
    def test_token_never_loosens_the_standard_bound(self, n, i, j, max_ig):
        g = build_ring(n)
        i, j = i % n, j % n
        standard = gap_bound(GapBoundQuery(setting=BoundSetting.STANDARD, i=i, j=j), g)
        token = gap_bound(GapBoundQuery(setting=BoundSetting.TOKEN, i=i, j=j, max_ig=max_ig, base=BoundSetting.STANDARD), g)
        self.assertLessEqual(token, standard)
        self.assertLessEqual(gap_bound(GapBoundQuery(setting=BoundSetting.NOTIFY_ACK, i=i, j=j), g), standard)

    @hypothesis_settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(min_value=2, max_value=9),
        extra=st.lists(st.tuples(st.integers(min_value=0, max_value=8), st.integers(min_value=0, max_value=8)), max_size=12),
    )
    def test_standard_bound_is_symmetric_under_reversal(self, n, extra):
        edges = [(i, (i + 1) % n) for i in range(n)] + [(i % n, j % n) for i, j in extra]
        g = CommGraph(n, edges)
        reversed_g = g.reverse()
        for i in range(n):
            for j in range(n):
                forward = gap_bound(GapBoundQuery(setting=BoundSetting.STANDARD, i=i, j=j), g)
                backward = gap_bound(GapBoundQuery(setting=BoundSetting.STANDARD, i=j, j=i), reversed_g)
                self.assertEqual(forward, backward)
