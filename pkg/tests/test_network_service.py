import itertools
import json
import math

import numpy as np
import pytest

from model.errors import ParseError, ValidationError
from services.network_service import (
    EQUAL,
    RANDOM_SIMPLEX,
    PathClass,
    SpilloverNetwork,
    canonical_network,
    canonical_networks,
    classify_all,
    load_network,
    longest_incoming_path,
    network_to_document,
    path_classification,
    random_network,
    spillover_matrix,
    spillover_table,
    to_digraph,
)


def edge_set(net):
    names = net.sector_names
    receivers, sources = np.nonzero(net.kernel)
    return {(names[s], names[r]) for r, s in zip(receivers, sources)}


def brute_force_class(net, sector):
    """Enumerate every walk of length 1..L ending at the sector."""
    adjacency = net.kernel > 0
    n = net.n_sectors
    lengths = set()
    for length in range(1, n + 1):
        for walk in itertools.product(range(n), repeat=length):
            nodes = walk + (sector,)
            if all(adjacency[nodes[i + 1], nodes[i]] for i in range(length)):
                lengths.add(length)
    if not lengths:
        return PathClass.NO_SPILLOVER
    return PathClass.DIRECT_ONLY if max(lengths) == 1 else PathClass.HAS_INDIRECT


class TestLoadNetwork:
    def test_baseline_document(self):
        net = load_network('{"sectors": 1, "weights": [1.0], "kernel": [[0.1]]}')
        assert net.n_sectors == 1
        assert net.kernel[0, 0] == 0.1

    def test_weights_must_sum_to_one(self):
        doc = {"sectors": 2, "weights": [0.5, 0.6], "kernel": [[0, 0], [0, 0]]}
        with pytest.raises(ValidationError) as info:
            load_network(doc)
        assert info.value.field == "weights"

    def test_isolated_network_is_valid(self):
        net = load_network({"sectors": 3, "weights": [1 / 3] * 3, "kernel": np.zeros((3, 3)).tolist()})
        assert not np.any(net.kernel)

    def test_negative_kernel(self):
        with pytest.raises(ValidationError) as info:
            load_network({"sectors": 1, "weights": [1.0], "kernel": [[-0.1]]})
        assert info.value.field == "kernel"

    def test_missing_field(self):
        with pytest.raises(ValidationError) as info:
            load_network({"sectors": 1, "weights": [1.0]})
        assert info.value.field == "kernel"

    def test_sector_count_mismatch(self):
        with pytest.raises(ValidationError) as info:
            load_network({"sectors": 2, "weights": [1.0], "kernel": [[0.1]]})
        assert info.value.field == "weights"

    def test_malformed_json(self):
        with pytest.raises(ParseError):
            load_network("{not json")

    def test_document_inverse(self):
        net = canonical_network(5)
        again = load_network(json.dumps(network_to_document(net)))
        assert again == net


class TestRandomNetwork:
    def test_no_edges(self):
        assert not np.any(random_network(4, 0.0, 3.0, seed=1).kernel)

    def test_full_graph(self):
        kernel = random_network(3, 1.0, 3.0, seed=9).kernel
        assert np.count_nonzero(kernel) == 9
        assert np.all(kernel > 0) and np.all(kernel <= 3.0)

    def test_edge_frequency(self):
        hits = sum(np.count_nonzero(random_network(3, 0.5, 1.0, seed=s).kernel) for s in range(10_000))
        assert hits / 90_000 == pytest.approx(0.5, abs=0.02)

    def test_seed_reproducible(self):
        a = random_network(6, 0.4, 3.0, RANDOM_SIMPLEX, seed=42)
        b = random_network(6, 0.4, 3.0, RANDOM_SIMPLEX, seed=42)
        np.testing.assert_array_equal(a.kernel, b.kernel)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_sector_weights(self):
        np.testing.assert_allclose(random_network(4, 0.5, 1.0, EQUAL, seed=0).weights, 0.25)
        simplex = random_network(10, 0.5, 1.0, RANDOM_SIMPLEX, seed=0).weights
        assert simplex.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(simplex > 0)

    def test_invalid_probability(self):
        with pytest.raises(ValidationError):
            random_network(3, 1.5, 1.0)


class TestSpilloverMatrix:
    def test_baseline(self, baseline):
        s = spillover_matrix(baseline, 2.0)
        np.testing.assert_allclose(s.entries, [[0.1]])
        assert s.zeta == pytest.approx(0.2)

    def test_zero_kernel(self, isolated_pair):
        s = spillover_matrix(isolated_pair, 2.0)
        assert not np.any(s.entries)
        assert s.zeta == 0.0

    def test_weighted_entries(self):
        net = SpilloverNetwork(weights=np.array([0.5, 0.5]), kernel=np.array([[0.0, 2.0], [0.0, 0.0]]))
        s = spillover_matrix(net, 2.0)
        np.testing.assert_allclose(s.entries, [[0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(s.column_sums, [0.0, 2.0])
        assert s.zeta == pytest.approx(2.0)

    def test_table(self):
        frame = spillover_table(spillover_matrix(canonical_network(3), 2.0))
        assert list(frame.columns) == ["sector", "1", "2", "3"]
        assert frame.loc[2, "1"] == pytest.approx(1 / 3)


class TestCanonicalNetworks:
    def test_edge_sets(self):
        assert edge_set(canonical_network(1)) == {("B", "C")}
        assert edge_set(canonical_network(3)) == {("A", "C"), ("B", "C")}
        assert edge_set(canonical_network(6)) == {("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")}

    def test_conventions(self):
        nets = canonical_networks()
        assert [n.n_sectors for n in nets] == [3, 3, 3, 4, 4, 4]
        for net in nets:
            np.testing.assert_allclose(net.weights, 1.0 / net.n_sectors)
            assert set(net.kernel[net.kernel > 0]) == {1.0}
            assert load_network(network_to_document(net)) == net

    def test_unknown_id(self):
        with pytest.raises(ValidationError):
            canonical_network(7)


class TestPathClassification:
    def test_small_network_cases(self):
        assert path_classification(canonical_network(1), "C") is PathClass.DIRECT_ONLY
        assert path_classification(canonical_network(1), "A") is PathClass.NO_SPILLOVER
        assert path_classification(canonical_network(2), "C") is PathClass.HAS_INDIRECT
        assert path_classification(canonical_network(3), "C") is PathClass.DIRECT_ONLY
        assert path_classification(canonical_network(6), "D") is PathClass.HAS_INDIRECT

    def test_self_loop_is_indirect(self, baseline):
        assert path_classification(baseline, 0) is PathClass.HAS_INDIRECT

    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(8)
        for trial in range(60):
            n = int(rng.integers(1, 6))
            net = random_network(n, float(rng.random()), 1.0, seed=trial)
            assert classify_all(net) == [brute_force_class(net, s) for s in range(n)]

    def test_longest_incoming_path(self):
        assert longest_incoming_path(canonical_network(1), "A") == 0
        assert longest_incoming_path(canonical_network(1), "C") == 1
        assert longest_incoming_path(canonical_network(2), "C") == 2
        assert longest_incoming_path(canonical_network(5), "D") == 3
        assert math.isinf(longest_incoming_path(canonical_network(6), "D"))

    def test_digraph_direction(self):
        graph = to_digraph(canonical_network(2))
        assert set(graph.edges) == {(0, 1), (1, 2)}

    def test_unknown_sector(self):
        with pytest.raises(ValidationError):
            path_classification(canonical_network(1), "Z")
