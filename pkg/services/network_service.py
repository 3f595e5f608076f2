"""
Sector-level spillover network.

Holds the sector weights A and the kernel p (row l receives from column l'),
derives the spillover matrix S, generates random instances and classifies
how each sector receives spillovers.
"""

import json
import logging
import math
import numbers
import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Union

import networkx as nx
import numpy as np
import pandas as pd

from model.errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-12

EQUAL = "equal"
RANDOM_SIMPLEX = "random_simplex"


class PathClass(str, Enum):
    NO_SPILLOVER = "NoSpillover"
    DIRECT_ONLY = "DirectOnly"
    HAS_INDIRECT = "HasIndirect"


@dataclass(frozen=True)
class SpilloverNetwork:
    """Sector weights A (summing to one) and the kernel p(l, l')."""

    weights: np.ndarray = field(repr=False)
    kernel: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        kernel = np.array(self.kernel, dtype=float)
        _validate(weights, kernel)
        weights.setflags(write=False)
        kernel.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "kernel", kernel)

    @property
    def n_sectors(self) -> int:
        return int(self.weights.shape[0])

    @property
    def sector_names(self) -> list:
        if self.n_sectors <= 26:
            return list(string.ascii_uppercase[: self.n_sectors])
        return [str(i + 1) for i in range(self.n_sectors)]

    def sector_index(self, sector: Union[int, str]) -> int:
        """Resolve a sector given as a 0-based index or a letter name."""
        if isinstance(sector, str):
            names = self.sector_names
            if sector not in names:
                raise ValidationError("sector", f"unknown sector {sector!r}; have {names}")
            return names.index(sector)
        if not 0 <= int(sector) < self.n_sectors:
            raise ValidationError("sector", f"index {sector} out of range for {self.n_sectors} sectors")
        return int(sector)

    def __eq__(self, other):
        if not isinstance(other, SpilloverNetwork):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.kernel, other.kernel)
        )

    def __hash__(self):
        return hash((self.label, self.weights.tobytes(), self.kernel.tobytes()))


@dataclass(frozen=True)
class SpilloverMatrix:
    """S = A_{l'} p(l, l'), the column sums P of p and zeta = z_max ||P A||_1."""

    entries: np.ndarray = field(repr=False)
    column_sums: np.ndarray = field(repr=False)
    zeta: float

    def __post_init__(self):
        self.entries.setflags(write=False)
        self.column_sums.setflags(write=False)

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)


def _validate(weights: np.ndarray, kernel: np.ndarray):
    if weights.ndim != 1 or weights.size < 1:
        raise ValidationError("weights", f"expected a non-empty vector, got shape {weights.shape}")
    n = weights.size
    if kernel.shape != (n, n):
        raise ValidationError("kernel", f"expected a {n}x{n} matrix, got shape {kernel.shape}")
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise ValidationError("weights", "every sector weight must be finite and > 0")
    if np.any(weights > 1):
        raise ValidationError("weights", "sector weights must not exceed 1")
    if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise ValidationError("weights", f"weights must sum to 1, got {weights.sum():.15g}")
    if not np.all(np.isfinite(kernel)) or np.any(kernel < 0):
        raise ValidationError("kernel", "kernel entries must be finite and >= 0")


# -- documents ----------------------------------------------------------------

def load_network(document: Union[str, bytes, Mapping]) -> SpilloverNetwork:
    """
    Build a network from a JSON document (text or already-parsed mapping).

    Schema: {"sectors": L, "weights": [A_1..A_L], "kernel": [[...], ...], "label": optional}.
    Weights are never renormalised.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ParseError(f"network document is not valid JSON: {e}") from e
    if not isinstance(document, Mapping):
        raise ParseError(f"network document must be an object, got {type(document).__name__}")

    for key in ("sectors", "weights", "kernel"):
        if key not in document:
            raise ValidationError(key, "missing required field")

    sectors = document["sectors"]
    if isinstance(sectors, bool) or not isinstance(sectors, numbers.Integral) or sectors < 1:
        raise ValidationError("sectors", f"must be an integer >= 1, got {sectors!r}")

    try:
        weights = np.asarray(document["weights"], dtype=float)
    except (TypeError, ValueError) as e:
        raise ValidationError("weights", f"not a numeric vector: {e}") from e
    try:
        kernel = np.asarray(document["kernel"], dtype=float)
    except (TypeError, ValueError) as e:
        raise ValidationError("kernel", f"not a numeric matrix: {e}") from e

    if weights.shape != (sectors,):
        raise ValidationError("weights", f"expected {sectors} entries, got shape {weights.shape}")

    label = document.get("label", "")
    if not isinstance(label, str):
        raise ValidationError("label", "must be a string")
    return SpilloverNetwork(weights=weights, kernel=kernel, label=label)


def network_to_document(net: SpilloverNetwork) -> dict:
    doc = {
        "sectors": net.n_sectors,
        "weights": net.weights.tolist(),
        "kernel": net.kernel.tolist(),
    }
    if net.label:
        doc["label"] = net.label
    return doc


# -- generation ---------------------------------------------------------------

def random_network(
    n_sectors: int,
    connection_prob: float,
    weight_max: float,
    sector_weights: str = EQUAL,
    seed: Union[int, np.random.SeedSequence, None] = 0,
    label: str = "",
) -> SpilloverNetwork:
    """
    Random directed network, self-loops included.

    Every ordered pair gets an edge with probability connection_prob; edge
    weights are uniform on (0, weight_max]. Sector weights are either equal or
    uniform on the simplex (normalised exponentials).
    """
    if n_sectors < 1:
        raise ValidationError("sectors", f"must be >= 1, got {n_sectors}")
    if not 0.0 <= connection_prob <= 1.0:
        raise ValidationError("connection_prob", f"must lie in [0, 1], got {connection_prob}")
    if not weight_max > 0:
        raise ValidationError("weight_max", f"must be > 0, got {weight_max}")

    rng = np.random.default_rng(seed)
    edges = rng.random((n_sectors, n_sectors)) < connection_prob
    strengths = weight_max * (1.0 - rng.random((n_sectors, n_sectors)))
    kernel = np.where(edges, strengths, 0.0)

    if sector_weights == EQUAL:
        weights = np.full(n_sectors, 1.0 / n_sectors)
    elif sector_weights == RANDOM_SIMPLEX:
        draws = rng.exponential(size=n_sectors)
        weights = draws / draws.sum()
    else:
        raise ValidationError("sector_weights", f"expected '{EQUAL}' or '{RANDOM_SIMPLEX}', got {sector_weights!r}")
    return SpilloverNetwork(weights=weights, kernel=kernel, label=label)


# Canonical topologies; an edge (X, Y) means knowledge flows from X to Y.
CANONICAL_EDGES = {
    1: (3, [("B", "C")]),
    2: (3, [("A", "B"), ("B", "C")]),
    3: (3, [("A", "C"), ("B", "C")]),
    4: (4, [("B", "C"), ("C", "D")]),
    5: (4, [("A", "B"), ("B", "C"), ("C", "D")]),
    6: (4, [("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")]),
}

CANONICAL_EDGE_WEIGHT = 1.0


def canonical_network(network_id: int) -> SpilloverNetwork:
    if network_id not in CANONICAL_EDGES:
        raise ValidationError("network", f"unknown canonical network {network_id}; have {sorted(CANONICAL_EDGES)}")
    n, edges = CANONICAL_EDGES[network_id]
    names = string.ascii_uppercase[:n]
    kernel = np.zeros((n, n))
    for source, target in edges:
        kernel[names.index(target), names.index(source)] = CANONICAL_EDGE_WEIGHT
    return SpilloverNetwork(weights=np.full(n, 1.0 / n), kernel=kernel, label=f"network-{network_id}")


def canonical_networks() -> list:
    """Networks 1-6 with equal sector weights and unit edge weights."""
    return [canonical_network(i) for i in sorted(CANONICAL_EDGES)]


# -- derived quantities -------------------------------------------------------

def spillover_matrix(net: SpilloverNetwork, z_max: float) -> SpilloverMatrix:
    entries = net.kernel * net.weights[None, :]
    column_sums = net.kernel.sum(axis=0)
    zeta = float(z_max * entries.sum())
    return SpilloverMatrix(entries=entries, column_sums=column_sums, zeta=zeta)


def spillover_table(matrix: SpilloverMatrix) -> pd.DataFrame:
    """S as a table with header `sector,1..L`."""
    n = matrix.entries.shape[0]
    frame = pd.DataFrame(matrix.entries, columns=[str(i + 1) for i in range(n)])
    frame.insert(0, "sector", range(1, n + 1))
    return frame


def to_digraph(net: SpilloverNetwork) -> nx.DiGraph:
    """Directed graph with an edge l' -> l whenever p(l, l') > 0."""
    graph = nx.DiGraph()
    graph.add_nodes_from(range(net.n_sectors))
    receivers, sources = np.nonzero(net.kernel > 0)
    graph.add_weighted_edges_from(
        (int(src), int(dst), float(net.kernel[dst, src])) for dst, src in zip(receivers, sources)
    )
    return graph


def path_classification(net: SpilloverNetwork, sector: Union[int, str], graph: Optional[nx.DiGraph] = None) -> PathClass:
    """NoSpillover, DirectOnly or HasIndirect (any incoming path of length >= 2)."""
    idx = net.sector_index(sector)
    graph = graph if graph is not None else to_digraph(net)
    predecessors = list(graph.predecessors(idx))
    if not predecessors:
        return PathClass.NO_SPILLOVER
    if all(graph.in_degree(p) == 0 for p in predecessors):
        return PathClass.DIRECT_ONLY
    return PathClass.HAS_INDIRECT


def classify_all(net: SpilloverNetwork) -> list:
    graph = to_digraph(net)
    return [path_classification(net, i, graph) for i in range(net.n_sectors)]


def longest_incoming_path(net: SpilloverNetwork, sector: Union[int, str]) -> float:
    """
    Length of the longest path ending at the sector.

    0 without spillovers, inf when a cycle feeds the sector.
    """
    idx = net.sector_index(sector)
    graph = to_digraph(net)
    upstream = graph.subgraph(nx.ancestors(graph, idx) | {idx})
    if not nx.is_directed_acyclic_graph(upstream):
        return math.inf
    longest = {}
    for node in nx.topological_sort(upstream):
        preds = list(upstream.predecessors(node))
        longest[node] = max((longest[p] + 1 for p in preds), default=0)
    return float(longest[idx])


def baseline_network() -> SpilloverNetwork:
    """Single sector with weight 1 and self-spillover 0.1."""
    return SpilloverNetwork(weights=np.array([1.0]), kernel=np.array([[0.1]]), label="baseline")
