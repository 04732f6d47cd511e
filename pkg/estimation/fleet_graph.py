"""
Communication topology of the fleet and the synchronous round bus.

Nodes are labelled 1..l. Every node tracks the ordered neighbourhood ``V_i = N_i ∪ {i}``
sorted ascending; all stacked vectors and matrices follow that order.
"""

import copy
from dataclasses import dataclass
from typing import Any, Iterable

import networkx as nx
import numpy as np

from estimation.exceptions import GraphError
from estimation.logger import get_logger

# Set logger
logger = get_logger(__name__)

MAX_REDRAWS = 1_000_000

# Five-satellite running example: V_1 = {1,2,4}, V_3 = {2,3,4,5}, V_4 = {1,3,4}
RUNNING_EXAMPLE_EDGES = ((1, 2), (1, 4), (2, 3), (3, 4), (3, 5))


class FleetGraph:
    """Undirected connected graph over nodes ``1..n_nodes``."""

    def __init__(self, graph: nx.Graph):
        n = graph.number_of_nodes()
        if n < 1 or set(graph.nodes) != set(range(1, n + 1)):
            raise GraphError("Fleet nodes must be labelled 1..l without gaps.")
        if any(u == v for u, v in graph.edges):
            raise GraphError("Self-loops are not allowed in a fleet graph.")
        if not nx.is_connected(graph):
            raise GraphError("The communication graph is not connected.")
        self._graph = nx.Graph()
        self._graph.add_nodes_from(range(1, n + 1))
        self._graph.add_edges_from(sorted(tuple(sorted(e)) for e in graph.edges))

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[tuple[int, int]]) -> "FleetGraph":
        graph = nx.Graph()
        graph.add_nodes_from(range(1, n_nodes + 1))
        graph.add_edges_from(edges)
        if graph.number_of_nodes() != n_nodes:
            raise GraphError(f"Edges reference nodes outside 1..{n_nodes}.")
        return cls(graph)

    @classmethod
    def from_adjacency(cls, adjacency) -> "FleetGraph":
        a = np.asarray(adjacency).astype(bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError("Adjacency must be a square matrix.")
        if not np.array_equal(a, a.T):
            raise GraphError("Adjacency must be symmetric.")
        if np.any(np.diag(a)):
            raise GraphError("Adjacency must have a zero diagonal.")
        rows, cols = np.nonzero(np.triu(a))
        return cls.from_edges(a.shape[0], [(int(r) + 1, int(c) + 1) for r, c in zip(rows, cols)])

    @property
    def n_nodes(self) -> int:
        return self._graph.number_of_nodes()

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_nodes + 1))

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(tuple(sorted(e)) for e in self._graph.edges))

    @property
    def adjacency(self) -> np.ndarray:
        return nx.to_numpy_array(self._graph, nodelist=self.nodes, dtype=bool)

    def has_edge(self, i: int, k: int) -> bool:
        return self._graph.has_edge(i, k)

    def neighbours(self, i: int) -> tuple[int, ...]:
        self._check(i)
        return tuple(sorted(self._graph.neighbors(i)))

    def _check(self, i: int):
        if i not in self._graph:
            raise GraphError(f"Node {i} is not part of the fleet (1..{self.n_nodes}).")

    def relabel(self, mapping: dict[int, int]) -> "FleetGraph":
        return FleetGraph.from_edges(self.n_nodes, [(mapping[u], mapping[v]) for u, v in self.edges])

    def __eq__(self, other) -> bool:
        return isinstance(other, FleetGraph) and self.n_nodes == other.n_nodes and self.edges == other.edges

    def __repr__(self) -> str:
        return f"FleetGraph(n_nodes={self.n_nodes}, edges={list(self.edges)})"


@dataclass(frozen=True)
class Neighbourhood:
    owner: int
    members: tuple[int, ...]

    def index(self, node: int) -> int:
        try:
            return self.members.index(node)
        except ValueError:
            raise GraphError(f"Node {node} is not tracked by node {self.owner}.")

    def __contains__(self, node: int) -> bool:
        return node in self.members

    def __len__(self) -> int:
        return len(self.members)

    @property
    def others(self) -> tuple[int, ...]:
        return tuple(m for m in self.members if m != self.owner)


@dataclass(frozen=True)
class LeaderSet:
    leaders: frozenset

    def followers(self, graph: FleetGraph) -> tuple[int, ...]:
        return tuple(i for i in graph.nodes if i not in self.leaders)

    def __contains__(self, node: int) -> bool:
        return node in self.leaders


def neighbourhood(graph: FleetGraph, i: int) -> Neighbourhood:
    """Ordered ``V_i``."""
    return Neighbourhood(owner=i, members=tuple(sorted(graph.neighbours(i) + (i,))))


def common(graph: FleetGraph, i: int, k: int) -> tuple[int, ...]:
    """Nodes tracked by both ``i`` and ``k``, ascending."""
    return tuple(sorted(set(neighbourhood(graph, i).members) & set(neighbourhood(graph, k).members)))


def random_connected_graph(l: int, p: float, seed) -> FleetGraph:
    """
    Erdős–Rényi graph on ``l`` nodes with edge probability ``p``, redrawn until connected.

    Parameters
    ----------
    l : int
        Number of nodes, at least 2.
    p : float
        Edge probability in (0, 1].
    seed : int or numpy.random.Generator
        Same seed, same graph.

    Raises
    ------
    ValueError
        If ``l`` or ``p`` is out of range.
    GraphError
        If no connected draw is found within the redraw cap.
    """
    if not isinstance(l, (int, np.integer)) or l < 2:
        logger.exception("Invalid parameter: l")
        raise ValueError("A random fleet graph needs at least two nodes.")
    if not 0.0 < p <= 1.0:
        logger.exception("Invalid parameter: p")
        raise ValueError("The edge probability must lie in (0, 1].")

    rng = np.random.default_rng(seed)
    for attempt in range(MAX_REDRAWS):
        draw = nx.gnp_random_graph(int(l), p, seed=int(rng.integers(2**32)))
        if nx.is_connected(draw):
            logger.debug(f"Connected graph found after {attempt + 1} draws")
            return FleetGraph(nx.relabel_nodes(draw, {v: v + 1 for v in draw.nodes}))
    raise GraphError(f"No connected graph after {MAX_REDRAWS} draws (l={l}, p={p}).")


def running_example() -> FleetGraph:
    return FleetGraph.from_edges(5, RUNNING_EXAMPLE_EDGES)


def choose_leaders(graph: FleetGraph, fraction: float, rng: np.random.Generator) -> LeaderSet:
    """Uniformly random leader subset of size ``max(1, round(fraction * l))``."""
    if not 0.0 < fraction <= 1.0:
        logger.exception("Invalid parameter: fraction")
        raise ValueError("The leader fraction must lie in (0, 1].")
    count = max(1, int(round(fraction * graph.n_nodes)))
    chosen = rng.choice(np.array(graph.nodes), size=count, replace=False)
    return LeaderSet(leaders=frozenset(int(i) for i in chosen))


def read_edge_list(path: str) -> FleetGraph:
    """Read an ``i j`` per line, 1-based edge list."""
    try:
        graph = nx.read_edgelist(path, nodetype=int, data=False)
    except OSError as e:
        logger.exception("Edge list could not be read.")
        raise GraphError(f"{e}")
    n = max(graph.nodes, default=0)
    return FleetGraph.from_edges(n, graph.edges)


def write_edge_list(graph: FleetGraph, path: str):
    ordered = nx.Graph()
    ordered.add_edges_from(graph.edges)
    nx.write_edgelist(ordered, path, data=False)


class RoundBus:
    """
    Synchronous per-round mailbox.

    Messages posted during a phase become visible together when ``deliver`` is called;
    each ordered pair (sender, receiver) carries at most one payload per phase.
    """

    def __init__(self, graph: FleetGraph):
        self.graph = graph
        self._mailbox: dict[tuple[int, int], Any] = {}

    def send(self, sender: int, receiver: int, payload: Any):
        if not self.graph.has_edge(sender, receiver):
            raise GraphError(f"No link between {sender} and {receiver}.")
        if (sender, receiver) in self._mailbox:
            raise GraphError(f"Node {sender} already sent to {receiver} this phase.")
        self._mailbox[(sender, receiver)] = copy.deepcopy(payload)

    def deliver(self) -> dict[int, dict[int, Any]]:
        delivered = {i: {} for i in self.graph.nodes}
        for (sender, receiver), payload in sorted(self._mailbox.items(), key=lambda item: item[0]):
            delivered[receiver][sender] = payload
        self._mailbox.clear()
        return delivered


def exchange(bus: RoundBus, round_payloads: dict[int, dict[int, Any]]) -> dict[int, dict[int, Any]]:
    """
    Run one exchange phase.

    Parameters
    ----------
    bus : RoundBus
    round_payloads : dict
        ``sender -> {receiver -> payload}``.

    Returns
    -------
    dict
        ``receiver -> {sender -> payload}``, senders ascending.

    Raises
    ------
    GraphError
        If a payload is addressed along a non-edge.
    """
    for sender in sorted(round_payloads):
        for receiver in sorted(round_payloads[sender]):
            bus.send(sender, receiver, round_payloads[sender][receiver])
    return bus.deliver()


def broadcast(graph: FleetGraph, payloads: dict[int, Any]) -> dict[int, dict[int, Any]]:
    """Address each node's payload to all of its neighbours."""
    return {i: {k: payload for k in graph.neighbours(i)} for i, payload in payloads.items()}
