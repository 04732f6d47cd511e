import numpy as np
import pytest

from estimation.exceptions import GraphError
from estimation.fleet_graph import (
    FleetGraph,
    RoundBus,
    broadcast,
    choose_leaders,
    common,
    exchange,
    neighbourhood,
    random_connected_graph,
    read_edge_list,
    write_edge_list,
)


def test_running_example_neighbourhoods(fleet):
    assert neighbourhood(fleet, 1).members == (1, 2, 4)
    assert neighbourhood(fleet, 3).members == (2, 3, 4, 5)
    assert neighbourhood(fleet, 4).members == (1, 3, 4)
    assert common(fleet, 1, 4) == (1, 4)
    assert common(fleet, 3, 4) == (3, 4)


def test_neighbourhood_index(fleet):
    order = neighbourhood(fleet, 3)
    assert order.index(4) == 2
    assert order.others == (2, 4, 5)
    with pytest.raises(GraphError):
        order.index(1)


def test_unknown_node(fleet):
    with pytest.raises(GraphError):
        fleet.neighbours(6)


def test_random_graph_is_connected_and_reproducible():
    a = random_connected_graph(10, 0.3, 7)
    b = random_connected_graph(10, 0.3, 7)
    assert a == b
    assert a.nodes == tuple(range(1, 11))


@pytest.mark.parametrize("l, p", [(1, 0.5), (5, 0.0), (5, 1.5)])
def test_random_graph_arguments(l, p):
    with pytest.raises(ValueError):
        random_connected_graph(l, p, 0)


def test_complete_graph_when_p_is_one():
    graph = random_connected_graph(6, 1.0, 3)
    assert len(graph.edges) == 15


def test_adjacency_round_trip(fleet):
    assert FleetGraph.from_adjacency(fleet.adjacency) == fleet


@pytest.mark.parametrize("adjacency", [
    [[0, 1], [0, 0]],
    [[1, 1], [1, 0]],
    [[0, 0, 0], [0, 0, 1], [0, 1, 0]],
])
def test_bad_adjacency(adjacency):
    with pytest.raises(GraphError):
        FleetGraph.from_adjacency(np.array(adjacency))


def test_choose_leaders(fleet, rng):
    leaders = choose_leaders(fleet, 0.4, rng)
    assert len(leaders.leaders) == 2
    assert set(leaders.followers(fleet)) | set(leaders.leaders) == set(fleet.nodes)
    assert len(choose_leaders(fleet, 0.01, rng).leaders) == 1


def test_edge_list_io(tmp_path, fleet):
    path = tmp_path / "fleet.edges"
    write_edge_list(fleet, str(path))
    assert read_edge_list(str(path)) == fleet


def test_missing_edge_list(tmp_path):
    with pytest.raises(GraphError):
        read_edge_list(str(tmp_path / "missing.edges"))


def test_bus_delivers_after_phase(fleet):
    received = exchange(RoundBus(fleet), broadcast(fleet, {i: f"from {i}" for i in fleet.nodes}))
    assert received[3] == {2: "from 2", 4: "from 4", 5: "from 5"}
    assert list(received[1]) == [2, 4]


def test_bus_rejects_non_edges_and_duplicates(fleet):
    bus = RoundBus(fleet)
    with pytest.raises(GraphError):
        bus.send(1, 3, "x")
    bus.send(1, 2, "x")
    with pytest.raises(GraphError):
        bus.send(1, 2, "y")


def test_bus_copies_payloads(fleet):
    bus = RoundBus(fleet)
    payload = np.zeros(3)
    bus.send(1, 2, payload)
    payload[0] = 1.0
    assert bus.deliver()[2][1][0] == 0.0
