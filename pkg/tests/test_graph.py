import io
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from txsage.graph import (LEGAL_EDGE_TYPES, NodeType, RecordError, TransactionRecord, build_graph,
                          format_records, iter_records, load_graph, read_records, write_records)

from conftest import clique_edges, core_graph, numbered, path_graph, random_graphs, rec, star_graph


def test_node_and_edge_type_enumerations():
    assert len(NodeType) == 4
    assert len(LEGAL_EDGE_TYPES) == 7
    assert all(NodeType.CORE in pair for pair in LEGAL_EDGE_TYPES)
    for t in NodeType:
        assert NodeType.from_code(t.code) is t


def test_single_record_graph():
    g = build_graph([rec("A", "B", 10, ta="core", tb="merchant")], week="w1")
    assert g.node_count == 2 and g.directed_edge_count == 1 and g.edge_count == 1
    assert g.edge_type(0) == (NodeType.CORE, NodeType.MERCHANT)
    assert g.degree(g.index_of("A")) == g.degree(g.index_of("B")) == 1
    assert g.week == "w1"


def test_parallel_records_collapse():
    g = build_graph([rec("A", "B", 5, ts=3), rec("A", "B", 5, ts=1), rec("A", "B", 5, ts=2)])
    assert g.directed_edge_count == 1
    assert g.weight[0] == 15.0 and g.count[0] == 3 and g.first_ts[0] == 1


def test_opposite_directions_share_one_undirected_edge():
    g = build_graph([rec("A", "B", 2), rec("B", "A", 3)])
    assert g.directed_edge_count == 2 and g.edge_count == 1
    assert g.neighbors(0) == [(1, 5.0)]


@pytest.mark.parametrize("pair", [("merchant", "merchant"), ("foreign", "noncore"), ("noncore", "noncore")])
def test_illegal_edge_type_rejected_with_line(pair):
    records = [rec("A", "B"), rec("X", "Y", ta=pair[0], tb=pair[1])]
    with pytest.raises(RecordError) as err:
        build_graph(records)
    assert err.value.line == 2


def test_negative_amount_rejected():
    with pytest.raises(RecordError):
        build_graph([rec("A", "B", -1.0)])


def test_conflicting_node_types_rejected():
    with pytest.raises(RecordError, match="both"):
        build_graph([rec("A", "B", tb="merchant"), rec("A", "B", tb="noncore")])


def test_empty_stream_gives_empty_graph():
    g = build_graph([])
    assert g.node_count == 0 and g.edge_count == 0 and g.degrees().sum() == 0


def test_self_transfer_kept_directed_dropped_undirected():
    g = build_graph([rec("A", "A", 4), rec("A", "B", 1)])
    a = g.index_of("A")
    assert g.directed_edge_count == 2
    assert [v for v, _ in g.neighbors(a)] == [g.index_of("B")]


def test_neighbor_examples():
    s = star_graph(9)
    assert [v for v, _ in s.neighbors(0)] == list(range(1, 10))
    assert [v for v, _ in s.neighbors(4)] == [0]
    assert sorted(s.degrees().tolist()) == [1] * 9 + [9]
    assert s.degrees().sum() == 18 == 2 * s.edge_count
    p = path_graph(3)
    assert [v for v, _ in p.neighbors(1)] == [0, 2]
    tri = core_graph(clique_edges(["a", "b", "c"]))
    assert tri.edge_count == 3 and tri.degrees().tolist() == [2, 2, 2]


def test_isolated_neighbors_empty_and_index_errors():
    g = core_graph([("a", "b")], isolated=["z"])
    assert g.neighbors(g.index_of("z")) == []
    for bad in (-1, 3):
        with pytest.raises(IndexError):
            g.neighbors(bad)
        with pytest.raises(IndexError):
            g.degree(bad)
    with pytest.raises(KeyError):
        g.index_of("nope")


def test_registry_is_bijective_and_sorted():
    g = core_graph([("b", "a"), ("c", "a")])
    assert list(g.node_ids) == ["a", "b", "c"]
    assert all(g.index_of(nid) == i for i, nid in enumerate(g.node_ids))


def test_csv_round_trip(tmp_path):
    records = [rec("A", "M", 12.5, 7, tb="merchant"), rec("F", "A", 0.1, 9, ta="foreign")]
    path = tmp_path / "week_3.csv"
    write_records(path, records)
    assert read_records(path) == records
    g = load_graph(path)
    assert g.week == "week_3"


def test_csv_errors_report_file_lines():
    text = "sender_id,sender_type,receiver_id,receiver_type,amount,timestamp\nA,core,B,core,1,0\nA,core,B,bogus,1,0\n"
    with pytest.raises(RecordError) as err:
        list(iter_records(io.StringIO(text)))
    assert err.value.line == 3
    with pytest.raises(RecordError):
        list(iter_records(io.StringIO("a,b\n")))


@settings(max_examples=60, deadline=None)
@given(random_graphs())
def test_undirected_symmetry_and_handshake(g):
    adj = {u: {v for v, _ in g.neighbors(u)} for u in range(g.node_count)}
    for u, nbrs in adj.items():
        assert u not in nbrs
        assert all(u in adj[v] for v in nbrs)
    assert g.degrees().sum() == 2 * g.edge_count
    u, v, _ = g.undirected_edges()
    assert np.all(g.is_adjacent(u, v)) and np.all(g.is_adjacent(v, u))


edge_lists = st.lists(
    st.tuples(st.sampled_from("abcdefg"), st.sampled_from("abcdefg"),
              st.integers(0, 1000).map(lambda c: c / 4), st.integers(0, 50)),
    max_size=40)


@settings(max_examples=80, deadline=None)
@given(edge_lists, st.randoms(use_true_random=False))
def test_build_is_order_independent(rows, rnd):
    records = [rec(a, b, amt, ts) for a, b, amt, ts in rows]
    shuffled = list(records)
    rnd.shuffle(shuffled)
    assert build_graph(records).canonical() == build_graph(shuffled).canonical()


@settings(max_examples=80, deadline=None)
@given(edge_lists)
def test_serialisation_round_trip_is_bitwise(rows):
    g = build_graph([rec(a, b, amt, ts) for a, b, amt, ts in rows], week="w")
    text = format_records(g.to_records())
    again = build_graph(iter_records(io.StringIO(text)), week="w")
    assert again.canonical() == g.canonical()


def test_mixed_type_round_trip():
    records = [rec("C1", "M1", 3, ta="core", tb="merchant"), rec("M1", "C1", 1, ta="merchant", tb="core"),
               rec("N1", "C1", 2, ta="noncore"), rec("C1", "F1", 5, tb="foreign")]
    random.Random(0).shuffle(records)
    g = build_graph(records)
    assert build_graph(g.to_records()).canonical() == g.canonical()
    assert {g.edge_type(i) for i in range(g.directed_edge_count)} <= LEGAL_EDGE_TYPES
