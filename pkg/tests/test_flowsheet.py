import numpy as np
import pytest

from flowtune.flowsheet import (FlowsheetError, FlowsheetGraph, ResponseFunction,
                                StreamSpec, SweepState, TearSelectionError,
                                UnitNode, select_tears, subgraph)

from oracles import affine_fixed_point, brute_force_sccs, exhaustive_min_tears


class LinearUnit:
    """Test double: y = A x + b over the concatenated inputs."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def predict(self, x):
        return x @ self.a.T + self.b


def vec_stream(name, dim=2):
    return StreamSpec(name, tuple(f"v{i}" for i in range(dim)))


def ring_graph(dim=2, mats=None, offsets=None):
    """u1 -> u2 -> u3 -> u1 ring with linear units plus a feed into u1."""
    streams = {f"s{i}": vec_stream(f"s{i}", dim) for i in range(1, 4)}
    streams["feed"] = vec_stream("feed", dim)
    streams["out"] = vec_stream("out", dim)
    mats = mats or [0.3 * np.eye(dim)] * 3
    offsets = offsets or [np.ones(dim)] * 3
    # u1: [feed, s3] -> [s1, out]; u2: s1 -> s2; u3: s2 -> s3
    a1 = np.zeros((2 * dim, 2 * dim))
    a1[:dim, dim:] = mats[0]
    a1[dim:, :dim] = np.eye(dim)
    u1 = UnitNode("u1", "mixer", ["feed", "s3"], ["s1", "out"],
                  model=LinearUnit(a1, np.concatenate([offsets[0], np.zeros(dim)])))
    u2 = UnitNode("u2", "heater", ["s1"], ["s2"], model=LinearUnit(mats[1], offsets[1]))
    u3 = UnitNode("u3", "cooler", ["s2"], ["s3"], model=LinearUnit(mats[2], offsets[2]))
    return FlowsheetGraph(streams, {"u1": u1, "u2": u2, "u3": u3},
                          feeds=["feed"], products=["out"])


def chain_graph():
    streams = {n: vec_stream(n) for n in ["feed", "sa", "sb", "out"]}
    units = {
        "a": UnitNode("a", "heater", ["feed"], ["sa"], model=LinearUnit(np.eye(2), np.zeros(2))),
        "b": UnitNode("b", "heater", ["sa"], ["sb"], model=LinearUnit(2 * np.eye(2), np.ones(2))),
        "c": UnitNode("c", "heater", ["sb"], ["out"], model=LinearUnit(np.eye(2), np.zeros(2))),
    }
    return FlowsheetGraph(streams, units, feeds=["feed"], products=["out"])


def nested_graph():
    """Outer ring A->B->C->A plus inner ring B->E->B sharing only unit B."""
    streams = {n: vec_stream(n, 1) for n in
               ["feed", "ab", "bc", "ca", "be", "eb", "out"]}

    def unit(name, inputs, outputs):
        n_in, n_out = len(inputs), len(outputs)
        a = np.zeros((n_out, n_in))
        a[:, 0] = 0.4
        return UnitNode(name, "mixer", inputs, outputs,
                        model=LinearUnit(a, 0.1 * np.ones(n_out)))

    units = {
        "A": unit("A", ["feed", "ca"], ["ab"]),
        "B": unit("B", ["ab", "eb"], ["bc", "be"]),
        "E": unit("E", ["be"], ["eb"]),
        "C": unit("C", ["bc"], ["ca", "out"]),
    }
    return FlowsheetGraph(streams, units, feeds=["feed"], products=["out"])


# -- SCCs -------------------------------------------------------------------


def test_ring_is_one_scc():
    g = ring_graph()
    assert g.find_sccs() == [["u1", "u2", "u3"]]


def test_chain_gives_singletons():
    g = chain_graph()
    assert g.find_sccs() == [["a"], ["b"], ["c"]]


def test_nested_cycles_single_scc_matches_brute_force():
    g = nested_graph()
    sccs = {frozenset(c) for c in g.find_sccs()}
    edges = [(u, v) for u, v, _ in g.edges()]
    expected = {c for c in brute_force_sccs(sorted(g.units), edges) if len(c) > 1}
    assert {c for c in sccs if len(c) > 1} == expected
    assert frozenset("ABCE") in sccs


# -- tear selection -----------------------------------------------------------


def test_ring_needs_exactly_one_tear():
    g = ring_graph()
    assert len(g.tears) == 1


def test_acyclic_graph_has_no_tears():
    assert chain_graph().tears == []


def test_nested_two_cycles_tear_count_matches_exhaustive():
    g = nested_graph()
    cycles = g.simple_cycles()
    assert len(g.tears) == exhaustive_min_tears(cycles)
    assert len(g.tears) == 2  # cycles share unit B/C but no stream


def test_shared_stream_needs_single_tear():
    # two cycles through one shared stream: A->B (shared), B->A twice
    streams = {n: vec_stream(n, 1) for n in ["feed", "ab", "ba1", "ba2", "out"]}

    def lin(n_in, n_out):
        a = np.full((n_out, n_in), 0.2)
        return LinearUnit(a, 0.1 * np.ones(n_out))

    units = {
        "A": UnitNode("A", "mixer", ["feed", "ba1", "ba2"], ["ab"], model=lin(3, 1)),
        "B": UnitNode("B", "flash", ["ab"], ["ba1", "ba2", "out"], model=lin(1, 3)),
    }
    g = FlowsheetGraph(streams, units, feeds=["feed"], products=["out"])
    assert len(g.simple_cycles()) == 2
    assert g.tears == ["ab"]


def test_greedy_matches_exhaustive_on_random_graphs():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(3, 9))
        names = [f"n{i}" for i in range(n)]
        cycles = []
        for _ in range(int(rng.integers(1, 5))):
            size = int(rng.integers(1, 4))
            cycles.append(frozenset(rng.choice(names, size=size, replace=False)))
        greedy = select_tears(cycles)
        assert all(c & set(greedy) for c in cycles)
        assert len(greedy) == exhaustive_min_tears(cycles)


def test_user_tears_validated():
    g = ring_graph()
    streams, units = g.streams, g.units
    # a valid non-default user tear
    g2 = FlowsheetGraph(streams, units, feeds=["feed"], products=["out"],
                        tears=["s2"])
    assert g2.tears == ["s2"]
    with pytest.raises(TearSelectionError, match="cycle"):
        FlowsheetGraph(streams, units, feeds=["feed"], products=["out"], tears=[])


def test_unknown_tear_stream_rejected():
    g = ring_graph()
    with pytest.raises(FlowsheetError):
        FlowsheetGraph(g.streams, g.units, feeds=["feed"], products=["out"],
                       tears=["nope"])


# -- sweep & response ---------------------------------------------------------


def test_execution_order_respects_non_tear_edges():
    g = nested_graph()
    order = {u: i for i, u in enumerate(g.order)}
    tears = set(g.tears)
    for producer, consumer, stream in g.edges():
        if stream not in tears:
            assert order[producer] < order[consumer], (producer, consumer)


def test_sweep_matches_hand_composed_linear_ring():
    dim = 2
    mats = [np.array([[0.2, 0.1], [0.0, 0.3]]),
            np.array([[0.5, 0.0], [0.2, 0.1]]),
            np.array([[0.1, 0.2], [0.3, 0.0]])]
    offs = [np.array([1.0, 0.5]), np.array([0.0, 1.0]), np.array([0.3, 0.3])]
    g = ring_graph(dim, mats, offs)
    assert g.tears == ["s1"]
    feed = np.array([2.0, -1.0])
    guess = np.array([0.7, 0.4])
    state = SweepState()
    state.set_tear_vector(g, guess)
    out = g.sweep(state, {"feed": feed}, {u: np.zeros(0) for u in g.units})
    # hand composition: s3 = A3(A2 * guess + b2) + b3; s1' = A1 s3 + b1
    s2 = mats[1] @ guess + offs[1]
    s3 = mats[2] @ s2 + offs[2]
    expected = mats[0] @ s3 + offs[0]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_sweep_on_chain_has_no_tear_output():
    g = chain_graph()
    state = SweepState()
    out = g.sweep(state, {"feed": np.array([1.0, 2.0])},
                  {u: np.zeros(0) for u in g.units})
    assert out.size == 0
    np.testing.assert_allclose(state.values["out"], 2 * np.array([1.0, 2.0]) + 1)


def test_identity_units_fixed_point_everywhere():
    g = ring_graph(2, [np.eye(2)] * 3, [np.zeros(2)] * 3)
    guess = np.array([0.3, 0.9])
    state = SweepState()
    state.set_tear_vector(g, guess)
    out = g.sweep(state, {"feed": np.zeros(2)}, {u: np.zeros(0) for u in g.units})
    np.testing.assert_array_equal(out, guess)


def test_response_fixed_point_matches_linear_solve():
    dim = 2
    mats = [np.array([[0.3, 0.1], [0.05, 0.2]]),
            np.array([[0.4, 0.0], [0.1, 0.3]]),
            np.array([[0.2, 0.1], [0.0, 0.25]])]
    offs = [np.ones(2), np.full(2, 0.5), np.full(2, 0.25)]
    g = ring_graph(dim, mats, offs)
    response = ResponseFunction(g, {"feed": np.zeros(2)},
                                {u: np.zeros(0) for u in g.units})
    # composed affine map: x -> A x + c
    a = mats[0] @ mats[2] @ mats[1]
    c = mats[0] @ (mats[2] @ offs[1] + offs[2]) + offs[0]
    x = np.array([0.1, -0.2])
    np.testing.assert_allclose(response(x), a @ x + c, atol=1e-12)
    x_star = affine_fixed_point(a, c)
    np.testing.assert_allclose(response(x_star), x_star, atol=1e-12)
    np.testing.assert_allclose(response.jacobian(x), a, atol=1e-8)


def test_response_requires_a_tear():
    g = chain_graph()
    with pytest.raises(FlowsheetError):
        ResponseFunction(g, {"feed": np.zeros(2)}, {})


def test_unit_failure_names_unit():
    class Exploding:
        def predict(self, x):
            raise RuntimeError("boom")

    g = ring_graph()
    g.units["u2"].model = Exploding()
    state = SweepState()
    state.set_tear_vector(g, np.zeros(2))
    from flowtune.flowsheet import UnitEvaluationError
    with pytest.raises(UnitEvaluationError, match="u2"):
        g.sweep(state, {"feed": np.zeros(2)}, {u: np.zeros(0) for u in g.units})


def test_non_finite_stream_names_stream():
    g = ring_graph()
    g.units["u2"].model = LinearUnit(np.full((2, 2), np.inf), np.zeros(2))
    state = SweepState()
    state.set_tear_vector(g, np.ones(2))
    from flowtune.flowsheet import UnitEvaluationError
    with pytest.raises(UnitEvaluationError, match="s2"):
        g.sweep(state, {"feed": np.ones(2)}, {u: np.zeros(0) for u in g.units})


def test_subgraph_extraction():
    g = nested_graph()
    sub = subgraph(g, ["B", "E"])
    assert sub.feeds == ["ab"]
    assert set(sub.products) == {"bc"}
    assert sub.tears in (["be"], ["eb"])
    assert set(sub.units) == {"B", "E"}
