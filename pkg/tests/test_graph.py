import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import graph_oracle as oracle
from covariability.graph import (
    CausalDag,
    GraphError,
    Path,
    Step,
    backdoor_blocked,
    backdoor_paths,
    d_separated,
    enumerate_paths,
    is_blocked,
    is_collider,
)

FIG_CONFOUNDER = CausalDag([("Z", "X"), ("Z", "Y"), ("X", "Y")])
FIG_INTERVENED = CausalDag([("Z", "Y"), ("X", "Y")])
FIG_COVARIABILITY = CausalDag(
    [("Z", "X"), ("Z", "Y"), ("X", "Y"), ("U", "U_X"), ("U", "U_Y"), ("U_X", "X"), ("U_Y", "Y")]
)
FIG_NO_CONFOUNDER = CausalDag([("Z1", "X"), ("Z2", "Y"), ("X", "Y")])


def as_strings(paths):
    return [str(p) for p in paths]


@st.composite
def random_dags(draw, max_nodes=6, min_nodes=2):
    n = draw(st.integers(min_nodes, max_nodes))
    perm = draw(st.permutations(range(n)))
    names = [f"n{i}" for i in perm]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    edges = [(names[i], names[j]) for (i, j), m in zip(pairs, mask) if m]
    return CausalDag(edges, names)


class TestCausalDag:
    def test_nodes_and_edges(self):
        assert FIG_CONFOUNDER.nodes == {"X", "Y", "Z"}
        assert ("Z", "X") in FIG_CONFOUNDER.edges
        assert FIG_CONFOUNDER.parents("Y") == ("X", "Z")
        assert FIG_CONFOUNDER.children("Z") == ("X", "Y")

    def test_topological_order(self):
        order = FIG_COVARIABILITY.topological_order()
        pos = {n: i for i, n in enumerate(order)}
        assert all(pos[t] < pos[h] for t, h in FIG_COVARIABILITY.edges)

    def test_descendants_and_ancestors(self):
        assert FIG_COVARIABILITY.descendants("U") == {"U_X", "U_Y", "X", "Y"}
        assert FIG_COVARIABILITY.ancestors("X") == {"X", "Z", "U_X", "U"}

    def test_self_edge(self):
        with pytest.raises(GraphError, match="self-edge"):
            CausalDag([("A", "A")])

    def test_duplicate_edge(self):
        with pytest.raises(GraphError, match="duplicate"):
            CausalDag([("A", "B"), ("A", "B")])

    def test_cycle(self):
        with pytest.raises(GraphError, match="cycle"):
            CausalDag([("A", "B"), ("B", "C"), ("C", "A")])

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=15, unique=True))
    def test_acyclicity_check_matches_networkx(self, pairs):
        edges = [(str(a), str(b)) for a, b in pairs if a != b]
        acyclic = nx.is_directed_acyclic_graph(nx.DiGraph(edges))
        if acyclic:
            CausalDag(edges)
        else:
            with pytest.raises(GraphError):
                CausalDag(edges)

    def test_case_sensitive(self):
        g = CausalDag([("x", "X")])
        assert len(g.nodes) == 2

    def test_without_incoming(self):
        assert FIG_CONFOUNDER.without_incoming("X") == FIG_INTERVENED

    def test_unknown_node(self):
        with pytest.raises(GraphError, match="'Q'"):
            FIG_CONFOUNDER.descendants("Q")


class TestTextFormat:
    def test_parse(self):
        g = CausalDag.from_text("# confounder\nZ -> X\n\nZ -> Y   # trailing\nX -> Y\nnode W\n")
        assert g == CausalDag([("Z", "X"), ("Z", "Y"), ("X", "Y")], ["W"])

    def test_round_trip(self):
        g = CausalDag([("A", "B")], ["C"])
        assert CausalDag.from_text(g.to_text()) == g

    @pytest.mark.parametrize("text,line", [("A -> B\nA => B\n", 2), ("A -> \n", 1), ("\n\nnode\n", 3)])
    def test_errors_carry_line_number(self, text, line):
        with pytest.raises(GraphError, match=f"line {line}"):
            CausalDag.from_text(text)

    def test_read_file(self, tmp_path):
        f = tmp_path / "g.dag"
        f.write_text("Z -> X\nZ -> Y\nX -> Y\n")
        assert CausalDag.read(f) == FIG_CONFOUNDER


class TestPaths:
    def test_confounder_has_two_paths(self):
        assert as_strings(enumerate_paths(FIG_CONFOUNDER, "X", "Y")) == ["X -> Y", "X <- Z -> Y"]

    def test_single_edge(self):
        paths = enumerate_paths(CausalDag([("A", "B")]), "A", "B")
        assert len(paths) == 1 and paths[0].steps[0].orientation == "forward"

    def test_covariability_graph_has_three_paths(self):
        assert as_strings(enumerate_paths(FIG_COVARIABILITY, "X", "Y")) == [
            "X <- U_X <- U -> U_Y -> Y",
            "X -> Y",
            "X <- Z -> Y",
        ]

    def test_order_is_lexicographic(self):
        paths = enumerate_paths(FIG_COVARIABILITY, "X", "Y")
        assert [p.nodes for p in paths] == sorted(p.nodes for p in paths)

    def test_errors(self):
        with pytest.raises(GraphError, match="'Q'"):
            enumerate_paths(FIG_CONFOUNDER, "X", "Q")
        with pytest.raises(GraphError):
            enumerate_paths(FIG_CONFOUNDER, "X", "X")

    def test_path_validation(self):
        with pytest.raises(GraphError, match="consecutive"):
            Path((Step("A", "B", True), Step("C", "D", True)))
        with pytest.raises(GraphError, match="repeats"):
            Path((Step("A", "B", True), Step("B", "A", False)))

    @given(random_dags())
    @settings(max_examples=60, deadline=None)
    def test_symmetric_under_reversal(self, g):
        a, b = sorted(g.nodes)[:2]
        fwd = {p.nodes: p for p in enumerate_paths(g, a, b)}
        back = {p.reversed().nodes: p.reversed() for p in enumerate_paths(g, b, a)}
        assert fwd == back

    @given(random_dags())
    @settings(max_examples=40, deadline=None)
    def test_matches_networkx_simple_paths(self, g):
        a, b = sorted(g.nodes)[:2]
        und = nx.Graph(list(g.edges))
        und.add_nodes_from(g.nodes)
        expected = sorted(tuple(p) for p in nx.all_simple_paths(und, a, b))
        assert [p.nodes for p in enumerate_paths(g, a, b)] == expected

    def test_steps_follow_edges(self):
        for p in enumerate_paths(FIG_COVARIABILITY, "X", "Y"):
            for s in p.steps:
                assert ((s.a, s.b) if s.forward else (s.b, s.a)) in FIG_COVARIABILITY.edges


class TestCollider:
    def test_collider(self):
        p = Path((Step("X", "W", True), Step("W", "Y", False)))
        assert is_collider(p, "W")

    def test_fork(self):
        p = Path((Step("X", "Z", False), Step("Z", "Y", True)))
        assert not is_collider(p, "Z")

    def test_chain(self):
        p = Path((Step("X", "Y", True), Step("Y", "W", True)))
        assert not is_collider(p, "Y")

    def test_endpoint_is_not_interior(self):
        p = Path((Step("X", "Y", True),))
        with pytest.raises(GraphError, match="interior"):
            is_collider(p, "X")

    def test_blocking_rule(self):
        g = CausalDag([("X", "W"), ("Y", "W"), ("W", "D")])
        (p,) = enumerate_paths(g, "X", "Y")
        assert is_blocked(g, p, [])
        assert not is_blocked(g, p, ["W"])
        assert not is_blocked(g, p, ["D"])  # descendant opens the collider


class TestBackdoor:
    def test_confounder(self):
        assert as_strings(backdoor_paths(FIG_CONFOUNDER, "X", "Y")) == ["X <- Z -> Y"]
        assert backdoor_blocked(FIG_CONFOUNDER, "X", "Y", {"Z"})
        assert not backdoor_blocked(FIG_CONFOUNDER, "X", "Y", set())

    def test_no_confounder(self):
        assert backdoor_paths(FIG_NO_CONFOUNDER, "X", "Y") == []
        assert backdoor_blocked(FIG_NO_CONFOUNDER, "X", "Y", set())
        assert backdoor_blocked(FIG_NO_CONFOUNDER, "X", "Y", {"Z1", "Z2"})

    def test_covariability_graph(self):
        assert as_strings(backdoor_paths(FIG_COVARIABILITY, "X", "Y")) == [
            "X <- U_X <- U -> U_Y -> Y",
            "X <- Z -> Y",
        ]
        assert not backdoor_blocked(FIG_COVARIABILITY, "X", "Y", {"Z"})
        assert backdoor_blocked(FIG_COVARIABILITY, "X", "Y", {"Z", "U"})
        assert backdoor_blocked(FIG_COVARIABILITY, "X", "Y", {"Z", "U_X"})

    def test_exposure_in_cond(self):
        with pytest.raises(GraphError):
            backdoor_blocked(FIG_CONFOUNDER, "X", "Y", {"X"})

    def test_collider_on_backdoor_route(self):
        # X <- A -> C <- B -> Y is closed until C is conditioned on
        g = CausalDag([("A", "X"), ("A", "C"), ("B", "C"), ("B", "Y"), ("X", "Y")])
        assert backdoor_paths(g, "X", "Y") == []
        assert backdoor_blocked(g, "X", "Y", set())
        assert not backdoor_blocked(g, "X", "Y", {"C"})
        assert backdoor_blocked(g, "X", "Y", {"C", "A"})

    @given(random_dags(), st.data())
    @settings(max_examples=80, deadline=None)
    def test_vacuous_when_no_backdoor_path(self, g, data):
        x, y = sorted(g.nodes)[:2]
        cond = data.draw(st.sets(st.sampled_from(sorted(g.nodes - {x, y})))) if len(g.nodes) > 2 else set()
        if not any(not p.steps[0].forward for p in enumerate_paths(g, x, y)):
            assert backdoor_blocked(g, x, y, cond)

    @given(random_dags(), st.data())
    @settings(max_examples=80, deadline=None)
    def test_matches_separation_in_backdoor_graph(self, g, data):
        # cond free of descendants of x: backdoor blocking equals d-separation once x's out-arrows are cut
        x, y = sorted(g.nodes)[:2]
        allowed = sorted(g.nodes - g.descendants(x) - {x, y})
        cond = data.draw(st.sets(st.sampled_from(allowed))) if allowed else set()
        cut = CausalDag([e for e in g.edges if e[0] != x], g.nodes)
        assert backdoor_blocked(g, x, y, cond) == d_separated(cut, x, y, cond)


class TestDSeparation:
    def test_intervened_graph(self):
        assert d_separated(FIG_INTERVENED, {"X"}, {"Z"}, set())
        assert not d_separated(FIG_INTERVENED, {"X"}, {"Z"}, {"Y"})

    def test_shared_cause_of_unit_effects(self):
        assert d_separated(FIG_COVARIABILITY, {"U_X"}, {"U_Y"}, {"U"})
        assert not d_separated(FIG_COVARIABILITY, {"U_X"}, {"U_Y"}, set())

    def test_string_arguments(self):
        assert d_separated(FIG_COVARIABILITY, "U_X", "U_Y", "U")

    def test_overlap_is_an_error(self):
        with pytest.raises(GraphError, match="overlap"):
            d_separated(FIG_CONFOUNDER, {"X"}, {"Y"}, {"X"})

    def test_empty_set_is_an_error(self):
        with pytest.raises(GraphError):
            d_separated(FIG_CONFOUNDER, set(), {"Y"})

    @given(random_dags(), st.data())
    @settings(max_examples=150, deadline=None)
    def test_matches_networkx(self, g, data):
        roles = data.draw(st.lists(st.sampled_from("abcn"), min_size=len(g.nodes), max_size=len(g.nodes)))
        nodes = sorted(g.nodes)
        sets = {r: {n for n, rr in zip(nodes, roles) if rr == r} for r in "abc"}
        if not sets["a"] or not sets["b"]:
            return
        dg = nx.DiGraph(list(g.edges))
        dg.add_nodes_from(g.nodes)
        expected = nx.is_d_separator(dg, sets["a"], sets["b"], sets["c"])
        assert d_separated(g, sets["a"], sets["b"], sets["c"]) == expected

    @given(random_dags(max_nodes=18, min_nodes=13), st.data())
    @settings(max_examples=40, deadline=None)
    def test_large_graphs_match_networkx(self, g, data):
        # beyond the lookup-table size the uncompiled traversal is used
        nodes = sorted(g.nodes)
        roles = data.draw(st.lists(st.sampled_from("abcn"), min_size=len(nodes), max_size=len(nodes)))
        sets = {r: {n for n, rr in zip(nodes, roles) if rr == r} for r in "abc"}
        if not sets["a"] or not sets["b"]:
            return
        dg = nx.DiGraph(list(g.edges))
        dg.add_nodes_from(g.nodes)
        expected = nx.is_d_separator(dg, sets["a"], sets["b"], sets["c"])
        assert d_separated(g, sets["a"], sets["b"], sets["c"]) == expected

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_exhaustive_small_graphs_against_path_oracle(self, n):
        dags = oracle.dags_up_to_isomorphism(n)
        table = oracle.connected_table(dags)
        names = oracle.node_names(n)
        for gi, adj in enumerate(dags):
            g = CausalDag(oracle.edges_of(adj), names)
            for roles in itertools.product(range(4), repeat=n):
                a = [i for i, r in enumerate(roles) if r == 1]
                b = [i for i, r in enumerate(roles) if r == 2]
                c = [i for i, r in enumerate(roles) if r == 3]
                if not a or not b:
                    continue
                cmask = sum(1 << i for i in c)
                got = d_separated(g, [names[i] for i in a], [names[i] for i in b], [names[i] for i in c])
                assert got == oracle.separated(table[gi], a, b, cmask), (g, a, b, c)

    def test_oracle_agrees_with_library_paths(self):
        # the path oracle and the library's own path-wise rule must coincide
        dags = oracle.dags_up_to_isomorphism(4)
        table = oracle.connected_table(dags)
        names = oracle.node_names(4)
        for gi, adj in enumerate(dags):
            g = CausalDag(oracle.edges_of(adj), names)
            for a, b in itertools.combinations(range(4), 2):
                paths = enumerate_paths(g, names[a], names[b])
                for cmask in range(16):
                    if cmask & (1 << a | 1 << b):
                        continue
                    cond = [names[i] for i in range(4) if cmask >> i & 1]
                    open_ = any(not is_blocked(g, p, cond) for p in paths)
                    assert open_ == table[gi, a, b, cmask]


class TestOracle:
    def test_isomorphism_class_counts(self):
        # number of unlabelled DAGs on n nodes
        assert [len(oracle.dags_up_to_isomorphism(n)) for n in range(1, 6)] == [1, 2, 6, 31, 302]

    def test_descendant_masks(self):
        adj = np.zeros((1, 3, 3), dtype=bool)
        adj[0, 0, 1] = adj[0, 1, 2] = True
        assert oracle.descendant_masks(adj).tolist() == [[0b111, 0b110, 0b100]]
