import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decaflow.graph import (
    PROXY_IDENTIFIABLE,
    UNCONFOUNDED,
    UNIDENTIFIABLE,
    CausalGraph,
    CycleError,
    GraphError,
    QuerySpec,
    ablation_graph,
    build_decoder_mask,
    build_encoder_mask,
    check_intervention_identifiable,
    check_query_identifiable,
    classify_edges,
    d_separated,
    load_graph,
    sachs_graph,
    two_proxy_graph,
)

from oracles import brute_d_separated, random_dag


def chain():
    return CausalGraph(("a", "b", "c"), (), (("a", "b"), ("b", "c")))


def collider():
    return CausalGraph(("a", "b", "c"), (), (("a", "b"), ("c", "b")))


class TestLoadGraph:
    def test_two_node_chain(self):
        g = load_graph({"observed": ["a", "b"], "edges": [["a", "b"]]})
        assert g.topological_order == ("a", "b")

    def test_two_proxy_graph_document(self):
        doc = {
            "observed": ["n", "t", "w", "y"],
            "hidden": ["z"],
            "edges": [["z", "n"], ["z", "t"], ["z", "w"], ["z", "y"], ["n", "t"], ["t", "y"], ["w", "y"]],
        }
        g = load_graph(json.dumps(doc))
        assert g == two_proxy_graph()

    def test_observed_into_hidden_rejected(self):
        with pytest.raises(GraphError, match="hidden"):
            load_graph({"observed": ["x1"], "hidden": ["z"], "edges": [["x1", "z"]]})

    def test_cycle_named(self):
        with pytest.raises(CycleError) as err:
            load_graph({"observed": ["a", "b", "c"], "edges": [["a", "b"], ["b", "c"], ["c", "a"]]})
        assert set(err.value.cycle) == {"a", "b", "c"}
        assert err.value.cycle[0] == err.value.cycle[-1]

    def test_duplicate_name(self):
        with pytest.raises(GraphError, match="duplicate"):
            load_graph({"observed": ["a", "b"], "hidden": ["a"], "edges": []})

    def test_from_file(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps(two_proxy_graph().to_dict()))
        assert load_graph(p) == two_proxy_graph()
        assert load_graph(str(p)) == two_proxy_graph()

    @pytest.mark.parametrize("doc", [
        {"observed": "a"},
        {"observed": ["a"], "edges": [["a"]]},
        {"observed": ["a"], "edges": [["a", "q"]]},
        {"observed": ["a"], "extra": 1},
    ])
    def test_malformed(self, doc):
        with pytest.raises(GraphError):
            load_graph(doc)

    def test_hidden_with_hidden_parent_ok(self):
        g = sachs_graph()
        assert g.parents("PKA") == ("PKC",)
        assert g.hidden_order == ("PKC", "PKA")


class TestDSeparation:
    def test_chain_blocked(self):
        assert d_separated(chain(), {"a"}, {"c"}, {"b"})
        assert not d_separated(chain(), {"a"}, {"c"}, set())

    def test_collider_opened(self):
        assert not d_separated(collider(), {"a"}, {"c"}, {"b"})
        assert d_separated(collider(), {"a"}, {"c"}, set())

    def test_two_proxy_n_w_given_z(self):
        g = two_proxy_graph()
        assert brute_d_separated(g, {"n"}, {"w"}, {"z"})
        assert d_separated(g, {"n"}, {"w"}, {"z"})

    def test_descendant_of_collider_opens(self):
        g = CausalGraph(("a", "b", "c", "d"), (), (("a", "b"), ("c", "b"), ("b", "d")))
        assert not d_separated(g, {"a"}, {"c"}, {"d"})

    def test_unknown_node(self):
        with pytest.raises(KeyError):
            d_separated(chain(), {"a"}, {"q"}, set())

    def test_matches_brute_force_on_corpus(self):
        rng = np.random.default_rng(0)
        checked = 0
        for _ in range(40):
            n_obs = int(rng.integers(2, 7))
            n_hid = int(rng.integers(0, 3))
            g = random_dag(rng, n_obs, n_hid, p=float(rng.uniform(0.2, 0.6)))
            nodes = list(g.nodes)
            for a, b in itertools.combinations(nodes, 2):
                rest = [v for v in nodes if v not in (a, b)]
                for r in range(min(3, len(rest)) + 1):
                    for C in itertools.combinations(rest, r):
                        assert d_separated(g, {a}, {b}, set(C)) == brute_d_separated(g, {a}, {b}, set(C)), (g, a, b, C)
                        checked += 1
        assert checked > 1000


class TestMasks:
    def test_decoder_two_proxy_all_children_of_z(self):
        m = build_decoder_mask(two_proxy_graph())
        assert m.ordering == ("n", "t", "w", "y")
        assert m.context_mask[:, 0].all()

    def test_decoder_no_hidden(self):
        m = build_decoder_mask(chain())
        assert m.context_mask.shape == (3, 0)

    def test_decoder_ablation_no_proxy_to_proxy(self):
        g = ablation_graph(4)
        m = build_decoder_mask(g)
        idx = {v: i for i, v in enumerate(m.ordering)}
        proxies = [f"n{i}" for i in range(1, 5)]
        for a in proxies:
            for b in proxies:
                if a != b:
                    assert not m.input_mask[idx[a], idx[b]]
        assert m.input_mask[idx["y"], idx["t"]]

    def test_encoder_single_confounder(self):
        m = build_encoder_mask(two_proxy_graph())
        assert set(np.array(m.context_names)[m.context_mask[0]]) == {"n", "t", "w", "y"}

    def test_encoder_coparents(self):
        g = CausalGraph(("c", "x5", "x6"), ("z1",), (("z1", "c"), ("x5", "c"), ("x6", "x5")))
        m = build_encoder_mask(g)
        assert set(np.array(m.context_names)[m.context_mask[0]]) == {"c", "x5"}

    def test_encoder_two_confounders_shared_child_acyclic(self):
        g = CausalGraph(("c",), ("z1", "z2"), (("z1", "c"), ("z2", "c")))
        m = build_encoder_mask(g)
        assert m.ordering == ("z1", "z2")
        assert m.input_mask[1, 0] and not m.input_mask[0, 1]
        assert m.is_acyclic()

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 7), st.integers(0, 3))
    def test_masks_acyclic_and_faithful(self, seed, n_obs, n_hid):
        g = random_dag(np.random.default_rng(seed), n_obs, n_hid)
        dec = build_decoder_mask(g)
        enc = build_encoder_mask(g)
        assert dec.is_acyclic() and enc.is_acyclic()
        for i, v in enumerate(dec.ordering):
            for k, z in enumerate(dec.context_names):
                assert dec.context_mask[i, k] == (z in g.parents(v))
            for j, w in enumerate(dec.ordering):
                if i != j:
                    assert dec.input_mask[i, j] == (w in g.parents(v))

    def test_expand_blocks(self):
        g = CausalGraph(("c",), ("z1", "z2"), (("z1", "c"), ("z2", "c")))
        e = build_encoder_mask(g).expand([2, 1], [1])
        assert e.dim == 3
        assert e.is_acyclic()
        # second coordinate of z1 reads the first one, z2 reads both of z1's
        assert e.input_mask[1, 0] and e.input_mask[2, 0] and e.input_mask[2, 1]
        d = build_decoder_mask(g).expand([1], [2, 0])
        assert d.context_mask.shape == (1, 2) and d.context_mask.all()


class TestIdentifiability:
    def test_two_proxy_identifiable(self):
        r = check_query_identifiable(two_proxy_graph(), QuerySpec("t", "y"))
        assert r.identifiable
        v = r.per_confounder["z"]
        assert (v.deconfounded, v.n_witness, v.w_witness) == (True, "n", "w")
        assert "assumed" in r.reason

    @pytest.mark.parametrize("S, expected", [(0, False), (1, False), (2, True), (3, True), (10, True)])
    def test_ablation(self, S, expected):
        r = check_query_identifiable(ablation_graph(S), QuerySpec("t", "y"))
        assert r.identifiable is expected
        assert set(r.per_confounder) == {"z1", "z2"}
        if expected:
            for v in r.per_confounder.values():
                assert v.n_witness != v.w_witness
                assert {v.n_witness, v.w_witness} <= {f"n{i}" for i in range(1, S + 1)}

    def test_ablation_s2_witnesses(self):
        r = check_query_identifiable(ablation_graph(2), QuerySpec("t", "y"))
        for v in r.per_confounder.values():
            assert (v.n_witness, v.w_witness) == ("n1", "n2")

    def test_monotone_in_proxies(self):
        verdicts = [check_query_identifiable(ablation_graph(S), QuerySpec("t", "y")).identifiable for S in range(11)]
        for a, b in zip(verdicts, verdicts[1:]):
            assert b or not a

    def test_hidden_treatment_rejected(self):
        with pytest.raises(GraphError):
            check_query_identifiable(two_proxy_graph(), QuerySpec("z", "y"))

    def test_query_spec_invariants(self):
        with pytest.raises(GraphError):
            QuerySpec("t", "t")
        with pytest.raises(GraphError):
            QuerySpec("t", "y", {"t"})

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 7))
    def test_unconfounded_always_identifiable(self, seed, n_obs):
        g = random_dag(np.random.default_rng(seed), n_obs, 0)
        for t, y in itertools.permutations(g.observed, 2):
            assert check_query_identifiable(g, QuerySpec(t, y)).identifiable

    def test_intervention_no_descendants(self):
        ok, reports = check_intervention_identifiable(two_proxy_graph(), "y")
        assert ok and reports == {}

    def test_intervention_two_proxy(self):
        ok, reports = check_intervention_identifiable(two_proxy_graph(), "t")
        assert ok and set(reports) == {"y"} and reports["y"].identifiable

    def test_intervention_ablation(self):
        ok, reports = check_intervention_identifiable(ablation_graph(2), "t")
        assert ok and set(reports) == {"y"}
        ok, _ = check_intervention_identifiable(ablation_graph(1), "t")
        assert not ok

    def test_report_json_fields(self):
        r = check_query_identifiable(two_proxy_graph(), QuerySpec("t", "y"))
        d = json.loads(json.dumps(r.to_dict()))
        assert set(d) == {"identifiable", "per_confounder", "reason"}
        assert set(d["per_confounder"]["z"]) == {"deconfounded", "n_witness", "w_witness"}


class TestClassifyEdges:
    def test_no_hidden(self):
        assert set(classify_edges(chain()).values()) == {UNCONFOUNDED}

    def test_two_proxy(self):
        labels = classify_edges(two_proxy_graph())
        assert labels[("t", "y")] == PROXY_IDENTIFIABLE
        assert labels[("n", "t")] != UNCONFOUNDED

    def test_ablation_s0(self):
        assert classify_edges(ablation_graph(0)) == {("t", "y"): UNIDENTIFIABLE}

    def test_sachs_labels_cover_observed_edges(self):
        g = sachs_graph()
        labels = classify_edges(g)
        obs_edges = [e for e in g.edges if not g.is_hidden(e[0])]
        assert set(labels) == set(obs_edges)
        assert labels[("Plcg", "PIP3")] == UNCONFOUNDED
