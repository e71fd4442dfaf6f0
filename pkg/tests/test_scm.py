import json

import numpy as np
import pytest

from decaflow.graph import sachs_graph, two_proxy_graph
from decaflow.scm import (
    Dataset,
    SimulationError,
    SyntheticSCM,
    LinearMechanism,
    abduct_additive,
    build_ablation_scm,
    build_random_mechanism_scm,
    load_scm_spec,
    oracle_ate,
    oracle_counterfactual,
    oracle_intervene,
    percentiles,
    save_scm_spec,
    simulate,
)

from oracles import numerical_jacobian


def _eval_single(scm, z, u):
    return scm.evaluate(np.atleast_2d(z), np.atleast_2d(u))[0]


class TestAblation:
    def test_linear_y_coefficient(self):
        scm = build_ablation_scm("linear", 2)
        y = scm.equations["y"]
        assert dict(zip(y.parents, y.coefs))["t"] == 0.9
        assert dict(zip(y.parents, y.coefs)) == {"z1": -0.75, "z2": 0.6, "t": 0.9}
        assert y.noise_scale == 0.3

    def test_linear_zero_inputs(self):
        scm = build_ablation_scm("linear", 0)
        x = _eval_single(scm, np.zeros(2), np.zeros(2))
        assert np.array_equal(x, np.zeros(2))

    def test_nonlinear_zero_inputs(self):
        scm = build_ablation_scm("nonlinear", 1)
        x = _eval_single(scm, np.zeros(2), np.zeros(3))
        assert np.array_equal(x, np.zeros(3))

    def test_nonlinear_all_proxies_finite(self):
        scm = build_ablation_scm("nonlinear", 10)
        ds = simulate(scm, 500, 0)
        assert np.isfinite(ds.values).all()
        assert scm.equations["y"].noise_sources == ("y", "n2")

    def test_range(self):
        with pytest.raises(ValueError):
            build_ablation_scm("linear", 11)
        with pytest.raises(ValueError):
            build_ablation_scm("quadratic", 1)

    def test_linear_proxies_use_own_noise(self):
        scm = build_ablation_scm("linear", 10)
        for i in range(1, 11):
            assert scm.equations[f"n{i}"].noise_sources == (f"n{i}",)

    def test_spec_roundtrip(self, tmp_path):
        scm = build_ablation_scm("nonlinear", 3)
        save_scm_spec(scm, tmp_path / "scm.json", seed=7)
        again, seed = load_scm_spec(tmp_path / "scm.json")
        assert seed == 7 and again.graph == scm.graph
        assert json.loads((tmp_path / "scm.json").read_text()) == {"kind": "nonlinear", "S": 3, "seed": 7}


class TestSimulate:
    def test_cov_t_z1(self):
        # t = 1.5 z1 + 0.5 z2 + 0.4 u_t with unit-variance independent z: cov(t, z1) = 1.5
        scm = build_ablation_scm("linear", 0)
        ds = simulate(scm, 200_000, 3)
        t = ds.column("t")
        z1 = ds.ground_truth.z[:, 0]
        prod = (t - t.mean()) * (z1 - z1.mean())
        se = prod.std() / np.sqrt(len(t))
        assert abs(prod.mean() - 1.5 * z1.var()) < 3 * se

    def test_single_row(self):
        ds = simulate(build_ablation_scm("linear", 2), 1, 0)
        assert ds.values.shape == (1, 4) and len(ds.ground_truth) == 1

    def test_replay_reproduces(self):
        scm = build_ablation_scm("nonlinear", 4)
        ds = simulate(scm, 1000, 1)
        again = scm.evaluate(ds.ground_truth.z, ds.ground_truth.u)
        assert np.max(np.abs(again - ds.values)) <= 1e-12

    def test_deterministic(self):
        scm = build_ablation_scm("linear", 3)
        a, b = simulate(scm, 100, 5), simulate(scm, 100, 5)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, simulate(scm, 100, 6).values)

    def test_non_finite_names_node(self):
        g = two_proxy_graph()
        eq = {v: LinearMechanism(v, g.parents(v), coefs=(1.0,) * len(g.parents(v))) for v in g.observed}
        eq["w"] = LinearMechanism("w", ("z",), coefs=(np.inf,))
        scm = SyntheticSCM(g, eq)
        with pytest.raises(SimulationError, match="'w'"):
            simulate(scm, 10, 0)

    def test_equations_must_match_graph(self):
        g = two_proxy_graph()
        eq = {v: LinearMechanism(v, g.parents(v), coefs=(1.0,) * len(g.parents(v))) for v in g.observed}
        eq["w"] = LinearMechanism("w", ("z", "n"), coefs=(1.0, 1.0))
        with pytest.raises(ValueError):
            SyntheticSCM(g, eq)

    def test_csv_roundtrip(self, tmp_path):
        ds = simulate(build_ablation_scm("linear", 2), 50, 0)
        ds.to_csv(tmp_path / "d.csv", tmp_path / "gt.csv")
        header = (tmp_path / "gt.csv").read_text().splitlines()[0].split(",")
        assert header == ["z.z1", "z.z2", "u.t", "u.y", "u.n1", "u.n2"]
        back = Dataset.from_csv(tmp_path / "d.csv", tmp_path / "gt.csv")
        assert back.columns == ds.columns
        assert np.array_equal(back.values, ds.values)
        assert np.array_equal(back.ground_truth.z, ds.ground_truth.z)
        assert np.array_equal(back.ground_truth.u, ds.ground_truth.u)

    def test_split_sizes(self):
        ds = simulate(build_ablation_scm("linear", 0), 25000, 0)
        parts = ds.split((0.8, 0.1, 0.1))
        assert [len(p) for p in parts] == [20000, 2500, 2500]


class TestOracles:
    def test_intervene_root_without_descendants(self):
        scm = build_ablation_scm("linear", 3)
        obs = simulate(scm, 500, 9)
        do = oracle_intervene(scm, "n2", 4.0, 500, 9)
        for j, v in enumerate(scm.graph.observed):
            if v != "n2":
                assert np.array_equal(obs.values[:, j], do.values[:, j])
        assert np.all(do.column("n2") == 4.0)

    def test_intervene_linear_mean(self):
        scm = build_ablation_scm("linear", 0)
        alpha = 1.3
        y = oracle_intervene(scm, "t", alpha, 200_000, 0).column("y")
        assert abs(y.mean() - 0.9 * alpha) < 3 * y.std() / np.sqrt(len(y))

    def test_percentile_interventions(self):
        scm = build_ablation_scm("linear", 2)
        train = simulate(scm, 20000, 0)
        p25, p50, p75 = percentiles(train.column("t"))
        assert p25 < p50 < p75
        assert np.all(oracle_intervene(scm, "t", p50, 10, 1).column("t") == p50)

    def test_counterfactual_identity(self):
        scm = build_ablation_scm("nonlinear", 4)
        ds = simulate(scm, 20, 0)
        s = ds.ground_truth[3]
        assert np.array_equal(oracle_counterfactual(scm, s, "t", s.x[0]), s.x)

    def test_counterfactual_linear_shift(self):
        scm = build_ablation_scm("linear", 2)
        ds = simulate(scm, 200, 0)
        cf = oracle_counterfactual(scm, ds.ground_truth, "t", 0.7)
        dy = cf[:, 1] - ds.column("y")
        assert np.allclose(dy, 0.9 * (0.7 - ds.column("t")), atol=1e-12)
        # non-descendants of t untouched to the bit
        assert np.array_equal(cf[:, 2:], ds.values[:, 2:])

    def test_counterfactual_average_matches_interventional(self):
        scm = build_ablation_scm("linear", 0)
        ds = simulate(scm, 100_000, 11)
        cf_mean = oracle_counterfactual(scm, ds.ground_truth, "t", 1.0)[:, 1].mean()
        do_mean = oracle_intervene(scm, "t", 1.0, 100_000, 12).column("y").mean()
        assert abs(cf_mean - do_mean) / abs(do_mean) < 0.02

    def test_ate_linear(self):
        scm = build_ablation_scm("linear", 0)
        sd_y = simulate(scm, 200_000, 1).column("y").std()
        # var(y) = 0.6^2 + 1.05^2 + 0.36^2 + 0.3^2 after substituting t
        assert abs(sd_y - np.sqrt(1.6821)) < 0.01
        ate = oracle_ate(scm, "t", 0.0, 1.0, "y", 50_000, 2, sd=sd_y)
        assert abs(ate - 0.9 / sd_y) < 1e-9

    def test_ate_trivial_zero(self):
        scm = build_ablation_scm("nonlinear", 3)
        assert oracle_ate(scm, "t", 0.4, 0.4, "y", 1000, 0) == 0.0
        assert oracle_ate(scm, "t", 0.0, 2.0, "n1", 1000, 0) == 0.0


class TestRandomMechanisms:
    @pytest.mark.parametrize("mode", ["additive", "nonadditive"])
    def test_deterministic(self, mode):
        g = sachs_graph()
        a = build_random_mechanism_scm(g, mode, seed=4, pilot=2000)
        b = build_random_mechanism_scm(g, mode, seed=4, pilot=2000)
        c = build_random_mechanism_scm(g, mode, seed=5, pilot=2000)
        assert all(a.equations[v] == b.equations[v] for v in a.equations)
        assert any(a.equations[v] != c.equations[v] for v in a.equations if g.parents(v))

    def test_additive_noise_slope_constant(self):
        g = sachs_graph()
        scm = build_random_mechanism_scm(g, "additive", seed=1, pilot=2000)
        rng = np.random.default_rng(0)
        for v in g.observed:
            mech = scm.equations[v]
            vals = {p: rng.standard_normal(20) for p in g.parents(v)}
            h = 1e-3
            u = rng.standard_normal(20)
            slope = (mech(vals, {v: u + h}) - mech(vals, {v: u - h})) / (2 * h)
            assert np.allclose(slope, slope[0], atol=1e-9)

    def test_nonadditive_noise_slope_varies(self):
        g = sachs_graph()
        scm = build_random_mechanism_scm(g, "nonadditive", seed=1, pilot=2000)
        mech = scm.equations["Mek"]
        rng = np.random.default_rng(0)
        vals = {p: rng.standard_normal(20) for p in g.parents("Mek")}
        u = rng.standard_normal(20)
        slope = (mech(vals, {"Mek": u + 1e-3}) - mech(vals, {"Mek": u - 1e-3})) / 2e-3
        assert np.ptp(slope) > 1e-3

    def test_unit_variance(self):
        scm = build_random_mechanism_scm(sachs_graph(), "additive", seed=2)
        ds = simulate(scm, 20000, 0)
        assert np.allclose(ds.values.std(axis=0), 1.0, atol=0.05)
        assert np.allclose(ds.values.mean(axis=0), 0.0, atol=0.05)

    @pytest.mark.parametrize("mode", ["additive", "nonadditive"])
    def test_jacobian_sparsity_matches_graph(self, mode):
        g = sachs_graph()
        scm = build_random_mechanism_scm(g, mode, seed=3, pilot=2000)
        nodes = list(g.nodes)
        rng = np.random.default_rng(1)
        for v in g.nodes:
            if v not in scm.equations:
                continue
            mech = scm.equations[v]
            nonzero = np.zeros(len(nodes), dtype=bool)
            for _ in range(10):
                point = rng.standard_normal(len(nodes))
                noise = {s: np.array([rng.standard_normal()]) for s in mech.noise_sources}

                def f(p):
                    return mech({n: np.array([p[i]]) for i, n in enumerate(nodes)}, noise)

                J = numerical_jacobian(f, point)[0]
                nonzero |= np.abs(J) > 1e-6
            assert set(np.array(nodes)[nonzero]) == set(g.parents(v)), v

    def test_additive_round_trip(self):
        g = sachs_graph()
        scm = build_random_mechanism_scm(g, "additive", seed=0, pilot=2000)
        ds = simulate(scm, 500, 0)
        vals = {v: ds.column(v) for v in g.observed}
        vals.update({h: ds.ground_truth.z[:, k] for k, h in enumerate(g.hidden)})
        for i, v in enumerate(g.observed):
            u = abduct_additive(scm.equations[v], vals, vals[v])
            assert np.max(np.abs(u - ds.ground_truth.u[:, i])) < 1e-10


def test_random_spec_roundtrip(tmp_path):
    scm = build_random_mechanism_scm(sachs_graph(), "nonadditive", seed=3, pilot=2000)
    save_scm_spec(scm, tmp_path / "scm.json", seed=11)
    again, seed = load_scm_spec(tmp_path / "scm.json")
    assert seed == 11
    assert np.array_equal(simulate(scm, 50, 0).values, simulate(again, 50, 0).values)
