"""End-to-end acceptance gate.

The first half checks the core math on randomized instances against
independent oracles (scipy LP transport, scipy Dijkstra, central finite
differences).  The second half asserts the benchmark robustness and
curvature trends on full-protocol models, which are expensive to build
and therefore trained once and cached under ``.cache/zoo/`` (see
helpers_zoo / helpers_curv; delete that directory to force a rebuild).
"""

import time

import numpy as np
import pytest

import helpers_curv
from test_curvature import (
    cycle_graph,
    lp_w1,
    random_connected_graph,
    random_measure,
    scipy_distances,
    triangle_graph,
    two_node_graph,
)
from test_neural_graph import _dense_net

from nricci import analysis, curvature, data_io, network, robustness
from nricci.curvature import (
    MeasureConfig,
    neighbor_measure,
    orc_all_edges,
    wasserstein1,
)
from nricci.neural_graph import (
    TAU,
    WeightedGraph,
    build_neural_data_graph,
    build_neural_graph,
    normalize_mixed_sign,
)


def _oracle_kappa(graph, dist, u, v):
    """Edge curvature via the generic-LP transport oracle."""
    m_u = neighbor_measure(graph, u, MeasureConfig())
    m_v = neighbor_measure(graph, v, MeasureConfig())
    cost = dist[np.ix_(m_u.support, m_v.support)]
    return 1.0 - lp_w1(m_u.probabilities, m_v.probabilities, cost) / dist[u, v]


class TestCurvatureOracle:
    def test_random_graphs_match_lp_oracle(self):
        rng = np.random.default_rng(1001)
        t0 = time.perf_counter()
        n_edges = 0
        for _ in range(100):
            g = random_connected_graph(rng, n_max=12, w_lo=0.1, w_hi=10.0)
            report = orc_all_edges(g)
            assert report.undefined_edges == []
            dist = scipy_distances(g)
            for e in range(g.n_edges):
                u, v = int(g.edge_u[e]), int(g.edge_v[e])
                expect = _oracle_kappa(g, dist, u, v)
                assert abs(report.kappa[e] - expect) <= 1e-6
                n_edges += 1
        elapsed = time.perf_counter() - t0
        assert n_edges >= 100
        assert elapsed <= 60.0, f"oracle sweep took {elapsed:.1f}s"

    @pytest.mark.parametrize("length", [1.0, 0.25, 7.5])
    def test_two_node_curvature_is_zero(self, length):
        g = two_node_graph(length)
        dist = scipy_distances(g)
        report = orc_all_edges(g)
        assert abs(report.kappa[0] - 0.0) <= 1e-9
        assert abs(_oracle_kappa(g, dist, 0, 1) - 0.0) <= 1e-9

    def test_unit_triangle_curvature_is_half(self):
        g = triangle_graph(1.0)
        dist = scipy_distances(g)
        report = orc_all_edges(g)
        for e in range(g.n_edges):
            u, v = int(g.edge_u[e]), int(g.edge_v[e])
            assert abs(report.kappa[e] - 0.5) <= 1e-9
            assert abs(_oracle_kappa(g, dist, u, v) - 0.5) <= 1e-9

    def test_unit_five_cycle_curvature_is_zero(self):
        g = cycle_graph(5, 1.0)
        dist = scipy_distances(g)
        report = orc_all_edges(g)
        for e in range(g.n_edges):
            u, v = int(g.edge_u[e]), int(g.edge_v[e])
            assert abs(report.kappa[e] - 0.0) <= 1e-9
            assert abs(_oracle_kappa(g, dist, u, v) - 0.0) <= 1e-9


class TestTransportMetric:
    def test_w1_metric_and_plan_properties(self):
        rng = np.random.default_rng(1002)
        checked = 0
        while checked < 1000:
            g = random_connected_graph(rng, n_max=10)
            dist = scipy_distances(g)

            def solve(ma, mb):
                cost = dist[np.ix_(ma.support, mb.support)]
                value, plan = wasserstein1(ma, mb, cost)
                # plan marginals and recomputed objective
                row = np.abs(plan.coupling.sum(axis=1) - ma.probabilities).max()
                col = np.abs(plan.coupling.sum(axis=0) - mb.probabilities).max()
                assert max(row, col) <= 1e-9
                assert abs(float((plan.coupling * cost).sum()) - value) <= 1e-9
                return value

            for _ in range(10):
                ma, mb, mc = (random_measure(rng, g) for _ in range(3))
                ab, ba = solve(ma, mb), solve(mb, ma)
                assert abs(ab - ba) <= 1e-9
                ac, bc = solve(ma, mc), solve(mb, mc)
                assert ac <= ab + bc + 1e-9
                checked += 1


class TestNormalization:
    def test_mass_conservation_random_cases(self):
        rng = np.random.default_rng(1003)
        for trial in range(1000):
            size = int(rng.integers(1, 13))
            include_bias = trial % 4 != 3
            while True:
                w = rng.uniform(0.05, 2.0, size) * rng.choice([-1.0, 1.0], size)
                acts = rng.uniform(0.05, 3.0, size)
                bias = 0.0 if trial % 5 == 0 else float(rng.uniform(-0.5, 0.5))
                received = float((w * acts).sum()) + (bias if include_bias else 0.0)
                if received > 1e-2:  # active target neuron
                    break
            out = normalize_mixed_sign(w, acts, bias, include_bias=include_bias)
            assert 0.0 <= out.factor <= 1.0
            assert np.all(out.w_hat > 0.0)
            assert np.all(out.w_hat >= TAU)
            kept_mass = float((out.w_hat * acts[out.kept]).sum()) + out.bias_mass
            assert abs(kept_mass - out.input_sum) <= 1e-9
            assert abs(out.input_sum - received) <= 1e-9


class TestDataGraphStructure:
    def test_random_nets_and_inputs(self):
        rng = np.random.default_rng(1004)
        for trial in range(100):
            depth = int(rng.integers(2, 4))
            sizes = [int(rng.integers(3, 9)) for _ in range(depth + 1)]
            weights = [rng.normal(size=(sizes[k + 1], sizes[k]))
                       for k in range(depth)]
            biases = [rng.normal(size=sizes[k + 1]) * 0.2 for k in range(depth)]
            net = _dense_net(weights, biases)

            if trial % 10 == 0:
                x = np.zeros(sizes[0])
            else:
                x = rng.uniform(0.0, 1.0, size=sizes[0])
                x[rng.random(sizes[0]) < 0.3] = 0.0

            static = build_neural_graph(net)
            data, _ = build_neural_data_graph(net, x)

            assert np.all(np.isfinite(static.edge_w))
            assert np.all(static.edge_w > 0)
            if data.n_edges:
                assert np.all(np.isfinite(data.edge_w))
                assert np.all(data.edge_w > 0)

            static_pairs = set(zip(static.edge_u.tolist(), static.edge_v.tolist()))
            data_pairs = set(zip(data.edge_u.tolist(), data.edge_v.tolist()))
            assert data_pairs <= static_pairs

            trace = net.forward_trace(x)
            for u in data.edge_u:
                node = data.node_id(int(u))
                assert trace.values[node.rank][node.index] > 0.0
            if not x.any():
                for u in data.edge_u:
                    assert data.node_id(int(u)).rank >= 1


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def _min_preactivation_margin(net, x):
    _, pre, _ = net._forward_full(x)
    return min(np.abs(z).min() for z in pre)


def _check_input_gradient(net, x, labels, coords, h=1e-6):
    _, grad = net.loss_and_input_gradient(x, labels)
    assert np.abs(grad).max() > 1e-8, "input gradient vanished"
    for r, c in coords:
        xp = x.copy()
        xp[r, c] += h
        xm = x.copy()
        xm[r, c] -= h
        num = (net.loss(xp, labels) - net.loss(xm, labels)) / (2 * h)
        assert _rel_err(num, grad[r, c]) <= 1e-4


def _check_parameter_gradients(net, x, labels, rng, per_array=4, h=1e-6):
    _, grads = net.loss_and_parameter_gradients(x, labels)
    assert max(float(np.abs(g).max()) for g in grads) > 1e-8, \
        "parameter gradients vanished"
    for arr, grad in zip(net.parameter_arrays(), grads):
        flat = arr.ravel()
        gflat = np.asarray(grad).ravel()
        picks = rng.choice(flat.size, size=min(per_array, flat.size),
                           replace=False)
        for j in picks:
            old = flat[j]
            flat[j] = old + h
            lp = net.loss(x, labels)
            flat[j] = old - h
            lm = net.loss(x, labels)
            flat[j] = old
            num = (lp - lm) / (2 * h)
            assert _rel_err(num, gflat[j]) <= 1e-4


class TestGradients:
    def test_dense_nets_match_central_differences(self):
        rng = np.random.default_rng(1005)
        for _ in range(5):
            depth = int(rng.integers(2, 4))
            sizes = [int(rng.integers(4, 8)) for _ in range(depth + 1)]
            for _attempt in range(50):
                weights = [rng.normal(size=(sizes[k + 1], sizes[k]))
                           for k in range(depth)]
                biases = [rng.normal(size=sizes[k + 1]) * 0.3
                          for k in range(depth)]
                net = _dense_net(weights, biases)
                x = rng.uniform(-1.0, 1.0, size=(3, sizes[0]))
                # keep every unit away from its ReLU kink so central
                # differences see a locally smooth function
                if _min_preactivation_margin(net, x) > 1e-4:
                    break
            labels = rng.integers(0, sizes[-1], size=3)
            coords = [(r, c) for r in range(3) for c in range(sizes[0])]
            _check_input_gradient(net, x, labels, coords)
            _check_parameter_gradients(net, x, labels, rng)

    def test_conv_net_matches_central_differences(self):
        rng = np.random.default_rng(1006)
        net = network.build_network("cnn", seed=3)
        for _attempt in range(20):
            x = rng.uniform(0.0, 1.0, size=(2, 784))
            if _min_preactivation_margin(net, x) > 1e-5:
                break
        labels = rng.integers(0, 10, size=2)
        coords = [(int(rng.integers(0, 2)), int(rng.integers(0, 784)))
                  for _ in range(16)]
        _check_input_gradient(net, x, labels, coords)
        _check_parameter_gradients(net, x, labels, rng, per_array=3)


class TestScaleCovariance:
    def test_uniform_curvature_invariant_under_rescaling(self):
        rng = np.random.default_rng(1007)
        for _ in range(10):
            g = random_connected_graph(rng, n_max=10)
            base = orc_all_edges(g).kappa
            for c in (0.5, 2.0, 10.0):
                scaled = WeightedGraph(list(g.layer_sizes), g.edge_u.copy(),
                                       g.edge_v.copy(), g.edge_w * c)
                kappa = orc_all_edges(scaled).kappa
                np.testing.assert_allclose(kappa, base, rtol=0, atol=1e-9)


# ---------------------------------------------------------------------------
# benchmark trends on the cached full-protocol models


class TestBenchmarkRobustness:
    def test_two_layer_training_regime_trends(self, zoo_ce, zoo_at):
        rec_ce, grid_ce = robustness.read_records(zoo_ce["records"])
        rec_at, grid_at = robustness.read_records(zoo_at["records"])
        assert grid_ce == grid_at
        assert len(rec_ce) == len(rec_at) == 10000

        assert robustness.robust_accuracy(rec_ce, 0.1) <= 0.10
        assert robustness.robust_accuracy(rec_at, 0.1) >= 0.50
        for eps in grid_ce:
            at_acc = robustness.robust_accuracy(rec_at, eps)
            ce_acc = robustness.robust_accuracy(rec_ce, eps)
            assert at_acc > ce_acc, f"eps={eps}: AT {at_acc} vs CE {ce_acc}"

    def test_two_layer_build_time_budget(self, zoo_ce, zoo_at):
        total = sum(
            m["train_seconds"] + m["attack_seconds"] for m in (zoo_ce, zoo_at)
        )
        assert total <= 1800.0, f"train+attack took {total:.0f}s"


def _group_aucs(setup: str):
    strong = helpers_curv.group_kappas(setup, "strong")
    weak = helpers_curv.group_kappas(setup, "weak")
    assert len(strong) >= 20 and len(weak) >= 20
    lo, hi = analysis.default_bounds({"strong": strong, "weak": weak})
    auc = {
        name: float(np.mean([
            analysis.auc_cdf(analysis.empirical_cdf(k), lo, hi) for k in group
        ]))
        for name, group in (("strong", strong), ("weak", weak))
    }
    return auc, strong, weak


class TestBenchmarkCurvature:
    @pytest.mark.parametrize("setup", ["fc-15-20-ce", "fc-15-25-20-15-ce"])
    def test_auc_separates_robust_groups(self, setup):
        auc, _, _ = _group_aucs(setup)
        assert auc["strong"] < auc["weak"], auc

    def test_negative_fraction_separates_robust_groups(self):
        _, strong, weak = _group_aucs("fc-15-20-ce")
        nf_strong = float(np.mean([analysis.negative_fraction(k) for k in strong]))
        nf_weak = float(np.mean([analysis.negative_fraction(k) for k in weak]))
        assert nf_strong < nf_weak, (nf_strong, nf_weak)

    def test_single_example_report_under_ten_seconds(self, zoo_ce, mnist_test):
        net = data_io.load_model(zoo_ce["model"])
        # warm the jit-compiled kernels on a toy graph before timing
        orc_all_edges(triangle_graph())
        t0 = time.perf_counter()
        report = curvature.nrc_all_edges(net, mnist_test.images[0])
        elapsed = time.perf_counter() - t0
        assert report.kappa.size > 0
        assert elapsed <= 10.0, f"per-example report took {elapsed:.1f}s"

    def test_empty_robust_group_reports_na(self, zoo_ce, tmp_path):
        records, _ = robustness.read_records(zoo_ce["records"])
        assert robustness.robust_accuracy(records, 0.2) == 0.0
        assert robustness.select_group(records, robust_at=0.2) == []

        rows = analysis.group_auc_table(
            "fc-15-20-ce", {("0", 0.2): []}, bounds=(-1.0, 1.0)
        )
        assert rows and all(r.is_na and r.mean_auc is None for r in rows)
        out = tmp_path / "auc_rows.csv"
        analysis.write_table_csv(rows, out)
        assert ",NA," in out.read_text()
        assert analysis.read_table_csv(out) == rows
