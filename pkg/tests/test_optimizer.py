import math

import numpy as np
import pytest

from zoclip import estimator, optimizer, rng
from zoclip.oracles import CountingOracle, NoiseModelSpec, QuadraticProblem


def problem(d=10, family="none", p=1.5, x0=None):
    if x0 is None:
        x0 = np.zeros(d)
        x0[0] = 1.0
    return QuadraticProblem(d=d, noise=NoiseModelSpec(family=family, p=p), x0=x0)


class TestConfigs:
    def test_validation(self):
        with pytest.raises(ValueError):
            optimizer.BaseConfig(alpha=0.1, mu=0.0, M=1, T=1)
        with pytest.raises(ValueError):
            optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=0, T=1)
        with pytest.raises(ValueError):
            optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=1, T=1, mode="scalar_clip")
        with pytest.raises(ValueError):
            optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=1, T=1, mode="vector_clip")
        with pytest.raises(ValueError):
            optimizer.MomentumConfig(alpha=0.1, mu=1e-3, M=1, T=1, mode="raw", beta=1.0)

    def test_thresholds(self):
        c = optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=1, T=1, mode="scalar_clip", tau=2.0)
        assert c.threshold == 2.0
        c = optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=1, T=1, mode="vector_clip", vec_radius=3.0)
        assert c.threshold == 3.0
        c = optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=1, T=1, mode="raw")
        assert c.threshold is None
        m = optimizer.MomentumConfig(
            alpha=0.1, mu=1e-3, M=1, T=1, mode="scalar_clip", tau=2.0, tau0=5.0, M0=4
        )
        assert m.warm_threshold == 5.0


class TestBaseStep:
    def test_null_step(self):
        prob = problem()
        cfg = optimizer.BaseConfig(alpha=0.0, mu=1e-3, M=4, T=1, mode="raw")
        state = optimizer.OptimizerState(t=0, x=prob.x0.copy())
        new, _ = optimizer.base_step(state, prob, cfg, 3)
        np.testing.assert_array_equal(new.x, prob.x0)
        assert new.queries == 8

    def test_stationary_noiseless_origin(self):
        prob = problem(x0=np.zeros(10))
        cfg = optimizer.BaseConfig(alpha=0.5, mu=1e-3, M=4, T=1, mode="raw")
        state = optimizer.OptimizerState(t=0, x=np.zeros(10))
        new, est = optimizer.base_step(state, prob, cfg, 3)
        np.testing.assert_allclose(new.x, np.zeros(10), atol=1e-12)

    def test_unbiased_contraction_in_mean(self):
        # E[x1] = (1 - alpha) x0 on the noiseless quadratic
        d, n, alpha = 10, 100_000, 0.5
        prob = problem(d=d)
        x0 = prob.x0
        y, U = estimator.directional_batch(prob, x0, 1e-3, n, rng.derive_key("contract"))
        X1 = x0 - alpha * d * y[:, None] * U  # M = 1 steps under each key
        mean = X1.mean(axis=0)
        se = X1.std(axis=0, ddof=1) / math.sqrt(n)
        np.testing.assert_array_less(np.abs(mean - 0.5 * x0), 5 * se)


class TestMomentum:
    def test_warm_start_fields(self):
        prob = problem()
        cfg = optimizer.MomentumConfig(
            alpha=0.1, mu=1e-3, M=2, T=5, mode="scalar_clip", tau=10.0,
            beta=0.9, M0=8, tau0=10.0,
        )
        state, est = optimizer.warm_start(prob.x0, prob, cfg, 7)
        assert state.t == 1
        assert state.queries == 16
        np.testing.assert_array_equal(state.m, est.g)
        np.testing.assert_allclose(state.x, prob.x0 - 0.1 * est.g)

    def test_warm_start_fixed_direction_formula(self):
        # forced direction u = x0/||x0||: g0 = d * ||x0|| * u, x1 = x0 (1 - alpha d)
        d, alpha = 6, 0.01
        x0 = np.full(d, 2.0)
        prob = problem(d=d, x0=x0)
        u = (x0 / np.linalg.norm(x0))[None, :]
        est = estimator.estimate_gradient(
            prob, x0, 1e-3, 1, "scalar_clip", 1e9, 0, directions=u
        )
        np.testing.assert_allclose(est.g, d * np.linalg.norm(x0) * u[0], rtol=1e-9)
        x1 = x0 - alpha * est.g
        np.testing.assert_allclose(x1, x0 * (1 - alpha * d), rtol=1e-9)

    def test_zero_start(self):
        prob = problem(x0=np.zeros(10))
        cfg = optimizer.MomentumConfig(
            alpha=0.1, mu=1e-3, M=2, T=5, mode="raw", beta=0.9, M0=8
        )
        state, est = optimizer.warm_start(np.zeros(10), prob, cfg, 7)
        np.testing.assert_allclose(state.x, np.zeros(10), atol=1e-12)
        np.testing.assert_allclose(state.m, np.zeros(10), atol=1e-12)

    def test_geometric_recursion(self, monkeypatch):
        # constant g = e1, m0 = 0, beta = 0.9 -> m3 = (1 - 0.9^3) e1 = 0.271 e1
        d = 4
        prob = problem(d=d)
        e1 = np.eye(d)[0]

        def fake_estimate(oracle, x, mu, m, mode, threshold, key, directions=None):
            return estimator.GradientEstimate(
                g=e1.copy(), mode=mode, batch_size=m, clipped_count=0,
                raw_scalars=np.zeros(m),
            )

        monkeypatch.setattr(optimizer.estimator, "estimate_gradient", fake_estimate)
        cfg = optimizer.MomentumConfig(
            alpha=0.0, mu=1e-3, M=1, T=5, mode="raw", beta=0.9, M0=1
        )
        state = optimizer.OptimizerState(t=1, x=prob.x0.copy(), m=np.zeros(d))
        for _ in range(3):
            state, _ = optimizer.momentum_step(state, prob, cfg, 0)
        np.testing.assert_allclose(state.m, (1 - 0.9**3) * e1, rtol=1e-12)
        # and convergence of m_t -> c is geometric in beta
        gap = np.linalg.norm(state.m - e1)
        assert gap == pytest.approx(0.9**3, rel=1e-9)

    def test_beta_zero_equals_base(self):
        prob = problem(d=6, family="sparse_pareto")
        mom = optimizer.MomentumConfig(
            alpha=0.05, mu=1e-3, M=8, T=12, mode="scalar_clip", tau=2.0,
            beta=0.0, M0=8, tau0=2.0,
        )
        r_mom = optimizer.run(prob, mom, master_seed=5)
        # base trajectory fed the same per-iteration keys: warm key first
        state = optimizer.OptimizerState(t=0, x=prob.x0.copy())
        base_cfg = optimizer.BaseConfig(
            alpha=0.05, mu=1e-3, M=8, T=12, mode="scalar_clip", tau=2.0
        )
        keys = [optimizer.warm_key(5)] + [optimizer.iter_key(5, t) for t in range(1, 12)]
        for k in keys:
            state, _ = optimizer.base_step(state, prob, base_cfg, k)
        assert r_mom.final_grad_norm == pytest.approx(
            float(np.linalg.norm(state.x)), rel=1e-12
        )


class TestRun:
    def test_t_zero_empty(self):
        prob = problem()
        cfg = optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=2, T=0, mode="raw")
        r = optimizer.run(prob, cfg, master_seed=0)
        assert len(r.series.t) == 0
        assert r.queries == 0
        assert r.final_grad_norm == pytest.approx(np.linalg.norm(prob.x0))

    def test_noiseless_contraction(self):
        prob = problem(d=10)
        cfg = optimizer.BaseConfig(alpha=0.5, mu=1e-3, M=64, T=40, mode="scalar_clip", tau=1e6)
        for seed in range(10):
            r = optimizer.run(prob, cfg, master_seed=seed)
            assert r.final_grad_norm < 1e-2

    def test_replay_determinism(self):
        prob = problem(d=8, family="sparse_pareto")
        cfg = optimizer.BaseConfig(alpha=0.05, mu=1e-3, M=16, T=20, mode="scalar_clip", tau=1.0)
        a = optimizer.run(prob, cfg, master_seed=11)
        b = optimizer.run(prob, cfg, master_seed=11)
        assert a.final_grad_norm == b.final_grad_norm
        np.testing.assert_array_equal(a.series.grad_norm, b.series.grad_norm)
        np.testing.assert_array_equal(a.series.cosine, b.series.cosine)

    def test_query_accounting_base(self):
        gen = np.random.default_rng(0)
        for _ in range(5):
            M, T = int(gen.integers(1, 20)), int(gen.integers(1, 15))
            prob = problem(d=5, family="sparse_pareto")
            counting = CountingOracle(prob)
            cfg = optimizer.BaseConfig(alpha=0.01, mu=1e-3, M=M, T=T, mode="raw")
            r = optimizer.run(prob, cfg, master_seed=3, oracle=counting)
            assert counting.count == 2 * M * T
            assert r.queries == 2 * M * T

    def test_query_accounting_momentum(self):
        gen = np.random.default_rng(1)
        for _ in range(5):
            M, M0, T = int(gen.integers(1, 10)), int(gen.integers(1, 50)), int(gen.integers(2, 12))
            prob = problem(d=5, family="sparse_pareto")
            counting = CountingOracle(prob)
            cfg = optimizer.MomentumConfig(
                alpha=0.01, mu=1e-3, M=M, T=T, mode="scalar_clip", tau=5.0,
                beta=0.9, M0=M0, tau0=5.0,
            )
            r = optimizer.run(prob, cfg, master_seed=3, oracle=counting)
            assert counting.count == 2 * M0 + 2 * M * (T - 1)
            assert r.queries == 2 * M0 + 2 * M * (T - 1)

    def test_gradient_bound_from_suboptimality(self):
        # on the quadratic: ||grad f(x)||^2 = 2 L (f(x) - f*) exactly
        prob = problem(d=6, family="sparse_pareto")
        cfg = optimizer.BaseConfig(alpha=0.05, mu=1e-3, M=8, T=15, mode="raw")
        state = optimizer.OptimizerState(t=0, x=prob.x0.copy())
        for t in range(cfg.T):
            state, _ = optimizer.base_step(state, prob, cfg, optimizer.iter_key(9, t))
            g2 = float(np.linalg.norm(prob.true_gradient(state.x)) ** 2)
            assert g2 == pytest.approx(2 * prob.L * prob.f(state.x), rel=1e-12)

    def test_queries_nondecreasing(self):
        prob = problem(d=6, family="sparse_pareto")
        cfg = optimizer.BaseConfig(alpha=0.05, mu=1e-3, M=8, T=15, mode="raw")
        r = optimizer.run(prob, cfg, master_seed=2)
        assert np.all(np.diff(r.series.queries) >= 0)
        assert np.all(r.series.grad_norm >= 0)

    def test_divergence_guard(self):
        prob = problem(d=4, family="sparse_pareto", p=1.1)
        cfg = optimizer.BaseConfig(alpha=1e9, mu=1e-3, M=1, T=500, mode="raw")
        r = optimizer.run(prob, cfg, master_seed=0)
        assert r.diverged
        assert np.isfinite(r.final_grad_norm)
        assert len(r.series.t) <= 500


class TestRunCells:
    def test_matches_run_exactly(self):
        prob = problem(d=20, family="sparse_pareto", x0=3.0 * np.eye(20)[0])
        cfgs = [
            optimizer.BaseConfig(alpha=0.05, mu=1e-3, M=16, T=30, mode="scalar_clip", tau=0.5),
            optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=16, T=30, mode="raw"),
            optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=16, T=30, mode="vector_clip", vec_radius=1.0),
        ]
        batch = optimizer.run_cells(prob, cfgs, master_seed=4, record=True)
        for cfg, cell in zip(cfgs, batch):
            single = optimizer.run(prob, cfg, master_seed=4)
            assert cell.final_grad_norm == pytest.approx(single.final_grad_norm, rel=1e-9)
            np.testing.assert_allclose(cell.series.grad_norm, single.series.grad_norm, rtol=1e-9)
            assert cell.queries == single.queries

    def test_momentum_matches_run(self):
        prob = problem(d=10, family="sparse_pareto", x0=3.0 * np.eye(10)[0])
        cfg = optimizer.MomentumConfig(
            alpha=0.01, mu=1e-3, M=4, T=25, mode="scalar_clip", tau=0.5,
            beta=0.9, M0=32, tau0=2.0,
        )
        cell = optimizer.run_cells(prob, [cfg], master_seed=6)[0]
        single = optimizer.run(prob, cfg, master_seed=6)
        assert cell.final_grad_norm == pytest.approx(single.final_grad_norm, rel=1e-9)
        assert cell.queries == single.queries
        assert cell.method == "scalar_clip_momentum"

    def test_rejects_mixed_shapes(self):
        prob = problem(d=5)
        a = optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=4, T=5, mode="raw")
        b = optimizer.BaseConfig(alpha=0.1, mu=1e-3, M=8, T=5, mode="raw")
        with pytest.raises(ValueError):
            optimizer.run_cells(prob, [a, b], master_seed=0)
