import math

import numpy as np
import pytest

from zoclip import planner
from zoclip.errors import InfeasiblePlanError
from zoclip.planner import PlannerInputs


def random_inputs(gen, beta=None):
    return PlannerInputs(
        L=float(gen.uniform(0.2, 5.0)),
        Delta0=float(gen.uniform(0.5, 50.0)),
        sigma=float(gen.uniform(0.2, 5.0)),
        p=float(gen.uniform(1.25, 2.0)),
        d=int(gen.integers(2, 500)),
        eps=float(gen.uniform(0.02, 0.5)),
        delta=float(gen.uniform(0.01, 0.2)),
        beta=beta,
    )


class TestInputs:
    def test_validation(self):
        with pytest.raises(ValueError):
            PlannerInputs(L=0.0, Delta0=1, sigma=1, p=1.5, d=10, eps=0.1, delta=0.05)
        with pytest.raises(ValueError):
            PlannerInputs(L=1, Delta0=1, sigma=1, p=1.0, d=10, eps=0.1, delta=0.05)
        with pytest.raises(ValueError):
            PlannerInputs(L=1, Delta0=1, sigma=1, p=2.5, d=10, eps=0.1, delta=0.05)
        with pytest.raises(ValueError):
            PlannerInputs(L=1, Delta0=1, sigma=1, p=1.5, d=0, eps=0.1, delta=0.05)
        with pytest.raises(ValueError):
            PlannerInputs(L=1, Delta0=1, sigma=1, p=1.5, d=10, eps=0.1, delta=0.05, mu=-1.0)

    def test_auto_mu(self):
        inp = PlannerInputs(L=2.0, Delta0=1, sigma=1, p=1.5, d=10, eps=0.4, delta=0.05)
        assert inp.mu_value == pytest.approx(0.4 / (4 * 2.0 * 10))
        inp = PlannerInputs(L=2.0, Delta0=1, sigma=1, p=1.5, d=10, eps=0.4, delta=0.05, mu=1e-3)
        assert inp.mu_value == 1e-3


class TestConstants:
    def test_deviation_constant_at_p2(self):
        assert planner.c_p(2.0) == pytest.approx(124.0, rel=1e-12)

    def test_deviation_constant_shape(self):
        assert planner.c_p(1.5) == pytest.approx(120.0 + 2**2.5 / 0.5, rel=1e-12)
        # blows up toward p = 1, shrinks toward p = 2
        assert planner.c_p(1.01) > planner.c_p(1.5) > planner.c_p(2.0)

    def test_momentum_stepsize_reference(self):
        inp = PlannerInputs(
            L=1.0, Delta0=1.0, sigma=1.0, p=1.5, d=10, eps=0.1, delta=0.05,
            mu=1e-4, beta=0.5,
        )
        plan = planner.plan_momentum(inp, m_ceiling=2**200)
        assert plan.alpha == pytest.approx(1.0 / (32.0 * math.sqrt(3.0)), rel=1e-15)

    def test_unit_ratio_threshold(self):
        # at M = lam the threshold is exactly 8 * S_mu
        smu = planner.s_mu(1.0, 2.0, 1.0, 10, 1e-3)
        lam = 3.7
        tau = 8.0 * smu * (lam / lam) ** (1 / 1.5)
        assert tau == pytest.approx(8.0 * smu, rel=1e-15)


class TestBasePlan:
    def test_straight_line_rederivation(self):
        gen = np.random.default_rng(0)
        for _ in range(25):
            inp = random_inputs(gen)
            plan = planner.plan_base(inp, m_ceiling=2**200)
            mu = inp.eps / (4 * inp.L * inp.d)
            bar = inp.Delta0 + inp.L * mu**2 / 2
            smu = (math.sqrt(inp.L * bar) + inp.sigma) / math.sqrt(inp.d) + inp.L * mu
            cp = 120.0 + 2 ** (4 - inp.p) / (inp.p - 1)
            T = max(3, math.ceil(32 * inp.L * bar / inp.eps**2))
            lam = math.log(T / inp.delta)
            assert plan.mu == pytest.approx(mu, rel=1e-12)
            assert plan.bar_Delta0 == pytest.approx(bar, rel=1e-12)
            assert plan.S_mu == pytest.approx(smu, rel=1e-12)
            assert plan.C_p == pytest.approx(cp, rel=1e-12)
            assert plan.alpha == pytest.approx(1 / (4 * inp.L), rel=1e-12)
            assert plan.T == T
            assert plan.lam == pytest.approx(lam, rel=1e-12)
            M = plan.M_required
            r = lam / M
            eta0 = cp * inp.d * smu * r ** ((inp.p - 1) / inp.p) * math.sqrt(1 + math.log(1 / r))
            assert plan.eta0 == pytest.approx(eta0, rel=1e-12)
            assert plan.eta == pytest.approx(eta0 + inp.L * mu, rel=1e-12)
            assert plan.tau == pytest.approx(8 * smu * (M / lam) ** (1 / inp.p), rel=1e-12)
            assert plan.predicted_queries == 2 * M * T

    def test_batch_is_minimal(self):
        gen = np.random.default_rng(1)
        for _ in range(10):
            inp = random_inputs(gen)
            plan = planner.plan_base(inp, m_ceiling=2**200)
            target = inp.eps / 4 - inp.L * plan.mu
            scale = plan.C_p * inp.d * plan.S_mu
            assert planner._eta0(plan.M_required, plan.lam, inp.p, scale) <= target
            m_prev = plan.M_required - 1
            if m_prev >= math.ceil(plan.lam):
                assert planner._eta0(m_prev, plan.lam, inp.p, scale) > target

    def test_deviation_bound_met(self):
        gen = np.random.default_rng(2)
        for _ in range(10):
            inp = random_inputs(gen)
            plan = planner.plan_base(inp, m_ceiling=2**200)
            assert plan.eta <= inp.eps / 4 * (1 + 1e-12)

    def test_eta0_monotone_past_knee(self):
        lam, p, scale = 5.0, 1.5, 100.0
        a = (p - 1) / p
        knee = math.ceil(lam * math.exp(max(0.0, 1 / (2 * a) - 1)))
        vals = [planner._eta0(m, lam, p, scale) for m in range(knee, knee + 2000)]
        assert all(b <= a_ for a_, b in zip(vals, vals[1:]))

    def test_eps_doubling_never_raises_cost(self):
        gen = np.random.default_rng(3)
        for _ in range(10):
            inp = random_inputs(gen)
            loose = PlannerInputs(
                L=inp.L, Delta0=inp.Delta0, sigma=inp.sigma, p=inp.p, d=inp.d,
                eps=2 * inp.eps, delta=inp.delta,
            )
            a, b = planner.plan_base(inp, m_ceiling=2**200), planner.plan_base(loose, m_ceiling=2**200)
            assert b.T <= a.T
            assert b.M_required <= a.M_required
            assert b.predicted_queries <= a.predicted_queries

    def test_trivial_regime_flag(self):
        inp = PlannerInputs(L=1.0, Delta0=1e-6, sigma=1, p=1.5, d=10, eps=0.5, delta=0.05)
        plan = planner.plan_base(inp, m_ceiling=2**200)
        assert plan.trivial_regime_flag == (inp.eps**2 > 32 * inp.L * plan.bar_Delta0)
        assert plan.trivial_regime_flag
        assert plan.T == 3  # horizon floor still applies
        big = PlannerInputs(L=1.0, Delta0=10.0, sigma=1, p=1.5, d=10, eps=0.1, delta=0.05)
        assert not planner.plan_base(big, m_ceiling=2**200).trivial_regime_flag

    def test_infeasible_mu(self):
        inp = PlannerInputs(
            L=1.0, Delta0=1.0, sigma=1, p=1.5, d=10, eps=0.1, delta=0.05, mu=1.0
        )
        with pytest.raises(InfeasiblePlanError):
            planner.plan_base(inp)

    def test_infeasible_ceiling(self):
        inp = PlannerInputs(L=1.0, Delta0=4.5, sigma=1, p=1.1, d=1000, eps=0.01, delta=0.05)
        with pytest.raises(InfeasiblePlanError) as exc:
            planner.plan_base(inp, m_ceiling=1000)
        assert exc.value.limiting_eta > 0

    def test_large_batch_needs_raised_ceiling(self):
        # heavy-tail, high-accuracy regimes exceed the default ceiling but
        # resolve exactly when the ceiling is raised
        inp = PlannerInputs(L=1.0, Delta0=4.5, sigma=1.0, p=1.2, d=1000, eps=0.01, delta=0.01)
        with pytest.raises(InfeasiblePlanError):
            planner.plan_base(inp)
        plan = planner.plan_base(inp, m_ceiling=2**200)
        assert plan.M_required > planner.DEFAULT_M_CEILING


class TestMomentumPlan:
    def test_straight_line_rederivation(self):
        gen = np.random.default_rng(4)
        for _ in range(25):
            inp = random_inputs(gen, beta=float(gen.uniform(0.5, 0.99)))
            plan = planner.plan_momentum(inp, m_ceiling=2**200)
            mu = inp.eps / (4 * inp.L * inp.d)
            bar = inp.Delta0 + inp.L * mu**2 / 2
            smu = (math.sqrt(inp.L * bar) + inp.sigma) / math.sqrt(inp.d) + inp.L * mu
            w = 1 - inp.beta
            T = math.ceil(512 * math.sqrt(3) * inp.L * bar / (w * inp.eps**2)) + 2
            lam = math.log(2 * T / inp.delta)
            lam0 = math.log(2 / inp.delta)
            assert plan.alpha == pytest.approx(w / (16 * math.sqrt(3) * inp.L), rel=1e-12)
            assert plan.T == T
            assert plan.lam == pytest.approx(lam, rel=1e-12)
            assert plan.lam0 == pytest.approx(lam0, rel=1e-12)
            M, M0 = plan.M_required, plan.M0_required
            assert plan.tau == pytest.approx(
                8 * smu * (M / (w * lam)) ** (1 / inp.p), rel=1e-12
            )
            assert plan.tau0 == pytest.approx(
                8 * smu * (M0 / lam0) ** (1 / inp.p), rel=1e-12
            )
            assert plan.predicted_queries == 2 * M0 + 2 * M * (T - 1)
            assert plan.constant_approximate

    def test_beta_below_half_rejected(self):
        inp = PlannerInputs(
            L=1, Delta0=1, sigma=1, p=1.5, d=10, eps=0.1, delta=0.05, beta=0.4
        )
        with pytest.raises(ValueError):
            planner.plan_momentum(inp)

    def test_requires_beta(self):
        inp = PlannerInputs(L=1, Delta0=1, sigma=1, p=1.5, d=10, eps=0.1, delta=0.05)
        with pytest.raises(ValueError):
            planner.plan_momentum(inp)
        with pytest.raises(ValueError):
            planner.plan_base(
                PlannerInputs(L=1, Delta0=1, sigma=1, p=1.5, d=10, eps=0.1,
                              delta=0.05, beta=0.5)
            )

    def test_mu_cap_enforced(self):
        inp = PlannerInputs(
            L=1, Delta0=1, sigma=1, p=1.5, d=10, eps=0.1, delta=0.05,
            mu=0.1, beta=0.5,
        )
        with pytest.raises(ValueError):
            planner.plan_momentum(inp)


class TestSmallBatch:
    def test_solved_weight_reaches_unit_batch(self):
        inp = PlannerInputs(L=1.0, Delta0=4.5, sigma=1.0, p=1.5, d=100, eps=0.1, delta=0.05)
        w = planner.solve_smallbatch_w(inp, m_ceiling=2**200)
        assert 0.0 < w <= 0.5
        assert planner._plan_momentum_w(inp, w, 2**200).M_required == 1
        # just above the solved weight the requirement exceeds one
        assert planner._plan_momentum_w(inp, 1.001 * w, 2**200).M_required > 1

    def test_desk_plan_fields(self):
        inp = PlannerInputs(L=1.0, Delta0=4.5, sigma=1.0, p=1.5, d=100, eps=0.1, delta=0.05)
        plan = planner.plan_momentum_smallbatch(inp)
        assert plan.capped
        assert plan.T == 200_000
        assert 0.5 <= plan.beta < 1.0
        assert plan.alpha == pytest.approx(
            (1 - plan.beta) / (16 * math.sqrt(3) * inp.L), rel=1e-12
        )
        assert plan.M0 <= 4096
        assert plan.tau > 0 and plan.tau0 > 0
        assert plan.theory_T > plan.T


class TestComplexity:
    def test_exponents(self):
        inp2 = PlannerInputs(L=1, Delta0=1, sigma=1, p=2.0, d=10, eps=0.1, delta=0.05)
        c = planner.predicted_complexity(planner.plan_base(inp2, m_ceiling=2**200), inp2)
        assert c["eps_exponent"] == pytest.approx(4.0)
        assert c["d_exponent"] == pytest.approx(1.0)
        inp15 = PlannerInputs(L=1, Delta0=1, sigma=1, p=1.5, d=10, eps=0.1, delta=0.05)
        c = planner.predicted_complexity(planner.plan_base(inp15, m_ceiling=2**200), inp15)
        assert c["eps_exponent"] == pytest.approx(5.0)
        assert c["d_exponent"] == pytest.approx(1.5)
        assert not c["near_singular"]
