import math

import numpy as np
import pytest

from config import settings
from pricing_game.exceptions import DegenerateInstanceError, ModelDomainError
from pricing_game.lower_game import AllocationState, LowerGameInstance
from pricing_game.oracle import brute_force_lcp, random_upper_instance
from pricing_game.upper_pricing import (
    LowerSolver,
    PricingMethod,
    UpperInstance,
    bisection_iteration_bound,
    bisection_price,
    block_inverse,
    build_lcp,
    eval_uc,
    io_greedy,
    monotonicity_certificate,
    principal_pivot_transform,
    solve_price,
    sppp_solve,
    uc1_region_form,
)

LB_TIGHT = 1e-13


def _single_link(q_tol=1e-12):
    lower = LowerGameInstance(h=[[1e-6]], g=[1e-9], p_d=[0.02], i_c=[2e-10], w=[1.0])
    return UpperInstance(lower=lower, q_tol=q_tol)


def _beta_instance(beta, q_tol):
    n = len(beta)
    h = np.full((n, n), 1e-9) + np.eye(n) * 1e-6
    lower = LowerGameInstance(h=h, g=beta, p_d=np.ones(n), i_c=np.full(n, 1e-10), w=np.ones(n))
    return UpperInstance(lower=lower, q_tol=q_tol)


def _outlier_instance():
    # 第二条链路到基站增益极小, mu_max 被它抬到交点的 6e7 倍
    h = np.array([[1e-6, 1e-30], [1e-30, 1e-6]])
    lower = LowerGameInstance(h=h, g=[1e-9, 1e-15], p_d=[0.02, 0.02], i_c=[2e-10, 2e-10], w=[1.0, 1.0])
    return UpperInstance(lower=lower, q_tol=1e-12)


def _outlier_crossing():
    # 链路 1 饱和 (beta_1 = 2e-17), 链路 0 活跃: U_c1 = 1 - mu (2e-13 - beta_1)
    return 1.0 / (1e-12 - 0.02 * 1e-15 + 2e-10 * 1e-9 / 1e-6)


def _same_lcp_solution(a, b, n):
    """x 分量按绝对误差, t 分量按自身量级比较"""
    t_scale = max(float(np.max(np.abs(a[n:]))), float(np.max(np.abs(b[n:]))), 1e-300)
    return np.allclose(a[:n], b[:n], rtol=0.0, atol=1e-8) and np.allclose(a[n:], b[n:], rtol=0.0, atol=1e-8 * t_scale)


def _grid_best(inst, points):
    best = 0.0
    for mu in np.geomspace(settings.MU_MIN_RATIO * inst.mu_max, inst.mu_max, points):
        best = max(best, eval_uc(mu, inst).u_c)
    return best


class TestEvalUc:
    def test_zero_price(self, three_link_instance):
        point = eval_uc(0.0, three_link_instance)
        assert point.u_c1 == 0.0 and point.u_c2 == 0.0
        assert np.all(point.state.x == 1.0)

    def test_huge_price(self, three_link_instance):
        mu = 1e6 * three_link_instance.mu_max
        point = eval_uc(mu, three_link_instance)
        assert point.u_c1 == 0.0
        assert point.u_c2 == pytest.approx(mu * three_link_instance.q_tol)

    def test_negative_price(self, three_link_instance):
        with pytest.raises(ModelDomainError):
            eval_uc(-1.0, three_link_instance)

    def test_piecewise_affine_in_price(self, three_link_instance):
        inst = three_link_instance
        mus = np.linspace(0.0, inst.mu_max / 10, 400)
        values = np.array([eval_uc(mu, inst, eps=LB_TIGHT, max_iter=10000).u_c1 for mu in mus])
        second = np.abs(np.diff(values, 2))
        scale = max(1.0, float(np.max(np.abs(values))))
        kinks = int(np.sum(second > 1e-6 * scale))
        assert kinks <= 2 * 3 ** inst.n_d


class TestLcp:
    def test_single_link_construction(self):
        inst = _single_link()
        lcp = build_lcp(inst)
        direct = 0.02 * 1e-6
        assert np.allclose(lcp.a_mat, [[direct, 1.0], [-1.0, 0.0]])
        assert np.allclose(lcp.q_vec, [2e-10, 1.0])
        assert np.allclose(lcp.d_vec, [-1e-6 / 1e-9, 0.0])

    def test_single_link_below_breakpoint_is_silent(self):
        lcp = build_lcp(_single_link())
        breakpoint_nu = 2e-10 * 1e-9 / 1e-6
        solutions = brute_force_lcp(lcp, 0.5 * breakpoint_nu)
        assert len(solutions) == 1
        assert solutions[0].y[0] == pytest.approx(0.0)

    def test_single_link_cheap_price_saturates(self):
        lcp = build_lcp(_single_link())
        solutions = brute_force_lcp(lcp, 1e6)
        assert len(solutions) == 1
        assert solutions[0].y[0] == pytest.approx(1.0)
        assert solutions[0].y[1] > 0

    def test_singular_principal_block(self):
        a = np.zeros((2, 2))
        with pytest.raises(DegenerateInstanceError):
            principal_pivot_transform(a, np.ones(2), -np.ones(2), np.array([True, False]))

    def test_mixed_scale_block_is_not_singular(self):
        a = np.array([[1.0, 1e13], [-1.0, 0.0]])
        assert np.allclose(block_inverse(a) @ a, np.eye(2), atol=1e-9)
        m_bar, _, _ = principal_pivot_transform(a, np.ones(2), -np.ones(2), np.array([True, True]))
        assert np.allclose(m_bar, [[0.0, -1.0], [1e-13, 1e-13]], rtol=1e-9, atol=1e-20)

    def test_dependent_rows_are_singular_at_any_scale(self):
        with pytest.raises(DegenerateInstanceError):
            block_inverse(np.array([[1e-12, 2e-12], [1.0, 2.0]]))


class TestSppp:
    def test_first_breakpoint_single_link(self):
        inst = _single_link()
        outcome = sppp_solve(build_lcp(inst), inst)
        assert outcome.steps[0].nu == pytest.approx(2e-10 * 1e-9 / 1e-6)
        assert outcome.steps[0].pivot == "single:0"

    def test_single_link_matches_closed_form_crossing(self):
        inst = _single_link()
        # 活跃区间 U_c1 = w - mu I_C g / h, 与 mu Q 相交
        crossing = 1.0 / (inst.q_tol + 2e-10 * 1e-9 / 1e-6)
        outcome = sppp_solve(build_lcp(inst), inst)
        assert outcome.mu_star == pytest.approx(crossing, rel=1e-9)

    def test_weak_direct_gain_reaches_saturation(self):
        # P h_ii = 2e-13, 饱和基的主子块未缩放时跨越十几个数量级
        lower = LowerGameInstance(h=[[1e-11]], g=[1e-9], p_d=[0.02], i_c=[2e-10], w=[1.0])
        inst = UpperInstance(lower=lower, q_tol=1e-11)
        outcome = sppp_solve(build_lcp(inst), inst)
        assert any(step.pivot == "single:1" for step in outcome.steps)
        assert all(step.residual <= 1e-8 for step in outcome.steps)
        assert outcome.mu_star == pytest.approx(1.0 / (1e-11 + 2e-10 * 1e-9 / 1e-11), rel=1e-9)
        assert outcome.interference == pytest.approx(1e-11, rel=1e-6)

    def test_trivial_case(self):
        inst = _beta_instance([1.0, 2.0], q_tol=5.0)
        outcome = sppp_solve(build_lcp(inst), inst)
        assert outcome.mu_star == 0.0
        assert np.all(outcome.x_star.x == 1.0)

    def test_attains_grid_maximum(self, three_link_instance):
        outcome = solve_price(three_link_instance, PricingMethod.SPPP)
        assert outcome.u_c >= 0.99 * _grid_best(three_link_instance, 1000)

    @pytest.mark.slow
    def test_attains_dense_grid_maximum(self, constrained):
        for seed in range(5):
            inst = constrained(random_upper_instance(3, seed=seed))
            outcome = solve_price(inst, PricingMethod.SPPP)
            assert outcome.u_c >= 0.99 * _grid_best(inst, 10 ** 4)

    @pytest.mark.parametrize("seed", range(5))
    def test_path_is_complementary_and_enumerated(self, constrained, seed):
        inst = constrained(random_upper_instance(3, seed=seed))
        lcp = build_lcp(inst)
        outcome = sppp_solve(lcp, inst)
        assert outcome.steps
        for step in outcome.steps:
            assert step.residual <= 1e-8
            assert any(_same_lcp_solution(s.y, step.y, inst.n_d) for s in brute_force_lcp(lcp, step.nu))

    @pytest.mark.slow
    def test_path_on_fifty_instances(self, constrained):
        for seed in range(50):
            inst = constrained(random_upper_instance(3, seed=seed))
            lcp = build_lcp(inst)
            outcome = sppp_solve(lcp, inst)
            for step in outcome.steps:
                assert step.residual <= 1e-8
                assert any(_same_lcp_solution(s.y, step.y, inst.n_d) for s in brute_force_lcp(lcp, step.nu))
            bisection = solve_price(inst, PricingMethod.BISECTION)
            assert outcome.u_c >= bisection.u_c - 1e-6 * max(1.0, bisection.u_c)
            assert outcome.u_c >= 0.99 * _grid_best(inst, 2000)

    def test_dominates_bisection(self, constrained):
        for seed in range(3):
            inst = constrained(random_upper_instance(3, seed=seed))
            sppp = solve_price(inst, PricingMethod.SPPP)
            bisection = solve_price(inst, PricingMethod.BISECTION)
            assert sppp.u_c >= bisection.u_c - 1e-6 * max(1.0, bisection.u_c)

    def test_outlier_link_matches_bisection(self):
        inst = _outlier_instance()
        sppp = solve_price(inst, PricingMethod.SPPP)
        bisection = bisection_price(inst)
        assert sppp.mu_star == pytest.approx(_outlier_crossing(), rel=1e-6)
        assert sppp.u_c >= bisection.u_c - 1e-6 * max(1.0, bisection.u_c)


class TestBisection:
    def test_trivial_case(self):
        inst = _beta_instance([1.0, 2.0], q_tol=3.0)
        outcome = bisection_price(inst)
        assert outcome.mu_star == 0.0 and outcome.iterations == 0
        assert np.all(outcome.x_star.x == 1.0)

    def test_iteration_bound(self, three_link_instance):
        inst = three_link_instance
        assert bisection_iteration_bound(inst.mu_max, inst.eps_mu) == math.ceil(math.log2(1e6))
        outcome = bisection_price(inst)
        accuracy = min(inst.eps_mu, settings.EPS_MU_RATIO * outcome.mu_star)
        assert 0 < outcome.iterations <= bisection_iteration_bound(inst.mu_max, accuracy)
        last = outcome.steps[-1]
        assert last.mu_u - last.mu_l <= accuracy

    def test_outlier_link_does_not_stop_early(self):
        inst = _outlier_instance()
        assert inst.eps_mu > 10 * _outlier_crossing()
        outcome = bisection_price(inst)
        assert outcome.mu_star == pytest.approx(_outlier_crossing(), rel=1e-4)
        assert 0.99 * inst.q_tol <= outcome.interference <= inst.q_tol * (1 + 1e-3)

    def test_bracket_invariant(self, three_link_instance):
        outcome = bisection_price(three_link_instance)
        assert outcome.u_c1 <= outcome.u_c2
        for step in outcome.steps:
            assert step.mu_l < step.mu_u
            if step.mu_m == step.mu_u:
                assert step.u_c1 <= step.u_c2
            else:
                assert step.u_c1 > step.u_c2

    def test_converges_to_intersection(self, three_link_instance):
        inst = UpperInstance(lower=three_link_instance.lower, q_tol=three_link_instance.q_tol,
                             eps_mu=1e-10 * three_link_instance.mu_max)
        outcome = bisection_price(inst, eps=LB_TIGHT, max_iter=10000)
        assert abs(outcome.u_c1 - outcome.u_c2) / outcome.u_c2 < 1e-3
        assert outcome.interference <= inst.q_tol * (1 + 1e-3)

    def test_br_variant(self, three_link_instance):
        outcome = bisection_price(three_link_instance, LowerSolver.BR)
        assert outcome.method is PricingMethod.BISECTION_BR
        assert outcome.u_c1 <= outcome.u_c2


class TestGreedy:
    def test_prefix_example(self):
        outcome = io_greedy(_beta_instance([1.0, 2.0, 3.0, 4.0], q_tol=6.0))
        assert outcome.x_star.x.tolist() == [1.0, 1.0, 1.0, 0.0]
        assert outcome.interference == pytest.approx(6.0)

    def test_unsorted_links(self):
        outcome = io_greedy(_beta_instance([3.0, 1.0, 4.0, 2.0], q_tol=3.0))
        assert outcome.x_star.x.tolist() == [0.0, 1.0, 0.0, 1.0]

    def test_generous_and_tight_budgets(self):
        assert np.all(io_greedy(_beta_instance([1.0, 2.0], q_tol=10.0)).x_star.x == 1.0)
        assert np.all(io_greedy(_beta_instance([1.0, 2.0], q_tol=0.5)).x_star.x == 0.0)


class TestMonotonicity:
    def test_single_active_link(self):
        inst = _single_link()
        assert monotonicity_certificate(inst, AllocationState.from_vector([0.5]))

    def test_negligible_cross_gains(self):
        inst = random_upper_instance(3, seed=1, cross_scale=1e-6)
        assert monotonicity_certificate(inst, AllocationState.from_vector([0.5, 0.5, 0.5]))

    def test_certified_instance_is_non_increasing(self):
        inst = random_upper_instance(3, seed=2, cross_scale=1e-3)
        prev = None
        for mu in np.linspace(inst.mu_max / 1000, inst.mu_max, 300):
            point = eval_uc(mu, inst, eps=LB_TIGHT, max_iter=10000)
            if point.state.saturated.size or not monotonicity_certificate(inst, point.state):
                prev = None
                continue
            if prev is not None:
                assert point.u_c1 <= prev + 1e-9 * max(1.0, prev)
            prev = point.u_c1


class TestRegionForm:
    def test_single_active_link(self):
        inst = _single_link()
        slope, intercept = uc1_region_form(AllocationState.from_vector([0.5]), inst)
        assert slope == pytest.approx(-2e-10 * 1e-9 / 1e-6)
        assert intercept == pytest.approx(1.0)

    def test_saturated_only(self):
        inst = _beta_instance([1.0, 2.0, 3.0], q_tol=1.0)
        slope, intercept = uc1_region_form(AllocationState.from_vector([1.0, 0.0, 1.0]), inst)
        assert slope == pytest.approx(4.0)
        assert intercept == 0.0

    def test_reproduces_eval_uc(self, three_link_instance):
        inst = three_link_instance
        checked = 0
        for mu in np.geomspace(inst.mu_max / 1e4, inst.mu_max / 10, 40):
            points = [eval_uc(m, inst, eps=LB_TIGHT, max_iter=10000) for m in (0.999 * mu, mu, 1.001 * mu)]
            labels = {p.state.classification for p in points}
            if len(labels) != 1 or points[1].state.active.size == 0:
                continue
            slope, intercept = uc1_region_form(points[1].state, inst)
            for p in points:
                assert p.u_c1 == pytest.approx(intercept + slope * p.mu, rel=1e-8)
            checked += 1
        assert checked > 0


class TestDispatch:
    @pytest.mark.parametrize("method", list(PricingMethod))
    def test_every_method_respects_tolerance(self, three_link_instance, method):
        outcome = solve_price(three_link_instance, method)
        assert outcome.method is method
        if method is not PricingMethod.ALL_ACTIVE:
            assert outcome.interference <= three_link_instance.q_tol * (1 + 1e-3)

    def test_outcome_row(self, three_link_instance):
        row = solve_price(three_link_instance, PricingMethod.IO).to_row()
        assert {"method", "mu_star", "x0", "x1", "x2"} <= set(row)
