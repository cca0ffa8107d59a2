import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amhedge.bsde import g_evaluation
from amhedge.drivers import Driver, perfect_driver
from amhedge.market import MarketParams, build_tree
from amhedge.oracle import brute_force_seller_value, enumerate_stopping_rules
from amhedge.pricing import (buyer_price, epsilon_gap_bound, epsilon_rational,
                             is_rational, phi_inverse, phi_map, price_american,
                             rational_exercise_times, seller_price)
from amhedge.rbsde import Obstacle
from helpers import make_instance

ZERO = Driver(name="zero", eval=lambda t, y, z, k, s: 0.0, lipschitz_C=0.0)


def flat_params(**overrides):
    base = dict(r=0.05, mu1=0.05, mu2=0.0, sigma1=0.2, sigma2=0.3, lam=0.0,
                s1_0=100.0, s2_0=90.0, T=1.0)
    base.update(overrides)
    return MarketParams(**base)


class TestPhiMap:
    def test_zero_maps_to_zero(self):
        assert phi_map(0.0, 0.0, 0.2, 0.3) == (0.0, 0.0)

    def test_hand_value(self):
        phi1, phi2 = phi_map(0.5, -0.2, 0.2, 0.3)
        assert phi2 == pytest.approx(0.2, abs=1e-15)
        assert phi1 == pytest.approx(2.2, rel=1e-14)

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(z=st.floats(-1e4, 1e4), k=st.floats(-1e4, 1e4))
    def test_round_trip(self, z, k):
        phi1, phi2 = phi_map(z, k, 0.2, 0.3)
        z2, k2 = phi_inverse(phi1, phi2, 0.2, 0.3)
        assert k2 == k
        assert z2 == pytest.approx(z, rel=1e-12, abs=1e-12)

    def test_rejects_zero_sigma1(self):
        with pytest.raises(ValueError):
            phi_map(1.0, 1.0, 0.0, 0.3)
        with pytest.raises(ValueError):
            phi_inverse(1.0, 1.0, 0.0, 0.3)


class TestSellerPrice:
    def test_zero_payoff_zero_price_and_strategy(self):
        tree = build_tree(flat_params(lam=0.2), 3)
        obs = Obstacle(values={node: 0.0 for node in tree.nodes})
        result = seller_price(tree, ZERO, obs)
        assert result.u0 == 0.0
        assert all(v == 0.0 for v in result.strategy.phi1.values())
        assert all(v == 0.0 for v in result.strategy.phi2.values())

    def test_price_dominates_immediate_exercise(self):
        rng = np.random.default_rng(201)
        for kind in ("perfect", "borrow_lend", "large_trader"):
            inst = make_instance(rng, kind, 3)
            result = seller_price(inst.tree, inst.driver, inst.obstacle)
            assert result.u0 >= inst.obstacle.values[inst.tree.root] - 1e-12

    def test_matches_rule_enumeration(self):
        rng = np.random.default_rng(202)
        inst = make_instance(rng, "borrow_lend", 3)
        result = seller_price(inst.tree, inst.driver, inst.obstacle)
        brute = brute_force_seller_value(inst.tree, inst.driver, inst.obstacle)
        assert result.u0 == pytest.approx(brute, abs=1e-12)

    def test_gamma_precondition_enforced(self):
        params = flat_params(r=0.0, mu1=0.1, sigma1=0.2, mu2=-0.1, sigma2=0.2,
                             lam=0.1)
        tree = build_tree(params, 3)
        obs = Obstacle(values={node: 1.0 for node in tree.nodes})
        with pytest.raises(ValueError, match="monotonicity"):
            seller_price(tree, perfect_driver(params), obs)
        assert seller_price(tree, perfect_driver(params), obs,
                            gamma_check=False).u0 == 1.0

    def test_gamma_precondition_samples_out_to_price_scale(self):
        # the impact driver's jump sensitivity is benign near the origin but
        # breaches the -1 floor at wealth levels the solver visits
        from amhedge.drivers import check_gamma_assumption, gamma_samples, \
            large_trader_driver
        params = flat_params(lam=0.1, sigma1=0.2, sigma2=0.27)
        driver = large_trader_driver(params, 0.002, 0.0)
        unit = check_gamma_assumption(driver, gamma_samples(params))
        assert unit.passed
        tree = build_tree(params, 3)
        obs = Obstacle(values={node: 1.0 for node in tree.nodes})
        with pytest.raises(ValueError, match="monotonicity"):
            seller_price(tree, driver, obs)

    def test_defaulted_positions_in_second_asset_vanish(self):
        rng = np.random.default_rng(203)
        inst = make_instance(rng, "perfect", 4)
        result = seller_price(inst.tree, inst.driver, inst.obstacle)
        for node, phi2 in result.strategy.phi2.items():
            if inst.tree.nodes[node].defaulted:
                assert phi2 == 0.0


class TestBuyerPrice:
    def test_linear_driver_buyer_equals_seller(self):
        rng = np.random.default_rng(211)
        inst = make_instance(rng, "perfect", 4)
        u0 = seller_price(inst.tree, inst.driver, inst.obstacle).u0
        v0 = buyer_price(inst.tree, inst.driver, inst.obstacle).v0
        assert abs(u0 - v0) <= 1e-10

    def test_constant_payoff_stops_at_root(self):
        tree = build_tree(flat_params(lam=0.2), 3)
        obs = Obstacle(values={node: 7.0 for node in tree.nodes})
        result = buyer_price(tree, ZERO, obs)
        assert result.v0 == 7.0
        assert result.exercise.stop[tree.root]

    def test_matches_rule_enumeration(self):
        rng = np.random.default_rng(212)
        inst = make_instance(rng, "borrow_lend", 3)
        v0 = buyer_price(inst.tree, inst.driver, inst.obstacle).v0
        neg = Obstacle(values={n: -v for n, v in inst.obstacle.values.items()})
        worst = min(g_evaluation(inst.tree, inst.driver, rule, neg)
                    for rule in enumerate_stopping_rules(inst.tree))
        assert v0 == pytest.approx(-worst, abs=1e-12)

    def test_interval_ordering_for_convex_driver(self):
        rng = np.random.default_rng(213)
        inst = make_instance(rng, "borrow_lend", 4)
        u0 = seller_price(inst.tree, inst.driver, inst.obstacle).u0
        v0 = buyer_price(inst.tree, inst.driver, inst.obstacle).v0
        assert v0 <= u0 + 1e-12


def binding_put_instance(lam=0.0, n_steps=6):
    params = flat_params(r=0.06, mu1=0.06, lam=lam)
    tree = build_tree(params, n_steps)
    obs = Obstacle.from_payoff(tree, lambda t, s1, s2, d: max(110.0 - s1, 0.0))
    return params, tree, obs


class TestRationalExercise:
    def test_binding_at_root_stops_at_root(self):
        tree = build_tree(flat_params(), 3)
        obs = Obstacle.from_payoff(tree, lambda t, s1, s2, d: 50.0 - 40.0 * t)
        sol = seller_price(tree, ZERO, obs).solution
        nu_star, nu_bar = rational_exercise_times(sol, obs)
        assert nu_star.stop[tree.root]
        assert nu_bar.stop[tree.root] == (sol.delta_a[tree.root] > 0.0)

    def test_non_binding_stops_only_at_terminal(self):
        rng = np.random.default_rng(221)
        inst = make_instance(rng, "perfect", 3)
        low = Obstacle(values={n: (inst.obstacle.values[n]
                                   if inst.tree.is_terminal(n) else -1e9)
                               for n in inst.tree.nodes})
        sol = seller_price(inst.tree, inst.driver, low).solution
        nu_star, nu_bar = rational_exercise_times(sol, low)
        for node in inst.tree.nodes:
            expect = inst.tree.is_terminal(node)
            assert nu_star.stop[node] == expect
            assert nu_bar.stop[node] == expect

    def test_late_rule_stops_no_earlier_than_early_rule(self):
        params, tree, obs = binding_put_instance()
        sol = seller_price(tree, perfect_driver(params), obs).solution
        nu_star, nu_bar = rational_exercise_times(sol, obs)
        for node in tree.nodes:
            if nu_bar.stop[node] and not tree.is_terminal(node):
                assert nu_star.stop[node]

    def test_both_rules_rational_and_optimal(self):
        params, tree, obs = binding_put_instance()
        g = perfect_driver(params)
        result = seller_price(tree, g, obs)
        assert any(da > 0.0 for da in result.solution.delta_a.values())
        nu_star, nu_bar = rational_exercise_times(result.solution, obs)
        assert is_rational(result.solution, obs, nu_star).ok
        assert is_rational(result.solution, obs, nu_bar).ok
        for rule in (nu_star, nu_bar):
            value = g_evaluation(tree, g, rule, obs)
            assert value == pytest.approx(result.u0, abs=1e-10)

    def test_terminal_rule_rejected_with_witness(self):
        params, tree, obs = binding_put_instance()
        result = seller_price(tree, perfect_driver(params), obs)
        rule = {node: tree.is_terminal(node) for node in tree.nodes}
        report = is_rational(result.solution, obs, rule)
        assert not report.ok
        assert report.witness is not None
        assert "charge" in report.reason

    def test_stopping_off_the_payoff_rejected(self):
        params, tree, obs = binding_put_instance()
        result = seller_price(tree, perfect_driver(params), obs)
        assert result.solution.y[tree.root] > obs.values[tree.root]
        rule = {node: True for node in tree.nodes}
        report = is_rational(result.solution, obs, rule)
        assert not report.ok
        assert report.witness == tree.root
        assert "payoff" in report.reason


class TestEpsilonRational:
    def test_huge_eps_stops_at_root(self):
        params, tree, obs = binding_put_instance()
        g = perfect_driver(params)
        result = seller_price(tree, g, obs)
        rule, gap = epsilon_rational(result.solution, obs, 1e6)
        assert rule.stop[tree.root]
        assert gap == pytest.approx(result.u0 - obs.values[tree.root], abs=1e-12)
        assert gap <= epsilon_gap_bound(g, params.T, 1e6)

    def test_small_eps_recovers_early_rule(self):
        params, tree, obs = binding_put_instance()
        g = perfect_driver(params)
        result = seller_price(tree, g, obs)
        nu_star, _ = rational_exercise_times(result.solution, obs)
        rule, gap = epsilon_rational(result.solution, obs, 1e-13)
        assert rule.stop == nu_star.stop
        assert abs(gap) <= 1e-10

    def test_gap_bounded_and_monotone(self):
        rng = np.random.default_rng(231)
        inst = make_instance(rng, "borrow_lend", 4)
        result = seller_price(inst.tree, inst.driver, inst.obstacle)
        # the optimum the gap is measured against agrees with enumeration
        brute = brute_force_seller_value(inst.tree, inst.driver, inst.obstacle)
        assert result.u0 == pytest.approx(brute, abs=1e-12)
        gaps = []
        for eps in (0.1, 0.01, 0.001):
            rule, gap = epsilon_rational(result.solution, inst.obstacle, eps)
            assert gap == pytest.approx(
                brute - g_evaluation(inst.tree, inst.driver, rule, inst.obstacle),
                abs=1e-12)
            assert -1e-12 <= gap <= epsilon_gap_bound(inst.driver, inst.params.T, eps)
            gaps.append(gap)
        assert gaps[2] <= gaps[1] + 1e-10
        assert gaps[1] <= gaps[0] + 1e-10

    def test_rejects_nonpositive_eps(self):
        params, tree, obs = binding_put_instance()
        sol = seller_price(tree, perfect_driver(params), obs).solution
        with pytest.raises(ValueError):
            epsilon_rational(sol, obs, 0.0)


class TestPriceAmerican:
    def test_report_fields_consistent(self):
        rng = np.random.default_rng(241)
        inst = make_instance(rng, "borrow_lend", 3)
        report = price_american(inst.tree, inst.driver, inst.obstacle)
        assert report.u0 == seller_price(inst.tree, inst.driver, inst.obstacle).u0
        assert report.v0 == buyer_price(inst.tree, inst.driver, inst.obstacle).v0
        assert report.interval_ok == (report.v0 <= report.u0 + 1e-10)
        n_nonterminal = sum(1 for n in inst.tree.nodes
                            if not inst.tree.is_terminal(n))
        assert len(report.seller_strategy.phi1) == n_nonterminal
        assert len(report.buyer_strategy.phi1) == n_nonterminal
        for node in inst.tree.terminal_nodes():
            assert report.nu_star.stop[node]
            assert report.nu_bar.stop[node]
            assert report.buyer_exercise.stop[node]
