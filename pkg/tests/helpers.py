"""Shared random-instance generation for the test suite.

Instances are drawn inside stability margins so that the comparison-based
properties under test are actually in force: bounded market prices of
risk, jump-monotonicity ratio well above -1 out to the price scale,
moderate C * dt, and a directly verified monotone one-step map at the
solved values (rejection sampling otherwise).
"""

from dataclasses import dataclass

from amhedge.bsde import ConvergenceError, one_step
from amhedge.drivers import (Driver, borrow_lend_driver, check_gamma_assumption,
                             gamma_samples, large_trader_driver, perfect_driver)
from amhedge.market import MarketParams, PiecewiseConstant, build_tree
from amhedge.rbsde import Obstacle, solve_rbsde_lower, solve_rbsde_upper

DRIVER_KINDS = ("perfect", "borrow_lend", "large_trader")

WEIGHT_MARGIN = 1e-3


@dataclass
class Instance:
    kind: str
    params: MarketParams
    tree: object
    driver: Driver
    obstacle: Obstacle


def random_params(rng, lam=None, T=None) -> MarketParams:
    while True:
        r = rng.uniform(0.0, 0.08)
        mu1 = rng.uniform(-0.05, 0.12)
        sigma1 = rng.uniform(0.15, 0.35)
        mu2 = rng.uniform(-0.15, 0.08)
        sigma2 = rng.uniform(0.10, 0.35)
        lam_v = float(rng.uniform(0.05, 0.5)) if lam is None else float(lam)
        T_v = float(rng.uniform(0.5, 1.25)) if T is None else float(T)
        th1 = (mu1 - r) / sigma1
        if abs(th1) > 0.9:
            continue
        if lam_v > 0.0:
            th2 = (sigma2 * th1 - mu2 + r) / lam_v
            if not -2.0 < th2 < 0.8:
                continue
        return MarketParams(r=r, mu1=mu1, mu2=mu2, sigma1=sigma1, sigma2=sigma2,
                            lam=lam_v, s1_0=float(rng.uniform(80, 120)),
                            s2_0=float(rng.uniform(60, 110)), T=T_v)


def random_payoff(rng):
    """Mixed put on the first asset plus a slice of the second."""
    a = rng.uniform(0.5, 1.5)
    k1 = rng.uniform(85, 115)
    b = rng.uniform(0.0, 0.3)
    c = rng.uniform(0.0, 3.0)

    def payoff(t, s1, s2, defaulted):
        return a * max(k1 - s1, 0.0) + b * s2 + (c if defaulted else 0.0)

    return payoff


def call_payoff(rng):
    k1 = rng.uniform(90, 110)

    def payoff(t, s1, s2, defaulted):
        return max(s1 - k1, 0.0)

    return payoff


def shifted_rate(params: MarketParams, spread: float) -> PiecewiseConstant:
    return PiecewiseConstant([v + spread for v in params.r.values],
                             list(params.r.times))


def make_driver(kind: str, params: MarketParams, rng=None, spread: float = 0.02) -> Driver:
    if kind == "perfect":
        return perfect_driver(params)
    if kind == "borrow_lend":
        return borrow_lend_driver(params, shifted_rate(params, spread))
    if kind == "large_trader":
        alpha = float(rng.uniform(0.0002, 0.001)) if rng is not None else 0.0005
        gamma_bar = float(rng.uniform(-0.3, 0.5)) if rng is not None else 0.3
        return large_trader_driver(params, alpha, gamma_bar)
    raise ValueError(kind)


def min_one_step_weight(tree, driver, values) -> float:
    """Smallest finite-difference sensitivity of the backward step to a
    child-value bump, over all nodes and branches; negative means the
    one-step map is not monotone at these values."""
    worst = float("inf")
    for level in tree.levels[:-1]:
        for node in level:
            base = {b.child: values[b.child] for b in tree.branches[node]}
            y0, _, _ = one_step(tree, driver, node, base)
            for b in tree.branches[node]:
                h = 1e-5 * (1.0 + abs(base[b.child]))
                bumped = dict(base)
                bumped[b.child] += h
                y1, _, _ = one_step(tree, driver, node, bumped)
                worst = min(worst, (y1 - y0) / h)
    return worst


def _monotone_at_solution(tree, driver, obstacle) -> bool:
    try:
        low = solve_rbsde_lower(tree, driver, obstacle)
        neg = Obstacle(values={n: -v for n, v in obstacle.values.items()})
        up = solve_rbsde_upper(tree, driver, neg)
    except ConvergenceError:
        return False
    return (min_one_step_weight(tree, driver, low.y) > WEIGHT_MARGIN
            and min_one_step_weight(tree, driver, up.y) > WEIGHT_MARGIN)


def make_instance(rng, kind: str, n_steps: int, lam=None, T=None,
                  payoff_factory=random_payoff) -> Instance:
    while True:
        params = random_params(rng, lam=lam, T=T)
        driver = make_driver(kind, params, rng)
        tree = build_tree(params, n_steps)
        times = [tree.time(i) for i in range(n_steps)]
        scale = 1.0 + max(abs(params.s1_0), abs(params.s2_0))
        points = (-scale, -1.0, 0.0, 1.0, scale)
        gamma = check_gamma_assumption(
            driver, gamma_samples(params, times=times, ys=points, zs=points,
                                  ks=points))
        if not gamma.passed:
            continue
        if gamma.n_samples and gamma.min_ratio <= -0.9:
            continue
        if kind != "large_trader" and driver.lipschitz_C * tree.dt >= 0.5:
            continue
        obstacle = Obstacle.from_payoff(tree, payoff_factory(rng))
        if not _monotone_at_solution(tree, driver, obstacle):
            continue
        return Instance(kind=kind, params=params, tree=tree, driver=driver,
                        obstacle=obstacle)
