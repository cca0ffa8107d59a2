"""Nonlinear generators for the wealth dynamics, plus admissibility checks.

A driver is a map g(t, y, z, k, state) giving the drift of the backward
wealth equation in terms of the current value y, the Brownian exposure z
and the jump exposure k. Every shipped driver ignores k at nodes where the
effective intensity is zero (in particular after default), which is what
makes it admissible there.

The two checks in this module are sampling based: the Lipschitz and the
jump-monotonicity conditions are quantified over a continuum, so they are
verified on caller-supplied grids with a fixed 1e-10 tolerance on the
sampled ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .market import (MarketParams, NodeState, as_piecewise,
                     merged_breakpoints)

RATIO_TOL = 1e-10


@dataclass(frozen=True)
class Driver:
    """A generator g with its declared Lipschitz constant.

    ``eval`` has signature (t, y, z, k, state) -> float where ``state`` is a
    ``NodeState``. ``lipschitz_C`` is the constant C in the bound
    |dg| <= C * (|dy| + |dz| + sqrt(lam) * |dk|), declared by the factory
    that built the driver.
    """

    name: str
    eval: Callable
    lipschitz_C: float


def _effective_k(k: float, state: NodeState) -> float:
    # Jump exposure is meaningless where no default can occur.
    return k if state.lam > 0.0 else 0.0


def perfect_driver(params: MarketParams) -> Driver:
    """Linear generator of a frictionless market.

    g(t, y, z, k) = -r y - theta1 z - theta2 k lam with
    theta1 = (mu1 - r) / sigma1 and theta2 = (sigma2 theta1 - mu2 + r) / lam.
    The product theta2 * lam is formed directly as sigma2 theta1 - mu2 + r,
    so no division by the intensity is ever performed; the k term is dropped
    wherever the node intensity is zero.
    """
    r = params.r
    mu1 = params.mu1
    mu2 = params.mu2
    sigma1 = params.sigma1
    sigma2 = params.sigma2
    lam = params.lam

    def g(t, y, z, k, state):
        r_t = r.at(t)
        th1 = (mu1.at(t) - r_t) / sigma1.at(t)
        val = -r_t * y - th1 * z
        if state.lam > 0.0:
            ck = sigma2.at(t) * th1 - mu2.at(t) + r_t  # equals theta2 * lam
            val -= ck * k
        return val

    c = 0.0
    for t in merged_breakpoints(r, mu1, mu2, sigma1, sigma2, lam):
        r_t = r.at(t)
        th1 = (mu1.at(t) - r_t) / sigma1.at(t)
        piece = abs(r_t) + abs(th1)
        lam_t = lam.at(t)
        if lam_t > 0.0:
            ck = sigma2.at(t) * th1 - mu2.at(t) + r_t
            piece += abs(ck) / math.sqrt(lam_t)  # |theta2| * sqrt(lam)
        c = max(c, piece)
    return Driver(name="perfect", eval=g, lipschitz_C=c)


def borrow_lend_driver(params: MarketParams, borrow_rate) -> Driver:
    """Perfect generator plus a spread charged on borrowed amounts.

    When the total risky investment phi1 + phi2 exceeds the wealth y, the
    excess is financed at the borrowing rate R >= r, adding
    (R - r) * (phi1 + phi2 - y)^+ to the generator. The positions are read
    off (z, k) through phi2 = -k, phi1 = (z + sigma2 k) / sigma1. Convex in
    (y, z, k).
    """
    base = perfect_driver(params)
    R = as_piecewise(borrow_rate)
    r = params.r
    sigma1 = params.sigma1
    sigma2 = params.sigma2

    for t in merged_breakpoints(R, r):
        if R.at(t) < r.at(t):
            raise ValueError(f"borrow rate {R.at(t)} below riskless rate {r.at(t)} at t={t}")

    def g(t, y, z, k, state):
        val = base.eval(t, y, z, k, state)
        k_eff = _effective_k(k, state)
        phi1 = (z + sigma2.at(t) * k_eff) / sigma1.at(t)
        phi2 = -k_eff
        excess = phi1 + phi2 - y
        if excess > 0.0:
            val += (R.at(t) - r.at(t)) * excess
        return val

    extra = 0.0
    for t in merged_breakpoints(R, r, sigma1, sigma2, params.lam):
        spread = R.at(t) - r.at(t)
        s1 = sigma1.at(t)
        piece = spread * (1.0 + 1.0 / s1)
        lam_t = params.lam.at(t)
        if lam_t > 0.0:
            piece += spread * abs(sigma2.at(t) / s1 - 1.0) / math.sqrt(lam_t)
        extra = max(extra, piece)
    return Driver(name="borrow_lend", eval=g, lipschitz_C=base.lipschitz_C + extra)


def large_trader_driver(params: MarketParams, alpha: float, gamma_bar: float,
                        *, wealth_bound: float = 200.0,
                        position_bound: float = 500.0) -> Driver:
    """Generator of a seller whose position moves the short rate and whose
    jump exposure moves the default compensation.

    The financing rate seen by the trader is r + alpha * phi1 and the
    generator carries an extra -gamma_bar * lam * phi2 term; positions come
    from (z, k) through the affine inverse phi2 = -k,
    phi1 = (z + sigma2 k) / sigma1. With alpha = gamma_bar = 0 this reduces
    to the frictionless generator.

    The declared Lipschitz constant is valid on the reference box
    |y| <= wealth_bound, |phi1|, |phi2| <= position_bound; the generator is
    bilinear in (y, phi1) and therefore only locally Lipschitz.
    """
    if not gamma_bar > -1.0:
        raise ValueError(f"gamma_bar must exceed -1, got {gamma_bar}")
    alpha = float(alpha)
    gamma_bar = float(gamma_bar)
    r = params.r
    mu1 = params.mu1
    mu2 = params.mu2
    sigma1 = params.sigma1
    sigma2 = params.sigma2

    def g(t, y, z, k, state):
        k_eff = _effective_k(k, state)
        phi1 = (z + sigma2.at(t) * k_eff) / sigma1.at(t)
        phi2 = -k_eff
        rbar = r.at(t) + alpha * phi1
        return (-rbar * y
                - phi1 * (mu1.at(t) - rbar)
                - phi2 * (mu2.at(t) - rbar)
                - gamma_bar * state.lam * phi2)

    a = abs(alpha)
    by, bp = float(wealth_bound), float(position_bound)
    c = 0.0
    for t in merged_breakpoints(r, mu1, mu2, sigma1, sigma2, params.lam):
        r_t = r.at(t)
        s1 = sigma1.at(t)
        g1 = a * by + abs(mu1.at(t) - r_t) + 2.0 * a * bp + a * bp
        g2 = abs(mu2.at(t) - r_t) + a * bp
        piece = (abs(r_t) + a * bp) + g1 / s1
        lam_t = params.lam.at(t)
        if lam_t > 0.0:
            piece += ((sigma2.at(t) / s1) * g1 + g2 + abs(gamma_bar) * lam_t) / math.sqrt(lam_t)
        c = max(c, piece)
    return Driver(name="large_trader", eval=g, lipschitz_C=c)


# ---------------------------------------------------------------------------
# Sampling-based checks
# ---------------------------------------------------------------------------

@dataclass
class AdmissibilityReport:
    max_ratio: float
    lipschitz_C: float
    passed: bool
    worst: tuple = None


@dataclass
class GammaReport:
    min_ratio: float
    passed: bool
    worst: tuple = None
    n_samples: int = 0


def check_lambda_admissible(driver: Driver, samples: Iterable) -> AdmissibilityReport:
    """Largest sampled ratio |dg| / (|dy| + |dz| + sqrt(lam) |dk|) vs the
    declared constant.

    ``samples`` yields (state, (y1, z1, k1), (y2, z2, k2)) triples; both
    points are evaluated at the same node state.
    """
    max_ratio = 0.0
    worst = None
    for state, p1, p2 in samples:
        y1, z1, k1 = p1
        y2, z2, k2 = p2
        denom = abs(y1 - y2) + abs(z1 - z2) + math.sqrt(state.lam) * abs(k1 - k2)
        if denom == 0.0:
            continue
        diff = abs(driver.eval(state.t, y1, z1, k1, state)
                   - driver.eval(state.t, y2, z2, k2, state))
        ratio = diff / denom
        if ratio > max_ratio:
            max_ratio = ratio
            worst = (state, p1, p2)
    passed = max_ratio <= driver.lipschitz_C + RATIO_TOL
    return AdmissibilityReport(max_ratio=max_ratio, lipschitz_C=driver.lipschitz_C,
                               passed=passed, worst=worst)


def check_gamma_assumption(driver: Driver, samples: Iterable) -> GammaReport:
    """Smallest sampled ratio (g(k1) - g(k2)) / ((k1 - k2) lam).

    ``samples`` yields (state, y, z, k1, k2) with k1 != k2 and a positive
    node intensity. The check passes when the smallest ratio stays above -1;
    an empty sample set passes vacuously (no jump risk to constrain).
    """
    min_ratio = math.inf
    worst = None
    n = 0
    for state, y, z, k1, k2 in samples:
        if state.lam <= 0.0 or k1 == k2:
            continue
        n += 1
        g1 = driver.eval(state.t, y, z, k1, state)
        g2 = driver.eval(state.t, y, z, k2, state)
        ratio = (g1 - g2) / ((k1 - k2) * state.lam)
        if ratio < min_ratio:
            min_ratio = ratio
            worst = (state, y, z, k1, k2)
    passed = (n == 0) or (min_ratio > -1.0 + RATIO_TOL)
    return GammaReport(min_ratio=min_ratio, passed=passed, worst=worst, n_samples=n)


def sample_states(params: MarketParams, times: Sequence = None,
                  include_defaulted: bool = True) -> list:
    """Representative node states across time, alive and (optionally) defaulted."""
    if times is None:
        k = 8
        times = [params.T * i / k for i in range(k)]
    states = []
    for t in times:
        states.append(NodeState(t, 1.0, params.s1_0, params.s2_0,
                                params.lam.at(t), False))
        if include_defaulted:
            states.append(NodeState(t, 1.0, params.s1_0, 0.0, 0.0, True))
    return states


def admissibility_samples(params: MarketParams, times: Sequence = None,
                          ys=(-1.0, 0.0, 1.0), zs=(-1.0, 0.0, 1.0),
                          ks=(-1.0, 0.0, 1.0)) -> list:
    """All distinct pairs of grid points, per sampled state."""
    states = sample_states(params, times)
    points = [(y, z, k) for y in ys for z in zs for k in ks]
    out = []
    for state in states:
        for i in range(len(points)):
            for j in range(i + 1, len(points)):
                out.append((state, points[i], points[j]))
    return out


def gamma_samples(params: MarketParams, times: Sequence = None,
                  ys=(-1.0, 0.0, 1.0), zs=(-1.0, 0.0, 1.0),
                  ks=(-1.0, 0.0, 1.0)) -> list:
    """Jump-pair samples (state, y, z, k1, k2) at states with positive intensity."""
    states = [s for s in sample_states(params, times, include_defaulted=False)
              if s.lam > 0.0]
    out = []
    for state in states:
        for y in ys:
            for z in zs:
                for i in range(len(ks)):
                    for j in range(i + 1, len(ks)):
                        out.append((state, y, z, ks[i], ks[j]))
    return out
