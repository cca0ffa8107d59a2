"""Batch front door: read a JSON job, run the pipelines, write reports.

Output is deterministic: report keys are emitted in sorted order and every
float is rendered with 17 significant digits, so identical configurations
produce byte-identical files.

Exit codes: 0 success, 2 configuration or guard error, 3 solver failure,
4 failed verification under --strict.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import hedging, oracle, pricing
from .bsde import ConvergenceError
from .drivers import (Driver, admissibility_samples, borrow_lend_driver,
                      check_gamma_assumption, check_lambda_admissible,
                      gamma_samples, large_trader_driver, perfect_driver)
from .market import MarketParams, build_tree, node_key
from .payoffs import payoff_from_config
from .rbsde import Obstacle, skorokhod_residual, solve_rbsde_lower

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4

_JOBS = ("price", "hedge", "verify")
_CHECKS = ("superhedge", "duality", "apriori", "skorokhod", "martingale",
           "gamma", "admissible")

WEALTH_CSV_HEADER = ("path_id", "step", "node", "V", "xi", "slack")


class ConfigError(ValueError):
    """Configuration problem; the message names the offending field."""


# ---------------------------------------------------------------------------
# Canonical JSON
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    if x == 0.0:
        return "0"
    return format(x, ".17g")


def canonical_json(obj) -> str:
    """Serialize with sorted keys and fixed float formatting."""
    out = []

    def emit(value):
        if isinstance(value, bool):
            out.append("true" if value else "false")
        elif value is None:
            out.append("null")
        elif isinstance(value, int):
            out.append(str(value))
        elif isinstance(value, float):
            out.append(_fmt_float(value))
        elif isinstance(value, str):
            out.append(json.dumps(value))
        elif isinstance(value, dict):
            out.append("{")
            for i, key in enumerate(sorted(value)):
                if i:
                    out.append(", ")
                out.append(json.dumps(str(key)))
                out.append(": ")
                emit(value[key])
            out.append("}")
        elif isinstance(value, (list, tuple)):
            out.append("[")
            for i, item in enumerate(value):
                if i:
                    out.append(", ")
                emit(item)
            out.append("]")
        else:
            raise ValueError(f"cannot serialize {type(value).__name__}")

    emit(obj)
    out.append("\n")
    return "".join(out)


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def build_driver(params: MarketParams, block: dict) -> Driver:
    name = block.get("name")
    dparams = block.get("params", {})
    if not isinstance(dparams, dict):
        raise ConfigError("driver.params: must be an object")
    if name == "perfect":
        if dparams:
            raise ConfigError(f"driver.params: 'perfect' takes none, got {sorted(dparams)}")
        return perfect_driver(params)
    if name == "borrow_lend":
        if "R" not in dparams:
            raise ConfigError("driver.params.R: required for 'borrow_lend'")
        try:
            return borrow_lend_driver(params, dparams["R"])
        except ValueError as exc:
            raise ConfigError(f"driver.params.R: {exc}") from None
    if name == "large_trader":
        missing = [k for k in ("alpha", "gamma_bar") if k not in dparams]
        if missing:
            raise ConfigError(f"driver.params: missing {missing} for 'large_trader'")
        try:
            return large_trader_driver(params, dparams["alpha"], dparams["gamma_bar"])
        except ValueError as exc:
            raise ConfigError(f"driver.params.gamma_bar: {exc}") from None
    raise ConfigError(f"driver.name: unknown driver {name!r} "
                      f"(expected perfect, borrow_lend or large_trader)")


def parse_config(config: dict) -> dict:
    """Validate the job document and build the runtime objects."""
    if not isinstance(config, dict):
        raise ConfigError("config: top level must be an object")
    known = {"market", "grid", "driver", "payoff", "jobs", "verify",
             "output_dir", "strict", "seed"}
    extra = sorted(set(config) - known)
    if extra:
        raise ConfigError(f"config: unknown key(s) {extra}")
    for key in ("market", "grid", "driver", "payoff"):
        if key not in config:
            raise ConfigError(f"{key}: required")

    try:
        params = MarketParams.from_dict(config["market"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"market: {exc}") from None

    grid = config["grid"]
    if not isinstance(grid, dict) or "n_steps" not in grid:
        raise ConfigError("grid.n_steps: required")
    n_steps = grid["n_steps"]
    if int(n_steps) != n_steps or n_steps < 1:
        raise ConfigError(f"grid.n_steps: must be a positive integer, got {n_steps!r}")
    n_steps = int(n_steps)
    dt = params.T / n_steps
    worst = max(params.lam.values)
    if worst * dt >= 1.0:
        raise ConfigError(
            f"grid.n_steps: lambda*dt = {worst * dt:.6g} >= 1 at n_steps = {n_steps}; "
            "increase n_steps")

    driver = build_driver(params, config["driver"]
                          if isinstance(config["driver"], dict)
                          else _bad("driver"))
    try:
        payoff = payoff_from_config(config["payoff"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    jobs = config.get("jobs", ["price"])
    for job in jobs:
        if job not in _JOBS:
            raise ConfigError(f"jobs: unknown job {job!r} (expected {list(_JOBS)})")
    checks = config.get("verify", [])
    for check in checks:
        if check not in _CHECKS:
            raise ConfigError(f"verify: unknown check {check!r} (expected {list(_CHECKS)})")
    seed = config.get("seed", 0)
    if int(seed) != seed:
        raise ConfigError(f"seed: must be an integer, got {seed!r}")

    return {"params": params, "n_steps": n_steps, "driver": driver,
            "payoff": payoff, "jobs": list(jobs), "checks": list(checks),
            "strict": bool(config.get("strict", False)), "seed": int(seed),
            "output_dir": config.get("output_dir")}


def _bad(field: str):
    raise ConfigError(f"{field}: must be an object")


# ---------------------------------------------------------------------------
# Serialization of pricing results
# ---------------------------------------------------------------------------

def _strategy_dict(strategy: pricing.Strategy) -> dict:
    return {node_key(node): {"phi1": strategy.phi1[node], "phi2": strategy.phi2[node]}
            for node in strategy.phi1}


def _rule_dict(rule: pricing.StoppingRule) -> dict:
    return {"stopped": [node_key(node) for node in sorted(rule.stop) if rule.stop[node]]}


def report_to_dict(report: pricing.PricingReport) -> dict:
    return {
        "u0": report.u0,
        "v0": report.v0,
        "interval_ok": report.interval_ok,
        "seller_strategy": _strategy_dict(report.seller_strategy),
        "buyer_strategy": _strategy_dict(report.buyer_strategy),
        "buyer_exercise": _rule_dict(report.buyer_exercise),
        "nu_star": _rule_dict(report.nu_star),
        "nu_bar": _rule_dict(report.nu_bar),
    }


# ---------------------------------------------------------------------------
# Verification checks
# ---------------------------------------------------------------------------

def _check_superhedge(tree, driver, obstacle, seed):
    seller = pricing.seller_price(tree, driver, obstacle, gamma_check=False)
    buyer = pricing.buyer_price(tree, driver, obstacle, gamma_check=False)
    field = hedging.simulate_wealth(tree, seller.u0, seller.strategy, driver, seed=seed)
    seller_rep = hedging.verify_superhedge_seller(field, obstacle)
    bfield = hedging.simulate_wealth(tree, -buyer.v0, buyer.strategy, driver, seed=seed)
    buyer_rep = hedging.verify_superhedge_buyer(bfield, obstacle, buyer.exercise)
    passed = (seller_rep.passed and buyer_rep.passed
              and buyer_rep.max_abs_at_stop <= hedging.SUPERHEDGE_TOL)
    return {"passed": passed,
            "seller_min_slack": seller_rep.min_slack,
            "buyer_min_slack": buyer_rep.min_slack,
            "buyer_max_abs_at_stop": buyer_rep.max_abs_at_stop}, seller_rep, buyer_rep


def _check_duality(tree, driver, obstacle):
    if tree.n_steps > oracle.MAX_ENUM_STEPS:
        raise ConfigError(
            f"grid.n_steps: duality check enumerates stopping rules and is "
            f"limited to {oracle.MAX_ENUM_STEPS} steps, got {tree.n_steps}")
    solution = solve_rbsde_lower(tree, driver, obstacle)
    brute = oracle.brute_force_seller_value(tree, driver, obstacle)
    gap = abs(solution.root_value - brute)
    return {"passed": gap <= 1e-12, "solver_value": solution.root_value,
            "enumerated_value": brute, "gap": gap}


def _check_apriori(tree, driver, obstacle):
    delta = 0.1
    shifted = Driver(name=f"{driver.name}+shift",
                     eval=lambda t, y, z, k, s: driver.eval(t, y, z, k, s) + delta,
                     lipschitz_C=driver.lipschitz_C)
    c = driver.lipschitz_C
    eta = 1.0 / (c * c + 1.0)
    beta = 3.0 / eta + 2.0 * c + 1.0
    report = oracle.apriori_estimate_check(tree, driver, shifted, obstacle, eta, beta)
    return {"passed": report.passed(),
            "eta": eta, "beta": beta,
            "max_pointwise_violation": report.max_pointwise_violation,
            "y_norm_violation": report.y_norm_violation,
            "zk_norm_violation": report.zk_norm_violation}


def _check_skorokhod(tree, driver, obstacle):
    solution = solve_rbsde_lower(tree, driver, obstacle)
    residual = skorokhod_residual(solution, obstacle)
    min_da = min(solution.delta_a.values()) if solution.delta_a else 0.0
    min_gap = min(solution.y[n] - obstacle.values[n] for n in tree.nodes)
    passed = residual == 0.0 and min_da >= 0.0 and min_gap >= 0.0
    return {"passed": passed, "flatness_residual": residual,
            "min_charge": min_da, "min_gap_to_obstacle": min_gap}


def _check_martingale(tree, driver, obstacle, seed):
    if tree.n_steps > hedging.MAX_EXACT_STEPS:
        raise ConfigError(
            f"grid.n_steps: martingale check needs the exact path expansion "
            f"and is limited to {hedging.MAX_EXACT_STEPS} steps, got {tree.n_steps}")
    seller = pricing.seller_price(tree, driver, obstacle, gamma_check=False)
    field = hedging.simulate_wealth(tree, seller.u0, seller.strategy, driver,
                                    seed=seed, mode="exact")
    residual = hedging.wealth_martingale_residual(field, driver)
    return {"passed": residual <= 1e-10, "residual": residual}


def _check_gamma(tree, driver):
    times = [tree.time(i) for i in range(tree.n_steps)]
    report = check_gamma_assumption(driver, gamma_samples(tree.params, times=times))
    min_ratio = None if math.isinf(report.min_ratio) else report.min_ratio
    return {"passed": report.passed, "min_ratio": min_ratio,
            "n_samples": report.n_samples}


def _check_admissible(tree, driver):
    times = [tree.time(i) for i in range(tree.n_steps)]
    report = check_lambda_admissible(driver, admissibility_samples(tree.params, times=times))
    return {"passed": report.passed, "max_ratio": report.max_ratio,
            "declared_C": report.lipschitz_C}


# ---------------------------------------------------------------------------
# Job runner
# ---------------------------------------------------------------------------

def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(WEALTH_CSV_HEADER)
        for pid, step, node, v, xi, slack in rows:
            writer.writerow([pid, step, node, _fmt_float(v), _fmt_float(xi),
                             _fmt_float(slack)])


def run(config: dict, out_dir=None, strict: bool = False,
        dump_tree: bool = False) -> int:
    """Execute one job document; returns the process exit code."""
    try:
        job = parse_config(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(out_dir or job["output_dir"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    strict = strict or job["strict"]

    try:
        tree = build_tree(job["params"], job["n_steps"])
    except ValueError as exc:
        print(f"config error: grid.n_steps: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    obstacle = Obstacle.from_payoff(tree, job["payoff"])
    driver = job["driver"]

    document = {}
    try:
        if "price" in job["jobs"]:
            report = pricing.price_american(tree, driver, obstacle)
            document.update(report_to_dict(report))

        if "hedge" in job["jobs"]:
            seller = pricing.seller_price(tree, driver, obstacle, gamma_check=False)
            field = hedging.simulate_wealth(tree, seller.u0, seller.strategy,
                                            driver, seed=job["seed"])
            seller_rep = hedging.verify_superhedge_seller(field, obstacle)
            _write_csv(out / "wealth.csv", hedging.violation_rows(seller_rep))
            buyer = pricing.buyer_price(tree, driver, obstacle, gamma_check=False)
            bfield = hedging.simulate_wealth(tree, -buyer.v0, buyer.strategy,
                                             driver, seed=job["seed"])
            buyer_rep = hedging.verify_superhedge_buyer(bfield, obstacle,
                                                        buyer.exercise)
            _write_csv(out / "wealth_buyer.csv", hedging.violation_rows(buyer_rep))

        if "verify" in job["jobs"]:
            checks = {}
            for name in job["checks"]:
                if name == "superhedge":
                    checks[name], _, _ = _check_superhedge(tree, driver, obstacle,
                                                           job["seed"])
                elif name == "duality":
                    checks[name] = _check_duality(tree, driver, obstacle)
                elif name == "apriori":
                    checks[name] = _check_apriori(tree, driver, obstacle)
                elif name == "skorokhod":
                    checks[name] = _check_skorokhod(tree, driver, obstacle)
                elif name == "martingale":
                    checks[name] = _check_martingale(tree, driver, obstacle,
                                                     job["seed"])
                elif name == "gamma":
                    checks[name] = _check_gamma(tree, driver)
                elif name == "admissible":
                    checks[name] = _check_admissible(tree, driver)
            all_passed = all(c["passed"] for c in checks.values())
            document["verification"] = {"checks": checks, "all_passed": all_passed}
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if dump_tree:
        (out / "tree.json").write_text(canonical_json(tree.to_dict()))
    (out / "report.json").write_text(canonical_json(document))

    verification = document.get("verification")
    if strict and verification is not None and not verification["all_passed"]:
        failed = sorted(name for name, c in verification["checks"].items()
                        if not c["passed"])
        print(f"verification failed: {failed}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="amhedge",
                                     description="Price and superhedge American "
                                                 "options on a defaultable lattice.")
    sub = parser.add_subparsers(dest="command", required=True)
    price = sub.add_parser("price", help="run a JSON job document")
    price.add_argument("config", help="path to the job document")
    price.add_argument("--strict", action="store_true",
                       help="exit 4 when any requested verification fails")
    price.add_argument("--dump-tree", action="store_true",
                       help="also write tree.json")
    price.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)

    try:
        config = json.loads(Path(args.config).read_text())
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: {args.config} is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config, out_dir=args.out, strict=args.strict,
               dump_tree=args.dump_tree)


if __name__ == "__main__":
    sys.exit(main())
