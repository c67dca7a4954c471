"""Command-line harness: validate scenarios, run dynamics, analyze markets.

Exit codes: 0 success, 2 validation problem, 3 round cap hit, 4 verification
failure (including certified equilibrium nonexistence), 5 documented
impossibility (e.g. no integral extension at or above the epsilon threshold).
The ``TRADENET_FIXTURES`` environment variable points at a default scenario
directory so bare filenames resolve against the bundled examples.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

from . import __version__
from .cooperative import (characteristic_function, core_nonempty, core_vertices,
                          essential_agents, is_core_imputation, leximax_imputation,
                          leximin_imputation, minvar_imputation)
from .dynamics import RunConfig, Scheduler, ce_gap, run_offer_dynamics, run_price_dynamics
from .game import (EPS_TIGHT_NASH, ExtensionFailedError, ExtensionInfeasibleError,
                   NoCompetitiveEquilibriumError, is_nash, outcome_of_offers,
                   extend_ne_to_ce, solve_ce_prices)
from .market import SizeCapError, ValidationError, is_fully_substitutable
from .reduction import map_allocation, tau, to_auction, welfare_preserved
from .scenario import (arrangement_to_json, imputation_to_json, load_profile,
                       load_scenario, outcome_to_json, prices_to_json, profile_to_json)
from .values import NEG_INF, as_fraction, format_rational

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CAP = 3
EXIT_VERIFICATION = 4
EXIT_IMPOSSIBLE = 5

SUBSTITUTES_CHECK_MAX_DEGREE = 4


def _resolve_scenario(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    root = os.environ.get("TRADENET_FIXTURES")
    if root:
        candidate = Path(root) / path
        if candidate.exists():
            return candidate
        candidate = Path(root) / f"{path}.json"
        if candidate.exists():
            return candidate
    raise ValidationError(f"scenario file not found: {path}")


def _emit(data, stream=None):
    json.dump(data, stream or sys.stdout, indent=2, sort_keys=True)
    (stream or sys.stdout).write("\n")


def cmd_validate(args) -> int:
    scenario = load_scenario(_resolve_scenario(args.scenario))
    market = scenario.market
    report = {
        "name": market.name,
        "agents": market.num_agents,
        "trades": market.num_trades,
        "max_degree": market.max_degree,
        "all_valuations_finite": market.all_finite(),
        "market_value": format_rational(market.market_value()),
        "substitutable": {},
    }
    for a in market.agents:
        if args.skip_substitutes or len(market.omega(a)) > SUBSTITUTES_CHECK_MAX_DEGREE:
            report["substitutable"][a] = "skipped"
        else:
            report["substitutable"][a] = is_fully_substitutable(market, a).ok
    _emit(report)
    return EXIT_OK


def _trace_record_json(record) -> dict:
    out = {"round": record.round, "agent": record.agent,
           "demanded": sorted(record.demanded)}
    if record.offers is not None:
        out["offers"] = {a: {w: format_rational(x) for w, x in sorted(per.items())}
                         for a, per in sorted(record.offers.items())}
        out["unsatisfied"] = sorted(record.unsatisfied)
        if record.phi is not None:
            out["phi"] = record.phi
    if record.prices is not None:
        out["prices"] = prices_to_json(record.prices)
        if record.lyapunov is not None:
            out["lyapunov"] = format_rational(record.lyapunov)
    return out


def cmd_run(args) -> int:
    scenario = load_scenario(_resolve_scenario(args.scenario))
    market = scenario.market
    base = scenario.configs.get(args.config) if args.config else None
    if args.config and base is None:
        raise ValidationError(f"unknown config {args.config!r}")
    base = base or RunConfig()
    epsilon = as_fraction(args.epsilon) if args.epsilon else base.epsilon
    rounds = args.rounds if args.rounds else base.rounds
    seed0 = args.seed if args.seed is not None else base.seed
    scheduler = scenario.scheduler(args.schedule)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_seeds = max(1, args.seeds)
    trace_wanted = n_seeds == 1 and args.format == "json"

    rows = []
    exit_code = EXIT_OK
    terminal = None
    for k in range(n_seeds):
        seed = seed0 + k
        config = RunConfig(epsilon=epsilon, rounds=rounds, seed=seed,
                           value_bound=base.value_bound,
                           initial_offers=base.initial_offers,
                           initial_prices=base.initial_prices)
        started = time.perf_counter()
        if args.algorithm == "offers":
            result = run_offer_dynamics(market, config, scheduler,
                                        record_trace=trace_wanted, record_phi=trace_wanted)
            elapsed = time.perf_counter() - started
            terminal_phi = result.phi[-1] if result.phi is not None else ""
            verified = bool(result.tight_nash_verified) if result.converged else False
            rows.append({"seed": seed, "algorithm": "offers", "rounds": result.rounds,
                         "converged": result.converged, "metric": terminal_phi,
                         "wall_time_s": f"{elapsed:.6f}"})
            if not result.converged:
                exit_code = max(exit_code, EXIT_CAP)
            elif not verified:
                exit_code = max(exit_code, EXIT_VERIFICATION)
            if trace_wanted:
                outcome = outcome_of_offers(market, result.profile)
                terminal = {
                    "algorithm": "offers",
                    "seed": seed,
                    "status": result.status,
                    "rounds": result.rounds,
                    "offers": profile_to_json(result.profile),
                    "outcome": outcome_to_json(outcome),
                    "terminal_phi": terminal_phi,
                    "verified": verified,
                }
                with open(out_dir / "trace.jsonl", "w") as fh:
                    for record in result.trace.records:
                        fh.write(json.dumps(_trace_record_json(record), sort_keys=True) + "\n")
        else:
            result = run_price_dynamics(market, config, scheduler,
                                        record_trace=trace_wanted,
                                        record_lyapunov=trace_wanted)
            elapsed = time.perf_counter() - started
            gap = ce_gap(market, result.average_prices)
            # lattice invariant: every price stays on p0 + eps * integers
            start = (base.initial_prices or {t.id: Fraction(0) for t in market.trades})
            on_lattice = all(
                ((result.final_prices[w] - as_fraction(start[w])) / result.epsilon).denominator == 1
                for w in result.final_prices)
            rows.append({"seed": seed, "algorithm": "clock", "rounds": result.rounds,
                         "converged": "", "metric": format_rational(gap),
                         "wall_time_s": f"{elapsed:.6f}"})
            if not on_lattice:
                exit_code = max(exit_code, EXIT_VERIFICATION)
            if trace_wanted:
                terminal = {
                    "algorithm": "clock",
                    "seed": seed,
                    "rounds": result.rounds,
                    "epsilon": format_rational(result.epsilon),
                    "final_prices": prices_to_json(result.final_prices),
                    "average_prices": prices_to_json(result.average_prices),
                    "ce_gap_of_average": format_rational(gap),
                    "verified": on_lattice,
                }
                with open(out_dir / "trace.jsonl", "w") as fh:
                    for record in result.trace.records:
                        fh.write(json.dumps(_trace_record_json(record), sort_keys=True) + "\n")

    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["seed", "algorithm", "rounds",
                                                "converged", "metric", "wall_time_s"])
        writer.writeheader()
        writer.writerows(rows)
    if terminal is not None:
        with open(out_dir / "terminal.json", "w") as fh:
            _emit(terminal, fh)
    return exit_code


def _analyze_ce(market):
    arrangement = solve_ce_prices(market)
    utilities = {a: market.utility(a, market.bundle_of(a, arrangement.allocation),
                                   arrangement.prices) for a in market.agents}
    return {
        "what": "ce",
        **arrangement_to_json(arrangement),
        "utilities": imputation_to_json(utilities),
        "market_value": format_rational(market.market_value()),
        "verified": True,  # solve_ce_prices verifies before returning
    }


def _analyze_ne_check(market, args):
    if not args.offers:
        raise ValidationError("ne-check needs --offers FILE")
    profile = load_profile(args.offers)
    eps = as_fraction(args.epsilon or "0")
    report = is_nash(market, profile, eps)
    outcome = outcome_of_offers(market, profile)
    return {
        "what": "ne-check",
        "verdict": report.verdict,
        "witness": None if report.witness is None else
            {"agent": report.witness[0], "gain": format_rational(report.witness[1])},
        "max_gap": None if report.max_gap is None else format_rational(report.max_gap),
        "crossed_trades": list(report.crossed_trades),
        "outcome": outcome_to_json(outcome),
        "verified": True,
    }


def _analyze_extend(market, args):
    if not args.offers:
        raise ValidationError("extend-ce needs --offers FILE")
    if args.epsilon is None:
        raise ValidationError("extend-ce needs --epsilon")
    profile = load_profile(args.offers)
    arrangement = extend_ne_to_ce(market, profile, as_fraction(args.epsilon))
    return {
        "what": "extend-ce",
        **arrangement_to_json(arrangement),
        "verified": True,
    }


def _analyze_core(market):
    cf = characteristic_function(market)
    order = {p: i for i, p in enumerate(cf.players)}
    values = {}
    for coalition in cf.coalitions():
        mask = sum(1 << order[p] for p in coalition)
        values[str(mask)] = format_rational(cf.of(coalition))
    out = {
        "what": "core",
        "players": list(cf.players),
        "characteristic_function": values,
        "core_nonempty": core_nonempty(cf),
        "essential_agents": sorted(essential_agents(market)),
        "verified": True,
    }
    if core_nonempty(cf) and len(cf.players) <= 5:
        out["core_vertices"] = [imputation_to_json(v) for v in core_vertices(cf)]
    return out


def _analyze_fairness(market):
    cf = characteristic_function(market)
    leximin = leximin_imputation(cf)
    leximax = leximax_imputation(cf)
    minvar = minvar_imputation(cf)
    flags = {
        "leximin_in_core": is_core_imputation(cf, leximin).ok,
        "leximax_in_core": is_core_imputation(cf, leximax).ok,
        "minvar_in_core": is_core_imputation(cf, minvar).ok,
    }
    if not all(flags.values()):
        raise RuntimeError(f"fairness imputations failed core verification: {flags}")
    return {
        "what": "fairness",
        "leximin": imputation_to_json(leximin),
        "leximax": imputation_to_json(leximax),
        "minvar": imputation_to_json(minvar),
        "verified": True,
        **flags,
    }


def _analyze_essential(market):
    return {"what": "essential",
            "essential": sorted(essential_agents(market)),
            "verified": True}


def _analyze_reduce(market):
    auction = to_auction(market)
    roundtrip = all(tau(market, a, tau(market, a, b)) == b
                    for a in market.agents for b in market.bundles(a))
    ids = [t.id for t in market.trades]
    if market.num_trades <= 12:
        allocations = [frozenset(w for k, w in enumerate(ids) if mask >> k & 1)
                       for mask in range(1 << len(ids))]
    else:
        allocations = [frozenset(), frozenset(ids)]
    welfare_ok = all(welfare_preserved(market, alloc, auction) for alloc in allocations)
    if not (roundtrip and welfare_ok):
        raise RuntimeError("auction reduction failed verification")
    tables = {}
    for buyer in auction.buyers:
        tables[buyer] = {",".join(sorted(b)) or "(empty)":
                         ("-inf" if v is NEG_INF else format_rational(v))
                         for b, v in sorted(auction.valuations[buyer].items(),
                                            key=lambda kv: (len(kv[0]), sorted(kv[0])))}
    return {
        "what": "reduce",
        "buyers": list(auction.buyers),
        "goods": list(auction.goods),
        "valuations": tables,
        "tau_roundtrip": roundtrip,
        "welfare_preserved": welfare_ok,
        "verified": True,
    }


def cmd_analyze(args) -> int:
    scenario = load_scenario(_resolve_scenario(args.scenario))
    market = scenario.market
    try:
        if args.what == "ce":
            _emit(_analyze_ce(market))
        elif args.what == "ne-check":
            _emit(_analyze_ne_check(market, args))
        elif args.what == "extend-ce":
            _emit(_analyze_extend(market, args))
        elif args.what == "core":
            _emit(_analyze_core(market))
        elif args.what == "fairness":
            _emit(_analyze_fairness(market))
        elif args.what == "essential":
            _emit(_analyze_essential(market))
        elif args.what == "reduce":
            _emit(_analyze_reduce(market))
        else:
            raise ValidationError(f"unknown analysis {args.what!r}")
    except ExtensionInfeasibleError as exc:
        _emit({"what": args.what, "error": str(exc), "impossible": True}, sys.stderr)
        return EXIT_IMPOSSIBLE
    except (NoCompetitiveEquilibriumError, ExtensionFailedError) as exc:
        _emit({"what": args.what, "error": str(exc)}, sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tradenet",
        description="Trading-network markets: validation, dynamics, and analysis")
    parser.add_argument("--version", action="version", version=f"tradenet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="parse a scenario and report invariants")
    p_validate.add_argument("--scenario", required=True)
    p_validate.add_argument("--skip-substitutes", action="store_true",
                            help="skip the per-agent substitutability grid check")
    p_validate.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="run a dynamics and write trace/summary files")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--algorithm", choices=["offers", "clock"], required=True)
    p_run.add_argument("--config", help="named run config from the scenario")
    p_run.add_argument("--schedule", help="named scripted schedule from the scenario")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--epsilon", help="exact rational step, e.g. 1/2 or 0.5")
    p_run.add_argument("--rounds", type=int)
    p_run.add_argument("--seeds", type=int, default=1, help="seed sweep width")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--format", choices=["json", "csv"], default="json")
    p_run.set_defaults(func=cmd_run)

    p_analyze = sub.add_parser("analyze", help="equilibrium / core / fairness analyses")
    p_analyze.add_argument("--scenario", required=True)
    p_analyze.add_argument("--what", required=True,
                           choices=["ce", "ne-check", "extend-ce", "core",
                                    "fairness", "essential", "reduce"])
    p_analyze.add_argument("--offers", help="offer profile JSON (ne-check, extend-ce)")
    p_analyze.add_argument("--epsilon")
    p_analyze.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, SizeCapError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
