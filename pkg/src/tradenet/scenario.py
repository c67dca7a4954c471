"""Scenario files: JSON ingestion and exact serialization.

A scenario bundles a market with named run configurations and named scripted
schedules:

    {
      "name": "...",
      "agents": ["s", "b"],
      "trades": [{"id": "w", "seller": "s", "buyer": "b"}, ...],
      "valuations": {
        "s": {"default": "neg_inf" | number, "entries": [
               {"bundle": ["w"], "value": -2}, ...]},
        ...
      },
      "configs": {"table": {"epsilon": "0.5", "rounds": 50, "seed": 0,
                             "initial_offers": {...} | "initial_prices": {...}}},
      "schedules": {"table": ["s", "b", ...]}
    }

Numbers may be JSON integers or exact decimal strings; JSON floats are
parsed through ``Fraction`` so the text "2.5" arrives exactly.  Emitted
numbers are exact decimal strings when terminating, otherwise "num/den".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

from .dynamics import RunConfig, Scheduler
from .game import Arrangement, MarketOutcome, OfferProfile
from .market import Market, Trade, ValidationError, Valuation
from .values import NEG_INF, as_fraction, format_rational, parse_value


@dataclass
class Scenario:
    market: Market
    configs: Dict[str, RunConfig] = field(default_factory=dict)
    schedules: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def scheduler(self, name: Optional[str]) -> Scheduler:
        if name is None:
            return Scheduler.random_order()
        if name not in self.schedules:
            raise ValidationError(f"unknown schedule {name!r}")
        return Scheduler.scripted(self.schedules[name])


def _parse_valuation(raw: Mapping) -> Valuation:
    default = raw.get("default", "neg_inf")
    default_value = parse_value(default)
    entries = {}
    for entry in raw.get("entries", []):
        bundle = frozenset(entry["bundle"])
        entries[bundle] = parse_value(entry["value"])
    return Valuation(entries, default_value)


def _parse_config(raw: Mapping) -> RunConfig:
    offers = raw.get("initial_offers")
    if offers is not None:
        offers = {a: {w: as_fraction(x) for w, x in per.items()} for a, per in offers.items()}
    prices = raw.get("initial_prices")
    if prices is not None:
        prices = {w: as_fraction(x) for w, x in prices.items()}
    return RunConfig(
        epsilon=None if raw.get("epsilon") is None else as_fraction(raw["epsilon"]),
        rounds=int(raw.get("rounds", 10**6)),
        seed=int(raw.get("seed", 0)),
        value_bound=None if raw.get("R") is None else as_fraction(raw["R"]),
        initial_offers=offers,
        initial_prices=prices,
    )


def scenario_from_dict(data: Mapping) -> Scenario:
    try:
        agents = list(data["agents"])
        trades = [Trade(t["id"], t["seller"], t["buyer"]) for t in data["trades"]]
        valuations = {a: _parse_valuation(v) for a, v in data["valuations"].items()}
    except KeyError as missing:
        raise ValidationError(f"scenario is missing field {missing}") from None
    market = Market(agents, trades, valuations, name=data.get("name", ""))
    configs = {name: _parse_config(c) for name, c in data.get("configs", {}).items()}
    schedules = {name: tuple(seq) for name, seq in data.get("schedules", {}).items()}
    for name, seq in schedules.items():
        unknown = set(seq) - set(market.agents)
        if unknown:
            raise ValidationError(f"schedule {name!r} names unknown agents {sorted(unknown)}")
    return Scenario(market, configs, schedules)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    data = json.loads(text, parse_float=Fraction)
    return scenario_from_dict(data)


def scenario_to_dict(scenario: Scenario) -> Dict:
    market = scenario.market
    out: Dict = {
        "name": market.name,
        "agents": list(market.agents),
        "trades": [{"id": t.id, "seller": t.seller, "buyer": t.buyer}
                   for t in market.trades],
        "valuations": {},
    }
    for a in market.agents:
        val = market.valuations[a]
        default = "neg_inf" if val.default is NEG_INF else format_rational(val.default)
        entries = [{"bundle": sorted(b), "value":
                    "neg_inf" if v is NEG_INF else format_rational(v)}
                   for b, v in sorted(val.entries.items(), key=lambda kv: (len(kv[0]), sorted(kv[0])))]
        out["valuations"][a] = {"default": default, "entries": entries}
    if scenario.configs:
        out["configs"] = {}
        for name, cfg in scenario.configs.items():
            raw: Dict = {"rounds": cfg.rounds, "seed": cfg.seed}
            if cfg.epsilon is not None:
                raw["epsilon"] = format_rational(cfg.epsilon)
            if cfg.value_bound is not None:
                raw["R"] = format_rational(cfg.value_bound)
            if cfg.initial_offers is not None:
                raw["initial_offers"] = {a: {w: format_rational(x) for w, x in per.items()}
                                         for a, per in cfg.initial_offers.items()}
            if cfg.initial_prices is not None:
                raw["initial_prices"] = {w: format_rational(x)
                                         for w, x in cfg.initial_prices.items()}
            out["configs"][name] = raw
    if scenario.schedules:
        out["schedules"] = {name: list(seq) for name, seq in scenario.schedules.items()}
    return out


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


# -- result serialization ------------------------------------------------------


def prices_to_json(prices: Mapping) -> Dict[str, str]:
    return {w: format_rational(p) for w, p in sorted(prices.items())}


def profile_to_json(profile: OfferProfile) -> Dict:
    return {"offers": {a: {w: format_rational(x) for w, x in sorted(per.items())}
                       for a, per in sorted(profile.offers.items())}}


def profile_from_json(data: Mapping) -> OfferProfile:
    raw = data["offers"] if "offers" in data else data
    return OfferProfile({a: {w: as_fraction(x) for w, x in per.items()}
                         for a, per in raw.items()})


def load_profile(path) -> OfferProfile:
    data = json.loads(Path(path).read_text(), parse_float=Fraction)
    return profile_from_json(data)


def arrangement_to_json(arrangement: Arrangement) -> Dict:
    return {"prices": prices_to_json(arrangement.prices),
            "allocation": sorted(arrangement.allocation)}


def outcome_to_json(outcome: MarketOutcome) -> Dict:
    return {"prices": prices_to_json(outcome.prices),
            "allocation": sorted(outcome.allocation)}


def imputation_to_json(x: Mapping) -> Dict[str, str]:
    return {a: format_rational(v) for a, v in sorted(x.items())}
