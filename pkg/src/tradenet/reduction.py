"""Reduction from trading networks to single-unit auctions.

Trades become goods, agents become buyers, and an agent's auction bundle is
her bought trades plus her *unexecuted* selling trades (a seller keeps the
good until the trade fires).  The swap map ``tau`` is an involution on each
agent's bundles, preserves social welfare, and carries demand and
competitive equilibria back and forth at unchanged prices; the checkers here
verify those correspondences by brute force.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, Tuple

from .market import Bundle, Market, PriceMap, ValidationError
from .values import NEG_INF, ExtValue, as_fraction, is_finite


@dataclass(frozen=True)
class Auction:
    """Single-unit-supply auction: one good per source trade."""

    buyers: Tuple[str, ...]
    goods: Tuple[str, ...]
    incident: Mapping[str, Tuple[str, ...]]          # buyer -> goods she values
    valuations: Mapping[str, Mapping[Bundle, ExtValue]]

    def value(self, buyer: str, bundle: Iterable[str]) -> ExtValue:
        key = frozenset(bundle)
        try:
            return self.valuations[buyer][key]
        except KeyError:
            raise ValidationError(
                f"buyer {buyer!r} has no value for bundle {sorted(key)}") from None

    def demand_set(self, buyer: str, prices: PriceMap) -> List[Bundle]:
        best = None
        out: List[Bundle] = []
        for bundle, v in self.valuations[buyer].items():
            if not is_finite(v):
                continue
            u = v - sum(as_fraction(prices[g]) for g in bundle)
            if best is None or u > best:
                best, out = u, [bundle]
            elif u == best:
                out.append(bundle)
        out.sort(key=lambda b: (len(b), sorted(b)))
        return out


def tau(market: Market, agent: str, bundle: Iterable[str]) -> Bundle:
    """Swap executed and unexecuted selling trades: bought trades stay, and
    the agent holds exactly the selling trades she did not execute."""
    b = market.check_bundle(agent, bundle)
    inc = market.omega(agent)
    buying = {w for w in inc if market.chi(agent, w) == 1}
    selling = {w for w in inc if market.chi(agent, w) == -1}
    return frozenset((b & buying) | (selling - b))


def to_auction(market: Market) -> Auction:
    """Goods are trades; each agent values a goods bundle as the source
    market values its tau image."""
    valuations: Dict[str, Dict[Bundle, ExtValue]] = {}
    incident: Dict[str, Tuple[str, ...]] = {}
    for a in market.agents:
        incident[a] = market.omega(a)
        table: Dict[Bundle, ExtValue] = {}
        for bundle in market.bundles(a):
            table[bundle] = market.value(a, tau(market, a, bundle))
        valuations[a] = table
    return Auction(tuple(market.agents), tuple(t.id for t in market.trades),
                   incident, valuations)


def map_allocation(market: Market, allocation: Iterable[str]) -> Dict[str, Bundle]:
    """Per-buyer goods under the allocation mapping: each active trade goes to
    its buyer, each inactive trade stays with its seller."""
    alloc = market.check_allocation(allocation)
    return {a: tau(market, a, market.bundle_of(a, alloc)) for a in market.agents}


def is_auction_allocation_feasible(auction: Auction, assignment: Mapping[str, Bundle]) -> bool:
    seen: set = set()
    for buyer in auction.buyers:
        bundle = assignment.get(buyer, frozenset())
        if bundle & seen:
            return False
        seen |= bundle
    return seen == set(auction.goods)


def is_auction_ce(auction: Auction, prices: PriceMap,
                  assignment: Mapping[str, Bundle]) -> bool:
    """Supply fully allocated without double-assignment, and every buyer
    demands her assigned bundle at the prices."""
    if not is_auction_allocation_feasible(auction, assignment):
        return False
    for buyer in auction.buyers:
        if frozenset(assignment.get(buyer, frozenset())) not in auction.demand_set(buyer, prices):
            return False
    return True


def verify_demand_mapping(market: Market, agent: str, prices: PriceMap,
                          auction: Auction = None) -> bool:
    """The tau map is a bijection between the agent's market demand set and
    her auction demand set at the same prices."""
    auction = auction or to_auction(market)
    market_demand = {frozenset(b) for b in market.demand_set(agent, prices)}
    auction_demand = {frozenset(b) for b in auction.demand_set(agent, prices)}
    return {tau(market, agent, b) for b in market_demand} == auction_demand


def verify_ce_mapping(market: Market, prices: PriceMap, allocation: Iterable[str],
                      auction: Auction = None) -> bool:
    """Market equilibrium and mapped auction equilibrium agree (both ways)."""
    from .game import Arrangement, is_competitive_equilibrium

    auction = auction or to_auction(market)
    alloc = market.check_allocation(allocation)
    market_side = is_competitive_equilibrium(market, Arrangement(dict(prices), alloc), 0)
    auction_side = is_auction_ce(auction, prices, map_allocation(market, alloc))
    return market_side == auction_side


def welfare_preserved(market: Market, allocation: Iterable[str],
                      auction: Auction = None) -> bool:
    """Mapped allocations generate identical social welfare."""
    auction = auction or to_auction(market)
    alloc = market.check_allocation(allocation)
    market_welfare = market.social_welfare(alloc)
    total: ExtValue = Fraction(0)
    for buyer, bundle in map_allocation(market, alloc).items():
        v = auction.value(buyer, bundle)
        if not is_finite(v):
            total = NEG_INF
            break
        total = total + v
    return market_welfare == total
