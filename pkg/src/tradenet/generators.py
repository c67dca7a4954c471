"""Seeded random market generators for property suites and seed sweeps.

Fully substitutable valuations are built from two families that are
substitutes on the auction side and pulled back through the buy/sell swap
map: additive values (any signs) and top-k values (sum of the k largest
nonnegative per-good weights).  Constant shifts keep the empty bundle at 0
and never affect demand.
"""

from __future__ import annotations

import itertools
import random
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from .market import Market, Trade, Valuation
from .reduction import tau


def _additive_market_valuation(rng: random.Random, inc: List[str], span: int) -> Dict:
    coeffs = {w: rng.randint(-span, span) for w in inc}
    entries = {}
    for r in range(1, len(inc) + 1):
        for combo in itertools.combinations(inc, r):
            entries[frozenset(combo)] = sum(coeffs[w] for w in combo)
    return entries


def _topk_auction_valuation(rng: random.Random, inc: List[str], span: int) -> Dict:
    weights = {w: rng.randint(0, span) for w in inc}
    k = rng.randint(1, len(inc))
    table = {}
    for r in range(len(inc) + 1):
        for combo in itertools.combinations(inc, r):
            table[frozenset(combo)] = sum(sorted((weights[w] for w in combo), reverse=True)[:k])
    return table


def random_substitutes_market(seed: int, min_agents: int = 2, max_agents: int = 4,
                              min_trades: int = 1, max_trades: int = 5,
                              span: int = 5, name: str = "") -> Market:
    """A random market whose agents are all fully substitutable."""
    rng = random.Random(seed)
    n = rng.randint(min_agents, max_agents)
    m = rng.randint(min_trades, max_trades)
    agents = [f"a{i}" for i in range(n)]
    trades = []
    for k in range(m):
        seller, buyer = rng.sample(agents, 2)
        trades.append(Trade(f"t{k}", seller, buyer))
    skeleton = Market(agents, trades, {a: Valuation({}, 0) for a in agents})
    valuations = {}
    for a in agents:
        inc = list(skeleton.omega(a))
        if not inc:
            valuations[a] = Valuation({}, 0)
            continue
        if rng.random() < 0.5:
            entries = _additive_market_valuation(rng, inc, span)
        else:
            table = _topk_auction_valuation(rng, inc, span)
            base = table[tau(skeleton, a, frozenset())]
            entries = {}
            for r in range(1, len(inc) + 1):
                for combo in itertools.combinations(inc, r):
                    bundle = frozenset(combo)
                    entries[bundle] = table[tau(skeleton, a, bundle)] - base
        valuations[a] = Valuation(entries, 0)
    return Market(agents, trades, valuations, name=name or f"random-{seed}")


def random_two_agent_market(seed: int, max_trades: int = 3, span: int = 4) -> Market:
    """A two-agent substitutes market with at most three trades, the setting
    in which the offer-dynamics potential is provably monotone."""
    return random_substitutes_market(seed, min_agents=2, max_agents=2,
                                     min_trades=1, max_trades=max_trades, span=span,
                                     name=f"pair-{seed}")


def random_lattice_prices(rng: random.Random, market: Market, span: int = 6,
                          denominator: int = 4) -> Dict[str, Fraction]:
    return {t.id: Fraction(rng.randint(-span * denominator, span * denominator), denominator)
            for t in market.trades}


def random_offers(rng: random.Random, market: Market, span: int = 6) -> Dict[str, Dict[str, Fraction]]:
    return {a: {w: Fraction(rng.randint(-span, span)) for w in market.omega(a)}
            for a in market.agents}
