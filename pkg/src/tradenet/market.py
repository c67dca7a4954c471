"""Trading-network markets: agents, bilateral trades, valuations, and demand.

A market is a directed multigraph on agents; every edge is a trade with one
seller and one distinct buyer.  Each agent holds an exact rational valuation
over the subsets ("bundles") of her incident trades, with the empty bundle
worth 0 and ``-inf`` allowed for infeasible bundles.  Utility is quasi-linear:
bundle value plus income from selling trades minus spending on buying trades.

The sign convention: ``chi(agent, trade)`` is +1 if the agent buys the trade,
-1 if she sells it, 0 otherwise, so utility is ``v(bundle) - sum(chi * p)``.

Everything here enumerates bundles explicitly, so per-agent degree is capped
at ``MAX_AGENT_TRADES`` and the market at ``MAX_MARKET_TRADES`` trades.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .values import NEG_INF, ExtValue, as_fraction, is_finite

MAX_AGENT_TRADES = 20
MAX_MARKET_TRADES = 24

Bundle = FrozenSet[str]
PriceMap = Mapping[str, Fraction]


class ValidationError(ValueError):
    """A market, bundle, or price vector violates a structural invariant."""


class SizeCapError(ValidationError):
    """An operation would exceed the brute-force enumeration caps."""


@dataclass(frozen=True)
class Trade:
    """A bilateral trade: a directed edge from seller to buyer."""

    id: str
    seller: str
    buyer: str

    def __post_init__(self):
        if self.seller == self.buyer:
            raise ValidationError(f"trade {self.id!r}: seller and buyer must differ")


class Valuation:
    """One agent's bundle -> value table.

    Explicit entries cover some bundles; every unlisted nonempty bundle takes
    ``default`` (``NEG_INF`` or a finite rational).  The empty bundle is
    always worth 0.
    """

    def __init__(self, entries: Optional[Mapping[Iterable[str], object]] = None,
                 default: object = NEG_INF):
        table: Dict[Bundle, ExtValue] = {}
        for bundle, value in (entries or {}).items():
            key = frozenset(bundle)
            val = value if value is NEG_INF else as_fraction(value)
            if key in table and table[key] != val:
                raise ValidationError(f"conflicting values for bundle {sorted(key)}")
            if not key:
                if val != 0:
                    raise ValidationError("the empty bundle must have value 0")
                continue
            table[key] = val
        self.entries: Dict[Bundle, ExtValue] = table
        self.default: ExtValue = default if default is NEG_INF else as_fraction(default)

    def value(self, bundle: Iterable[str]) -> ExtValue:
        key = frozenset(bundle)
        if not key:
            return Fraction(0)
        return self.entries.get(key, self.default)

    def shifted(self, constant) -> "Valuation":
        """Add a constant to every nonempty bundle (demand is unaffected)."""
        c = as_fraction(constant)
        entries = {b: (v if v is NEG_INF else v + c) for b, v in self.entries.items()}
        default = self.default if self.default is NEG_INF else self.default + c
        return Valuation(entries, default)


class SubstitutesCheck(NamedTuple):
    ok: bool
    witness: Optional[tuple]  # (prices, lowered/raised prices, bundle)


class Market:
    """An immutable trading-network market.

    Parameters
    ----------
    agents : sequence of agent ids
    trades : sequence of Trade (declaration order fixes the tie-break order)
    valuations : mapping agent id -> Valuation
    name : optional label
    """

    def __init__(self, agents: Sequence[str], trades: Sequence[Trade],
                 valuations: Mapping[str, Valuation], name: str = ""):
        self.name = name
        self.agents: Tuple[str, ...] = tuple(agents)
        self.trades: Tuple[Trade, ...] = tuple(trades)
        if len(set(self.agents)) != len(self.agents):
            raise ValidationError("duplicate agent ids")
        ids = [t.id for t in self.trades]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate trade ids")
        if len(ids) > MAX_MARKET_TRADES:
            raise SizeCapError(f"market has {len(ids)} trades; cap is {MAX_MARKET_TRADES}")
        agent_set = set(self.agents)
        omega: Dict[str, List[str]] = {a: [] for a in self.agents}
        chi: Dict[Tuple[str, str], int] = {}
        for t in self.trades:
            if t.seller not in agent_set or t.buyer not in agent_set:
                raise ValidationError(f"trade {t.id!r} references an unknown agent")
            omega[t.seller].append(t.id)
            omega[t.buyer].append(t.id)
            chi[(t.buyer, t.id)] = 1
            chi[(t.seller, t.id)] = -1
        for a, inc in omega.items():
            if len(inc) > MAX_AGENT_TRADES:
                raise SizeCapError(f"agent {a!r} has {len(inc)} trades; cap is {MAX_AGENT_TRADES}")
        self._omega = {a: tuple(inc) for a, inc in omega.items()}
        self._chi = chi
        self.trade_by_id: Dict[str, Trade] = {t.id: t for t in self.trades}
        self.valuations: Dict[str, Valuation] = {}
        for a in self.agents:
            if a not in valuations:
                raise ValidationError(f"missing valuation for agent {a!r}")
            v = valuations[a]
            inc = set(self._omega[a])
            for bundle in v.entries:
                if not bundle <= inc:
                    raise ValidationError(
                        f"agent {a!r}: bundle {sorted(bundle)} is not incident to the agent")
            self.valuations[a] = v
        extra = set(valuations) - agent_set
        if extra:
            raise ValidationError(f"valuations for unknown agents: {sorted(extra)}")
        # Per-agent mask tables, built lazily: values[mask] indexed by bitmask
        # over the agent's incident trades in declaration order.
        self._tables: Dict[str, Tuple[Tuple[str, ...], Tuple[int, ...], List[ExtValue]]] = {}

    # -- structure ---------------------------------------------------------

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def num_trades(self) -> int:
        return len(self.trades)

    @property
    def max_degree(self) -> int:
        """Maximum number of trades any one agent is involved in."""
        return max((len(self._omega[a]) for a in self.agents), default=0)

    def omega(self, agent: str) -> Tuple[str, ...]:
        """The agent's incident trade ids, in global declaration order."""
        try:
            return self._omega[agent]
        except KeyError:
            raise ValidationError(f"unknown agent {agent!r}") from None

    def chi(self, agent: str, trade_id: str) -> int:
        if trade_id not in self.trade_by_id:
            raise ValidationError(f"unknown trade {trade_id!r}")
        return self._chi.get((agent, trade_id), 0)

    def buying(self, agent: str, bundle: Iterable[str]) -> Bundle:
        return frozenset(w for w in bundle if self.chi(agent, w) == 1)

    def selling(self, agent: str, bundle: Iterable[str]) -> Bundle:
        return frozenset(w for w in bundle if self.chi(agent, w) == -1)

    def check_bundle(self, agent: str, bundle: Iterable[str]) -> Bundle:
        b = frozenset(bundle)
        inc = set(self.omega(agent))
        if not b <= inc:
            raise ValidationError(f"bundle {sorted(b)} is not a subset of agent {agent!r}'s trades")
        return b

    def check_allocation(self, allocation: Iterable[str]) -> Bundle:
        alloc = frozenset(allocation)
        for w in alloc:
            if w not in self.trade_by_id:
                raise ValidationError(f"unknown trade {w!r} in allocation")
        return alloc

    def bundles(self, agent: str) -> Iterable[Bundle]:
        """All subsets of the agent's incident trades (2^degree of them)."""
        inc = self.omega(agent)
        for r in range(len(inc) + 1):
            for combo in itertools.combinations(inc, r):
                yield frozenset(combo)

    def mask_table(self, agent: str) -> Tuple[Tuple[str, ...], Tuple[int, ...], List[ExtValue]]:
        """(incident trades, chi signs, value-by-bitmask) for fast enumeration.

        Bit j of a mask corresponds to ``omega(agent)[j]``.  The table is
        cached; recomputation by a concurrent reader is benign.
        """
        cached = self._tables.get(agent)
        if cached is not None:
            return cached
        inc = self.omega(agent)
        signs = tuple(self.chi(agent, w) for w in inc)
        val = self.valuations[agent]
        values: List[ExtValue] = []
        for mask in range(1 << len(inc)):
            bundle = frozenset(inc[j] for j in range(len(inc)) if mask >> j & 1)
            values.append(val.value(bundle))
        result = (inc, signs, values)
        self._tables[agent] = result
        return result

    def value(self, agent: str, bundle: Iterable[str]) -> ExtValue:
        b = self.check_bundle(agent, bundle)
        return self.valuations[agent].value(b)

    # -- utility and demand ------------------------------------------------

    def utility(self, agent: str, bundle: Iterable[str], prices: PriceMap) -> ExtValue:
        """Quasi-linear utility ``v(bundle) - sum_{w in bundle} chi_w * p_w``."""
        b = self.check_bundle(agent, bundle)
        v = self.valuations[agent].value(b)
        if v is NEG_INF:
            return NEG_INF
        total = v
        for w in b:
            if w not in prices:
                raise ValidationError(f"price missing for trade {w!r}")
            total -= self.chi(agent, w) * as_fraction(prices[w])
        return total

    def _mask_utilities(self, agent: str, prices: PriceMap):
        inc, signs, values = self.mask_table(agent)
        price = []
        for w in inc:
            if w not in prices:
                raise ValidationError(f"price missing for trade {w!r}")
            price.append(as_fraction(prices[w]))
        deg = len(inc)
        out = []
        for mask in range(1 << deg):
            v = values[mask]
            if v is NEG_INF:
                out.append(NEG_INF)
                continue
            u = v
            for j in range(deg):
                if mask >> j & 1:
                    u -= signs[j] * price[j]
            out.append(u)
        return inc, out

    def demand_set(self, agent: str, prices: PriceMap) -> List[Bundle]:
        """All utility-maximizing bundles at the given prices.

        Never empty: the empty bundle has finite utility 0, so ``-inf``
        bundles are never selected.  Sorted by (cardinality, trade ids).
        """
        inc, utilities = self._mask_utilities(agent, prices)
        best = max(utilities)
        deg = len(inc)
        result = [frozenset(inc[j] for j in range(deg) if mask >> j & 1)
                  for mask, u in enumerate(utilities) if u == best]
        result.sort(key=lambda b: (len(b), sorted(b)))
        return result

    def demand_tiebreak(self, agent: str, prices: PriceMap,
                        epsilon: Optional[Fraction] = None) -> Bundle:
        """The demanded bundle under the canonical tie-breaking rule.

        Among the utility maximizers, picks the lexicographically smallest
        bundle of maximum cardinality (lexicographic in the global trade
        declaration order).  When ``epsilon`` is given, the same bundle is
        recomputed as the unique maximizer of the 4-adically perturbed
        valuation -- valid on the epsilon-lattice for fully substitutable
        agents -- and a mismatch raises ``ValidationError``.
        """
        inc, utilities = self._mask_utilities(agent, prices)
        deg = len(inc)
        best_mask, best_u, best_card, best_key = 0, utilities[0], 0, 0
        for mask in range(1, 1 << deg):
            u = utilities[mask]
            if u is NEG_INF:
                continue
            card = mask.bit_count()
            key = sum(1 << 2 * (deg - 1 - j) for j in range(deg) if mask >> j & 1)
            if (u > best_u or (u == best_u and (card > best_card or
                               (card == best_card and key > best_key)))):
                best_mask, best_u, best_card, best_key = mask, u, card, key
        chosen = frozenset(inc[j] for j in range(deg) if best_mask >> j & 1)
        if epsilon is not None:
            alt = self._perturbed_argmax(agent, prices, as_fraction(epsilon))
            if alt != chosen:
                raise ValidationError(
                    f"tie-break mismatch for agent {agent!r}: rule gives {sorted(chosen)}, "
                    f"perturbed valuation gives {sorted(alt)}")
        return chosen

    def _perturbed_argmax(self, agent: str, prices: PriceMap, epsilon: Fraction) -> Bundle:
        # Perturb each trade w_j (1-based position in the global ordering) by
        # epsilon / 4^j; on the epsilon-lattice the perturbed argmax is unique.
        order = {t.id: j + 1 for j, t in enumerate(self.trades)}
        inc, utilities = self._mask_utilities(agent, prices)
        deg = len(inc)
        best_mask, best_u = 0, Fraction(0)
        for mask in range(1 << deg):
            u = utilities[mask]
            if u is NEG_INF:
                continue
            u = u + sum(epsilon / 4 ** order[inc[j]] for j in range(deg) if mask >> j & 1)
            if mask == 0 or u > best_u:
                best_mask, best_u = mask, u
        return frozenset(inc[j] for j in range(deg) if best_mask >> j & 1)

    def indirect_utility(self, agent: str, prices: PriceMap) -> Fraction:
        """max over bundles of the agent's utility; finite and >= 0."""
        _, utilities = self._mask_utilities(agent, prices)
        return max(u for u in utilities if u is not NEG_INF)

    # -- welfare -----------------------------------------------------------

    def bundle_of(self, agent: str, allocation: Iterable[str]) -> Bundle:
        alloc = frozenset(allocation)
        return frozenset(w for w in self.omega(agent) if w in alloc)

    def social_welfare(self, allocation: Iterable[str]) -> ExtValue:
        """Sum of agents' values for their parts of the allocation."""
        alloc = self.check_allocation(allocation)
        total: ExtValue = Fraction(0)
        for a in self.agents:
            v = self.valuations[a].value(self.bundle_of(a, alloc))
            if v is NEG_INF:
                return NEG_INF
            total = total + v
        return total

    def _welfare_by_allocation(self) -> List[ExtValue]:
        ids = [t.id for t in self.trades]
        m = len(ids)
        out: List[ExtValue] = []
        for mask in range(1 << m):
            alloc = frozenset(ids[j] for j in range(m) if mask >> j & 1)
            out.append(self.social_welfare(alloc))
        return out

    def market_value(self) -> Fraction:
        """Maximum social welfare over all allocations (>= 0 since v(empty)=0)."""
        return max(w for w in self._welfare_by_allocation() if w is not NEG_INF)

    def efficient_allocations(self) -> List[Bundle]:
        """All allocations attaining the market value, sorted canonically."""
        ids = [t.id for t in self.trades]
        welfare = self._welfare_by_allocation()
        best = max(w for w in welfare if w is not NEG_INF)
        result = [frozenset(ids[j] for j in range(len(ids)) if mask >> j & 1)
                  for mask, w in enumerate(welfare) if w == best]
        result.sort(key=lambda b: (len(b), sorted(b)))
        return result

    # -- derived markets ----------------------------------------------------

    def restricted(self, agents: Iterable[str], name: str = "") -> "Market":
        """The sub-market on a coalition: drop outside agents and their trades."""
        keep = set(agents)
        unknown = keep - set(self.agents)
        if unknown:
            raise ValidationError(f"unknown agents {sorted(unknown)}")
        trades = [t for t in self.trades if t.seller in keep and t.buyer in keep]
        kept_ids = {t.id for t in trades}
        valuations = {}
        for a in self.agents:
            if a not in keep:
                continue
            val = self.valuations[a]
            entries = {b: v for b, v in val.entries.items() if b <= kept_ids}
            valuations[a] = Valuation(entries, val.default)
        order = [a for a in self.agents if a in keep]
        return Market(order, trades, valuations, name=name or f"{self.name}|restricted")

    def value_bound(self) -> Fraction:
        """Max absolute finite valuation over all agents and bundles (>= 1)."""
        bound = Fraction(1)
        for a in self.agents:
            _, _, values = self.mask_table(a)
            for v in values:
                if v is not NEG_INF and abs(v) > bound:
                    bound = abs(v)
        return bound

    def all_finite(self) -> bool:
        return all(v is not NEG_INF
                   for a in self.agents for v in self.mask_table(a)[2])

    def __repr__(self):
        return (f"Market({self.name or 'unnamed'}: {self.num_agents} agents, "
                f"{self.num_trades} trades)")


# -- full substitutability ---------------------------------------------------


def default_price_box(market: Market, agent: str) -> Tuple[Fraction, Fraction]:
    """[min finite value - 1, max finite value + 1]: wide enough that every
    demand change of an integral valuation happens inside the box."""
    _, _, values = market.mask_table(agent)
    finite = [v for v in values if v is not NEG_INF]
    return min(finite) - 1, max(finite) + 1


def _grid(lo: Fraction, hi: Fraction, step: Fraction) -> List[Fraction]:
    out = []
    x = lo
    while x <= hi:
        out.append(x)
        x += step
    return out


def is_fully_substitutable(market: Market, agent: str,
                           price_box: Optional[Tuple[Fraction, Fraction]] = None,
                           step: Fraction = Fraction(1, 2)) -> SubstitutesCheck:
    """Finite grid check of full substitutability.

    Checks both directions of the definition on every ordered pair of grid
    price vectors that agree on the fixed side and weakly move on the other:
    (i) lowering some buying prices must not make the agent drop still-priced
    buying trades nor drop selling trades; (ii) raising some selling prices
    must not make her drop still-priced selling trades nor buying trades.

    Returns ``(True, None)`` or ``(False, (p, p2, bundle))`` with a witness
    pair and the demanded bundle that cannot be matched at ``p2``.
    """
    step = as_fraction(step)
    if step <= 0:
        raise ValidationError("step must be positive")
    if price_box is None:
        lo, hi = default_price_box(market, agent)
    else:
        lo, hi = as_fraction(price_box[0]), as_fraction(price_box[1])
        if hi < lo:
            raise ValidationError("empty price box")
    inc = market.omega(agent)
    deg = len(inc)
    if deg <= 1:
        return SubstitutesCheck(True, None)
    signs = [market.chi(agent, w) for w in inc]
    buys = [j for j in range(deg) if signs[j] == 1]
    sells = [j for j in range(deg) if signs[j] == -1]
    axis = _grid(lo, hi, step)

    demand: Dict[Tuple[Fraction, ...], List[int]] = {}
    _, table_signs, values = market.mask_table(agent)
    for point in itertools.product(axis, repeat=deg):
        best = Fraction(0)
        masks = [0]
        for mask in range(1, 1 << deg):
            v = values[mask]
            if v is NEG_INF:
                continue
            u = v
            for j in range(deg):
                if mask >> j & 1:
                    u -= table_signs[j] * point[j]
            if u > best:
                best, masks = u, [mask]
            elif u == best:
                masks.append(mask)
        demand[point] = masks

    def bundle_from_mask(mask):
        return frozenset(inc[j] for j in range(deg) if mask >> j & 1)

    def violates(moving, fixed, direction):
        # direction -1: lower prices on `moving` (buys); +1: raise (sells).
        moving_set = set(moving)
        for p in demand:
            lower_axes = []
            for j in range(deg):
                if j in moving_set:
                    vals = [x for x in axis if (x <= p[j] if direction < 0 else x >= p[j])]
                else:
                    vals = [p[j]]
                lower_axes.append(vals)
            for p2 in itertools.product(*lower_axes):
                if p2 == p:
                    continue
                for mask in demand[p]:
                    ok = False
                    for mask2 in demand[p2]:
                        # kept side on the moved trades: trades of the moved
                        # orientation in the new bundle whose price did not
                        # change must already be in the old bundle
                        kept = all(not (mask2 >> j & 1) or (mask >> j & 1)
                                   for j in moving if p2[j] == p[j])
                        # fixed orientation must be weakly retained
                        retained = all(not (mask >> j & 1) or (mask2 >> j & 1)
                                       for j in fixed)
                        if kept and retained:
                            ok = True
                            break
                    if not ok:
                        prices_p = {inc[j]: p[j] for j in range(deg)}
                        prices_p2 = {inc[j]: p2[j] for j in range(deg)}
                        return prices_p, prices_p2, bundle_from_mask(mask)
        return None

    witness = violates(buys, sells, -1)
    if witness is None:
        witness = violates(sells, buys, +1)
    if witness is None:
        return SubstitutesCheck(True, None)
    return SubstitutesCheck(False, witness)
