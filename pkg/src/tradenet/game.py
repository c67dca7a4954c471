"""The trading-network game: offers, outcomes, Nash and competitive equilibria.

Each agent posts an offer for every incident trade; a trade is active when
its buyer's and seller's offers coincide, and active trades execute at that
price.  The central verification tools here are ``is_nash`` (with the
epsilon-tightness refinement: all offer gaps at most epsilon) and
``is_competitive_equilibrium``; the constructive bridges between the two are
``ne_from_ce``, ``approx_ce_from_tight_ne``, and ``extend_ne_to_ce``.

``solve_ce_prices`` computes exact competitive-equilibrium prices by integer
steepest descent on the aggregate indirect-utility (Lyapunov) function, which
provably reaches its minimum for fully substitutable integral valuations; a
rational-simplex solve of the welfare dual is kept as a fallback so
non-substitutes inputs still get a decisive answer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from . import lp
from .market import Bundle, Market, SizeCapError, Trade, ValidationError, Valuation
from .values import NEG_INF, as_fraction, is_finite

NOT_NASH = "not_nash"
NASH = "nash"
EPS_TIGHT_NASH = "eps_tight_nash"


class NoCompetitiveEquilibriumError(RuntimeError):
    """The market admits no competitive equilibrium (not fully substitutable)."""


class ExtensionInfeasibleError(RuntimeError):
    """No integral extension exists among the candidate prices; raised when
    epsilon is at or above the 1/(2*max_degree - 2) threshold, where the
    extension guarantee genuinely fails."""


class ExtensionFailedError(RuntimeError):
    """No extension found although epsilon is below the threshold; the input
    offers or valuations violate the preconditions (e.g. substitutability)."""


class OfferProfile:
    """A complete offer, one rational per (agent, incident trade) pair."""

    def __init__(self, offers: Mapping[str, Mapping[str, object]]):
        self.offers: Dict[str, Dict[str, Fraction]] = {
            a: {w: as_fraction(x) for w, x in per.items()} for a, per in offers.items()
        }

    def offer(self, agent: str, trade_id: str) -> Fraction:
        try:
            return self.offers[agent][trade_id]
        except KeyError:
            raise ValidationError(f"no offer for agent {agent!r} on trade {trade_id!r}") from None

    def replace(self, agent: str, new_offers: Mapping[str, object]) -> "OfferProfile":
        out = {a: dict(per) for a, per in self.offers.items()}
        out[agent] = {w: as_fraction(x) for w, x in new_offers.items()}
        return OfferProfile(out)

    def __eq__(self, other):
        return isinstance(other, OfferProfile) and self.offers == other.offers

    def __repr__(self):
        return f"OfferProfile({self.offers})"


@dataclass(frozen=True)
class Arrangement:
    """Full-scope prices (every trade) plus a feasible set of active trades."""

    prices: Mapping[str, Fraction]
    allocation: Bundle


@dataclass(frozen=True)
class MarketOutcome:
    """Prices restricted to exactly the active trades, plus those trades."""

    prices: Mapping[str, Fraction]
    allocation: Bundle

    def __post_init__(self):
        if set(self.prices) != set(self.allocation):
            raise ValidationError("outcome prices must cover exactly the active trades")


def validate_profile(market: Market, profile: OfferProfile) -> None:
    for a in market.agents:
        inc = set(market.omega(a))
        have = set(profile.offers.get(a, ()))
        if have != inc:
            raise ValidationError(
                f"agent {a!r}: offers cover {sorted(have)}, expected {sorted(inc)}")
    extra = set(profile.offers) - set(market.agents)
    if extra:
        raise ValidationError(f"offers from unknown agents: {sorted(extra)}")


def counterpart(market: Market, agent: str, trade_id: str) -> str:
    t = market.trade_by_id[trade_id]
    return t.seller if t.buyer == agent else t.buyer


def faced_prices(market: Market, agent: str, profile: OfferProfile) -> Dict[str, Fraction]:
    """The offers agent i observes from her counterparties, one per trade."""
    return {w: profile.offer(counterpart(market, agent, w), w) for w in market.omega(agent)}


def outcome_of_offers(market: Market, profile: OfferProfile) -> MarketOutcome:
    """Active trades (buyer offer == seller offer) and their trading prices."""
    validate_profile(market, profile)
    prices: Dict[str, Fraction] = {}
    active = []
    for t in market.trades:
        b = profile.offer(t.buyer, t.id)
        s = profile.offer(t.seller, t.id)
        if b == s:
            prices[t.id] = b
            active.append(t.id)
    return MarketOutcome(prices, frozenset(active))


def agent_game_utility(market: Market, agent: str, profile: OfferProfile):
    outcome = outcome_of_offers(market, profile)
    bundle = market.bundle_of(agent, outcome.allocation)
    return market.utility(agent, bundle, outcome.prices)


def best_deviation(market: Market, agent: str, profile: OfferProfile,
                   epsilon: Fraction = Fraction(1)) -> Tuple[Dict[str, Fraction], Fraction]:
    """The agent's best unilateral offer update and its utility.

    Matching a counterpart's offer activates that trade, and any other offer
    deactivates it, so the deviation value is the maximal utility over
    bundles at faced prices; rejected trades step epsilon away to the
    agent's favorable side.
    """
    validate_profile(market, profile)
    eps = as_fraction(epsilon)
    if eps <= 0:
        raise ValidationError("epsilon must be positive")
    faced = faced_prices(market, agent, profile)
    chosen = market.demand_tiebreak(agent, faced)
    offers = {}
    for w in market.omega(agent):
        if w in chosen:
            offers[w] = faced[w]
        else:
            offers[w] = faced[w] - eps * market.chi(agent, w)
    value = market.utility(agent, chosen, faced)
    return offers, value


class NashReport(NamedTuple):
    verdict: str                      # NOT_NASH | NASH | EPS_TIGHT_NASH
    witness: Optional[Tuple[str, Fraction]]   # (agent, achievable gain)
    crossed_trades: Tuple[str, ...]   # trades with buyer offer above seller offer
    max_gap: Optional[Fraction]       # largest |buyer - seller| offer gap


def is_nash(market: Market, profile: OfferProfile, epsilon) -> NashReport:
    """Classify an offer profile: not Nash (with a deviating witness), Nash,
    or epsilon-tight Nash (every trade's offer gap at most epsilon).

    At any Nash verdict, trades with buyer offer strictly above seller offer
    are reported in ``crossed_trades``: they cannot occur once some party
    strictly gains from matching, so on economically meaningful instances
    the tuple is empty.
    """
    validate_profile(market, profile)
    eps = as_fraction(epsilon)
    if eps < 0:
        raise ValidationError("epsilon must be nonnegative")
    outcome = outcome_of_offers(market, profile)
    for a in market.agents:
        current = market.utility(a, market.bundle_of(a, outcome.allocation), outcome.prices)
        best = market.indirect_utility(a, faced_prices(market, a, profile))
        if current is NEG_INF or best > current:
            gain = best if current is NEG_INF else best - current
            return NashReport(NOT_NASH, (a, gain), (), None)
    crossed = []
    max_gap = Fraction(0)
    for t in market.trades:
        b = profile.offer(t.buyer, t.id)
        s = profile.offer(t.seller, t.id)
        if b > s:
            crossed.append(t.id)
        max_gap = max(max_gap, abs(b - s))
    verdict = EPS_TIGHT_NASH if max_gap <= eps else NASH
    return NashReport(verdict, None, tuple(crossed), max_gap)


# -- competitive equilibria ----------------------------------------------------


def validate_arrangement(market: Market, arrangement: Arrangement) -> None:
    if set(arrangement.prices) != {t.id for t in market.trades}:
        raise ValidationError("arrangement prices must cover every trade")
    market.check_allocation(arrangement.allocation)


def is_competitive_equilibrium(market: Market, arrangement: Arrangement,
                               epsilon=Fraction(0)) -> bool:
    """Every agent's allocated bundle comes within epsilon of her maximal
    utility at the arrangement's prices (epsilon = 0: exact equilibrium)."""
    validate_arrangement(market, arrangement)
    eps = as_fraction(epsilon)
    if eps < 0:
        raise ValidationError("epsilon must be nonnegative")
    for a in market.agents:
        bundle = market.bundle_of(a, arrangement.allocation)
        got = market.utility(a, bundle, arrangement.prices)
        if got is NEG_INF:
            return False
        if got < market.indirect_utility(a, arrangement.prices) - eps:
            return False
    return True


def ne_from_ce(market: Market, arrangement: Arrangement, epsilon) -> OfferProfile:
    """Build an epsilon-tight Nash equilibrium from a competitive equilibrium.

    Active trades: both parties offer the price.  Inactive trades: the buyer
    bids epsilon/2 below and the seller asks epsilon/2 above, so neither side
    wants to close the gap.
    """
    eps = as_fraction(epsilon)
    if eps <= 0:
        raise ValidationError("epsilon must be positive")
    if not is_competitive_equilibrium(market, arrangement, 0):
        raise ValidationError("input arrangement is not a competitive equilibrium")
    offers: Dict[str, Dict[str, Fraction]] = {a: {} for a in market.agents}
    for t in market.trades:
        p = as_fraction(arrangement.prices[t.id])
        if t.id in arrangement.allocation:
            offers[t.buyer][t.id] = p
            offers[t.seller][t.id] = p
        else:
            offers[t.buyer][t.id] = p - eps / 2
            offers[t.seller][t.id] = p + eps / 2
    profile = OfferProfile(offers)
    report = is_nash(market, profile, eps)
    if report.verdict != EPS_TIGHT_NASH:
        raise RuntimeError(f"constructed profile failed verification: {report}")
    return profile


def approx_ce_from_tight_ne(market: Market, profile: OfferProfile, epsilon) -> Arrangement:
    """Turn an epsilon-tight Nash equilibrium into an (epsilon * max_degree)-
    approximate competitive equilibrium: keep active-trade prices, set each
    inactive trade's price to the midpoint of the two standing offers."""
    eps = as_fraction(epsilon)
    report = is_nash(market, profile, eps)
    if report.verdict != EPS_TIGHT_NASH:
        raise ValidationError(f"offers are not an epsilon-tight Nash equilibrium: {report.verdict}")
    outcome = outcome_of_offers(market, profile)
    prices = dict(outcome.prices)
    for t in market.trades:
        if t.id not in prices:
            prices[t.id] = (profile.offer(t.buyer, t.id) + profile.offer(t.seller, t.id)) / 2
    arrangement = Arrangement(prices, outcome.allocation)
    slack = eps * market.max_degree
    if not is_competitive_equilibrium(market, arrangement, slack):
        raise RuntimeError("constructed arrangement failed approximate verification")
    return arrangement


def _reduced_market(market: Market, profile: OfferProfile, outcome: MarketOutcome) -> Market:
    """Sub-market on the inactive trades; valuations fold in the option of
    adding any active trades at the counterparties' standing offers, shifted
    so the empty bundle is worth 0 again."""
    inactive = [t for t in market.trades if t.id not in outcome.allocation]
    inactive_ids = {t.id for t in inactive}
    valuations = {}
    for a in market.agents:
        faced = faced_prices(market, a, profile)
        active_inc = [w for w in market.omega(a) if w not in inactive_ids]
        inact_inc = [w for w in market.omega(a) if w in inactive_ids]
        def folded(bundle):
            best = NEG_INF
            for r in range(len(active_inc) + 1):
                for extra in itertools.combinations(active_inc, r):
                    v = market.value(a, bundle | frozenset(extra))
                    if v is NEG_INF:
                        continue
                    u = v - sum(market.chi(a, w) * faced[w] for w in extra)
                    if best is NEG_INF or u > best:
                        best = u
            return best
        base = folded(frozenset())  # finite: the empty combination gives v(empty)=0
        entries = {}
        for r in range(1, len(inact_inc) + 1):
            for combo in itertools.combinations(inact_inc, r):
                v = folded(frozenset(combo))
                entries[frozenset(combo)] = NEG_INF if v is NEG_INF else v - base
        valuations[a] = Valuation(entries, NEG_INF)
    return Market(market.agents, inactive, valuations, name=f"{market.name}|reduced")


def extend_ne_to_ce(market: Market, profile: OfferProfile, epsilon) -> Arrangement:
    """Extend an epsilon-tight Nash equilibrium's outcome to an exact
    competitive equilibrium with integral prices on the inactive trades.

    Guaranteed to succeed for fully substitutable agents when epsilon is
    strictly below 1/(2*max_degree - 2) (any epsilon when max_degree is 1):
    the inactive trades can then be priced at the floor of the seller's offer
    or the ceiling of the buyer's offer so that everyone rejects them.  The
    candidate price combinations are searched exhaustively and the spliced
    arrangement is verified exactly.
    """
    eps = as_fraction(epsilon)
    report = is_nash(market, profile, eps)
    if report.verdict != EPS_TIGHT_NASH:
        raise ValidationError(f"offers are not an epsilon-tight Nash equilibrium: {report.verdict}")
    delta = market.max_degree
    bound = None if delta <= 1 else Fraction(1, 2 * delta - 2)
    within_bound = bound is None or eps < bound
    outcome = outcome_of_offers(market, profile)
    inactive = [t for t in market.trades if t.id not in outcome.allocation]
    if not inactive:
        arrangement = Arrangement(dict(outcome.prices), outcome.allocation)
        if not is_competitive_equilibrium(market, arrangement, 0):
            raise ExtensionFailedError("all trades active but the outcome is not an equilibrium")
        return arrangement

    reduced = _reduced_market(market, profile, outcome)
    candidates: List[List[Fraction]] = []
    for t in inactive:
        ask = profile.offer(t.seller, t.id)
        bid = profile.offer(t.buyer, t.id)
        opts = {math.floor(ask), math.ceil(bid), math.floor(bid + eps), math.ceil(ask - eps)}
        candidates.append(sorted(Fraction(x) for x in opts))

    for combo in itertools.product(*candidates):
        reduced_prices = {t.id: q for t, q in zip(inactive, combo)}
        # Every agent must (weakly) demand the empty bundle in the sub-market.
        if any(reduced.indirect_utility(a, reduced_prices) != 0 for a in reduced.agents):
            continue
        prices = dict(outcome.prices)
        prices.update(reduced_prices)
        arrangement = Arrangement(prices, outcome.allocation)
        if is_competitive_equilibrium(market, arrangement, 0):
            return arrangement

    if within_bound:
        raise ExtensionFailedError(
            "no integral extension found although epsilon is below the guarantee "
            "threshold; check that all agents are fully substitutable")
    raise ExtensionInfeasibleError(
        f"epsilon = {eps} is not below 1/(2*max_degree - 2) = {bound}; "
        "no candidate integral prices make every agent reject the inactive trades")


# -- solving for competitive equilibria ---------------------------------------


def _scaled_tables(market: Market):
    """Per-agent (slot trade indices, chi, finite (mask, scaled value) list)
    plus the common denominator used for scaling."""
    denoms = [1]
    for a in market.agents:
        for v in market.mask_table(a)[2]:
            if is_finite(v):
                denoms.append(v.denominator)
    scale = math.lcm(*denoms)
    index = {t.id: k for k, t in enumerate(market.trades)}
    tables = []
    for a in market.agents:
        inc, signs, values = market.mask_table(a)
        slots = [index[w] for w in inc]
        finite = [(mask, int(v * scale)) for mask, v in enumerate(values) if is_finite(v)]
        tables.append((slots, signs, finite))
    return tables, scale


def _lyapunov_scaled(tables, prices: List[int]) -> int:
    total = 0
    for slots, signs, finite in tables:
        best = None
        for mask, v in finite:
            u = v
            for j, w in enumerate(slots):
                if mask >> j & 1:
                    u -= signs[j] * prices[w]
            if best is None or u > best:
                best = u
        total += best
    return total


def _descend_lyapunov(market: Market, max_steps: int = 20000) -> Optional[Dict[str, Fraction]]:
    """Integer steepest descent of the aggregate indirect utility.

    Moves p by +/- one lattice unit on a subset of coordinates, taking the
    best improving move, until the market value is reached (success) or no
    move improves (stall: returns None so the caller can fall back).
    """
    m = market.num_trades
    if m == 0:
        return {}
    if m > 16 or sum(4 ** len(market.omega(a)) for a in market.agents) > 10**7:
        return None
    tables, scale = _scaled_tables(market)
    target = int(market.market_value() * scale)
    unit = scale  # one integral price step in scaled units
    p = [0] * m
    for _ in range(max_steps):
        base = _lyapunov_scaled(tables, p)
        if base == target:
            return {t.id: Fraction(p[k], scale) for k, t in enumerate(market.trades)}
        best_val, best_move = base, None
        for sigma in (1, -1):
            # Per-agent indirect utility for every sub-shift of its slots.
            per_agent = []
            for slots, signs, finite in tables:
                d = len(slots)
                table = [0] * (1 << d)
                for sub in range(1 << d):
                    best = None
                    for mask, v in finite:
                        u = v
                        for j, w in enumerate(slots):
                            if mask >> j & 1:
                                shift = sigma * unit if sub >> j & 1 else 0
                                u -= signs[j] * (p[w] + shift)
                        if best is None or u > best:
                            best = u
                    table[sub] = best
                per_agent.append((slots, table))
            for s_mask in range(1, 1 << m):
                total = 0
                for slots, table in per_agent:
                    sub = 0
                    for j, w in enumerate(slots):
                        if s_mask >> w & 1:
                            sub |= 1 << j
                    total += table[sub]
                if total < best_val:
                    best_val, best_move = total, (sigma, s_mask)
        if best_move is None:
            return None  # integer local minimum above the market value
        sigma, s_mask = best_move
        for w in range(m):
            if s_mask >> w & 1:
                p[w] += sigma * unit
    return None


def _solve_swd_lp(market: Market) -> Tuple[Fraction, Dict[str, Fraction]]:
    """Exact simplex on the welfare dual: minimize the sum of agents'
    indirect utilities over (utility, price) variables."""
    n, m = market.num_agents, market.num_trades
    index = {t.id: n + k for k, t in enumerate(market.trades)}
    prog = lp.LinearProgram(n + m, free=list(range(n, n + m)))
    for i, a in enumerate(market.agents):
        inc, signs, values = market.mask_table(a)
        for mask, v in enumerate(values):
            if not is_finite(v) or mask == 0:
                continue
            coeffs = {i: Fraction(1)}
            for j, w in enumerate(inc):
                if mask >> j & 1:
                    col = index[w]
                    coeffs[col] = coeffs.get(col, Fraction(0)) + signs[j]
            prog.add_constraint(coeffs, ">=", v)
    result = prog.minimize([1] * n + [0] * m)
    if result.status != lp.OPTIMAL:
        raise RuntimeError(f"welfare dual solve failed: {result.status}")
    prices = {t.id: result.x[index[t.id]] for t in market.trades}
    return result.value, prices


def solve_ce_prices(market: Market) -> Arrangement:
    """Exact competitive-equilibrium prices plus a supporting efficient
    allocation, verified before returning.

    Raises ``NoCompetitiveEquilibriumError`` when the minimum aggregate
    indirect utility exceeds the market value, which certifies that no
    equilibrium exists (as can happen without full substitutability).
    """
    prices = _descend_lyapunov(market)
    if prices is None:
        value, prices = _solve_swd_lp(market)
        if value > market.market_value():
            raise NoCompetitiveEquilibriumError(
                f"minimum aggregate indirect utility {value} exceeds market value "
                f"{market.market_value()}; no competitive equilibrium exists")
    for allocation in market.efficient_allocations():
        arrangement = Arrangement(prices, allocation)
        if is_competitive_equilibrium(market, arrangement, 0):
            return arrangement
    raise RuntimeError("equilibrium prices found but no efficient allocation verified")


def ce_prices_support_every_efficient_allocation(market: Market,
                                                 arrangement: Arrangement) -> bool:
    """At equilibrium prices every efficient allocation is also supported."""
    return all(is_competitive_equilibrium(market, Arrangement(arrangement.prices, alloc), 0)
               for alloc in market.efficient_allocations())


# -- unimodularity test utility ------------------------------------------------


def _int_det(rows: List[List[int]]) -> int:
    # Bareiss fraction-free elimination; exact for integer matrices.
    a = [row[:] for row in rows]
    n = len(a)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[-1][-1]


def unimodularity_check(rows: Sequence[Sequence[int]], max_order: Optional[int] = None,
                        submatrix_cap: int = 500000) -> bool:
    """Exhaustively verify that every square submatrix (up to ``max_order``)
    has determinant in {0, +1, -1}.

    Precondition: each row holds at most one +1, at most one -1, and zeros
    elsewhere (the shape of substitutes demand-boundary normals); other rows
    raise ``ValidationError``.
    """
    mat = [list(map(int, r)) for r in rows]
    if not mat:
        return True
    width = len(mat[0])
    for r in mat:
        if len(r) != width:
            raise ValidationError("ragged matrix")
        if sorted(r).count(0) < width - 2 or any(x not in (-1, 0, 1) for x in r):
            raise ValidationError(f"row {r} is not a substitutes row")
        if r.count(1) > 1 or r.count(-1) > 1:
            raise ValidationError(f"row {r} is not a substitutes row")
    order = min(len(mat), width)
    if max_order is not None:
        order = min(order, max_order)
    total = sum(math.comb(len(mat), k) * math.comb(width, k) for k in range(1, order + 1))
    if total > submatrix_cap:
        raise SizeCapError(f"{total} submatrices exceed the cap {submatrix_cap}")
    for k in range(1, order + 1):
        for rsel in itertools.combinations(range(len(mat)), k):
            for csel in itertools.combinations(range(width), k):
                d = _int_det([[mat[i][j] for j in csel] for i in rsel])
                if d not in (-1, 0, 1):
                    return False
    return True
