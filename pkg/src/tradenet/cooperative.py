"""The cooperative market game: core, essential agents, and fair imputations.

The characteristic function maps each coalition to the maximum welfare it can
generate with internal trades only.  Core imputations are nonnegative utility
vectors that pay the grand coalition exactly its value and every coalition at
least its own.  On top of the core sit three selections -- leximin, leximax,
and minimum variance -- plus ``implement_imputation``, which realizes any
core imputation as prices on any efficient trade set, transferring utility
along paths of active trades.

Everything is exact: the iterative leximin/leximax procedures run on the
rational simplex, and the minimum-variance point is found by enumerating
candidate active sets of core constraints and solving the equality-
constrained quadratic optimum on each.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple

from . import lp
from .game import Arrangement, MarketOutcome, is_competitive_equilibrium, solve_ce_prices
from .market import Bundle, Market, SizeCapError, ValidationError
from .values import NEG_INF, as_fraction, is_finite

MAX_COALITION_AGENTS = 10

Imputation = Dict[str, Fraction]


class EmptyCoreError(RuntimeError):
    pass


@dataclass(frozen=True)
class CharacteristicFunction:
    players: Tuple[str, ...]
    values: Mapping[FrozenSet[str], Fraction]

    def of(self, coalition) -> Fraction:
        return self.values[frozenset(coalition)]

    @property
    def grand(self) -> Fraction:
        return self.values[frozenset(self.players)]

    def coalitions(self):
        """All coalitions in increasing size, then lexicographic player order."""
        order = {p: i for i, p in enumerate(self.players)}
        out = sorted(self.values, key=lambda c: (len(c), sorted(order[p] for p in c)))
        return out


def characteristic_function(market: Market) -> CharacteristicFunction:
    """Brute-force coalition values: max welfare over internal trade subsets."""
    if market.num_agents > MAX_COALITION_AGENTS:
        raise SizeCapError(
            f"{market.num_agents} agents exceed the coalition sweep cap "
            f"{MAX_COALITION_AGENTS}")
    ids = [t.id for t in market.trades]
    welfare = market._welfare_by_allocation()
    values: Dict[FrozenSet[str], Fraction] = {}
    agents = market.agents
    for cmask in range(1 << len(agents)):
        coalition = frozenset(agents[i] for i in range(len(agents)) if cmask >> i & 1)
        tmask = 0
        for k, t in enumerate(market.trades):
            if t.seller in coalition and t.buyer in coalition:
                tmask |= 1 << k
        best = Fraction(0)
        sub = tmask
        while True:
            w = welfare[sub]
            if is_finite(w) and w > best:
                best = w
            if sub == 0:
                break
            sub = (sub - 1) & tmask
        values[coalition] = best
    return CharacteristicFunction(tuple(agents), values)


class CoreCheck(NamedTuple):
    ok: bool
    violation: Optional[tuple]  # ("nonnegativity", agent) | ("efficiency",) | ("coalition", set)


def is_core_imputation(cf: CharacteristicFunction, x: Mapping[str, object]) -> CoreCheck:
    """Nonnegativity, exact grand-coalition split, and every coalition
    inequality; reports the first violation in (size, lexicographic) order."""
    vec = {p: as_fraction(x[p]) for p in cf.players}
    for p in cf.players:
        if vec[p] < 0:
            return CoreCheck(False, ("nonnegativity", p))
    if sum(vec.values()) != cf.grand:
        return CoreCheck(False, ("efficiency",))
    for coalition in cf.coalitions():
        if len(coalition) in (0, len(cf.players)):
            continue
        if sum(vec[p] for p in coalition) < cf.of(coalition):
            return CoreCheck(False, ("coalition", coalition))
    return CoreCheck(True, None)


def _core_lp(cf: CharacteristicFunction) -> lp.LinearProgram:
    n = len(cf.players)
    index = {p: i for i, p in enumerate(cf.players)}
    prog = lp.LinearProgram(n)
    prog.add_constraint([1] * n, "==", cf.grand)
    for coalition in cf.coalitions():
        if len(coalition) in (0, len(cf.players)):
            continue
        w = cf.of(coalition)
        if w <= 0:
            continue  # implied by x >= 0
        prog.add_constraint({index[p]: 1 for p in coalition}, ">=", w)
    return prog


def core_nonempty(cf: CharacteristicFunction) -> bool:
    prog = _core_lp(cf)
    return prog.minimize([0] * len(cf.players)).status == lp.OPTIMAL


def _solve_square(rows: List[List[Fraction]], rhs: List[Fraction]) -> Optional[List[Fraction]]:
    n = len(rows)
    a = [rows[i][:] + [rhs[i]] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        if piv is None:
            return None
        a[col], a[piv] = a[piv], a[col]
        pv = a[col][col]
        a[col] = [x / pv for x in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return [a[i][n] for i in range(n)]


def core_vertices(cf: CharacteristicFunction, max_agents: int = 5) -> List[Imputation]:
    """Exact vertex enumeration of the core polytope (small games only)."""
    n = len(cf.players)
    if n > max_agents:
        raise SizeCapError(f"vertex enumeration capped at {max_agents} agents")
    index = {p: i for i, p in enumerate(cf.players)}
    ineqs: List[Tuple[List[Fraction], Fraction]] = []
    for p in cf.players:
        row = [Fraction(0)] * n
        row[index[p]] = Fraction(1)
        ineqs.append((row, Fraction(0)))
    for coalition in cf.coalitions():
        if len(coalition) in (0, len(cf.players)):
            continue
        w = cf.of(coalition)
        if w <= 0:
            continue
        row = [Fraction(0)] * n
        for p in coalition:
            row[index[p]] = Fraction(1)
        ineqs.append((row, w))
    eq_row = [Fraction(1)] * n
    vertices: List[Imputation] = []
    seen: Set[Tuple[Fraction, ...]] = set()
    for combo in itertools.combinations(range(len(ineqs)), n - 1):
        rows = [eq_row] + [ineqs[i][0] for i in combo]
        rhs = [cf.grand] + [ineqs[i][1] for i in combo]
        x = _solve_square(rows, rhs)
        if x is None:
            continue
        if any(sum(r * v for r, v in zip(row, x)) < b for row, b in ineqs):
            continue
        key = tuple(x)
        if key not in seen:
            seen.add(key)
            vertices.append({p: x[index[p]] for p in cf.players})
    vertices.sort(key=lambda v: [v[p] for p in cf.players])
    return vertices


def essential_agents(market: Market) -> FrozenSet[str]:
    """Agents involved in every efficient trade set.

    Computed twice -- as the intersection of involved-agent sets over all
    efficient allocations, and by the removal test (dropping the agent
    strictly lowers the market value) -- and cross-checked.
    """
    efficient = market.efficient_allocations()
    involved_everywhere = set(market.agents)
    for alloc in efficient:
        involved = set()
        for w in alloc:
            t = market.trade_by_id[w]
            involved.add(t.seller)
            involved.add(t.buyer)
        involved_everywhere &= involved
    value = market.market_value()
    by_removal = {a for a in market.agents
                  if market.restricted(set(market.agents) - {a}).market_value() < value}
    if involved_everywhere != by_removal:
        raise RuntimeError(
            f"essential-agent computations disagree: intersection gives "
            f"{sorted(involved_everywhere)}, removal test gives {sorted(by_removal)}")
    return frozenset(by_removal)


# -- leximin / leximax ----------------------------------------------------------


def _lexi_imputation(cf: CharacteristicFunction, maximize_minimum: bool) -> Imputation:
    n = len(cf.players)
    index = {p: i for i, p in enumerate(cf.players)}
    if not core_nonempty(cf):
        raise EmptyCoreError("the core is empty")
    fixed: Dict[str, Fraction] = {}
    free = list(cf.players)
    coalition_rows = []
    for coalition in cf.coalitions():
        if len(coalition) in (0, len(cf.players)):
            continue
        w = cf.of(coalition)
        if w <= 0:
            continue
        coalition_rows.append(({index[p]: Fraction(1) for p in coalition}, w))

    def base_program() -> lp.LinearProgram:
        # variables: x_0..x_{n-1} >= 0, t free at index n
        prog = lp.LinearProgram(n + 1, free=[n])
        prog.add_constraint({i: 1 for i in range(n)}, "==", cf.grand)
        for coeffs, w in coalition_rows:
            prog.add_constraint(dict(coeffs), ">=", w)
        for p, v in fixed.items():
            prog.add_constraint({index[p]: 1}, "==", v)
        return prog

    while free:
        prog = base_program()
        sense = ">=" if maximize_minimum else "<="
        for p in free:
            prog.add_constraint({index[p]: 1, n: -1}, sense, 0)
        objective = [0] * n + [1]
        result = prog.maximize(objective) if maximize_minimum else prog.minimize(objective)
        if result.status != lp.OPTIMAL:
            raise RuntimeError(f"bound solve failed: {result.status}")
        t_star = result.value
        pinned = []
        for p in free:
            probe = base_program()
            for q in free:
                probe.add_constraint({index[q]: 1}, sense, t_star)
            obj = [0] * (n + 1)
            obj[index[p]] = 1
            extreme = probe.maximize(obj) if maximize_minimum else probe.minimize(obj)
            if extreme.status != lp.OPTIMAL:
                raise RuntimeError(f"pinning solve failed: {extreme.status}")
            if extreme.value == t_star:
                pinned.append(p)
        if not pinned:
            raise RuntimeError("no player pinned at the optimal bound; degenerate game")
        for p in pinned:
            fixed[p] = t_star
            free.remove(p)
    check = is_core_imputation(cf, fixed)
    if not check.ok:
        raise RuntimeError(f"lexicographic imputation failed core verification: {check}")
    return dict(fixed)


def leximin_imputation(cf: CharacteristicFunction) -> Imputation:
    """The unique core imputation maximizing utilities in ascending
    lexicographic order: repeatedly raise the common floor of the still-free
    players as far as the core allows, pin the players stuck at the floor,
    and recurse (at most one round per player)."""
    return _lexi_imputation(cf, maximize_minimum=True)


def leximax_imputation(cf: CharacteristicFunction) -> Imputation:
    """The core imputation minimizing utilities in descending lexicographic
    order: the mirror procedure, lowering a common ceiling."""
    return _lexi_imputation(cf, maximize_minimum=False)


# -- minimum variance ------------------------------------------------------------


def minvar_imputation(cf: CharacteristicFunction, max_agents: int = 6,
                      system_cap: int = 200000) -> Imputation:
    """The unique core imputation of minimum utility variance.

    Since all imputations share the same mean, this minimizes the sum of
    squares.  For each candidate set of core constraints treated as
    equalities (at most n-1 of them plus the grand-coalition equality), the
    equality-constrained minimizer is computed exactly from its stationarity
    system; every feasible candidate bounds the optimum from above and the
    true optimum's own tight set is among the candidates, so the best
    feasible candidate is the answer.
    """
    n = len(cf.players)
    if n > max_agents:
        raise SizeCapError(f"minimum-variance solve capped at {max_agents} agents")
    if not core_nonempty(cf):
        raise EmptyCoreError("the core is empty")
    index = {p: i for i, p in enumerate(cf.players)}

    # Prune coalition constraints implied by x >= 0 and stronger subsets.
    best_sub: Dict[FrozenSet[str], Fraction] = {}
    for coalition in cf.coalitions():
        best = Fraction(0)
        for p in coalition:
            smaller = coalition - {p}
            cand = max(cf.of(smaller), best_sub.get(smaller, Fraction(0)))
            if cand > best:
                best = cand
        best_sub[coalition] = best
    rows: List[List[Fraction]] = []
    rhs: List[Fraction] = []
    for coalition in cf.coalitions():
        if len(coalition) in (0, len(cf.players)):
            continue
        w = cf.of(coalition)
        if w <= 0 or w <= best_sub[coalition]:
            continue
        row = [Fraction(0)] * n
        for p in coalition:
            row[index[p]] = Fraction(1)
        rows.append(row)
        rhs.append(w)
    for p in cf.players:
        row = [Fraction(0)] * n
        row[index[p]] = Fraction(1)
        rows.append(row)
        rhs.append(Fraction(0))

    total = sum(math.comb(len(rows), k) for k in range(0, n))
    if total > system_cap:
        raise SizeCapError(f"{total} candidate active sets exceed the cap {system_cap}")

    eq_row = [Fraction(1)] * n

    def affine_min(sel: Sequence[int]) -> Optional[List[Fraction]]:
        # minimize sum x_i^2 subject to eq_row.x = grand and rows[sel].x = rhs
        b_rows = [eq_row] + [rows[i] for i in sel]
        b_rhs = [cf.grand] + [rhs[i] for i in sel]
        k = len(b_rows)
        size = n + k
        mat = [[Fraction(0)] * size for _ in range(size)]
        vec = [Fraction(0)] * size
        for i in range(n):
            mat[i][i] = Fraction(2)
            for j in range(k):
                mat[i][n + j] = b_rows[j][i]
        for j in range(k):
            for i in range(n):
                mat[n + j][i] = b_rows[j][i]
            vec[n + j] = b_rhs[j]
        sol = _solve_square(mat, vec)
        if sol is None:
            return None
        return sol[:n]

    best_x: Optional[List[Fraction]] = None
    best_obj: Optional[Fraction] = None
    for k in range(0, n):
        for sel in itertools.combinations(range(len(rows)), k):
            x = affine_min(sel)
            if x is None:
                continue
            if any(x[i] < 0 for i in range(n)):
                continue
            candidate = {p: x[index[p]] for p in cf.players}
            if not is_core_imputation(cf, candidate).ok:
                continue
            obj = sum(v * v for v in x)
            if best_obj is None or obj < best_obj:
                best_obj, best_x = obj, x
    if best_x is None:
        raise RuntimeError("no feasible candidate found despite nonempty core")
    return {p: best_x[index[p]] for p in cf.players}


def max_core_utility(cf: CharacteristicFunction, agent: str) -> Fraction:
    """The largest utility the agent obtains anywhere in the core (by LP)."""
    if agent not in cf.players:
        raise ValidationError(f"unknown agent {agent!r}")
    prog = _core_lp(cf)
    if not core_nonempty(cf):
        raise EmptyCoreError("the core is empty")
    index = {p: i for i, p in enumerate(cf.players)}
    obj = [0] * len(cf.players)
    obj[index[agent]] = 1
    result = prog.maximize(obj)
    if result.status != lp.OPTIMAL:
        raise RuntimeError(f"core utility solve failed: {result.status}")
    return result.value


# -- implementing imputations as outcomes -----------------------------------------


def _components(market: Market, allocation: Bundle) -> List[Set[str]]:
    parent = {a: a for a in market.agents}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for w in allocation:
        t = market.trade_by_id[w]
        ra, rb = find(t.seller), find(t.buyer)
        if ra != rb:
            parent[ra] = rb
    groups: Dict[str, Set[str]] = {}
    for a in market.agents:
        groups.setdefault(find(a), set()).add(a)
    return list(groups.values())


def _shortest_active_path(market: Market, allocation: Bundle,
                          start: str, goal: str) -> List[Tuple[str, str, str]]:
    """BFS path through active trades; edges explored in trade-id order.
    Returns [(trade_id, from_agent, to_agent), ...]."""
    adjacency: Dict[str, List[Tuple[str, str]]] = {a: [] for a in market.agents}
    for w in sorted(allocation):
        t = market.trade_by_id[w]
        adjacency[t.seller].append((w, t.buyer))
        adjacency[t.buyer].append((w, t.seller))
    for a in adjacency:
        adjacency[a].sort()
    prev: Dict[str, Tuple[str, str]] = {}
    queue = [start]
    seen = {start}
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        for w, other in adjacency[node]:
            if other not in seen:
                seen.add(other)
                prev[other] = (node, w)
                queue.append(other)
    if goal not in seen:
        raise RuntimeError(f"no active path between {start!r} and {goal!r}")
    path = []
    node = goal
    while node != start:
        frm, w = prev[node]
        path.append((w, frm, node))
        node = frm
    path.reverse()
    return path


def implement_imputation(market: Market, allocation, x: Mapping[str, object],
                         cf: Optional[CharacteristicFunction] = None) -> MarketOutcome:
    """Realize a core imputation as a market outcome on a given efficient
    trade set.

    Starts from competitive-equilibrium prices supporting the allocation and
    repeatedly shifts prices along a path of active trades between an
    underpaid and an overpaid agent of the same component -- raising trades
    pointing toward the overpaid agent, lowering the others -- which
    transfers utility between the endpoints only.  Each round settles at
    least one agent, so the loop runs at most once per agent.
    """
    alloc = market.check_allocation(allocation)
    target = {a: as_fraction(x[a]) for a in market.agents}
    if market.social_welfare(alloc) != market.market_value():
        raise ValidationError("allocation is not efficient")
    cf = cf or characteristic_function(market)
    check = is_core_imputation(cf, target)
    if not check.ok:
        raise ValidationError(f"input is not a core imputation: {check.violation}")
    reference = solve_ce_prices(market)
    prices = dict(reference.prices)
    if not is_competitive_equilibrium(market, Arrangement(prices, alloc), 0):
        raise ValidationError(
            "equilibrium prices do not support the given allocation; "
            "implementation requires fully substitutable agents")

    def utilities() -> Dict[str, Fraction]:
        return {a: market.utility(a, market.bundle_of(a, alloc), prices)
                for a in market.agents}

    components = _components(market, alloc)
    u = utilities()
    for comp in components:
        if sum(u[a] for a in comp) != sum(target[a] for a in comp):
            raise RuntimeError(
                "component utility sums disagree with the imputation; this "
                "contradicts core feasibility and indicates an internal error")

    order = {a: i for i, a in enumerate(market.agents)}
    for _ in range(2 * market.num_agents + 1):
        u = utilities()
        underpaid = sorted((a for a in market.agents if u[a] < target[a]), key=order.get)
        if not underpaid:
            break
        overpaid = sorted((a for a in market.agents if u[a] > target[a]), key=order.get)
        comp_of = {a: k for k, comp in enumerate(components) for a in comp}
        pair = None
        for i in underpaid:
            partners = [l for l in overpaid if comp_of[l] == comp_of[i]]
            if partners:
                pair = (i, partners[0])
                break
        if pair is None:
            raise RuntimeError("no transfer pair found; internal error")
        i, l = pair
        delta = min(target[i] - u[i], u[l] - target[l])
        for w, frm, _to in _shortest_active_path(market, alloc, i, l):
            t = market.trade_by_id[w]
            if t.seller == frm:   # forward: points toward the overpaid agent
                prices[w] += delta
            else:
                prices[w] -= delta
    u = utilities()
    if any(u[a] != target[a] for a in market.agents):
        raise RuntimeError("path transfers did not reach the target imputation")
    return MarketOutcome({w: prices[w] for w in alloc}, alloc)


# -- core of market outcomes --------------------------------------------------------


def outcome_utilities(market: Market, outcome: MarketOutcome) -> Dict[str, object]:
    return {a: market.utility(a, market.bundle_of(a, outcome.allocation), outcome.prices)
            for a in market.agents}


def is_core_outcome(market: Market, outcome: MarketOutcome,
                    cf: Optional[CharacteristicFunction] = None) -> bool:
    """Core membership via the utility-profile criterion: the outcome's
    utility vector must be a core imputation of the cooperative game."""
    u = outcome_utilities(market, outcome)
    if any(not is_finite(v) for v in u.values()):
        return False
    cf = cf or characteristic_function(market)
    return is_core_imputation(cf, u).ok


def find_blocking_outcome(market: Market, outcome: MarketOutcome,
                          max_agents: int = 5) -> Optional[Bundle]:
    """Literal brute-force search for a blocking outcome (oracle use only).

    A trade set blocks iff prices on it can weakly improve every involved
    agent and strictly improve one; since prices transfer utility freely
    within each connected component, that holds iff no component's welfare
    falls below its members' current utility total and some component's
    welfare strictly exceeds it.
    """
    if market.num_agents > max_agents:
        raise SizeCapError(f"blocking-search oracle capped at {max_agents} agents")
    u = outcome_utilities(market, outcome)
    ids = [t.id for t in market.trades]
    m = len(ids)
    for mask in range(1, 1 << m):
        psi = frozenset(ids[k] for k in range(m) if mask >> k & 1)
        involved = set()
        for w in psi:
            t = market.trade_by_id[w]
            involved.add(t.seller)
            involved.add(t.buyer)
        sub = market.restricted(involved) if involved != set(market.agents) else market
        comps = [c & involved for c in _components(sub, psi)]
        comps = [c for c in comps if c]
        ok_all = True
        strict = False
        for comp in comps:
            welfare = Fraction(0)
            feasible = True
            for a in comp:
                v = market.valuations[a].value(market.bundle_of(a, psi))
                if not is_finite(v):
                    feasible = False
                    break
                welfare += v
            if not feasible:
                ok_all = False
                break
            current = sum((u[a] for a in comp if is_finite(u[a])), Fraction(0))
            if any(not is_finite(u[a]) for a in comp):
                strict = True  # any finite split beats -inf
                continue
            if welfare < current:
                ok_all = False
                break
            if welfare > current:
                strict = True
        if ok_all and strict:
            return psi
    return None


def is_core_outcome_oracle(market: Market, outcome: MarketOutcome,
                           max_agents: int = 5) -> bool:
    return find_blocking_outcome(market, outcome, max_agents) is None


# -- taxed market ----------------------------------------------------------------


class TaxedCeReport(NamedTuple):
    is_taxed_ce: bool
    is_original_ce: bool
    allocation_efficient: bool
    original_ce_implies_taxed_ce: bool
    taxed_allocation_efficient: bool


def taxed_ce_check(market: Market, arrangement: Arrangement, alpha) -> TaxedCeReport:
    """Check the tax-and-redistribute utility's equilibrium condition.

    With rate alpha, each agent's utility becomes
    (alpha/n) * welfare(allocation) + (1 - alpha) * quasilinear utility, and
    the equilibrium condition compares the arrangement against every
    alternative allocation.  At alpha = 0 this is the ordinary equilibrium
    condition; at alpha = 1 it holds (for any prices) exactly when the
    allocation is efficient.
    """
    a_rate = as_fraction(alpha)
    if a_rate < 0 or a_rate > 1:
        raise ValidationError("alpha must lie in [0, 1]")
    n = market.num_agents
    ids = [t.id for t in market.trades]
    welfare = market._welfare_by_allocation()
    prices = arrangement.prices

    def taxed(agent: str, mask: int):
        w = welfare[mask]
        if not is_finite(w):
            return NEG_INF
        alloc = frozenset(ids[k] for k in range(len(ids)) if mask >> k & 1)
        u = market.utility(agent, market.bundle_of(agent, alloc), prices)
        if not is_finite(u):
            return NEG_INF
        return a_rate / n * w + (1 - a_rate) * u

    base_mask = 0
    for k, w in enumerate(ids):
        if w in arrangement.allocation:
            base_mask |= 1 << k
    is_taxed = True
    for agent in market.agents:
        mine = taxed(agent, base_mask)
        if not is_finite(mine):
            is_taxed = False
            break
        for mask in range(1 << len(ids)):
            other = taxed(agent, mask)
            if is_finite(other) and other > mine:
                is_taxed = False
                break
        if not is_taxed:
            break
    is_ce0 = is_competitive_equilibrium(market, arrangement, 0)
    sw = market.social_welfare(arrangement.allocation)
    efficient = is_finite(sw) and sw == market.market_value()
    return TaxedCeReport(
        is_taxed_ce=is_taxed,
        is_original_ce=is_ce0,
        allocation_efficient=efficient,
        original_ce_implies_taxed_ce=(not is_ce0) or is_taxed,
        taxed_allocation_efficient=(not is_taxed) or efficient,
    )
