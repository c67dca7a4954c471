"""Decentralized trading dynamics and their diagnostics.

Two processes are implemented:

* Offer dynamics: a uniformly random (or scripted) unsatisfied agent is
  activated, matches the standing counterpart offer on every trade she
  demands at those offers, steps every rejected offer by epsilon in her
  favorable direction, and satisfied agents leave the pool until an offer
  they face changes.  Terminates exactly when everyone is satisfied, which
  makes the final offers an epsilon-tight Nash equilibrium.

* Price dynamics (stochastic clock): one central price per trade; a
  uniformly random agent reports her demand and every incident trade she
  rejects moves epsilon against her.  The time-averaged prices converge to
  competitive-equilibrium prices for substitutable agents when the step is
  R * sqrt(2m / (T * max_degree)).

Diagnostics: ``potential_phi`` counts the offer coordinates best responses
would change (weakly decreasing along offer-dynamics steps on two-agent
markets with at most three trades and substitutable agents), and
``lyapunov_value`` / ``ce_gap`` measure the distance of clock prices from
equilibrium via the aggregate indirect utility.

Randomness: agent selection streams are precomputed with ``random.Random``
(CPython's Mersenne Twister) -- uniform choice from a k-element pool uses a
draw from [0, lcm(1..n)) reduced mod k, which is exactly uniform -- so runs
are reproducible bit-for-bit on both kernel backends.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import engine, lp
from .game import (EPS_TIGHT_NASH, Arrangement, OfferProfile, faced_prices, is_nash,
                   outcome_of_offers, solve_ce_prices, validate_profile)
from .market import Market, SizeCapError, ValidationError
from .values import NEG_INF, as_fraction, is_finite

TRACE_ROUND_LIMIT = 200_000
INT64_GUARD = 1 << 60


class SchedulerError(ValidationError):
    """A scripted schedule activated an agent the algorithm does not allow."""


@dataclass(frozen=True)
class Scheduler:
    """Seeded-uniform-random or scripted activation order."""

    kind: str = "random"                       # "random" | "scripted"
    sequence: Tuple[str, ...] = ()

    @staticmethod
    def random_order() -> "Scheduler":
        return Scheduler("random", ())

    @staticmethod
    def scripted(sequence: Sequence[str]) -> "Scheduler":
        return Scheduler("scripted", tuple(sequence))

    def validate(self, market: Market) -> None:
        if self.kind not in ("random", "scripted"):
            raise ValidationError(f"unknown scheduler kind {self.kind!r}")
        unknown = set(self.sequence) - set(market.agents)
        if unknown:
            raise ValidationError(f"schedule names unknown agents: {sorted(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one dynamics run.

    ``epsilon=None`` selects the convergence-rate step
    R * sqrt(2m / (rounds * max_degree)) for the price dynamics (rounded to
    an exact rational); the offer dynamics requires an explicit step.
    ``rounds`` caps the offer dynamics and is the exact horizon T of the
    price dynamics.  ``value_bound`` is the price-dynamics bound R; when
    omitted it is the largest absolute valuation.
    """

    epsilon: Optional[Fraction] = None
    rounds: int = 10**6
    seed: int = 0
    value_bound: Optional[Fraction] = None
    initial_offers: Optional[Mapping[str, Mapping[str, Fraction]]] = None
    initial_prices: Optional[Mapping[str, Fraction]] = None


@dataclass
class TraceRecord:
    round: int
    agent: str
    demanded: frozenset
    offers: Optional[Dict[str, Dict[str, Fraction]]] = None
    prices: Optional[Dict[str, Fraction]] = None
    unsatisfied: Optional[frozenset] = None
    phi: Optional[int] = None
    lyapunov: Optional[Fraction] = None


@dataclass
class DynamicsTrace:
    records: List[TraceRecord] = field(default_factory=list)


@dataclass
class OfferDynamicsResult:
    trace: DynamicsTrace
    profile: OfferProfile
    converged: bool
    rounds: int
    status: str
    phi: Optional[List[int]] = None          # phi after 0..rounds rounds
    tight_nash_verified: Optional[bool] = None


@dataclass
class PriceDynamicsResult:
    trace: DynamicsTrace
    final_prices: Dict[str, Fraction]
    average_prices: Dict[str, Fraction]
    rounds: int
    epsilon: Fraction
    lyapunov: Optional[List[Fraction]] = None


# -- shared scaling ------------------------------------------------------------


def _scale_for(market: Market, extra_values) -> int:
    denoms = [1]
    for a in market.agents:
        for v in market.mask_table(a)[2]:
            if is_finite(v):
                denoms.append(v.denominator)
    for q in extra_values:
        denoms.append(as_fraction(q).denominator)
    return math.lcm(*denoms)


def _market_arrays(market: Market, scale: int):
    """Integer kernel arrays; requires all valuations finite."""
    n = market.num_agents
    maxdeg = max(1, market.max_degree)
    agent_index = {a: i for i, a in enumerate(market.agents)}
    trade_index = {t.id: k for k, t in enumerate(market.trades)}
    deg = np.zeros(n, np.int64)
    inc_chi = np.zeros((n, maxdeg), np.int64)
    slot_trade = np.zeros((n, maxdeg), np.int64)
    counterpart = np.zeros((n, maxdeg), np.int64)
    counterpart_slot = np.zeros((n, maxdeg), np.int64)
    val = np.zeros((n, 1 << maxdeg), np.int64)
    slot_of = {}
    for i, a in enumerate(market.agents):
        inc, signs, values = market.mask_table(a)
        deg[i] = len(inc)
        for j, w in enumerate(inc):
            slot_of[(a, w)] = j
            inc_chi[i, j] = signs[j]
            slot_trade[i, j] = trade_index[w]
        for mask, v in enumerate(values):
            if not is_finite(v):
                raise ValidationError(
                    f"agent {a!r} has an infeasible (-inf) bundle; the dynamics "
                    "require finite valuations on all bundles")
            val[i, mask] = int(v * scale)
    for i, a in enumerate(market.agents):
        for j, w in enumerate(market.omega(a)):
            t = market.trade_by_id[w]
            other = t.seller if t.buyer == a else t.buyer
            counterpart[i, j] = agent_index[other]
            counterpart_slot[i, j] = slot_of[(other, w)]
    return deg, inc_chi, slot_trade, counterpart, counterpart_slot, val


def _check_magnitude(scale: int, bound: Fraction) -> None:
    if scale * bound >= INT64_GUARD:
        raise SizeCapError(
            "scaled dynamics state would overflow 64-bit integers; reduce the "
            "round cap, the step denominator, or the valuation magnitudes")


# -- offer dynamics -------------------------------------------------------------


def run_offer_dynamics(market: Market, config: RunConfig,
                       scheduler: Optional[Scheduler] = None,
                       record_trace: Optional[bool] = None,
                       record_phi: Optional[bool] = None) -> OfferDynamicsResult:
    """Run the offer-based best-response dynamics.

    Finite valuations on every bundle are required (bounded offers).  The
    run stops when all agents are satisfied, at the round cap, or when a
    scripted schedule is exhausted; on convergence the terminal profile is
    verified to be an epsilon-tight Nash equilibrium.
    """
    scheduler = scheduler or Scheduler.random_order()
    scheduler.validate(market)
    if config.epsilon is None:
        raise ValidationError("offer dynamics needs an explicit epsilon step")
    eps = as_fraction(config.epsilon)
    if eps <= 0:
        raise ValidationError("epsilon must be positive")
    if config.rounds <= 0:
        raise ValidationError("round cap must be positive")
    if not market.all_finite():
        raise ValidationError("offer dynamics requires finite valuations on all bundles")

    initial = config.initial_offers
    if initial is None:
        initial = {a: {w: Fraction(0) for w in market.omega(a)} for a in market.agents}
    profile = initial if isinstance(initial, OfferProfile) else OfferProfile(initial)
    validate_profile(market, profile)

    scripted = scheduler.kind == "scripted"
    cap = len(scheduler.sequence) if scripted else config.rounds
    if record_trace is None:
        record_trace = cap <= TRACE_ROUND_LIMIT
    if record_phi is None:
        record_phi = cap <= TRACE_ROUND_LIMIT
    if (record_trace or record_phi) and cap > TRACE_ROUND_LIMIT:
        raise SizeCapError(f"tracing is limited to {TRACE_ROUND_LIMIT} rounds")

    offer_values = [profile.offer(a, w) for a in market.agents for w in market.omega(a)]
    scale = _scale_for(market, offer_values + [eps])
    init_bound = max((abs(x) for x in offer_values), default=Fraction(0))
    _check_magnitude(scale, market.value_bound() + init_bound + eps * (cap + 2))

    n = market.num_agents
    maxdeg = max(1, market.max_degree)
    deg, inc_chi, slot_trade, counterpart, counterpart_slot, val = _market_arrays(market, scale)
    offers = np.zeros((n, maxdeg), np.int64)
    for i, a in enumerate(market.agents):
        for j, w in enumerate(market.omega(a)):
            offers[i, j] = int(profile.offer(a, w) * scale)

    agent_index = {a: i for i, a in enumerate(market.agents)}
    if scripted:
        schedule = np.array([agent_index[a] for a in scheduler.sequence], np.int64)
        selectors = np.zeros(0, np.int64)
    else:
        schedule = np.zeros(0, np.int64)
        pool = math.lcm(*range(1, n + 1)) if n > 0 else 1
        rng = random.Random(config.seed)
        selectors = np.array([rng.randrange(pool) for _ in range(cap)], np.int64)

    rounds_alloc = cap if (record_trace or record_phi) else 1
    trace_agent = np.zeros(rounds_alloc, np.int64)
    trace_demand = np.zeros(rounds_alloc, np.int64)
    trace_offers = np.zeros((rounds_alloc if record_trace else 1, n, maxdeg), np.int64)
    trace_unsat = np.zeros(rounds_alloc, np.int64)
    trace_phi = np.zeros(rounds_alloc + 1, np.int64)

    status_code, rounds = engine.run_offers_kernel(
        deg, inc_chi, val, counterpart, counterpart_slot, offers,
        int(eps * scale), selectors, schedule, cap,
        record_trace, record_phi,
        trace_agent, trace_demand, trace_offers, trace_unsat, trace_phi)

    if status_code == engine.STATUS_BAD_SCHEDULE:
        raise SchedulerError(
            f"scripted schedule activated a satisfied agent at round {rounds + 1}")

    final = OfferProfile({
        a: {w: Fraction(int(offers[agent_index[a], j]), scale)
            for j, w in enumerate(market.omega(a))}
        for a in market.agents})

    trace = DynamicsTrace()
    if record_trace:
        for r in range(rounds):
            i = int(trace_agent[r])
            a = market.agents[i]
            dm = int(trace_demand[r])
            demanded = frozenset(market.omega(a)[j] for j in range(int(deg[i])) if dm >> j & 1)
            snap = {aa: {w: Fraction(int(trace_offers[r, agent_index[aa], j]), scale)
                         for j, w in enumerate(market.omega(aa))} for aa in market.agents}
            umask = int(trace_unsat[r])
            unsat = frozenset(market.agents[k] for k in range(n) if umask >> k & 1)
            trace.records.append(TraceRecord(
                round=r + 1, agent=a, demanded=demanded, offers=snap, unsatisfied=unsat,
                phi=int(trace_phi[r + 1]) if record_phi else None))

    converged = status_code == engine.STATUS_CONVERGED
    status = {engine.STATUS_CONVERGED: "converged",
              engine.STATUS_CAP: "cap-reached",
              engine.STATUS_SCHEDULE_END: "schedule-exhausted"}[status_code]
    verified = None
    if converged:
        verified = is_nash(market, final, eps).verdict == EPS_TIGHT_NASH
    return OfferDynamicsResult(
        trace=trace, profile=final, converged=converged, rounds=rounds, status=status,
        phi=[int(x) for x in trace_phi[:rounds + 1]] if record_phi else None,
        tight_nash_verified=verified)


def potential_phi(market: Market, profile: OfferProfile, epsilon) -> int:
    """Number of offer coordinates that best-response updates would change,
    summed over agents (0 exactly at the dynamics' fixed points)."""
    validate_profile(market, profile)
    eps = as_fraction(epsilon)
    if eps <= 0:
        raise ValidationError("epsilon must be positive")
    total = 0
    for a in market.agents:
        faced = faced_prices(market, a, profile)
        demanded = market.demand_tiebreak(a, faced)
        for w in market.omega(a):
            target = faced[w] if w in demanded else faced[w] - eps * market.chi(a, w)
            if target != profile.offer(a, w):
                total += 1
    return total


# -- price dynamics --------------------------------------------------------------


def _rational_sqrt(q: Fraction, digits: int = 6) -> Fraction:
    scale = 10**digits
    approx = Fraction(math.isqrt(q.numerator * scale * scale // q.denominator), scale)
    return approx if approx > 0 else Fraction(1, scale)


def auto_step(market: Market, rounds: int, value_bound: Fraction) -> Fraction:
    """Rational approximation of R * sqrt(2m / (T * max_degree))."""
    m = market.num_trades
    delta = max(1, market.max_degree)
    return as_fraction(value_bound) * _rational_sqrt(Fraction(2 * m, rounds * delta))


def run_price_dynamics(market: Market, config: RunConfig,
                       scheduler: Optional[Scheduler] = None,
                       record_trace: Optional[bool] = None,
                       record_lyapunov: Optional[bool] = None) -> PriceDynamicsResult:
    """Run the stochastic clock price dynamics for exactly ``config.rounds``
    rounds and report the final and time-averaged prices."""
    scheduler = scheduler or Scheduler.random_order()
    scheduler.validate(market)
    if config.rounds <= 0:
        raise ValidationError("rounds must be positive")
    if market.num_trades == 0:
        raise ValidationError("price dynamics needs at least one trade")
    if not market.all_finite():
        raise ValidationError("price dynamics requires finite valuations on all bundles")
    T = config.rounds
    R = as_fraction(config.value_bound) if config.value_bound is not None \
        else market.value_bound()
    if R < market.value_bound():
        raise ValidationError("value bound R must dominate every |valuation|")
    eps = as_fraction(config.epsilon) if config.epsilon is not None else auto_step(market, T, R)
    if eps <= 0:
        raise ValidationError("epsilon must be positive")

    prices0 = config.initial_prices
    if prices0 is None:
        prices0 = {t.id: Fraction(0) for t in market.trades}
    prices0 = {w: as_fraction(x) for w, x in prices0.items()}
    if set(prices0) != {t.id for t in market.trades}:
        raise ValidationError("initial prices must cover every trade")
    for w, x in prices0.items():
        if abs(x) > R:
            raise ValidationError(f"initial price of {w!r} lies outside [-R, R]")

    if record_trace is None:
        record_trace = T <= TRACE_ROUND_LIMIT
    if record_lyapunov is None:
        record_lyapunov = T <= TRACE_ROUND_LIMIT
    if (record_trace or record_lyapunov) and T > TRACE_ROUND_LIMIT:
        raise SizeCapError(f"tracing is limited to {TRACE_ROUND_LIMIT} rounds")

    scale = _scale_for(market, list(prices0.values()) + [eps])
    _check_magnitude(scale, R + eps * (T + 2))
    _check_magnitude(1, Fraction(T) * scale * (R + eps * (T + 2)))  # running sum

    n = market.num_agents
    m = market.num_trades
    deg, inc_chi, slot_trade, _, _, val = _market_arrays(market, scale)
    p = np.array([int(prices0[t.id] * scale) for t in market.trades], np.int64)

    agent_index = {a: i for i, a in enumerate(market.agents)}
    if scheduler.kind == "scripted":
        if len(scheduler.sequence) != T:
            raise ValidationError("scripted schedule length must equal rounds")
        agent_seq = np.array([agent_index[a] for a in scheduler.sequence], np.int64)
    else:
        rng = random.Random(config.seed)
        agent_seq = np.array([rng.randrange(n) for _ in range(T)], np.int64)

    alloc = T if (record_trace or record_lyapunov) else 1
    trace_demand = np.zeros(alloc, np.int64)
    trace_prices = np.zeros((alloc if record_trace else 1, m), np.int64)
    trace_lyap = np.zeros(alloc, np.int64)
    price_sum = np.zeros(m, np.int64)

    engine.run_prices_kernel(deg, inc_chi, val, slot_trade, agent_seq, p,
                             int(eps * scale), record_trace, record_lyapunov,
                             trace_demand, trace_prices, trace_lyap, price_sum)

    ids = [t.id for t in market.trades]
    final = {w: Fraction(int(p[k]), scale) for k, w in enumerate(ids)}
    average = {w: Fraction(int(price_sum[k]), T * scale) for k, w in enumerate(ids)}

    trace = DynamicsTrace()
    if record_trace:
        for t in range(T):
            i = int(agent_seq[t])
            a = market.agents[i]
            dm = int(trace_demand[t])
            demanded = frozenset(market.omega(a)[j] for j in range(int(deg[i])) if dm >> j & 1)
            snap = {w: Fraction(int(trace_prices[t, k]), scale) for k, w in enumerate(ids)}
            trace.records.append(TraceRecord(
                round=t + 1, agent=a, demanded=demanded, prices=snap,
                lyapunov=Fraction(int(trace_lyap[t]), scale) if record_lyapunov else None))

    return PriceDynamicsResult(
        trace=trace, final_prices=final, average_prices=average, rounds=T, epsilon=eps,
        lyapunov=[Fraction(int(x), scale) for x in trace_lyap[:T]] if record_lyapunov else None)


# -- Lyapunov diagnostics ---------------------------------------------------------


def lyapunov_value(market: Market, prices: Mapping[str, Fraction]) -> Fraction:
    """Aggregate indirect utility; minimized exactly at competitive-equilibrium
    prices, where it equals the market value."""
    return sum((market.indirect_utility(a, prices) for a in market.agents), Fraction(0))


def ce_gap(market: Market, prices: Mapping[str, Fraction]) -> Fraction:
    """lyapunov_value - market_value: nonnegative, zero iff the prices support
    a competitive equilibrium."""
    return lyapunov_value(market, prices) - market.market_value()


def agent_update_direction(market: Market, agent: str,
                           prices: Mapping[str, Fraction]) -> Dict[str, int]:
    """The price-dynamics move of one agent, per trade: 0 on demanded trades,
    -chi on rejected incident trades (the negative subgradient of the agent's
    shifted indirect utility)."""
    demanded = market.demand_tiebreak(agent, prices)
    out = {}
    for w in market.omega(agent):
        out[w] = 0 if w in demanded else -market.chi(agent, w)
    return out


def agent_lyapunov_term(market: Market, agent: str, prices: Mapping[str, Fraction]) -> Fraction:
    """Indirect utility plus <chi, p>; the per-agent convex summand whose
    subgradients drive the price dynamics."""
    shift = sum((Fraction(market.chi(agent, w)) * as_fraction(prices[w])
                 for w in market.omega(agent)), Fraction(0))
    return market.indirect_utility(agent, prices) + shift


def distance_to_ce_prices(market: Market, prices: Mapping[str, Fraction]) -> Fraction:
    """Exact infinity-norm distance from the competitive-equilibrium price
    polytope, by linear programming (slow; verification use only)."""
    reference = solve_ce_prices(market)  # raises if no equilibrium exists
    m = market.num_trades
    ids = [t.id for t in market.trades]
    index = {w: k for k, w in enumerate(ids)}
    prog = lp.LinearProgram(m + 1, free=list(range(m)))
    z = m
    for a in market.agents:
        inc, signs, values = market.mask_table(a)
        alloc_bundle = market.bundle_of(a, reference.allocation)
        alloc_mask = sum(1 << j for j, w in enumerate(inc) if w in alloc_bundle)
        v_alloc = values[alloc_mask]
        for mask, v in enumerate(values):
            if not is_finite(v) or mask == alloc_mask:
                continue
            coeffs: Dict[int, Fraction] = {}
            for j, w in enumerate(inc):
                c = Fraction(signs[j]) * ((mask >> j & 1) - (alloc_mask >> j & 1))
                if c:
                    coeffs[index[w]] = coeffs.get(index[w], Fraction(0)) + c
            prog.add_constraint(coeffs, ">=", v - v_alloc)
    for w in ids:
        prog.add_constraint({index[w]: 1, z: -1}, "<=", as_fraction(prices[w]))
        prog.add_constraint({index[w]: 1, z: 1}, ">=", as_fraction(prices[w]))
    objective = [Fraction(0)] * m + [Fraction(1)]
    result = prog.minimize(objective)
    if result.status != lp.OPTIMAL:
        raise RuntimeError(f"distance LP failed: {result.status}")
    return result.value
