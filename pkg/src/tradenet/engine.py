"""Integer kernels for the decentralized dynamics.

The two dynamics run on an epsilon-lattice, so after scaling by a common
denominator every offer, price, and valuation is an int64 and a whole run is
exact integer arithmetic.  The kernels are written in the numba-compilable
subset of Python/NumPy; by default they are JIT-compiled, and setting
``TRADENET_NUMBA=0`` (or lacking numba) selects the identical pure-NumPy
interpretation.  ``plain_backend()`` exposes the uncompiled flavors for
benchmarks and backend-equivalence tests.

Agent randomness is precomputed by the caller (see dynamics.Scheduler), so
the two backends are bit-identical.

The demand loop (utility argmax with cardinality-then-lexicographic
tie-breaking) is inlined in each kernel to keep them self-contained and
cacheable.

Status codes: 0 converged (U empty), 1 round cap reached, 2 scripted agent
not in U, 3 schedule exhausted with U nonempty.
"""

from __future__ import annotations

import os

import numpy as np

STATUS_CONVERGED = 0
STATUS_CAP = 1
STATUS_BAD_SCHEDULE = 2
STATUS_SCHEDULE_END = 3


def _njit_enabled() -> bool:
    flag = os.environ.get("TRADENET_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _njit_enabled()


def _demand_mask_py(deg, chi, val, prices):
    """Tie-broken demand over one agent's bundles, as a slot bitmask.

    Maximizes utility; ties go to larger cardinality, then to the larger
    4-adic key, i.e. the lexicographically smallest equal-size bundle.
    """
    best_mask = 0
    best_u = val[0]
    best_card = 0
    best_key = 0
    for mask in range(1, 1 << deg):
        u = val[mask]
        card = 0
        key = 0
        for j in range(deg):
            if mask >> j & 1:
                u -= chi[j] * prices[j]
                card += 1
                key += 1 << 2 * (deg - 1 - j)
        if u > best_u or (u == best_u and (card > best_card or
                          (card == best_card and key > best_key))):
            best_mask = mask
            best_u = u
            best_card = card
            best_key = key
    return best_mask, best_u


def _phi_py(n, deg, inc_chi, val, counterpart, counterpart_slot, offers, eps):
    """Offer coordinates a best-response update would change, over all agents."""
    total = 0
    maxdeg = offers.shape[1]
    p = np.zeros(maxdeg, np.int64)
    for a in range(n):
        d = deg[a]
        for j in range(d):
            p[j] = offers[counterpart[a, j], counterpart_slot[a, j]]
        best_mask = 0
        best_u = val[a, 0]
        best_card = 0
        best_key = 0
        for mask in range(1, 1 << d):
            u = val[a, mask]
            card = 0
            key = 0
            for j in range(d):
                if mask >> j & 1:
                    u -= inc_chi[a, j] * p[j]
                    card += 1
                    key += 1 << 2 * (d - 1 - j)
            if u > best_u or (u == best_u and (card > best_card or
                              (card == best_card and key > best_key))):
                best_mask = mask
                best_u = u
                best_card = card
                best_key = key
        for j in range(d):
            if best_mask >> j & 1:
                target = p[j]
            else:
                target = p[j] - eps * inc_chi[a, j]
            if target != offers[a, j]:
                total += 1
    return total


def _run_offers_py(deg, inc_chi, val, counterpart, counterpart_slot,
                   offers, eps, selectors, schedule, cap,
                   record_trace, record_phi,
                   trace_agent, trace_demand, trace_offers, trace_unsat, trace_phi):
    n = deg.shape[0]
    maxdeg = offers.shape[1]
    unsat = np.ones(n, np.bool_)
    n_unsat = n
    p = np.zeros(maxdeg, np.int64)
    scripted = schedule.shape[0] > 0
    limit = schedule.shape[0] if scripted else cap
    if record_phi:
        trace_phi[0] = phi_kernel(n, deg, inc_chi, val, counterpart, counterpart_slot,
                                  offers, eps)
    rounds = 0
    for r in range(limit):
        if n_unsat == 0:
            break
        if scripted:
            a = schedule[r]
            if not unsat[a]:
                return STATUS_BAD_SCHEDULE, rounds
        else:
            k = selectors[r] % n_unsat
            a = 0
            seen = -1
            for idx in range(n):
                if unsat[idx]:
                    seen += 1
                    if seen == k:
                        a = idx
                        break
        d = deg[a]
        for j in range(d):
            p[j] = offers[counterpart[a, j], counterpart_slot[a, j]]
        best_mask = 0
        best_u = val[a, 0]
        best_card = 0
        best_key = 0
        for mask in range(1, 1 << d):
            u = val[a, mask]
            card = 0
            key = 0
            for j in range(d):
                if mask >> j & 1:
                    u -= inc_chi[a, j] * p[j]
                    card += 1
                    key += 1 << 2 * (d - 1 - j)
            if u > best_u or (u == best_u and (card > best_card or
                              (card == best_card and key > best_key))):
                best_mask = mask
                best_u = u
                best_card = card
                best_key = key
        for j in range(d):
            if best_mask >> j & 1:
                new = p[j]
            else:
                new = p[j] - eps * inc_chi[a, j]
            if new != offers[a, j]:
                offers[a, j] = new
                other = counterpart[a, j]
                if not unsat[other]:
                    unsat[other] = True
                    n_unsat += 1
        if unsat[a]:
            unsat[a] = False
            n_unsat -= 1
        rounds = r + 1
        if record_trace:
            trace_agent[r] = a
            trace_demand[r] = best_mask
            for i in range(n):
                for j in range(maxdeg):
                    trace_offers[r, i, j] = offers[i, j]
            umask = 0
            for i in range(n):
                if unsat[i]:
                    umask |= 1 << i
            trace_unsat[r] = umask
        if record_phi:
            trace_phi[r + 1] = phi_kernel(n, deg, inc_chi, val, counterpart,
                                          counterpart_slot, offers, eps)
    if n_unsat == 0:
        return STATUS_CONVERGED, rounds
    if scripted:
        return STATUS_SCHEDULE_END, rounds
    return STATUS_CAP, rounds


def _lyapunov_py(n, deg, inc_chi, val, slot_trade, prices):
    """Sum of agents' maximum utilities at scaled integer prices."""
    total = 0
    maxdeg = slot_trade.shape[1]
    p = np.zeros(maxdeg, np.int64)
    for a in range(n):
        d = deg[a]
        for j in range(d):
            p[j] = prices[slot_trade[a, j]]
        best_u = val[a, 0]
        for mask in range(1, 1 << d):
            u = val[a, mask]
            for j in range(d):
                if mask >> j & 1:
                    u -= inc_chi[a, j] * p[j]
            if u > best_u:
                best_u = u
        total += best_u
    return total


def _run_prices_py(deg, inc_chi, val, slot_trade, agent_seq, prices, eps,
                   record_trace, record_lyapunov,
                   trace_demand, trace_prices, trace_lyapunov, price_sum):
    m = prices.shape[0]
    n = deg.shape[0]
    maxdeg = slot_trade.shape[1]
    p = np.zeros(maxdeg, np.int64)
    rounds = agent_seq.shape[0]
    for t in range(rounds):
        a = agent_seq[t]
        d = deg[a]
        for j in range(d):
            p[j] = prices[slot_trade[a, j]]
        best_mask = 0
        best_u = val[a, 0]
        best_card = 0
        best_key = 0
        for mask in range(1, 1 << d):
            u = val[a, mask]
            card = 0
            key = 0
            for j in range(d):
                if mask >> j & 1:
                    u -= inc_chi[a, j] * p[j]
                    card += 1
                    key += 1 << 2 * (d - 1 - j)
            if u > best_u or (u == best_u and (card > best_card or
                              (card == best_card and key > best_key))):
                best_mask = mask
                best_u = u
                best_card = card
                best_key = key
        for j in range(d):
            if not best_mask >> j & 1:
                prices[slot_trade[a, j]] -= eps * inc_chi[a, j]
        for w in range(m):
            price_sum[w] += prices[w]
        if record_trace:
            trace_demand[t] = best_mask
            for w in range(m):
                trace_prices[t, w] = prices[w]
        if record_lyapunov:
            trace_lyapunov[t] = lyapunov_kernel(n, deg, inc_chi, val, slot_trade, prices)
    return rounds


# The run kernels call the dispatched phi_kernel / lyapunov_kernel globals,
# so in numba mode a jitted kernel calls jitted helpers, and in numpy mode
# everything stays interpreted.
if USE_NUMBA:
    from numba import njit

    demand_mask_kernel = njit(cache=True)(_demand_mask_py)
    phi_kernel = njit(cache=True)(_phi_py)
    lyapunov_kernel = njit(cache=True)(_lyapunov_py)
    run_offers_kernel = njit(cache=True)(_run_offers_py)
    run_prices_kernel = njit(cache=True)(_run_prices_py)
else:
    demand_mask_kernel = _demand_mask_py
    phi_kernel = _phi_py
    lyapunov_kernel = _lyapunov_py
    run_offers_kernel = _run_offers_py
    run_prices_kernel = _run_prices_py

BACKEND = "numba" if USE_NUMBA else "numpy"


def plain_backend():
    """The uncompiled run/demand implementations, for benchmarks and
    backend-equivalence tests.  (Their phi/L diagnostic sub-calls go through
    the active dispatch; benchmarks run with diagnostics off.)"""
    return {
        "demand_mask": _demand_mask_py,
        "phi": _phi_py,
        "lyapunov": _lyapunov_py,
        "run_offers": _run_offers_py,
        "run_prices": _run_prices_py,
    }
