"""Demand geometry: indifference-locus facets and the substitutes criterion.

An agent's price space splits into regions of constant unique demand,
separated by facets where demand changes.  Crossing a facet changes the
demanded bundle (in signed vector notation: +1 bought, -1 sold) by an
integer vector; its primitive part is the facet's normal and the common
divisor its weight.  A valuation is substitutes exactly when every facet
normal is a coordinate vector or a difference of two coordinate vectors,
which this module checks for agents with up to three trades.

Extraction walks exact upper envelopes of the bundle utilities along
axis-parallel lines.  The lines carry tiny 17-adic coordinate offsets, which
keeps every sample point off every indifference hyperplane and every
breakpoint on exactly one facet, so each crossing is identified exactly; the
grid pitch only controls how densely the box is swept.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Tuple

from .market import Bundle, Market, ValidationError, default_price_box
from .values import as_fraction, is_finite

MAX_FACET_TRADES = 3


@dataclass(frozen=True)
class FacetRecord:
    anchor: Mapping[str, Fraction]    # trade id -> price of one point on the facet
    normal: Tuple[int, ...]           # primitive, first nonzero entry positive
    weight: int                       # gcd of the demand-change entries
    before: Bundle                    # demanded below the crossing
    after: Bundle                     # demanded above the crossing


def _offsets(deg: int, lattice_gap: Fraction) -> List[Fraction]:
    theta = lattice_gap / 2
    return [theta * Fraction(1, 17 ** (j + 1)) for j in range(deg)]


def normal_is_substitutes(normal: Tuple[int, ...]) -> bool:
    nz = [x for x in normal if x != 0]
    if len(nz) == 1 and abs(nz[0]) == 1:
        return True
    return len(nz) == 2 and sorted(nz) == [-1, 1]


def lip_facets(market: Market, agent: str,
               box: Optional[Tuple[Fraction, Fraction]] = None,
               step: Fraction = Fraction(1, 2)) -> List[FacetRecord]:
    """Facets of the agent's indifference locus inside the box.

    Only agents with at most three trades are supported, and the sweep pitch
    must be at most 1/2 so that unit-lattice demand changes cannot slip
    between adjacent sweep lines.
    """
    inc = market.omega(agent)
    deg = len(inc)
    if deg > MAX_FACET_TRADES:
        raise ValidationError(f"facet extraction supports at most {MAX_FACET_TRADES} trades")
    step = as_fraction(step)
    if step <= 0:
        raise ValidationError("step must be positive")
    if step > Fraction(1, 2):
        raise ValidationError("step too coarse; need step <= 1/2")
    if deg == 0:
        return []
    if box is None:
        lo, hi = default_price_box(market, agent)
    else:
        lo, hi = as_fraction(box[0]), as_fraction(box[1])
        if hi <= lo:
            raise ValidationError("empty price box")

    _, signs, values = market.mask_table(agent)
    finite_masks = [(mask, v) for mask, v in enumerate(values) if is_finite(v)]
    denoms = [v.denominator for _, v in finite_masks]
    denoms += [lo.denominator, hi.denominator, step.denominator]
    lattice_gap = Fraction(1, math.lcm(*denoms))
    delta = _offsets(deg, lattice_gap)

    def signed_vector(mask: int) -> Tuple[int, ...]:
        return tuple(signs[j] if mask >> j & 1 else 0 for j in range(deg))

    records: Dict[tuple, FacetRecord] = {}
    axis_values: List[Fraction] = []
    x = lo
    while x <= hi:
        axis_values.append(x)
        x += step

    for axis in range(deg):
        transverse = [j for j in range(deg) if j != axis]
        for combo in itertools.product(axis_values, repeat=len(transverse)):
            coords = {}
            for j, base in zip(transverse, combo):
                coords[j] = base + delta[j]
            # utility lines along the axis: u = const + slope * t
            lines = []
            for mask, v in finite_masks:
                const = v
                for j in transverse:
                    if mask >> j & 1:
                        const -= signs[j] * coords[j]
                slope = Fraction(-signs[axis]) if mask >> axis & 1 else Fraction(0)
                lines.append((mask, const, slope))
            t = lo + delta[axis]
            t_end = hi
            # unique leader at the (offset) start
            leader = max(lines, key=lambda l: (l[1] + l[2] * t, l[2]))
            lead_val = leader[1] + leader[2] * t
            if sum(1 for l in lines if l[1] + l[2] * t == lead_val) > 1:
                raise RuntimeError("offset start point lies on an indifference plane")
            guard = 0
            while True:
                guard += 1
                if guard > len(lines) * len(lines) + 4:
                    raise RuntimeError("envelope walk failed to terminate")
                best_t = None
                for mask, const, slope in lines:
                    if slope <= leader[2]:
                        continue
                    t_cross = (leader[1] - const) / (slope - leader[2])
                    if t < t_cross <= t_end and (best_t is None or t_cross < best_t):
                        best_t = t_cross
                if best_t is None:
                    break
                cross_val = leader[1] + leader[2] * best_t
                tied = [l for l in lines if l[1] + l[2] * best_t == cross_val]
                new_leader = max(tied, key=lambda l: l[2])
                before_vec = signed_vector(leader[0])
                after_vec = signed_vector(new_leader[0])
                diff = tuple(a - b for a, b in zip(after_vec, before_vec))
                weight = math.gcd(*(abs(d) for d in diff))
                primitive = tuple(d // weight for d in diff)
                lead_nz = next(x for x in primitive if x != 0)
                if lead_nz < 0:
                    primitive = tuple(-x for x in primitive)
                anchor = {inc[j]: (best_t if j == axis else coords[j]) for j in range(deg)}
                offset = sum(Fraction(primitive[j]) * anchor[inc[j]] for j in range(deg))
                before = frozenset(inc[j] for j in range(deg) if leader[0] >> j & 1)
                after = frozenset(inc[j] for j in range(deg) if new_leader[0] >> j & 1)
                key = (primitive, offset, frozenset((before, after)))
                if key not in records:
                    records[key] = FacetRecord(anchor=anchor, normal=primitive,
                                               weight=weight, before=before, after=after)
                leader = new_leader
                t = best_t
    return sorted(records.values(),
                  key=lambda r: (r.normal, sorted(r.anchor.items())))


def is_substitutes_by_normals(market: Market, agent: str,
                              box: Optional[Tuple[Fraction, Fraction]] = None,
                              step: Fraction = Fraction(1, 2)
                              ) -> Tuple[bool, Optional[FacetRecord]]:
    """Substitutes verdict from facet normals: every facet inside the box
    must be normal to a coordinate vector or a difference of two, with unit
    weight.  Returns the first offending facet as a witness."""
    for record in lip_facets(market, agent, box, step):
        if record.weight != 1 or not normal_is_substitutes(record.normal):
            return False, record
    return True, None
