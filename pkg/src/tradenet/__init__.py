"""Trading-network markets with bilateral contracts.

Exact-arithmetic tooling for markets on trade multigraphs: demand oracles
and substitutability checks, competitive-equilibrium solving and
verification, the offer game with epsilon-tight Nash equilibria and their
extension to integral competitive equilibria, two decentralized dynamics
(offer-based best responses and a stochastic price clock), and
cooperative-game fairness analysis (core, essential agents, leximin /
leximax / minimum-variance imputations, and their implementation as market
outcomes).
"""

__version__ = "0.1.0"

from .values import NEG_INF, ExtValue, as_fraction, format_rational, parse_value
from .market import (Bundle, Market, SizeCapError, SubstitutesCheck, Trade,
                     ValidationError, Valuation, default_price_box,
                     is_fully_substitutable)
from .game import (Arrangement, EPS_TIGHT_NASH, ExtensionFailedError,
                   ExtensionInfeasibleError, MarketOutcome, NASH, NOT_NASH,
                   NashReport, NoCompetitiveEquilibriumError, OfferProfile,
                   agent_game_utility, approx_ce_from_tight_ne, best_deviation,
                   extend_ne_to_ce, faced_prices, is_competitive_equilibrium,
                   is_nash, ne_from_ce, outcome_of_offers, solve_ce_prices,
                   unimodularity_check)
from .dynamics import (DynamicsTrace, OfferDynamicsResult, PriceDynamicsResult,
                       RunConfig, Scheduler, SchedulerError, TraceRecord,
                       agent_lyapunov_term, agent_update_direction, auto_step,
                       ce_gap, distance_to_ce_prices, lyapunov_value,
                       potential_phi, run_offer_dynamics, run_price_dynamics)
from .cooperative import (CharacteristicFunction, CoreCheck, EmptyCoreError,
                          TaxedCeReport, characteristic_function, core_nonempty,
                          core_vertices, essential_agents, find_blocking_outcome,
                          implement_imputation, is_core_imputation, is_core_outcome,
                          is_core_outcome_oracle, leximax_imputation,
                          leximin_imputation, max_core_utility, minvar_imputation,
                          outcome_utilities, taxed_ce_check)
from .reduction import (Auction, is_auction_ce, map_allocation, tau, to_auction,
                        verify_ce_mapping, verify_demand_mapping, welfare_preserved)
from .geometry import FacetRecord, is_substitutes_by_normals, lip_facets
from .scenario import (Scenario, load_profile, load_scenario, save_scenario,
                       scenario_from_dict, scenario_to_dict)
from .generators import (random_lattice_prices, random_offers,
                         random_substitutes_market, random_two_agent_market)
