"""Anytime inference for discrete Bayesian networks.

Enumerates possible worlds in decreasing-probability order with a
conflict-directed admissible heuristic; at any stopping point the unexplored
queue mass yields guaranteed bounds on prior and posterior probabilities.
"""

from . import engine
from .errors import (
    BadReference,
    BNSearchError,
    CyclicNetwork,
    DepthExceeded,
    IncompleteCPT,
    InvalidMass,
    NotAFailure,
    ParseError,
    TooLarge,
    UnnormalizedRow,
    ZeroEvidence,
)
from .model import (
    CPT,
    DEFAULT_EPSILON_NORMAL,
    Atom,
    And,
    Network,
    NetworkSpec,
    Not,
    Observation,
    Or,
    QueryFormula,
    Variable,
    atom,
    build_network,
    normal_value,
    prune_for_query,
)
from .worlds import (
    EMPTY,
    PartialDescription,
    World,
    as_world,
    enumerate_exact,
    evaluate,
    extend,
)
from .conflicts import (
    Conflict,
    HeuristicTable,
    conflict_max_prob,
    extract_counter,
    init_heuristic,
    register_conflict,
)
from .search import (
    SearchParams,
    SearchResult,
    StoppingRule,
    Strategy,
    best_first,
    iterative_deepening,
    new_search,
    step,
    top_m_search,
    top_m_worlds,
)
from .estimate import (
    AnytimeResult,
    BoundsReport,
    MassMode,
    posterior_bounds,
    prior_bounds,
    queue_mass,
    run_anytime,
)
from .circuits import (
    Adder,
    AdderSpec,
    BenchmarkRow,
    GateModel,
    build_adder,
    run_benchmark,
    single_error_scenario,
)

__version__ = "0.1.0"
