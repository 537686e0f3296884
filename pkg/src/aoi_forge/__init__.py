"""Mixed-criticality peak age-of-information optimization for D2D networks.

Library layout:

- ``network``: topology, Rayleigh fading, SINR/rate, closed-form outage
- ``aoi``: peak-age distribution, linear/exponential expectations, objective
- ``sca``: successive convex approximation outer loop and subproblem builder
- ``solver``: log-barrier interior-point method with KKT certification
- ``simulate``: time-domain Monte Carlo traces and the equal-split baseline
- ``experiments``: scenario files, trace/sweep experiment drivers
- ``cli``: the ``aoi-forge`` command line
"""

from .aoi import (
    Allocation,
    LinkProfile,
    RegulationError,
    empirical_psi,
    expected_exp_aoi,
    expected_linear_aoi,
    objective_psi,
    peak_aoi_pmf,
)
from .network import (
    ChannelRealization,
    PlacementBounds,
    PlacementError,
    Topology,
    achievable_rate,
    closed_form_outage,
    generate_topology,
    sample_channel,
    sinr,
    worst_case_rates,
)
from .sca import (
    ConvexSubproblem,
    FixedPoint,
    InfeasibleFixedPointError,
    InitializationError,
    QtMultipliers,
    SolveReport,
    SolverConfig,
    build_constraints,
    initialize,
    iterate,
    surrogate_objective,
    update_multipliers,
)
from .simulate import AoiTrace, SimConfig, oma_topology, run_trace
from .solver import KktReport, NlpProblem, NlpSolution, SolverError, check_kkt, solve

__version__ = "0.1.0"
