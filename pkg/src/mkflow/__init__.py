"""Image distances from unbalanced optimal transport, solved as min-cost flow."""

from mkflow.distributions import (
    GroundCost,
    Grid,
    MassDistribution,
    QuantizedDistribution,
    quantize,
    quantize_jointly,
)
from mkflow.errors import FormatError, InvalidArgument, SolverError
from mkflow.flow import FlowNetwork, FlowSolution, solve_min_cost_flow
from mkflow.transport import (
    TransportResult,
    balanced_distance,
    unbalanced_distance,
    wasserstein_distance,
)

__all__ = [
    "FlowNetwork", "FlowSolution", "FormatError", "GroundCost", "Grid", "InvalidArgument",
    "MassDistribution", "QuantizedDistribution", "SolverError", "TransportResult",
    "balanced_distance", "quantize", "quantize_jointly", "solve_min_cost_flow",
    "unbalanced_distance", "wasserstein_distance",
]
__version__ = "0.1.0"
