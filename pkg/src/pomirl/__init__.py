"""Task-guided maximum-causal-entropy reward inference for POMDPs."""

from .errors import (
    DegenerateLinearization,
    EmptyTarget,
    NumericalFailure,
    PomirlError,
    SingularFlow,
    UnknownLabel,
    ZeroLikelihood,
)
from .forward import (
    ScpParams,
    ScpResult,
    VisitationCounts,
    causal_entropy,
    discounted_return,
    realized_cost,
    scp_forward,
    solve_flow_discounted,
    solve_flow_spec,
)
from .irl import (
    DemonstrationSet,
    IrlResult,
    RewardModel,
    beliefs_from_trace,
    empirical_feature_expectation,
    grad_theta,
    mce_irl,
)
from .lp import LinearProgram, LpSolution, solve_lp
from .model import (
    Belief,
    FscShape,
    Policy,
    Pomdp,
    ProductPomdp,
    belief_update,
    dump_pomdp,
    load_pomdp,
    product_with_memory,
    rollout,
    validate_pomdp,
)
from .specs import ReachSpec, SpecFormula, compile_spec, parse_spec

__version__ = "0.1.0"
