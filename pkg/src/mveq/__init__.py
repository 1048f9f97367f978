"""Closed-loop equilibrium strategies for mean-variance selection and variance
hedging with Brownian-driven market coefficients."""

from .bsde import (
    BsdePair,
    EquilibriumOperator,
    LinearBsdeSpec,
    RiccatiSolution,
    general_equilibrium,
    solve_bsde,
    solve_linear_bsde,
    solve_mn,
)
from .errors import (
    ConfigError,
    DegenerateM,
    DegenerateP1,
    FloorViolation,
    FormulaMismatch,
    GridMismatch,
    InsufficientPaths,
    MveqError,
    NonFinite,
    NotDeterministic,
    NumericalFailure,
    SingularRegression,
    StepSizeTooLarge,
    UnboundedCoefficient,
)
from .estimators import GeneralStrategy, HedgingStrategy, MeanVarianceStrategy, OpenLoopStrategy
from .hedging import (
    BoundedSmoothClaim,
    ConstantClaim,
    LinearClaim,
    claim_processes,
    solve_hedging_equilibrium,
)
from .market import (
    BrownianFunction,
    BrownianGrid,
    Constant,
    MarketScenario,
    PerturbationSpec,
    TimeFunction,
    build_scenario,
    evaluate_coefficients,
    simulate_brownian,
    simulate_state,
)
from .mean_variance import mv_closed_form_deterministic, solve_mv_equilibrium
from .openloop import compare_operators, solve_openloop
from .verifier import perturbation_quotient, run_probe_suite

__version__ = "0.1.0"
