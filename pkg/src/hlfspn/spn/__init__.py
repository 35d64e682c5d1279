"""General stochastic Petri net core: structure, simulation, exact solving."""

from .net import (
    And,
    Arc,
    Atom,
    Constant,
    Deterministic,
    Diagnostic,
    EvaluationError,
    Exponential,
    ExpectedTokens,
    FiringRate,
    FlushAll,
    Flushed,
    Immediate,
    IntRhs,
    Marking,
    Not,
    Or,
    Param,
    ParamRhs,
    PetriNet,
    Place,
    PlaceRhs,
    Predicate,
    ProbabilityOf,
    RewardQuery,
    ServerSemantics,
    SpnError,
    Transition,
    eval_predicate,
    predicate_places,
    validate_net,
)
from .engine import (
    ContractViolationError,
    DivergenceError,
    Estimate,
    LivelockError,
    PartialResultError,
    SimConfig,
    SimulationResult,
    enabled_set,
    fire,
    simulate_stationary,
    vanish,
)
from .ctmc import ExactResult, ExplosionError, UnsupportedModelError, solve_ctmc
from .textfmt import (
    FormatError,
    guard_to_text,
    parse_guard,
    parse_net,
    serialize_net,
    to_dot,
)

__all__ = [
    "And", "Arc", "Atom", "Constant", "ContractViolationError",
    "Deterministic", "Diagnostic", "DivergenceError", "Estimate",
    "EvaluationError", "ExactResult", "ExplosionError", "Exponential",
    "ExpectedTokens", "FiringRate", "FlushAll", "Flushed", "FormatError",
    "Immediate", "IntRhs", "LivelockError", "Marking", "Not", "Or", "Param",
    "ParamRhs", "PartialResultError", "PetriNet", "Place", "PlaceRhs",
    "Predicate", "ProbabilityOf", "RewardQuery", "ServerSemantics",
    "SimConfig", "SimulationResult", "SpnError", "Transition",
    "UnsupportedModelError", "enabled_set", "eval_predicate", "fire",
    "guard_to_text", "parse_guard", "parse_net", "predicate_places",
    "serialize_net", "simulate_stationary", "solve_ctmc", "to_dot",
    "validate_net", "vanish",
]
