"""Resonant transport on the circle: averaging, normal forms, escape functions and norm growth."""
from .classical_dynamics import (
    EscapeFunction,
    FlowStructure,
    analyze_flow,
    build_escape,
    flow_cotangent,
    flow_torus,
    verify_escape,
)
from .evolve import (
    Coefficient,
    GrowthReport,
    Trajectory,
    dichotomy_experiment,
    fit_growth_rate,
    instability_experiment,
    integrate,
    integrate_characteristics,
    stability_experiment,
)
from .exceptions import *  # noqa: F401,F403
from .normal_form import (
    DiffeoTransform,
    NormalFormChain,
    constant_coefficient_reduce,
    invert_diffeo,
    normal_form_reduce,
    solve_homological,
)
from .resonance import Tolerances, classify, find_zeros, regularize, resonant_average
from .spectral import SpaceTimeField, StateVector, TorusField, sobolev_norm
from .weyl import Symbol, WeylMatrix, build_initial_datum, commutator_check, quadratic_form, weyl_matrix

__version__ = "0.1.0"
