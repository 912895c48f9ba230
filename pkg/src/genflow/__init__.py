"""Flows of regularized (generalized) vector fields on R^n, the circle and the 2-torus.

Modules: ``epsilon`` (ε-nets, scaling laws, growth classification),
``mollifier`` (bumps, smoothed steps, combs), ``manifold`` (spaces and
distances), ``fields`` (field nets and hypothesis checkers), ``flow``
(per-ε integration, flow tables, closed forms), ``association`` (the
association notions and limiting-flow analysis) and ``cli``.
"""
__version__ = "0.1.0"

from .epsilon import EpsilonNet, GrowthClass, ScalingLaw, classify_growth, make_epsilon_net, sigma
from .errors import (
    ConfigurationError, ConstructionError, DomainError, GenflowError, InputError,
    IntegrationError, QuadratureError, UsageError,
)
from .manifold import Space, Tangent, distance, lift, wrap
from .mollifier import Bump, SmoothedStep, build_bump, comb, comb_scaled, smoothed_heaviside
from .fields import (
    ConditionReport, VectorFieldNet, check_bounded_derivative, check_global_bound,
    check_linear_growth, check_logtype_derivative, marsden_field, torus_field, zero_field,
)
from .flow import (
    FlowTable, IvpConfig, Trajectory, closed_form_marsden_limit, closed_form_torus,
    closed_form_torus_limit, extract_limit, flow_identity_residual, flow_table, solve_ivp,
    variational_derivative,
)
from .association import (
    AssociationVerdict, NetFunction, assoc_Rn, fast_assoc, hierarchy_report,
    limiting_flow_report, model_assoc, pw_assoc, pwae_assoc, zero_assoc,
)

__all__ = [
    "AssociationVerdict", "Bump", "ConditionReport", "ConfigurationError", "ConstructionError",
    "DomainError", "EpsilonNet", "FlowTable", "GenflowError", "GrowthClass", "InputError",
    "IntegrationError", "IvpConfig", "NetFunction", "QuadratureError", "ScalingLaw",
    "SmoothedStep", "Space", "Tangent", "Trajectory", "UsageError", "VectorFieldNet",
    "assoc_Rn", "build_bump", "check_bounded_derivative", "check_global_bound",
    "check_linear_growth", "check_logtype_derivative", "classify_growth",
    "closed_form_marsden_limit", "closed_form_torus", "closed_form_torus_limit", "comb",
    "comb_scaled", "distance", "extract_limit", "fast_assoc", "flow_identity_residual",
    "flow_table", "hierarchy_report", "lift", "limiting_flow_report", "make_epsilon_net",
    "marsden_field", "model_assoc", "pw_assoc", "pwae_assoc", "sigma", "smoothed_heaviside",
    "solve_ivp", "torus_field", "variational_derivative", "wrap", "zero_assoc", "zero_field",
]
