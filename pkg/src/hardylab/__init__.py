"""Numerical lab for weighted pointwise and integral Hardy inequalities on grid domains."""

__version__ = "0.1.0"

from .domain import DomainError, DomainSpec, GridDomain, build_domain, load_domain, quasiconvexity_estimate
from .weights import Weight, constant_weight, distance_power_weight, doubling_constant, measure
from .maximal import maximal, maximal_capped
from .curves import connect_pair, curve_infimum, curve_infimum_lagrangian
from .certificate import HardyHypotheses, improvement_certificate

__all__ = [
    "DomainError", "DomainSpec", "GridDomain", "build_domain", "load_domain", "quasiconvexity_estimate",
    "Weight", "constant_weight", "distance_power_weight", "doubling_constant", "measure",
    "maximal", "maximal_capped", "connect_pair", "curve_infimum", "curve_infimum_lagrangian",
    "HardyHypotheses", "improvement_certificate",
]
