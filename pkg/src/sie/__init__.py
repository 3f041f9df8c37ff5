"""Simulation and empirical stability certification for forced systems with
impulse effects: event-driven integration, section-return maps, hybrid
periodic orbits and input-to-state stability sweeps."""

from .core import (ContinuousSignal, DiscreteSequence, HybridSystemDef,
                   ValidationReport, euclidean, point_set_distance,
                   signal_sup_norm, validate_system)
from .errors import SieError
from .events import (ImpactEvent, TimeToImpact, locate_crossing,
                     time_to_impact, time_to_impact_from_splus)
from .flow import FlowSegment, IntegratorConfig, flow_sensitivity, integrate
from .hybrid import GuardConfig, HybridTrajectory, Impact, poincare_sequence, simulate
from .iss import (DecayFit, EquivalenceVerdict, GainFit, IssSweepReport,
                  SweepConfig, check_equivalence, fit_decay, fit_gain,
                  run_sweep)
from .models import catalog, model, oracle, registration_checks
from .orbit import (PeriodicOrbit, Prop1Report, build_orbit, certify_prop1,
                    dist_to_orbit)
from .poincare import (StabilityReport, SurfaceChart, find_fixed_point,
                       linearize, poincare_map)

__all__ = [
    "ContinuousSignal", "DiscreteSequence", "HybridSystemDef",
    "ValidationReport", "euclidean", "point_set_distance", "signal_sup_norm",
    "validate_system", "SieError", "ImpactEvent", "TimeToImpact",
    "locate_crossing", "time_to_impact", "time_to_impact_from_splus",
    "FlowSegment", "IntegratorConfig", "flow_sensitivity", "integrate",
    "GuardConfig", "HybridTrajectory", "Impact", "poincare_sequence",
    "simulate", "DecayFit", "EquivalenceVerdict", "GainFit", "IssSweepReport",
    "SweepConfig", "check_equivalence", "fit_decay", "fit_gain", "run_sweep", "catalog",
    "model", "oracle", "registration_checks", "PeriodicOrbit", "Prop1Report",
    "build_orbit", "certify_prop1", "dist_to_orbit", "StabilityReport",
    "SurfaceChart", "find_fixed_point", "linearize", "poincare_map",
]

__version__ = "0.1.0"
