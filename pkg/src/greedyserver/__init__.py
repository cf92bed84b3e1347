"""Greedy single-server system on the circle and the line.

Seed-deterministic simulators for the explicit-customer dynamics and the
exactly equivalent potential-process representation, plus the drift
machinery, the three-way circle/line coupling, and the multi-scale
transience detector for line trajectories.
"""

__version__ = "0.1.0"

from .engine import ModelConfig, RandomTape, ServiceLaw, draw, sample_service
from .geometry import Arc, FULL_CIRCLE, dist, grow_arc, vec_dist
from .potential_sim import (
    CircleProfile,
    LineProfile,
    PotentialProcess,
    Regime,
    constant_state,
    empty_state,
    is_proper,
)
from .explicit_sim import (
    ExplicitProcess,
    PollingProcess,
    run_until_regeneration,
    select_target,
    velocity,
)
from .lyapunov import (
    Constants,
    derive_constants,
    dominating_walk,
    drift_experiment,
    functional_B,
    functional_N,
    run_to_stopping,
    small_B_regeneration,
    valley_set,
)
from .coupling import normalize, periodic_extension, run_coupled, truncate
from .blocks import (
    alpha_unimodal_check,
    block_params,
    detect_blocks,
    renewal_transience,
    strong_transience_check,
)

__all__ = [
    "ModelConfig",
    "RandomTape",
    "ServiceLaw",
    "draw",
    "sample_service",
    "Arc",
    "FULL_CIRCLE",
    "dist",
    "grow_arc",
    "vec_dist",
    "CircleProfile",
    "LineProfile",
    "PotentialProcess",
    "Regime",
    "constant_state",
    "empty_state",
    "is_proper",
    "ExplicitProcess",
    "PollingProcess",
    "run_until_regeneration",
    "select_target",
    "velocity",
    "Constants",
    "derive_constants",
    "dominating_walk",
    "drift_experiment",
    "functional_B",
    "functional_N",
    "run_to_stopping",
    "small_B_regeneration",
    "valley_set",
    "normalize",
    "periodic_extension",
    "run_coupled",
    "truncate",
    "alpha_unimodal_check",
    "block_params",
    "detect_blocks",
    "renewal_transience",
    "strong_transience_check",
]
