"""Rational zero/pole dynamics for Hele-Shaw flow and partial balayage."""
from .errors import *  # noqa: F401,F403
from .rational import (  # noqa: F401
    RationalMap,
    Primitive,
    PartialFractions,
    reflect,
    conjugate_reflect,
    eval_g,
    eval_f,
    partial_fractions,
    residue_moments,
)
from .dynamics import (  # noqa: F401
    PGState,
    Event,
    Trajectory,
    constant_rate,
    dynamics_coefficients,
    poisson_P,
    correction_R,
    state_derivative,
    step,
    integrate,
    transition_boundary,
    restart_after_transition,
    restart_path,
    lk_admissible,
    subordination_trajectory,
)
from .observables import (  # noqa: F401
    harmonic_moments,
    counting_number,
    counting_numbers,
    boundary_samples,
    pg_residual,
    quadrature_identity_residual,
)
from .reference import (  # noqa: F401
    ScenarioTag,
    reference_state,
    reference_map,
    reference_schedule,
    reference_coefficients_lk,
)
from .balayage import (  # noqa: F401
    Grid,
    GridField,
    BalayageOutcome,
    CoveringMap,
    covering_map,
    bal,
    weak_step,
    weighted_blowup,
    star_shaped,
    pushforward,
    counting_density,
    compatibility_residual,
)

__version__ = "0.1.0"
