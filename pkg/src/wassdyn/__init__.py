"""Set-valued dynamics, viability and tangent cones over empirical measures."""

from .measure import (
    DiscreteMeasure,
    SampledMap,
    canonicalize,
    lp_seminorm,
    measures_close,
    moment_p,
    pushforward,
    tail_mass,
    translate_pushforward,
)
from .transport import (
    MeasureCloud,
    TransportPlan,
    coupling_from_maps,
    delta_local,
    dist_to_cloud,
    hausdorff,
    wasserstein,
    wasserstein_distance,
)
from .calculus import (
    conjugate_exponent,
    duality_map,
    pnorm_gap,
    remainder,
    superdiff_gap,
)
from .stepfn import StepFunction, as_stepfn
from .rng import SplitMix64
from .dynamics import (
    MeasureCurve,
    Selection,
    SetValuedField,
    VelocityField,
    ac_trace,
    attraction_field,
    constant_field,
    dcc_distance,
    filippov_track,
    flow_step,
    interaction_drift,
    linear_field,
    mismatch,
    moment_trace,
    reachable_cloud,
    selection_field,
    solve_continuity,
    solve_inclusion,
)
from .constraints import (
    Ball,
    ConstraintSet,
    ConstraintTube,
    EpigraphConstraint,
    Polytope,
    SupportConstraint,
    ball_tube,
    epigraph_distance,
    epigraph_project,
    lift_measure,
    second_moment_functional,
    split_lifted,
    static_tube,
    support_distance,
    support_project,
    tube_at,
)
from .cones import (
    ConeReport,
    TangentDirection,
    adjacent_membership_support,
    contingent_quotient,
    epigraph_cone_test,
    graph_contingent_quotient,
    lower_dir_derivative,
)
from .viability import (
    DistanceTrace,
    ViabilityReport,
    build_viable_curve,
    check_empirical_invariance,
    check_invariance_condition,
    check_viability_condition,
    chebyshev_times,
    gronwall_monitor,
    initial_velocity_diagnostic,
    necessary_condition_probe,
    reachable_velocity_search,
)

__version__ = "0.1.0"
