"""Grid solvers and minimizing-movement simulators for nonlocal curvature flows.

Two families of nonlocal perimeters drive the flows: a windowed
oscillation energy at a fixed interaction radius and a truncated
fractional energy with exponent s.  Both admit exact discrete duals, a
common resolvent (ROF-type) step problem with certificates, and the same
distance-threshold time stepper.
"""

from .errors import (
    BoundaryTouchError,
    BudgetExceededError,
    ConfigError,
    DomainTooSmallError,
    FormatError,
    HaloError,
    NestingViolationError,
    NlflowError,
    NotConvergedError,
    WindowBoundsError,
)
from .grid import (
    BallStencil,
    GridSpec,
    ScalarField,
    SetMask,
    ball_offsets,
    halo_band,
    window_extrema,
)
from .distance import SignedDistanceField, set_distance, signed_distance
from .osc_energy import (
    OscDual,
    OscEnergyParams,
    WeightedOscParams,
    dual_certificate_check,
    jf_value,
    jr_value,
    osc_divergence,
    perimeter_osc,
    project_osc_dual,
)
from .frac_energy import (
    FracDual,
    FracEnergyParams,
    cs_constant,
    div_s,
    frac_dual_check,
    js_value,
    perimeter_frac,
)
from .rof_solver import (
    RofProblem,
    RofSolution,
    comparison_check,
    lipschitz_check,
    rof_objective,
    solve_rof,
    threshold_solution,
)
from .flow import (
    FlowConfig,
    FlowTrajectory,
    LevelSetState,
    atw_step,
    avoidance_check,
    ball_benchmark,
    ball_probe,
    lattice_disk,
    run_flow,
    run_levelset,
    superflow_inequality_check,
)
from .curvature import (
    CurvatureResult,
    DiskProbe,
    EllipseProbe,
    HalfSpaceProbe,
    ball_constant,
    frac_curvature,
    minkowski_curvature,
)
from .oracle import (
    EnumerationBudget,
    brute_distance,
    brute_pairsum,
    brute_window,
    enumerate_geometric,
    exact_rof,
    subgradient_rof,
)
from .shapes import SplitMix64, builtin_shapes

__version__ = "0.1.0"
