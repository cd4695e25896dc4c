"""Grid-based Hamilton-Jacobi reachability with reach-avoid-stabilize synthesis."""

from .acs import (
    AdmissibleControlSet,
    HalfSpace,
    avoid_acs,
    converged_avoid_acs,
    intersect,
    is_empty,
    reach_acs,
    sample,
    stabilize_acs,
)
from .backend import active_backend, set_backend
from .dynamics import (
    ControlAffineSystem,
    builtin_system,
    eval_rhs,
    hamiltonian,
    optimal_control,
    optimal_disturbance,
)
from .grids import (
    Grid,
    ScalarField,
    gradient,
    interpolate,
    node_coordinates,
    upwind_derivative_pair,
)
from .shapes import ShapeExpr, axis_box, ball, complement, half_plane, intersection, rasterize, union
from .solver import (
    ValueSnapshots,
    cfl_dt,
    estimate_min_invariant_offset,
    lf_step,
    solve_converged_avoid,
    solve_finite_horizon,
    solve_rclvf,
)
from .synthesis import (
    DisturbancePolicy,
    PrecomputedFields,
    RASProblem,
    RASResult,
    TimedShape,
    Trajectory,
    compute_I_M,
    hold_step,
    lyapunov_decay_audit,
    ras_underapprox,
    verify_trajectory,
)

__version__ = "0.1.0"
