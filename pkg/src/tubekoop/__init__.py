"""Parameter-varying Koopman identification and tube MPC on the lifted model.

Pipeline: collect snapshot data at fixed working points (simlab), lift it
(lifting), identify per-point lifted models and interpolate them (edmd,
lpv), synthesize a certified feedback gain over the vertex family
(synthesis, sdp), bound the error tube (sets) and close the loop with a
constrained receding-horizon controller (mpc, qp). The cli module wires the
stages into file-based commands.
"""

from .edmd import RankDeficientData, SnapshotSet, identify_local, identify_output_map, merge_snapshot_sets
from .lifting import Monomial, ThinPlateRbf, lift_batch, lift_state, make_monomial_basis, make_thin_plate_basis, vdp_monomial_basis
from .lpv import (
    LocalModel,
    ParamVaryingKoopman,
    estimate_disturbance_set,
    evaluate,
    fit_param_varying,
    interp_weights,
    predict,
)
from .mpc import (
    ClosedLoopResult,
    InitialInfeasibility,
    MpcConfig,
    MpcSolution,
    NominalLiftedPlant,
    build_qp,
    run_closed_loop,
    tube_control,
)
from .qp import QpProblem, QpSolution
from .sets import (
    EmptyTightenedSet,
    HPolytope,
    NotContractive,
    RpiResult,
    Zonotope,
    box_polytope,
    box_zonotope,
    interval_hull,
    linear_map,
    minkowski_sum,
    pontryagin_diff,
    rpi_outer_approx,
    support,
    zonotope_contains,
)
from .simlab import (
    Constant,
    ForecastUnavailable,
    PhysicalPlant,
    RandomWalk,
    Schedule,
    SumOfSines,
    collect_identification_data,
    cumulative_cost,
    forecast,
    lorenz_step,
    make_sum_of_sines,
    monte_carlo_prediction,
    rmse,
    sample_parameter,
    snapshots_from_episodes,
    vdp_step,
)
from .synthesis import (
    QuadraticStabilityFailure,
    SolverStall,
    TubeGain,
    closed_loop_maps,
    lift_weights,
    solve_gain,
    verify_certificate,
)

__version__ = "0.1.0"

from . import serialize  # noqa: E402  (needs the classes above)
