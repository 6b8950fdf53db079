"""Reduced basis pipeline for the parametrized American put obstacle problem."""

from .errors import (
    AmrbError,
    AssemblyError,
    BasisSaturationError,
    ConeSaturationError,
    DegenerateInputError,
    IllConditionedBasisError,
    InfSupFailureError,
    ModelCorruptionError,
    ModelLoadError,
    ModelVersionError,
    NumericalBreakdownError,
    SaturationError,
    SolverDivergenceError,
)
from .fem import (
    AffineOperatorSet,
    DualVector,
    Mesh1D,
    ObstacleData,
    ParameterBox,
    ParameterVector,
    assemble_operators,
    build_mesh,
    obstacle_data,
    riesz_supremizer,
    v_project,
    w_inner,
    w_norm,
)
from .truth import (
    LcpProblem,
    SchemeConfig,
    Trajectory,
    solve_lcp,
    solve_trajectory,
    theta_step,
    trajectory_residuals,
    write_trajectory_csv,
)
from .offline import (
    DualConeBasis,
    GreedyDiagnostics,
    PrimalBasis,
    ReducedModel,
    SnapshotStore,
    angle_greedy,
    angle_to_subspace,
    assemble_reduced,
    build_reduced_model,
    build_reduced_model_from_store,
    enrich_with_supremizers,
    generate_snapshots,
    load_model,
    pod1,
    pod_greedy,
    sample_training_set,
    save_model,
    verify_model,
)
from .online import (
    ErrorReport,
    OnlineData,
    ReducedTrajectory,
    err_linf,
    error_metrics,
    online_setup,
    reconstruct,
    reconstruct_multipliers,
    reconstruct_states,
    reduced_step,
    reduced_trajectory,
)

__version__ = "0.1.0"
