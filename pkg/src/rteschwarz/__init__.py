"""Low-rank accelerated overlapping Schwarz solver for steady 1+1D radiative transfer."""

from .discretization import (
    AngularQuadrature,
    BoundaryTrace,
    DecompositionGeometry,
    Grid1D,
    GridAlignmentError,
    MediaField,
    boundary_inner,
    boundary_norm,
    build_decomposition,
    build_grid,
    build_quadrature,
    eval_sigma,
    h12_norm,
    ha_norm,
    homogenized_media,
    homogenized_sigma,
    inflow_trace,
    interior_inner,
    interior_norm,
    oscillatory_media,
    table_media,
    trace_weights,
    trapezoid_weights,
)
from .transport import (
    LocalSystem,
    NonconvergenceError,
    SolveReport,
    SolverSettings,
    apply_P,
    apply_P_star_oracle,
    apply_S_s_adjoint,
    apply_S_s_adjoint_continuous,
    assemble_local,
    assemble_local_adjoint,
    flux_profile,
    probe_matrix,
    restrict_interior,
    solve_local,
    take_exchange_traces,
)
from .rsvd import (
    AdjointConsistencyError,
    LowRankMap,
    RsvdConfig,
    StaleMapError,
    adaptive_range,
    apply_lowrank,
    rng_for,
    rsvd_matrix,
    rsvd_operator,
    truncate,
    weighted_orthonormalize,
)
from .schwarz import (
    FullSolveBackend,
    LowRankBackend,
    PartitionOfUnity,
    SchwarzRun,
    SchwarzState,
    assemble_global,
    build_partition,
    init_state,
    relative_error,
    run_schwarz,
    schwarz_step,
)
from .config import ConfigError, ExperimentConfig, Problem, build_problem, load_config
from .cache import (
    CacheCorruptError,
    CacheError,
    CacheFingerprintError,
    CacheMagicError,
    CacheVersionError,
    MapCache,
    load_cache,
    save_cache,
)

__version__ = "0.1.0"
