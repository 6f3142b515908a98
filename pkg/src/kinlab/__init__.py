"""Finite-state laboratory for open-system jump-process kinetics."""

__version__ = "0.1.0"

from .model import (
    ConfigError,
    CorrelationProfile,
    ExperimentConfig,
    KernelReport,
    MicroGrid,
    ModelSpec,
    ValidationError,
    build_initial_state,
    builtin_kernel,
    load_model,
    load_model_file,
    tiny_model,
    validate_kernel,
)
from .sectors import SectorFunction, SequenceState
from .operators import (
    GeneratorMatrix,
    TRACER,
    build_dual_generator,
    build_forward_generator,
    compose_semigroup_on_partition,
    evolve,
)
from .combinatorics import (
    dual_cumulant,
    enumerate_dissections,
    enumerate_partitions,
    forward_cumulant,
    verify_cluster_expansion,
)
from .hierarchy import (
    ObservableSeq,
    additive_observable,
    additive_reduced_initial,
    additive_solution,
    dual_bbgky_rhs,
    dual_bbgky_solution,
    evolve_full,
    mean_value_full,
    mean_value_reduced,
    reduce_observable,
    reduce_state,
)
from .kinetic import (
    DualityReport,
    KineticEngine,
    TracerDistribution,
    duality_check,
    fp_rhs,
    generating_V,
    integrate_fp,
    reduced_distribution,
    scattering_cumulant,
    state_functional,
)
from .montecarlo import (
    Configuration,
    Estimate,
    EventChannel,
    estimate_mean,
    estimate_means,
    gillespie_step,
    sample_initial,
    simulate_trajectory,
)
