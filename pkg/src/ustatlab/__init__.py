"""Hilbert-space-valued U-statistics with a Monte Carlo verification harness.

The library computes complete, decoupled, weighted, and incomplete
U-statistics whose kernels take values in a finite-dimensional (weighted)
coordinate space, extracts exact Hoeffding projections and degeneracy
orders on finite supports, and ships experiments that probe the structure
of the deviation bounds these objects satisfy: tail-decay exponents,
martingale maximal inequalities, incomplete-design normalizations, and
decoupling domination.
"""

from .distributions import (
    EnumerationBudgetError,
    FiniteDistribution,
    SamplerSpec,
    draw_iid,
    exact_expectation,
    mix_ids,
    substream,
)
from .hilbert import HilbertPoint, HilbertSpace, SpaceMismatchError, axpy, inner, norm
from .hoeffding import (
    DecompositionCheck,
    DegeneracyReport,
    ProjectedKernel,
    decomposition_check,
    degeneracy_order,
    project,
    project_mc,
)
from .kernels import (
    KernelSpec,
    SupBoundWarning,
    batch_values,
    centered,
    empirical_indicator,
    empirical_indicator_from,
    evaluate,
    gini,
    product,
    spatial_sign,
    symmetrize,
)
from .martingale import (
    InequalityCheckReport,
    InequalityEntry,
    MartingalePath,
    check_conv_tail_lemma,
    check_hilbert_inequality,
    check_real_inequality,
    simulate_ensemble,
    simulate_mds,
    verify_conv_grid,
    verify_grid,
)
from .montecarlo import (
    BoundEnvelope,
    DecoupleReport,
    EnvelopeValue,
    ExperimentConfig,
    MatchingPointReport,
    ScalingCell,
    ScalingReport,
    TailScanReport,
    decouple_compare,
    envelope_eval,
    fit_tail_exponent,
    incomplete_scaling_experiment,
    matching_point_compare,
    replicate,
    tail_scan,
)
from .ustats import (
    DecoupledSample,
    IncompleteResult,
    RunningMaxResult,
    SamplingDesign,
    Selection,
    WeightScheme,
    complete,
    decoupled,
    draw_design,
    enumerate_inc,
    inc_count,
    incomplete,
    running_max,
    running_max_embedding_check,
    weighted,
    weighted_decomposition_check,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "EnumerationBudgetError",
    "FiniteDistribution",
    "SamplerSpec",
    "draw_iid",
    "exact_expectation",
    "mix_ids",
    "substream",
    "HilbertPoint",
    "HilbertSpace",
    "SpaceMismatchError",
    "axpy",
    "inner",
    "norm",
    "DecompositionCheck",
    "DegeneracyReport",
    "ProjectedKernel",
    "decomposition_check",
    "degeneracy_order",
    "project",
    "project_mc",
    "KernelSpec",
    "SupBoundWarning",
    "batch_values",
    "centered",
    "empirical_indicator",
    "empirical_indicator_from",
    "evaluate",
    "gini",
    "product",
    "spatial_sign",
    "symmetrize",
    "InequalityCheckReport",
    "InequalityEntry",
    "MartingalePath",
    "check_conv_tail_lemma",
    "check_hilbert_inequality",
    "check_real_inequality",
    "simulate_ensemble",
    "simulate_mds",
    "verify_conv_grid",
    "verify_grid",
    "BoundEnvelope",
    "DecoupleReport",
    "EnvelopeValue",
    "ExperimentConfig",
    "MatchingPointReport",
    "ScalingCell",
    "ScalingReport",
    "TailScanReport",
    "decouple_compare",
    "envelope_eval",
    "fit_tail_exponent",
    "incomplete_scaling_experiment",
    "matching_point_compare",
    "replicate",
    "tail_scan",
    "DecoupledSample",
    "IncompleteResult",
    "RunningMaxResult",
    "SamplingDesign",
    "Selection",
    "WeightScheme",
    "complete",
    "decoupled",
    "draw_design",
    "enumerate_inc",
    "inc_count",
    "incomplete",
    "running_max",
    "running_max_embedding_check",
    "weighted",
    "weighted_decomposition_check",
]
