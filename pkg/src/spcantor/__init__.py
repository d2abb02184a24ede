"""s-parabolic Cantor sets, fractional heat kernels and caloric capacity
estimates."""

__version__ = "0.1.0"

from .cantor import (
    CantorTree,
    SParams,
    build_tree,
    critical_ratio,
    doubling_search,
    growth_check,
    lebesgue_measure,
    min_branching,
    small_boundary_check,
)
from .capacity import (
    CapacityReport,
    bmo_estimate,
    corner_constant,
    gamma_aux,
    gamma_plus_lower,
    ratio_report,
    run_single,
    theorem_bound,
)
from .geometry import (
    Box,
    SPCube,
    SPoint,
    boundary_dist,
    corner_subcube,
    sp_dilate,
    sp_dist,
    sp_norm,
    temporal_reflect,
)
from .kernel import (
    KernelSpec,
    Profile,
    conj_grad_eval,
    grad_ps_eval,
    grad_values,
    kernel_bound_audit,
    normalization_mass,
    ps_eval,
    ps_values,
)
from .multiscale import (
    MartingaleDecomposition,
    ScaleAnalysis,
    energy_identity_check,
    lemma_suite,
    orthogonality_check,
    p_sequence,
    project,
    stop_scales,
)
from .operator import (
    PairKernelMatrix,
    PsOperator,
    QuadratureSpec,
    op_norm_lower,
    sup_norm_estimate,
)
