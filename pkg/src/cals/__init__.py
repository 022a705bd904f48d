"""Concurrent alternating least squares for CP tensor decomposition.

Fits many CP models of one dense tensor at the same time by fusing their
per-iteration MTTKRP operations into a single wide matrix product, raising
arithmetic intensity without changing any individual result.
"""

from .als import (
    ConvergenceConfig,
    LineSearchConfig,
    NnlsState,
    NonConvergedNnlsWarning,
    fast_error,
    fit_from_error,
    line_search_step,
    nnls_update,
    run_single_als,
    update_factor,
)
from .bench import BenchRecord, TppModel, tpp
from .driver import ExecutionMode, SegmentTrace, run
from .io import generate_synthetic, read_tensor, write_tensor
from .model import Model, ModelStatus
from .mttkrp import (
    MttkrpVariant,
    MttkrpWorkspace,
    fused_mttkrp,
    mttkrp,
    mttkrp_flops,
    select_variant,
)
from .multimatrix import (
    DEFAULT_R_STAR,
    CapacityError,
    MultiMatrix,
    MultiMatrixSet,
)
from .tensor import (
    DenseTensor,
    gramian,
    hadamard,
    hadamard_fold,
    khatri_rao,
    unfold,
)

__version__ = "0.1.0"

__all__ = [
    "BenchRecord",
    "CapacityError",
    "ConvergenceConfig",
    "DEFAULT_R_STAR",
    "DenseTensor",
    "ExecutionMode",
    "LineSearchConfig",
    "Model",
    "ModelStatus",
    "MttkrpVariant",
    "MttkrpWorkspace",
    "MultiMatrix",
    "MultiMatrixSet",
    "NnlsState",
    "NonConvergedNnlsWarning",
    "SegmentTrace",
    "TppModel",
    "fast_error",
    "fit_from_error",
    "fused_mttkrp",
    "generate_synthetic",
    "gramian",
    "hadamard",
    "hadamard_fold",
    "khatri_rao",
    "line_search_step",
    "mttkrp",
    "mttkrp_flops",
    "nnls_update",
    "read_tensor",
    "run",
    "run_single_als",
    "select_variant",
    "tpp",
    "unfold",
    "update_factor",
    "write_tensor",
]
