"""Neumann heat semigroup on two half-spaces: kernels, norms and a Picard solver."""

from .grid import GridSpec, ScalarField, SpaceTimeField, SpaceTimeVectorField, VectorField
from .kernel import gaussian_kernel, kernel_mass, neumann_kernel, neumann_kernel_gradient
from .semigroup import build_extension, duhamel_divergence, neumann_extend, neumann_extend_direct
from .norms import (
    NormReport,
    ParabolicBallFamily,
    bmo_inv_neumann_norm,
    bmo_neumann_norm,
    norm_report,
    path_norm,
    tent_inf1_norm,
    tent_inf2_norm,
    tmo_norm,
    weighted_linf_norm,
)
from .characterization import (
    divergence_embedding,
    extension_equivalence_suite,
    trace_forward,
    trace_roundtrip,
)
from .solver import (
    BlowUpError,
    SolverConfig,
    SolverDiagnostics,
    bilinear_A,
    picard_solve,
    split_A,
    theta,
)

__version__ = "0.1.0"
