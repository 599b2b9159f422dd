"""Exact contraction of abelian lattice-gauge PEPS on a torus.

Modules, bottom up: ``symmetry`` (groups and link operators), ``tensor``
(site tensors), ``transfer`` (transfer operators and their reductions),
``engine`` (row matrices, norms, Wilson loops), ``oracle`` (brute-force
states), ``analysis`` (Creutz ratios, fits, classification) and ``cli``.
"""

from .analysis import (
    FitReport,
    Phase,
    PhaseReport,
    Thresholds,
    WilsonTable,
    classify,
    creutz,
    fit_decay,
    local_criteria,
)
from .engine import (
    Contraction,
    LoopSpec,
    ResourceBudgetError,
    RowMatrix,
    SpectrumTable,
    TorusSpec,
    WilsonResult,
    build_row,
    epar_spectrum,
    norm,
    wilson_analytic_z2,
    wilson_exact,
    wilson_exact_unprojected,
    wilson_thermo,
)
from .oracle import StateVector, build_state, check_gauge_invariance, direct_wilson
from .symmetry import GroupSpec, LinkKind, LinkOperator, flux_operator, gauge_rotation
from .tensor import (
    GaugeTensor,
    Z2Params,
    build_z2_tensor,
    build_zn_tensor,
    check_gauge_symmetry,
)
from .transfer import (
    DoubledLegBasis,
    FluxKind,
    FluxSpec,
    ReducedTransfer,
    SpectralReduction,
    TransferOperator,
    build_transfer,
    flux_svd,
    project,
    tau0_blocks,
    tau0_spectral,
)

__version__ = "0.1.0"
