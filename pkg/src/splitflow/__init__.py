"""Operator-splitting solver for degenerate conservative-dissipative equations.

Evolves  ∂t rho + div(rho b[rho]) = div(A (∇rho + rho ∇f))  on a truncated
grid by alternating an exact (semi-Lagrangian) transport phase with an
entropic proximal step of the free energy under the perturbed quadratic cost
<(A + hI)^{-1}(x-y), (x-y)>.
"""

from .errors import (
    ConfigurationError,
    DegenerateDensityError,
    OracleError,
    SizeError,
    SolverConvergenceError,
    TruncationError,
)
from .grids import (
    Density,
    Functionals,
    Grid,
    entropy,
    entropy_parts,
    free_energy,
    l1_distance,
    normalize,
    read_density,
    second_moment,
    write_density,
)
from .models import (
    DiffusionMatrix,
    DriftField,
    Model,
    check_divergence_free,
    check_measure_lipschitz,
    eval_drift,
    preset_generalized_langevin,
    preset_kolmogorov_chain,
    preset_vlasov_fpe,
    preset_vpfp_regularized,
    preset_wigner_fpe,
)
from .oracles import exact_jko_small, exact_ot_small
from .ot import (
    CostSpec,
    JkoResult,
    ScalingState,
    build_cost,
    euler_lagrange_residual,
    jko_step,
    sinkhorn,
    wasserstein2,
)
from .scheme import (
    SchemeConfig,
    SchemeError,
    StepRecord,
    Trajectory,
    convergence_study,
    evaluate_interpolant,
    paper_default_epsilon,
    run,
    scaling_guard,
    weak_residual,
)
from .transport import FlowConfig, check_entropy_preservation, continuous_interpolant, integrate_flow, push_forward

__version__ = "0.1.0"
