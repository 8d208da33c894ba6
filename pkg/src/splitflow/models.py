"""PDE data: drift b[rho], constant diffusion matrix A, potential f.

A model fixes the evolution  ∂t rho + div(rho b[rho]) = div(A (∇rho + rho ∇f))
through three ingredients:

  * a drift split into a local field plus an interaction kernel convolved
    with the density (McKean-Vlasov term),
  * a constant symmetric positive semi-definite diffusion matrix A,
  * a nonnegative potential f with an analytically supplied gradient.

Field callables are vectorized: they take points of shape (npts, d) and
return (npts, d) for vector fields or (npts,) for scalars.

Presets cover the standard kinetic examples: Vlasov-Fokker-Planck, linear
Wigner-Fokker-Planck, regularized Vlasov-Poisson-Fokker-Planck, oscillator
chains of Kolmogorov type, and the generalized Vlasov-Langevin system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError
from .grids import Density, Grid

VectorField = Callable[[np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray], np.ndarray]

PSD_TOL = -1e-12
_INVERTIBLE_TOL = 1e-12


@dataclass(frozen=True)
class DiffusionMatrix:
    """Constant symmetric positive semi-definite d x d matrix."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigurationError(f"diffusion matrix must be square, got {m.shape}")
        if not np.array_equal(m, m.T):
            raise ConfigurationError("diffusion matrix must be symmetric as stored")
        if float(np.linalg.eigvalsh(m).min()) < PSD_TOL:
            raise ConfigurationError("diffusion matrix has a negative eigenvalue")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    @property
    def is_invertible(self) -> bool:
        return float(self.eigenvalues.min()) > _INVERTIBLE_TOL

    @property
    def is_diagonal(self) -> bool:
        return np.array_equal(self.entries, np.diag(np.diag(self.entries)))


@dataclass(frozen=True)
class DriftField:
    """Divergence-free drift: local field plus convolved interaction kernel.

    The kernel acts on the first `kernel_dim` coordinates; its convolution
    with the density's leading marginal is *added* to drift components
    [kernel_target, kernel_target + kernel_dim).  Sign conventions (e.g. the
    minus in front of an attractive force) are folded into the kernel by the
    presets.
    """

    local: VectorField | None
    kernel: VectorField | None = None
    kernel_dim: int = 0
    kernel_target: int = 0

    def __post_init__(self):
        if self.kernel is not None and self.kernel_dim < 1:
            raise ConfigurationError("kernel_dim must be >= 1 when a kernel is present")


@dataclass(frozen=True)
class Model:
    """Immutable triple (b, A, f); all evaluations are pure functions."""

    dim: int
    drift: DriftField
    diffusion: DiffusionMatrix
    potential: ScalarField | None = None
    potential_gradient: VectorField | None = None
    name: str = "custom"
    diffusion_invertible: bool | None = None

    def __post_init__(self):
        if self.diffusion.dim != self.dim:
            raise ConfigurationError(
                f"diffusion matrix is {self.diffusion.dim}x{self.diffusion.dim}, model dim is {self.dim}"
            )
        if (self.potential is None) != (self.potential_gradient is None):
            raise ConfigurationError("supply both potential and potential_gradient, or neither")
        if self.drift.kernel is not None and self.drift.kernel_dim > self.dim:
            raise ConfigurationError("kernel_dim exceeds model dimension")
        if self.diffusion_invertible is None:
            object.__setattr__(self, "diffusion_invertible", self.diffusion.is_invertible)
        elif self.diffusion_invertible and not self.diffusion.is_invertible:
            raise ConfigurationError("model flagged invertible but A is singular")

    def potential_values(self, grid: Grid) -> np.ndarray:
        if self.potential is None:
            return np.zeros(grid.shape)
        return np.asarray(self.potential(grid.points), dtype=float).reshape(grid.shape)


# ---------------------------------------------------------------------------
# Drift evaluation
# ---------------------------------------------------------------------------


def _leading_marginal(rho: Density, d1: int) -> np.ndarray:
    """Marginal density on the first d1 axes (trailing axes integrated out)."""
    g = rho.grid
    vals = rho.values
    if d1 < g.ndim:
        trailing_vol = float(np.prod(g.spacing[d1:]))
        vals = vals.sum(axis=tuple(range(d1, g.ndim))) * trailing_vol
    return vals


def convolve_kernel(kernel: VectorField, rho: Density, d1: int, chunk: int = 512) -> np.ndarray:
    """(K * rho) on the leading d1 sub-grid by direct weighted double sum.

    Returns an array of shape subgrid_shape + (d1,).  Reference semantics for
    the non-local term; grids are desk-scale so the O(m^2) sum is acceptable.
    """
    g = rho.grid
    sub = Grid(g.lower[:d1], g.upper[:d1], g.shape[:d1])
    pts = sub.points
    marg = _leading_marginal(rho, d1).reshape(-1)
    w = sub.cell_volume
    out = np.empty_like(pts)
    for start in range(0, pts.shape[0], chunk):
        block = pts[start : start + chunk]
        diffs = block[:, None, :] - pts[None, :, :]
        kvals = np.asarray(kernel(diffs.reshape(-1, d1)), dtype=float).reshape(diffs.shape)
        out[start : start + chunk] = np.einsum("ijk,j->ik", kvals, marg) * w
    return out.reshape(sub.shape + (d1,))


def eval_drift(model: Model, rho: Density, grid: Grid) -> np.ndarray:
    """b[rho] at every cell center, shape grid.shape + (d,)."""
    if model.dim != grid.ndim:
        raise ConfigurationError(f"model dim {model.dim} != grid dim {grid.ndim}")
    if rho.grid != grid:
        raise ConfigurationError("density grid does not match evaluation grid")
    d = model.dim
    if model.drift.local is not None:
        fld = np.asarray(model.drift.local(grid.points), dtype=float).reshape(grid.shape + (d,))
        fld = fld.copy()
    else:
        fld = np.zeros(grid.shape + (d,))
    if model.drift.kernel is not None:
        d1 = model.drift.kernel_dim
        conv = convolve_kernel(model.drift.kernel, rho, d1)
        # broadcast the leading-subgrid result along the trailing axes
        expand = conv.reshape(grid.shape[:d1] + (1,) * (grid.ndim - d1) + (d1,))
        t = model.drift.kernel_target
        fld[..., t : t + d1] += expand
    return fld


# ---------------------------------------------------------------------------
# Assumption checks (report-style diagnostics)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DivergenceReport:
    max_divergence: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_divergence <= self.tol


def check_divergence_free(model: Model, rho: Density, grid: Grid, tol: float = 1e-8) -> DivergenceReport:
    """Central-difference divergence of b[rho] at interior nodes."""
    if min(grid.shape) < 3:
        raise ConfigurationError("divergence check needs >= 3 points per axis")
    fld = eval_drift(model, rho, grid)
    interior = tuple(slice(1, -1) for _ in range(grid.ndim))
    div = np.zeros(tuple(n - 2 for n in grid.shape))
    for ax in range(grid.ndim):
        comp = fld[..., ax]
        up = [slice(1, -1)] * grid.ndim
        down = [slice(1, -1)] * grid.ndim
        up[ax] = slice(2, None)
        down[ax] = slice(0, -2)
        div += (comp[tuple(up)] - comp[tuple(down)]) / (2.0 * grid.spacing[ax])
    del interior
    return DivergenceReport(float(np.abs(div).max()), tol)


def check_potential_nonnegative(model: Model, grid: Grid) -> bool:
    return bool(np.all(model.potential_values(grid) >= 0.0))


def check_potential_gradient(model: Model, grid: Grid) -> float:
    """Max mismatch between supplied gradient and central differences of f."""
    if model.potential is None:
        return 0.0
    f = model.potential_values(grid)
    g = np.asarray(model.potential_gradient(grid.points), dtype=float).reshape(
        grid.shape + (model.dim,)
    )
    worst = 0.0
    for ax in range(grid.ndim):
        up = [slice(1, -1)] * grid.ndim
        down = [slice(1, -1)] * grid.ndim
        mid = [slice(1, -1)] * grid.ndim
        up[ax] = slice(2, None)
        down[ax] = slice(0, -2)
        fd = (f[tuple(up)] - f[tuple(down)]) / (2.0 * grid.spacing[ax])
        worst = max(worst, float(np.abs(fd - g[tuple(mid) + (ax,)]).max()))
    return worst


def check_measure_lipschitz(model: Model, pairs: Sequence[tuple[Density, Density]], grid: Grid) -> float:
    """Empirical constant sup over pairs of ∫‖b[nu]-b[mu]‖² dnu / W2²(nu, mu).

    Diagnostic only: the theoretical constant is non-constructive, so this
    reports the worst observed ratio.  Pairs with W2 ~ 0 are skipped.
    """
    from .ot import wasserstein2  # local import: keeps module layering acyclic

    best = 0.0
    for mu, nu in pairs:
        b_nu = eval_drift(model, nu, grid)
        b_mu = eval_drift(model, mu, grid)
        num = float((((b_nu - b_mu) ** 2).sum(axis=-1) * nu.values).sum() * grid.cell_volume)
        w2 = wasserstein2(mu, nu)
        if w2 < 1e-9:
            continue
        best = max(best, num / w2**2)
    return best


# ---------------------------------------------------------------------------
# Regularized Coulomb kernel (closed forms used by the VPFP preset)
# ---------------------------------------------------------------------------


def unit_sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d: 2 pi^{d/2} / Gamma(d/2)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def coulomb_potential(r: np.ndarray, eps: float, d: int) -> np.ndarray:
    """Regularized interaction potential; log form in dimension 2."""
    r = np.atleast_2d(r)
    s = (r**2).sum(axis=-1) + eps
    w = unit_sphere_area(d)
    if d == 2:
        return (w / 2.0) * np.log(s)
    return w / s ** ((d - 2) / 2.0)


def coulomb_gradient(r: np.ndarray, eps: float, d: int) -> np.ndarray:
    r = np.atleast_2d(r)
    s = (r**2).sum(axis=-1, keepdims=True) + eps
    w = unit_sphere_area(d)
    if d == 2:
        return w * r / s
    return -w * (d - 2) * r / s ** (d / 2.0)


def coulomb_hessian(r: np.ndarray, eps: float, d: int) -> np.ndarray:
    """Closed-form Hessian C_d [ delta_ij / s^{d/2} - d r_i r_j / s^{(d+2)/2} ]."""
    r = np.atleast_2d(r)
    s = (r**2).sum(axis=-1) + eps
    w = unit_sphere_area(d)
    c_d = w if d == 2 else -w * (d - 2)
    eye = np.eye(d)
    return c_d * (
        eye * s[..., None, None] ** (-d / 2.0)
        - d * r[..., :, None] * r[..., None, :] * s[..., None, None] ** (-(d + 2) / 2.0)
    )


def _max_over_radius(fn: Callable[[float], float], eps: float) -> float:
    # coarse scan then local refinement; the profiles peak at |r| = O(sqrt(eps))
    ts = np.linspace(0.0, 10.0 * math.sqrt(eps) + 10.0, 4001)
    vals = np.array([fn(t) for t in ts])
    t0 = ts[int(vals.argmax())]
    res = minimize_scalar(lambda t: -fn(abs(t)), bracket=(max(t0 - 0.1, 0.0), t0 + 0.1))
    return max(float(vals.max()), float(-res.fun))


def coulomb_gradient_bound(eps: float, d: int) -> float:
    """sup_r ‖∇Γ^ε(r)‖, located by a 1-d search in ‖r‖."""

    def norm_at(t: float) -> float:
        r = np.zeros((1, d))
        r[0, 0] = t
        return float(np.linalg.norm(coulomb_gradient(r, eps, d)[0]))

    return _max_over_radius(norm_at, eps)


def coulomb_lipschitz_bound(eps: float, d: int) -> float:
    """sup_r ‖∇²Γ^ε(r)‖₂, a Lipschitz constant for ∇Γ^ε."""

    def norm_at(t: float) -> float:
        r = np.zeros((1, d))
        r[0, 0] = t
        return float(np.linalg.norm(coulomb_hessian(r, eps, d)[0], 2))

    return _max_over_radius(norm_at, eps)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _block_diag_diffusion(block_sizes: Sequence[int], block_values: Sequence[np.ndarray | float]) -> DiffusionMatrix:
    d = sum(block_sizes)
    m = np.zeros((d, d))
    off = 0
    for size, val in zip(block_sizes, block_values):
        if np.isscalar(val):
            m[off : off + size, off : off + size] = float(val) * np.eye(size)
        else:
            m[off : off + size, off : off + size] = val
        off += size
    return DiffusionMatrix(m)


def _zero_scalar(x: np.ndarray) -> np.ndarray:
    return np.zeros(x.shape[0])


def _zero_vector(x: np.ndarray) -> np.ndarray:
    return np.zeros_like(x)


def preset_vlasov_fpe(
    grad_g: VectorField | None = None,
    kernel: VectorField | None = None,
    f_v: ScalarField | None = None,
    grad_f_v: VectorField | None = None,
    dim_x: int = 1,
) -> Model:
    """Kinetic Fokker-Planck with interaction: coordinates (x, v) in R^{2 dx}.

    b[rho](x, v) = (v, -(∇g(x) + K*rho(x))),  A = blockdiag(0, I),  f = f_v(v).
    With kernel=None this is the Kramers model.
    """
    dx = dim_x
    d = 2 * dx

    def local(pts: np.ndarray) -> np.ndarray:
        out = np.zeros_like(pts)
        out[:, :dx] = pts[:, dx:]
        if grad_g is not None:
            out[:, dx:] = -np.asarray(grad_g(pts[:, :dx]), dtype=float)
        return out

    force_kernel = None
    if kernel is not None:
        force_kernel = lambda r: -np.asarray(kernel(r), dtype=float)  # noqa: E731

    if f_v is None:
        pot, pot_grad = _zero_scalar, _zero_vector
    else:
        if grad_f_v is None:
            raise ConfigurationError("f_v given without grad_f_v")

        def pot(pts: np.ndarray) -> np.ndarray:
            return np.asarray(f_v(pts[:, dx:]), dtype=float)

        def pot_grad(pts: np.ndarray) -> np.ndarray:
            out = np.zeros_like(pts)
            out[:, dx:] = np.asarray(grad_f_v(pts[:, dx:]), dtype=float)
            return out

    return Model(
        dim=d,
        drift=DriftField(local, force_kernel, kernel_dim=dx if force_kernel else 0, kernel_target=dx),
        diffusion=_block_diag_diffusion([dx, dx], [0.0, 1.0]),
        potential=pot,
        potential_gradient=pot_grad,
        name="vlasov_fpe",
    )


def preset_wigner_fpe(alpha: float, beta: float, sigma: float, lam: float, dim_x: int = 1) -> Model:
    """Linearized Wigner-Fokker-Planck: full diffusion matrix, no perturbation.

    b(x, v) = ((beta*lam/sigma + 1) v, 0),  A = [[alpha, lam], [lam, sigma]]
    in d x d identity blocks,  f(v) = beta/(2 sigma) ‖v‖².  The 2x2 block
    matrix must be positive definite, so A is invertible and the cost skips
    the h-perturbation.
    """
    if alpha <= 0 or sigma <= 0 or beta <= 0:
        raise ConfigurationError("wigner_fpe needs alpha, beta, sigma > 0")
    if alpha * sigma - lam**2 <= 0:
        raise ConfigurationError("wigner_fpe block [[alpha,lam],[lam,sigma]] is not positive definite")
    dx = dim_x
    d = 2 * dx
    speed = beta * lam / sigma + 1.0

    def local(pts: np.ndarray) -> np.ndarray:
        out = np.zeros_like(pts)
        out[:, :dx] = speed * pts[:, dx:]
        return out

    a = np.zeros((d, d))
    a[:dx, :dx] = alpha * np.eye(dx)
    a[dx:, dx:] = sigma * np.eye(dx)
    a[:dx, dx:] = lam * np.eye(dx)
    a[dx:, :dx] = lam * np.eye(dx)

    def pot(pts: np.ndarray) -> np.ndarray:
        return (beta / (2.0 * sigma)) * (pts[:, dx:] ** 2).sum(axis=1)

    def pot_grad(pts: np.ndarray) -> np.ndarray:
        out = np.zeros_like(pts)
        out[:, dx:] = (beta / sigma) * pts[:, dx:]
        return out

    return Model(
        dim=d,
        drift=DriftField(local),
        diffusion=DiffusionMatrix(a),
        potential=pot,
        potential_gradient=pot_grad,
        name="wigner_fpe",
        diffusion_invertible=True,
    )


def preset_vpfp_regularized(
    grad_g: VectorField | None,
    eps_kernel: float,
    beta: float,
    sigma: float,
    dim_x: int = 2,
) -> Model:
    """Vlasov-Poisson-Fokker-Planck with regularized Coulomb interaction.

    Interaction force kernel -∇Γ^ε with Γ^ε(r) = ω_d (‖r‖²+ε)^{-(d-2)/2}
    (log form for d = 2); friction beta*v and diffusion sigma*I in velocity.
    """
    if eps_kernel <= 0:
        raise ConfigurationError("vpfp_reg needs eps_kernel > 0 (singular kernel unsupported)")
    if dim_x < 2:
        raise ConfigurationError("vpfp_reg needs position dimension >= 2")
    if beta <= 0 or sigma <= 0:
        raise ConfigurationError("vpfp_reg needs beta, sigma > 0")
    dx = dim_x
    d = 2 * dx

    def local(pts: np.ndarray) -> np.ndarray:
        out = np.zeros_like(pts)
        out[:, :dx] = pts[:, dx:]
        if grad_g is not None:
            out[:, dx:] = -np.asarray(grad_g(pts[:, :dx]), dtype=float)
        return out

    def force_kernel(r: np.ndarray) -> np.ndarray:
        return -coulomb_gradient(r, eps_kernel, dx)

    def pot(pts: np.ndarray) -> np.ndarray:
        return (beta / (2.0 * sigma)) * (pts[:, dx:] ** 2).sum(axis=1)

    def pot_grad(pts: np.ndarray) -> np.ndarray:
        out = np.zeros_like(pts)
        out[:, dx:] = (beta / sigma) * pts[:, dx:]
        return out

    return Model(
        dim=d,
        drift=DriftField(local, force_kernel, kernel_dim=dx, kernel_target=dx),
        diffusion=_block_diag_diffusion([dx, dx], [0.0, sigma]),
        potential=pot,
        potential_gradient=pot_grad,
        name="vpfp_reg",
    )


def preset_kolmogorov_chain(
    n: int,
    block_dim: int = 1,
    f_last: ScalarField | None = None,
    grad_f_last: VectorField | None = None,
) -> Model:
    """Oscillator chain b(x) = (x_2, ..., x_n, 0), noise on the last block.

    n = 1 is the heat/Ornstein-Uhlenbeck model (A = I, b = 0); n = 2 is the
    Kramers model without a background potential.
    """
    if n < 1:
        raise ConfigurationError("chain length n must be >= 1")
    b = block_dim
    d = n * b

    def local(pts: np.ndarray) -> np.ndarray:
        out = np.zeros_like(pts)
        if n > 1:
            out[:, : (n - 1) * b] = pts[:, b:]
        return out

    if f_last is None:
        pot, pot_grad = _zero_scalar, _zero_vector
    else:
        if grad_f_last is None:
            raise ConfigurationError("f_last given without grad_f_last")

        def pot(pts: np.ndarray) -> np.ndarray:
            return np.asarray(f_last(pts[:, (n - 1) * b :]), dtype=float)

        def pot_grad(pts: np.ndarray) -> np.ndarray:
            out = np.zeros_like(pts)
            out[:, (n - 1) * b :] = np.asarray(grad_f_last(pts[:, (n - 1) * b :]), dtype=float)
            return out

    return Model(
        dim=d,
        drift=DriftField(local),
        diffusion=_block_diag_diffusion([(n - 1) * b, b], [0.0, 1.0]) if n > 1 else DiffusionMatrix(np.eye(b)),
        potential=pot,
        potential_gradient=pot_grad,
        name="kolmogorov_chain",
    )


def _as_diagonal(mat: np.ndarray | Sequence[float], size: int, label: str) -> np.ndarray:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 0:
        return np.full(size, float(arr))
    if arr.ndim == 1:
        if arr.size != size:
            raise ConfigurationError(f"{label} diagonal has length {arr.size}, expected {size}")
        return arr
    if arr.shape != (size, size) or not np.array_equal(arr, np.diag(np.diag(arr))):
        raise ConfigurationError(f"{label} must be a diagonal {size}x{size} matrix")
    return np.diag(arr)


def preset_generalized_langevin(
    force: VectorField | None,
    kernel: VectorField | None,
    lambdas: Sequence[np.ndarray | float],
    alphas: Sequence[np.ndarray | float],
    dim_block: int = 1,
) -> Model:
    """Hamiltonian pair (q, p) coupled to m heat-bath blocks z^1..z^m.

    b = (p, -force(q) - K*rho(q) + sum_j Λ^j z^j, -Λ^1 p, ..., -Λ^m p),
    A = blockdiag(0, 0, I_{m d}),  f(z) = sum_j ½‖α^j z^j‖².
    Λ^j and α^j must be diagonal.
    """
    m = len(lambdas)
    if m < 1 or len(alphas) != m:
        raise ConfigurationError("need matching nonempty lists of lambdas and alphas")
    b = dim_block
    lam = [_as_diagonal(v, b, f"Lambda^{j+1}") for j, v in enumerate(lambdas)]
    alp = [_as_diagonal(v, b, f"alpha^{j+1}") for j, v in enumerate(alphas)]
    d = (2 + m) * b

    def local(pts: np.ndarray) -> np.ndarray:
        out = np.zeros_like(pts)
        q = pts[:, :b]
        p = pts[:, b : 2 * b]
        out[:, :b] = p
        acc = np.zeros_like(q)
        if force is not None:
            acc -= np.asarray(force(q), dtype=float)
        for j in range(m):
            zj = pts[:, (2 + j) * b : (3 + j) * b]
            acc += lam[j] * zj
            out[:, (2 + j) * b : (3 + j) * b] = -lam[j] * p
        out[:, b : 2 * b] = acc
        return out

    force_kernel = None
    if kernel is not None:
        force_kernel = lambda r: -np.asarray(kernel(r), dtype=float)  # noqa: E731

    def pot(pts: np.ndarray) -> np.ndarray:
        acc = np.zeros(pts.shape[0])
        for j in range(m):
            zj = pts[:, (2 + j) * b : (3 + j) * b]
            acc += 0.5 * ((alp[j] * zj) ** 2).sum(axis=1)
        return acc

    def pot_grad(pts: np.ndarray) -> np.ndarray:
        out = np.zeros_like(pts)
        for j in range(m):
            zj = pts[:, (2 + j) * b : (3 + j) * b]
            out[:, (2 + j) * b : (3 + j) * b] = alp[j] ** 2 * zj
        return out

    return Model(
        dim=d,
        drift=DriftField(local, force_kernel, kernel_dim=b if force_kernel else 0, kernel_target=b),
        diffusion=_block_diag_diffusion([2 * b, m * b], [0.0, 1.0]),
        potential=pot,
        potential_gradient=pot_grad,
        name="gen_langevin",
    )


def custom_tabulated(
    grid: Grid,
    drift_values: np.ndarray,
    potential_values: np.ndarray | None = None,
    potential_gradient_values: np.ndarray | None = None,
    name: str = "custom",
    diffusion: DiffusionMatrix | None = None,
) -> Model:
    """Model from grid-sampled fields (no expressions): used by the CLI.

    Off-center evaluations interpolate the tables multilinearly with zero
    extension, which only matters for diagnostics; the solver itself reads
    cell centers.
    """
    from scipy.ndimage import map_coordinates

    d = grid.ndim
    drift_values = np.asarray(drift_values, dtype=float)
    if drift_values.shape != grid.shape + (d,):
        raise ConfigurationError(f"drift table must have shape {grid.shape + (d,)}")

    def tabulated(table: np.ndarray) -> ScalarField:
        def fn(pts: np.ndarray) -> np.ndarray:
            coords = grid.index_coords(pts).T
            return map_coordinates(table, coords, order=1, mode="constant", cval=0.0)

        return fn

    def local(pts: np.ndarray) -> np.ndarray:
        return np.stack([tabulated(drift_values[..., k])(pts) for k in range(d)], axis=-1)

    pot = pot_grad = None
    if potential_values is not None:
        if potential_gradient_values is None:
            raise ConfigurationError("custom model: potential table without gradient table")
        pot_table = np.asarray(potential_values, dtype=float).reshape(grid.shape)
        grad_table = np.asarray(potential_gradient_values, dtype=float).reshape(grid.shape + (d,))
        pot = tabulated(pot_table)

        def pot_grad(pts: np.ndarray) -> np.ndarray:
            return np.stack([tabulated(grad_table[..., k])(pts) for k in range(d)], axis=-1)

    return Model(
        dim=d,
        drift=DriftField(local),
        diffusion=diffusion if diffusion is not None else DiffusionMatrix(np.eye(d)),
        potential=pot,
        potential_gradient=pot_grad,
        name=name,
    )
