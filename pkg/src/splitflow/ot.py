"""Dissipative phase: perturbed quadratic costs and log-domain scaling solvers.

The proximal step of the free energy F(rho) = ∫ f rho + ∫ rho log rho is taken
under the Kantorovich cost

    c_h(x, y) = <(A + h I)^{-1} (x - y), (x - y)>,

entropically regularized with weight eps.  The perturbation A_h = A + h I
restores positive definiteness of a degenerate diffusion matrix; models with
invertible A may skip it.  All scaling arithmetic runs in the log domain so
that eps = O(h^2) (the scaling regime eps |log eps| <= C h^2) survives in
float64.

For diagonal A_h the Gibbs kernel factorizes across axes and is applied as a
sequence of one-dimensional log-sum-exp contractions; the dense matrix path
remains available as reference semantics on small instances.

The second-marginal update of the proximal solver uses the closed form

    rho_j = exp[((eps/2h) log s_j - f_j - 1) / (1 + eps/2h)],

which is the pointwise solution of the optimality condition
(eps/2h)(log rho - log s) + f + log rho + 1 = 0 with s the kernel image of
the source scaling (re-derived and unit-verified in the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, SizeError, SolverConvergenceError
from .grids import Density, Grid, entropy_parts, normalize, potential_energy
from .models import DiffusionMatrix, Model

DENSE_CELL_LIMIT = 3000
DEFAULT_TOL_MARG = 1e-8
DEFAULT_MAX_ITER = 100_000
_INVERTIBLE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Cost
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostSpec:
    """Quadratic transport cost <A_h^{-1}(x-y), (x-y)> plus entropic weight."""

    grid: Grid
    matrix: np.ndarray          # A as supplied
    h: float                    # perturbation size
    epsilon: float              # entropic weight
    perturbed: bool             # False: A used as-is (A must be invertible)
    a_h: np.ndarray
    a_h_inv: np.ndarray
    a_h_eigenvalues: np.ndarray

    @property
    def a_h_is_diagonal(self) -> bool:
        return bool(np.array_equal(self.a_h, np.diag(np.diag(self.a_h))))

    def pair_cost(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return np.einsum("...k,kl,...l->...", d, self.a_h_inv, d)

    def matrix_cost(self) -> np.ndarray:
        """Dense cost over all cell pairs (guarded; reference semantics)."""
        n = self.grid.ncells
        if n > DENSE_CELL_LIMIT:
            raise SizeError(f"dense cost needs <= {DENSE_CELL_LIMIT} cells, grid has {n}")
        p = self.grid.points
        return self.pair_cost(p[:, None, :], p[None, :, :])


def build_cost(
    grid: Grid,
    diffusion: DiffusionMatrix | np.ndarray,
    h: float,
    epsilon: float = 0.0,
    unperturbed: bool = False,
) -> CostSpec:
    """Factorize A_h = A + h I (or A itself when `unperturbed`)."""
    a = diffusion.entries if isinstance(diffusion, DiffusionMatrix) else np.asarray(diffusion, dtype=float)
    a = np.atleast_2d(a)
    if a.shape != (grid.ndim, grid.ndim):
        raise ConfigurationError(f"diffusion matrix {a.shape} does not match grid dim {grid.ndim}")
    if epsilon < 0:
        raise ConfigurationError("epsilon must be >= 0")
    if unperturbed:
        if float(np.linalg.eigvalsh(a).min()) <= _INVERTIBLE_TOL:
            raise ConfigurationError("unperturbed cost requested but A is singular")
        a_h = a.copy()
    else:
        if h <= 0:
            raise ConfigurationError("perturbed cost needs h > 0")
        a_h = a + h * np.eye(grid.ndim)
    evals, evecs = np.linalg.eigh(a_h)
    if float(evals.min()) <= 0:
        raise ConfigurationError("A_h is not positive definite")
    a_h_inv = (evecs / evals) @ evecs.T
    return CostSpec(
        grid=grid,
        matrix=a,
        h=float(h),
        epsilon=float(epsilon),
        perturbed=not unperturbed,
        a_h=a_h,
        a_h_inv=a_h_inv,
        a_h_eigenvalues=evals,
    )


# ---------------------------------------------------------------------------
# Log-domain Gibbs kernel
# ---------------------------------------------------------------------------


def _lse_last(t: np.ndarray) -> np.ndarray:
    """log-sum-exp over the last axis; rows of all -inf stay -inf."""
    m = np.max(t, axis=-1)
    ms = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return ms + np.log(np.exp(t - ms[..., None]).sum(axis=-1))


class GibbsKernel:
    """Applies v -> log( exp(-c/eps) @ (exp(v) . w) ) without leaving logs.

    Symmetric (source grid == target grid), so one apply serves both
    directions.  Quadrature weights are folded into the kernel.
    """

    def __init__(self, cost: CostSpec, force_dense: bool = False):
        if cost.epsilon <= 0:
            raise ConfigurationError("Gibbs kernel needs epsilon > 0")
        self.cost = cost
        grid = cost.grid
        self.factorized = cost.a_h_is_diagonal and not force_dense
        if self.factorized:
            diag = np.diag(cost.a_h)
            self._axis_logk = []
            for k, ax in enumerate(grid.axes):
                diff = ax[:, None] - ax[None, :]
                self._axis_logk.append(-(diff**2) / (diag[k] * cost.epsilon) + np.log(grid.spacing[k]))
        else:
            c = cost.matrix_cost()
            self._dense_logk = -c / cost.epsilon + np.log(grid.cell_volume)

    def apply(self, logv: np.ndarray) -> np.ndarray:
        grid = self.cost.grid
        if self.factorized:
            out = logv
            for ax in range(grid.ndim):
                v = np.moveaxis(out, ax, -1)
                t = v[..., None, :] + self._axis_logk[ax]
                out = np.moveaxis(_lse_last(t), -1, ax)
            return out
        flat = logv.reshape(-1)
        return _lse_last(self._dense_logk + flat[None, :]).reshape(grid.shape)


def _safe_log(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(values > 0, np.log(np.where(values > 0, values, 1.0)), -np.inf)


def _mass_l1(a: np.ndarray, b: np.ndarray, w: float) -> float:
    return float(np.abs(a - b).sum() * w)


def _weighted_potential_sum(weights: np.ndarray, log_pot: np.ndarray, w: float) -> float:
    """sum weights * log_pot * w with the 0 * (-inf) = 0 convention."""
    safe = np.where(weights > 0, np.where(np.isfinite(log_pot), log_pot, 0.0), 0.0)
    return float((weights * safe).sum() * w)


# ---------------------------------------------------------------------------
# Scaling state and plan functionals
# ---------------------------------------------------------------------------


@dataclass
class ScalingState:
    """Log scalings of a (near-)feasible entropic plan gamma = a K b."""

    cost: CostSpec
    kernel: GibbsKernel
    log_a: np.ndarray
    log_b: np.ndarray
    iterations: int
    marginal_residual: float
    marginal_residual_second: float = 0.0
    _cost_term: float | None = None

    def log_first_marginal(self) -> np.ndarray:
        return self.log_a + self.kernel.apply(self.log_b)

    def log_second_marginal(self) -> np.ndarray:
        return self.log_b + self.kernel.apply(self.log_a)

    def first_marginal(self) -> np.ndarray:
        return np.exp(self.log_first_marginal())

    def second_marginal(self) -> np.ndarray:
        return np.exp(self.log_second_marginal())

    def plan_bilinear(self, f_source: np.ndarray, g_target: np.ndarray) -> float:
        """sum_ij gamma_ij f(x_i) g(y_j) w^2, sign-split on the source side."""
        grid = self.cost.grid
        w = grid.cell_volume
        total = 0.0
        for sign in (1.0, -1.0):
            part = np.maximum(sign * f_source, 0.0)
            if not np.any(part > 0):
                continue
            m = self.kernel.apply(self.log_a + _safe_log(part))
            contrib = np.exp(self.log_b + m) * g_target
            total += sign * float(contrib.sum() * w)
        return total

    def _coordinate_fields(self) -> list[np.ndarray]:
        grid = self.cost.grid
        return [np.broadcast_to(m, grid.shape) for m in grid.meshes()]

    def cost_term(self) -> float:
        """(c_h, gamma) at the current scalings."""
        if self._cost_term is not None:
            return self._cost_term
        grid = self.cost.grid
        w = grid.cell_volume
        if self.kernel.factorized:
            mu = self.first_marginal()
            nu = self.second_marginal()
            coords = self._coordinate_fields()
            inv_diag = np.diag(self.cost.a_h_inv)
            total = 0.0
            for k, x in enumerate(coords):
                e_src = float((mu * x**2).sum() * w)
                e_tgt = float((nu * x**2).sum() * w)
                cross = self.plan_bilinear(x, x)
                total += inv_diag[k] * (e_src + e_tgt - 2.0 * cross)
        else:
            c = self.cost.matrix_cost()
            log_plan = (
                self.log_a.reshape(-1)[:, None]
                + self.log_b.reshape(-1)[None, :]
                - c / self.cost.epsilon
                + 2.0 * np.log(w)
            )
            total = float((c * np.exp(log_plan)).sum())
        self._cost_term = total
        return total

    def plan_entropy(self) -> float:
        """H(gamma) w.r.t. the product quadrature measure (density entropy)."""
        w = self.cost.grid.cell_volume
        mu = self.first_marginal()
        nu = self.second_marginal()
        term_a = _weighted_potential_sum(mu, self.log_a, w)
        term_b = _weighted_potential_sum(nu, self.log_b, w)
        return term_a + term_b - self.cost_term() / self.cost.epsilon

    def dual_objective(self, mu: np.ndarray, nu: np.ndarray) -> float:
        """eps-scaled dual value; each half-update cannot decrease it."""
        eps = self.cost.epsilon
        w = self.cost.grid.cell_volume
        mass = float(np.exp(self.log_first_marginal()).sum() * w)
        pot_mu = _weighted_potential_sum(mu, self.log_a, w)
        pot_nu = _weighted_potential_sum(nu, self.log_b, w)
        return eps * (pot_mu + pot_nu - mass)

    def dense_plan_mass(self) -> np.ndarray:
        """gamma_ij w^2 as a dense matrix (small instances only)."""
        c = self.cost.matrix_cost()
        w = self.cost.grid.cell_volume
        return np.exp(
            self.log_a.reshape(-1)[:, None]
            + self.log_b.reshape(-1)[None, :]
            - c / self.cost.epsilon
            + 2.0 * np.log(w)
        )


# ---------------------------------------------------------------------------
# Sinkhorn (both marginals fixed)
# ---------------------------------------------------------------------------


def sinkhorn(
    mu: Density,
    nu: Density,
    cost: CostSpec,
    tol_marg: float = DEFAULT_TOL_MARG,
    max_iter: int = DEFAULT_MAX_ITER,
    trace: list | None = None,
    anneal: bool = True,
) -> tuple[ScalingState, float]:
    """Entropic transport value W_{c_h, eps}(mu, nu) by alternating scalings.

    Returns the scaling state and the primal value (c_h, gamma) + eps H(gamma)
    at the produced plan, whose marginals match mu and nu within tol_marg in
    total variation.  Annealing warm-starts through a decreasing eps ladder
    (disable it to trace the plain iteration).
    """
    if cost.epsilon <= 0:
        raise ConfigurationError("sinkhorn needs epsilon > 0; use the exact oracle for eps = 0")
    if mu.grid != cost.grid or nu.grid != cost.grid:
        raise ConfigurationError("marginals must live on the cost's grid")
    grid = cost.grid
    w = grid.cell_volume
    log_mu = _safe_log(mu.values)
    log_nu = _safe_log(nu.values)
    stages = anneal_stages(cost, cost.epsilon) if anneal else [cost.epsilon]
    u_b = np.zeros(grid.shape)
    total_iters = 0
    r2 = np.inf
    for eps in stages:
        stage_cost = cost if eps == cost.epsilon else build_cost(
            grid, cost.matrix, cost.h, eps, unperturbed=not cost.perturbed
        )
        kernel = GibbsKernel(stage_cost)
        stage_tol = tol_marg if eps == cost.epsilon else max(tol_marg, 1e-6)
        log_b = u_b / eps
        log_a = np.zeros(grid.shape)
        converged = False
        for _ in range(max_iter):
            log_a = log_mu - kernel.apply(log_b)
            ka = kernel.apply(log_a)
            total_iters += 1
            r2 = _mass_l1(np.exp(log_b + ka), nu.values, w)
            if trace is not None and eps == cost.epsilon:
                st = ScalingState(cost, kernel, log_a, log_b, total_iters, 0.0, r2)
                trace.append((st.dual_objective(mu.values, nu.values), r2))
            if r2 <= stage_tol:
                converged = True
                break
            log_b = log_nu - ka
        if not converged and eps == cost.epsilon:
            raise SolverConvergenceError(r2, tol_marg, total_iters)
        u_b = log_b * eps
        if eps == cost.epsilon:
            state = ScalingState(cost, kernel, log_a, log_b, total_iters, 0.0, r2)
            return state, state.cost_term() + cost.epsilon * state.plan_entropy()
    raise SolverConvergenceError(r2, tol_marg, max_iter)


# ---------------------------------------------------------------------------
# Proximal (JKO) step
# ---------------------------------------------------------------------------


@dataclass
class JkoResult:
    """Outcome of one diffusion step."""

    rho_next: Density
    transport_cost: float     # (c_h, gamma)
    plan_entropy: float       # H(gamma)
    objective: float          # (1/2h)(transport_cost + eps H) + F(rho_next)
    state: ScalingState
    iterations: int
    mass_defect: float
    el_residual: float | None = None
    debiased: bool = False
    self_value_source: float = 0.0   # W_eps(mu_tilde, mu_tilde), debiased mode
    self_value_target: float = 0.0   # W_eps(rho, rho), debiased mode
    warm_out: dict | None = None

    @property
    def value_w(self) -> float:
        """W_{c_h, eps}(mu_tilde, rho_next): the regularized transport value."""
        return self.transport_cost + self.state.cost.epsilon * self.plan_entropy

    @property
    def step_value(self) -> float:
        """The transport term actually minimized: the Sinkhorn divergence
        value in debiased mode (~ the unregularized cost), else W_eps."""
        if self.debiased:
            return self.value_w - 0.5 * (self.self_value_source + self.self_value_target)
        return self.value_w


def grid_epsilon_floor(grid: Grid, a_h: np.ndarray, h: float, theta: float = 1.0) -> float:
    """Spatial-consistency floor for the entropic weight on a fixed grid.

    Along axes whose per-window dissipative displacement sqrt(2 h a_k)
    reaches the cell size, the Gibbs kernel must couple neighboring cells
    (log-penalty dx_k^2/(a_k eps) <= theta) or the discrete transport
    quantizes to whole-cell jumps and the step under-diffuses.  Degenerate
    axes, whose marginals should barely move in one window, are exempt.
    """
    a_diag = np.diag(np.atleast_2d(a_h))
    floor = 0.0
    for k in range(grid.ndim):
        dx = float(grid.spacing[k])
        if np.sqrt(2.0 * h * a_diag[k]) >= 0.5 * dx:
            floor = max(floor, dx * dx / (theta * a_diag[k]))
    return floor


def anneal_stages(cost: CostSpec, target_eps: float) -> list[float]:
    """Geometric epsilon ladder from grid scale down to the target weight.

    Warm-starting through decreasing eps avoids the small-eps Sinkhorn stall;
    the fixed point of the final stage is unaffected.
    """
    grid = cost.grid
    if cost.a_h_is_diagonal:
        diag = np.diag(cost.a_h)
        eps0 = max(float(grid.spacing[k] ** 2 / diag[k]) for k in range(grid.ndim))
    else:
        eps0 = float(np.max(grid.spacing) ** 2 / np.min(cost.a_h_eigenvalues))
    stages = []
    e = eps0
    while e > target_eps * 1.0001:
        stages.append(e)
        e = max(e / 3.0, target_eps)
    stages.append(target_eps)
    return stages


def _self_potential(
    kernel: GibbsKernel,
    log_q: np.ndarray,
    q_vals: np.ndarray,
    d0: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, float]:
    """Symmetric potential of W_eps(q, q): fixed point d = log q - K(d)."""
    w = kernel.cost.grid.cell_volume
    d = d0
    res = np.inf
    for _ in range(max_iter):
        kd = kernel.apply(d)
        res = _mass_l1(np.exp(d + kd), q_vals, w)
        if res <= tol:
            break
        d = 0.5 * (d + log_q - kd)
    return d, res


def _self_value(kernel: GibbsKernel, d: np.ndarray) -> float:
    state = ScalingState(kernel.cost, kernel, d, d, 0, 0.0)
    return state.cost_term() + kernel.cost.epsilon * state.plan_entropy()


def jko_step(
    mu_tilde: Density,
    cost: CostSpec,
    h: float,
    model: Model | None,
    tol_marg: float = DEFAULT_TOL_MARG,
    max_iter: int = DEFAULT_MAX_ITER,
    init_log_b: np.ndarray | None = None,
    debias: bool = False,
    anneal: bool = True,
    warm: dict | None = None,
) -> JkoResult:
    """Minimize (1/2h) W_{c_h,eps}(mu_tilde, .) + F(.) by scaling iterations.

    The source update enforces the first marginal; the target update applies
    the closed-form proximal of F (see module docstring).  With `debias` the
    transport term becomes the Sinkhorn divergence
    W_eps(mu,rho) - (W_eps(mu,mu) + W_eps(rho,rho))/2, which removes the
    O(eps) blur bias of the plain entropic step (the grid-consistent
    production mode); the plain mode is the reference variational problem.
    `warm` carries eps-scaled potentials between consecutive steps.
    """
    if cost.epsilon <= 0:
        raise ConfigurationError("jko_step needs epsilon > 0; use exact_jko_small for eps = 0")
    if h <= 0:
        raise ConfigurationError("step size h must be positive")
    if mu_tilde.grid != cost.grid:
        raise ConfigurationError("source density must live on the cost's grid")
    grid = cost.grid
    w = grid.cell_volume
    f_vals = model.potential_values(grid) if model is not None else np.zeros(grid.shape)
    log_mu = _safe_log(mu_tilde.values)
    stages = anneal_stages(cost, cost.epsilon) if anneal else [cost.epsilon]

    # potentials are carried across stages and windows at the eps-invariant
    # scale u = eps * log-scaling
    u_b = np.zeros(grid.shape)
    u_d = cost.epsilon * log_mu.clip(-1e6) * 0.5
    if init_log_b is not None:
        u_b = cost.epsilon * np.asarray(init_log_b, dtype=float)
    if warm:
        u_b = warm.get("u_b", u_b).copy()
        u_d = warm.get("u_d", u_d).copy()

    total_iters = 0
    state = None
    log_rho = log_mu.copy()
    d = None
    for stage_idx, eps in enumerate(stages):
        stage_cost = cost if eps == cost.epsilon else build_cost(
            grid, cost.matrix, cost.h, eps, unperturbed=not cost.perturbed
        )
        kernel = GibbsKernel(stage_cost)
        lam = eps / (2.0 * h)
        stage_tol = tol_marg if eps == cost.epsilon else max(tol_marg, 1e-6)
        log_b = u_b / eps
        d = u_d / eps
        prev_a = None
        residual = np.inf
        self_res = 0.0
        converged = False
        for _ in range(max_iter):
            kb = kernel.apply(log_b)
            total_iters += 1
            if prev_a is not None:
                residual = _mass_l1(np.exp(prev_a + kb), mu_tilde.values, w)
                if residual <= stage_tol and (not debias or self_res <= stage_tol):
                    converged = True
                    break
            prev_a = log_mu - kb
            log_s = kernel.apply(prev_a)
            if debias:
                kd = kernel.apply(d)
                self_res = _mass_l1(np.exp(d + kd), np.exp(log_rho), w)
                d = 0.5 * (d + log_rho - kd)
                log_rho = (lam * (log_s + d) - f_vals - 1.0) / (1.0 + lam)
            else:
                log_rho = (lam * log_s - f_vals - 1.0) / (1.0 + lam)
            log_b = log_rho - log_s
        if not converged and eps == cost.epsilon:
            raise SolverConvergenceError(residual, tol_marg, total_iters)
        u_b = log_b * eps
        u_d = d * eps
        if eps == cost.epsilon:
            state = ScalingState(cost, kernel, prev_a, log_b, total_iters, residual)
    return _finish_jko(state, mu_tilde, log_mu, log_rho, d, cost, h, model, debias, tol_marg, max_iter, warm)


def _finish_jko(
    state: ScalingState,
    mu_tilde: Density,
    log_mu: np.ndarray,
    log_rho: np.ndarray,
    d: np.ndarray,
    cost: CostSpec,
    h: float,
    model: Model | None,
    debias: bool,
    tol_marg: float,
    max_iter: int,
    warm_in: dict | None = None,
) -> JkoResult:
    raw = Density(cost.grid, np.exp(log_rho))
    mass_defect = 1.0 - raw.mass()
    rho_next = normalize(raw)
    transport_cost = state.cost_term()
    plan_entropy = state.plan_entropy()
    pot = potential_energy(rho_next, model.potential if model is not None else None)
    ent = entropy_parts(rho_next)[0]
    objective = (transport_cost + cost.epsilon * plan_entropy) / (2.0 * h) + pot + ent
    self_mu = self_rho = 0.0
    warm_out = {"u_b": state.log_b * cost.epsilon}
    if debias:
        kernel = state.kernel
        d, _ = _self_potential(kernel, log_rho, np.exp(log_rho), d, tol_marg, max_iter)
        self_rho = _self_value(kernel, d)
        d_mu0 = warm_in.get("u_dmu") / cost.epsilon if warm_in and "u_dmu" in warm_in else d.copy()
        d_mu, _ = _self_potential(kernel, log_mu, mu_tilde.values, d_mu0, tol_marg, max_iter)
        self_mu = _self_value(kernel, d_mu)
        warm_out["u_d"] = d * cost.epsilon
        warm_out["u_dmu"] = d_mu * cost.epsilon
    return JkoResult(
        rho_next=rho_next,
        transport_cost=transport_cost,
        plan_entropy=plan_entropy,
        objective=objective,
        state=state,
        iterations=state.iterations,
        mass_defect=mass_defect,
        debiased=debias,
        self_value_source=self_mu,
        self_value_target=self_rho,
        warm_out=warm_out,
    )


def jko_objective(rho: Density, mu_tilde: Density, cost: CostSpec, h: float, model: Model | None,
                  tol_marg: float = DEFAULT_TOL_MARG, max_iter: int = DEFAULT_MAX_ITER) -> float:
    """(1/2h) W_{c_h,eps}(mu_tilde, rho) + F(rho) for an arbitrary competitor."""
    _, value = sinkhorn(mu_tilde, rho, cost, tol_marg, max_iter)
    pot = potential_energy(rho, model.potential if model is not None else None)
    return value / (2.0 * h) + pot + entropy_parts(rho)[0]


# ---------------------------------------------------------------------------
# Euler-Lagrange residual diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialTestFunction:
    """Smooth test function with analytically tabulated derivatives.

    value: (npts,) <- (npts, d);  grad: (npts, d);  hess: (npts, d, d).
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]


def gaussian_test_function(center: Sequence[float], width: float, name: str = "gauss",
                           linear_axis: int | None = None) -> SpatialTestFunction:
    """phi = exp(-‖x-c‖²/(2 s²)), optionally times (x-c) along one axis."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    s2 = float(width) ** 2

    def g(x: np.ndarray) -> np.ndarray:
        u = x - c
        return np.exp(-(u**2).sum(axis=-1) / (2.0 * s2))

    def g_grad(x: np.ndarray) -> np.ndarray:
        u = x - c
        return -g(x)[..., None] * u / s2

    def g_hess(x: np.ndarray) -> np.ndarray:
        u = x - c
        d = c.size
        return g(x)[..., None, None] * (
            u[..., :, None] * u[..., None, :] / s2**2 - np.eye(d) / s2
        )

    if linear_axis is None:
        return SpatialTestFunction(name, g, g_grad, g_hess)

    k = int(linear_axis)
    ek = np.zeros(c.size)
    ek[k] = 1.0

    def v(x: np.ndarray) -> np.ndarray:
        return (x[..., k] - c[k]) * g(x)

    def v_grad(x: np.ndarray) -> np.ndarray:
        a = (x[..., k] - c[k])[..., None]
        return ek * g(x)[..., None] + a * g_grad(x)

    def v_hess(x: np.ndarray) -> np.ndarray:
        a = (x[..., k] - c[k])[..., None, None]
        gg = g_grad(x)
        sym = ek[:, None] * gg[..., None, :] + gg[..., :, None] * ek[None, :]
        return sym + a * g_hess(x)

    return SpatialTestFunction(name, v, v_grad, v_hess)


def default_test_battery(grid: Grid, count: int = 5) -> list[SpatialTestFunction]:
    """Five bump-type test functions scaled to the box interior."""
    lo = np.asarray(grid.lower)
    hi = np.asarray(grid.upper)
    mid = 0.5 * (lo + hi)
    span = float((hi - lo).min())
    fns = [
        gaussian_test_function(mid, span / 6.0, "g0"),
        gaussian_test_function(mid + 0.08 * (hi - lo), span / 8.0, "g1"),
        gaussian_test_function(mid - 0.10 * (hi - lo), span / 7.0, "g2"),
        gaussian_test_function(mid, span / 6.0, "x*g", linear_axis=0),
        gaussian_test_function(mid, span / 9.0, "y*g", linear_axis=grid.ndim - 1),
    ]
    return fns[:count]


def euler_lagrange_residual(
    result: JkoResult,
    plan: ScalingState,
    h: float,
    model: Model | None,
    test_functions: Sequence[SpatialTestFunction],
) -> float:
    """Max |first-variation residual| of a converged step over the battery.

    For each phi, evaluates
        (1/h) ∫ <y - x, ∇phi(y)> dgamma + δF(rho, A_h ∇phi)
        - (eps/2h) ∫ rho div(A_h ∇phi),
    with δF(nu, eta) = ∫ nu eta·∇f - ∫ nu div(eta); zero at the exact
    discrete optimum up to quadrature, so the value tracks solver tolerance.
    """
    return max(abs(r) for r in euler_lagrange_residuals(result, plan, h, model, test_functions))


def euler_lagrange_residuals(
    result: JkoResult,
    plan: ScalingState,
    h: float,
    model: Model | None,
    test_functions: Sequence[SpatialTestFunction],
) -> list[float]:
    cost = plan.cost
    grid = cost.grid
    w = grid.cell_volume
    eps = cost.epsilon
    pts = grid.points
    rho = plan.second_marginal()
    coords = plan._coordinate_fields()
    grad_f = None
    if model is not None and model.potential_gradient is not None:
        grad_f = np.asarray(model.potential_gradient(pts), dtype=float).reshape(grid.shape + (grid.ndim,))
    out = []
    for phi in test_functions:
        gphi = np.asarray(phi.grad(pts), dtype=float).reshape(grid.shape + (grid.ndim,))
        hess = np.asarray(phi.hess(pts), dtype=float).reshape(grid.shape + (grid.ndim, grid.ndim))
        eta = np.einsum("...k,kl->...l", gphi, cost.a_h)
        div_eta = np.einsum("kl,...kl->...", cost.a_h, hess)

        y_dot = sum(coords[k] * gphi[..., k] for k in range(grid.ndim))
        t1 = float((rho * y_dot).sum() * w)
        for k in range(grid.ndim):
            t1 -= plan.plan_bilinear(coords[k], gphi[..., k])
        t1 /= h

        if grad_f is not None:
            df = float((rho * np.einsum("...k,...k->...", eta, grad_f)).sum() * w)
        else:
            df = 0.0
        df -= float((rho * div_eta).sum() * w)
        eps_term = -(eps / (2.0 * h)) * float((rho * div_eta).sum() * w)
        out.append(t1 + df + eps_term)
    return out


# ---------------------------------------------------------------------------
# Plain 2-Wasserstein distance (diagnostics)
# ---------------------------------------------------------------------------


def _w2_quantile_1d(mu: Density, nu: Density) -> float:
    """Exact discrete W2 in one dimension via the quantile coupling."""
    x = mu.grid.axes[0]
    w = mu.grid.cell_volume
    a = mu.values * w
    b = nu.values * w
    ca = np.cumsum(a)
    cb = np.cumsum(b)
    total = min(ca[-1], cb[-1])
    i = j = 0
    level = 0.0
    cost = 0.0
    tiny = 1e-15
    while level < total - tiny:
        while i < len(ca) - 1 and ca[i] <= level + tiny:
            i += 1
        while j < len(cb) - 1 and cb[j] <= level + tiny:
            j += 1
        nxt = min(ca[i], cb[j], total)
        cost += (nxt - level) * (x[i] - x[j]) ** 2
        level = nxt
    return float(np.sqrt(max(cost, 0.0)))


def wasserstein2(
    mu: Density,
    nu: Density,
    lp_limit: int = 10_000,
    eps_ladder: tuple[float, float] = (1e-2, 1e-3),
    tol_marg: float = 1e-9,
    max_iter: int = DEFAULT_MAX_ITER,
) -> float:
    """W2 between two grid densities.

    Exact quantile coupling in d = 1; exact linear program when the coupling
    matrix fits `lp_limit` entries; otherwise entropic values at two epsilons
    extrapolated to eps -> 0 with the eps (1 + |log eps|) bias model.
    """
    if mu.grid != nu.grid:
        raise ConfigurationError("W2 needs both densities on one grid")
    grid = mu.grid
    if grid.ndim == 1:
        return _w2_quantile_1d(mu, nu)
    if grid.ncells**2 <= lp_limit:
        from .oracles import exact_ot_small

        cost = build_cost(grid, np.eye(grid.ndim), h=0.0, epsilon=0.0, unperturbed=True)
        return float(np.sqrt(max(exact_ot_small(mu, nu, cost).value, 0.0)))
    scale = float(np.mean((np.asarray(grid.upper) - np.asarray(grid.lower)) ** 2))
    vals = []
    gs = []
    for rel in eps_ladder:
        eps = rel * scale
        cost = build_cost(grid, np.eye(grid.ndim), h=0.0, epsilon=eps, unperturbed=True)
        _, v = sinkhorn(mu, nu, cost, tol_marg=tol_marg, max_iter=max_iter)
        vals.append(v)
        gs.append(eps * (1.0 + abs(np.log(eps))))
    v0 = (vals[1] * gs[0] - vals[0] * gs[1]) / (gs[0] - gs[1])
    return float(np.sqrt(max(v0, 0.0)))
