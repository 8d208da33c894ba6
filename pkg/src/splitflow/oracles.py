"""Exact small-instance references for the entropic solvers.

Two oracles back the dual-route checks: the unregularized transport value by
linear programming over the coupling polytope (with feasibility and
complementary-slackness certificates), and the eps = 0 proximal step by
interior-point convex optimization over (plan, second marginal).  Both are
deliberately independent of the scaling solvers they validate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import OracleError, SizeError
from .grids import Density, entropy_parts, normalize, potential_energy
from .models import Model
from .ot import CostSpec

LP_ENTRY_LIMIT = 10_000
JKO_CELL_LIMIT = 40
_CERT_TOL = 1e-7


@dataclass(frozen=True)
class OtOracleResult:
    value: float
    plan_mass: np.ndarray        # gamma_ij w^2, rows = source cells
    dual_source: np.ndarray
    dual_target: np.ndarray
    certificate_residual: float


def exact_ot_small(mu: Density, nu: Density, cost: CostSpec) -> OtOracleResult:
    """W_{c_h}(mu, nu) exactly, by LP (HiGHS), with optimality certificates.

    Certifies primal feasibility, duality gap and complementary slackness;
    raises OracleError if any certificate fails.
    """
    n = cost.grid.ncells
    if n * n > LP_ENTRY_LIMIT:
        raise SizeError(f"LP oracle limited to {LP_ENTRY_LIMIT} plan entries, instance has {n * n}")
    if mu.grid != cost.grid or nu.grid != cost.grid:
        raise OracleError("marginals must live on the cost's grid")
    w = cost.grid.cell_volume
    c = cost.matrix_cost().reshape(-1)
    a_src = sp.kron(sp.eye(n), np.ones((1, n)), format="csr")
    a_tgt = sp.kron(np.ones((1, n)), sp.eye(n), format="csr")
    a_eq = sp.vstack([a_src, a_tgt], format="csr")
    b_eq = np.concatenate([mu.values.reshape(-1) * w, nu.values.reshape(-1) * w])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise OracleError(f"LP failed: {res.message}")
    plan = res.x.reshape(n, n)
    y = res.eqlin.marginals[:n]
    z = res.eqlin.marginals[n:]
    scale = 1.0 + abs(res.fun) + float(np.abs(c).max())
    feas = float(np.abs(a_eq @ res.x - b_eq).max())
    # marginals are RHS sensitivities: strong duality reads fun = marginals @ b
    gap = abs(res.fun - float(res.eqlin.marginals @ b_eq))
    reduced = c.reshape(n, n) - y[:, None] - z[None, :]
    lowest = float(reduced.min())
    slack = float(np.abs(plan * reduced).max())
    cert = max(feas, max(-lowest, 0.0), slack, gap)
    if cert > _CERT_TOL * scale:
        raise OracleError(f"LP certificates too loose: residual {cert:.3e} (scale {scale:.3e})")
    return OtOracleResult(float(res.fun), plan, y, z, cert)


@dataclass(frozen=True)
class JkoOracleResult:
    rho_next: Density
    transport_cost: float       # (c_h, gamma) at the oracle plan
    objective: float            # (1/2h)(c,gamma) + F(rho)
    plan_mass: np.ndarray
    kkt_residual: float


def exact_jko_small(
    mu_tilde: Density,
    cost: CostSpec,
    h: float,
    model: Model | None,
    kkt_tol: float = 1e-8,
) -> JkoOracleResult:
    """eps = 0 proximal step by interior-point minimization over the plan.

    min over plans P >= 0 with row sums mu_tilde of
        (1/2h) sum c_ij P_ij + sum f_j rho_j w + sum rho_j log rho_j w,
    rho = column sums / w.  The produced KKT residual (feasibility plus
    complementary slackness against self-derived row duals) must pass
    kkt_tol or the oracle halts.
    """
    import cvxpy as cp

    n = cost.grid.ncells
    if n > JKO_CELL_LIMIT:
        raise SizeError(f"convex JKO oracle limited to {JKO_CELL_LIMIT} cells, grid has {n}")
    w = cost.grid.cell_volume
    c = cost.matrix_cost()
    f_vals = (model.potential_values(cost.grid) if model is not None else np.zeros(cost.grid.shape)).reshape(-1)
    mu_mass = mu_tilde.values.reshape(-1) * w

    plan = cp.Variable((n, n), nonneg=True)
    rho_mass = cp.sum(plan, axis=0)
    # entropy in density terms: sum rho log rho w = sum m log m - log(w) sum m
    objective = (
        cp.sum(cp.multiply(c, plan)) / (2.0 * h)
        + f_vals @ rho_mass
        - cp.sum(cp.entr(rho_mass))
        - np.log(w) * cp.sum(rho_mass)
    )
    constraints = [cp.sum(plan, axis=1) == mu_mass]
    problem = cp.Problem(cp.Minimize(objective), constraints)
    try:
        problem.solve(
            solver=cp.CLARABEL,
            tol_gap_abs=1e-12,
            tol_gap_rel=1e-12,
            tol_feas=1e-12,
            max_iter=200_000,
        )
    except cp.SolverError as exc:
        raise OracleError(f"convex solver failed: {exc}") from exc
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise OracleError(f"convex solver status {problem.status}")

    p = np.maximum(np.asarray(plan.value), 0.0)
    m = p.sum(axis=0)
    feas = float(np.abs(p.sum(axis=1) - mu_mass).max())
    # stationarity: grad_ij = c_ij/2h + f_j + log(m_j/w) + 1 matches the row
    # dual y_i on the support; off-support entries only need grad >= y_i.
    with np.errstate(divide="ignore"):
        grad = c / (2.0 * h) + f_vals[None, :] + np.log(np.where(m > 0, m / w, 1.0))[None, :] + 1.0
        grad[:, m <= 0] = np.inf
    y = grad.min(axis=1)
    comp = float(np.abs(p * (grad - y[:, None])).max())
    obj_val = float(problem.value)
    kkt = max(feas, comp) / (1.0 + abs(obj_val))
    if kkt > kkt_tol:
        raise OracleError(f"oracle KKT residual {kkt:.3e} > {kkt_tol:.1e}")

    rho = normalize(Density(cost.grid, (m / w).reshape(cost.grid.shape)))
    transport_cost = float((c * p).sum())
    pot = potential_energy(rho, model.potential if model is not None else None)
    objective_val = transport_cost / (2.0 * h) + pot + entropy_parts(rho)[0]
    return JkoOracleResult(rho, transport_cost, objective_val, p, kkt)
