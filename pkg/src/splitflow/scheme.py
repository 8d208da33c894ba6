"""Splitting loop: transport window then proximal diffusion step, with the
a priori estimates wired in as per-window diagnostics.

Time runs over N windows of length h = T/N.  Each window pushes the density
forward along the frozen drift, then takes one entropic proximal step of the
free energy under the perturbed cost.  The loop records mass defects, second
moments, entropy parts, free energy, step transport costs and the transport
phase's entropy defect; weak-form residuals and refinement studies probe the
convergence behaviour the scheme is built to have.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError
from .grids import Density, Functionals, free_energy, l1_distance
from .models import Model, eval_drift
from .ot import (
    CostSpec,
    JkoResult,
    SpatialTestFunction,
    build_cost,
    gaussian_test_function,
    jko_step,
    sinkhorn,
    wasserstein2,
)
from .transport import FlowConfig, check_entropy_preservation, continuous_interpolant, transport_step

SCALING_GUARD_CONSTANT = 3.0


def paper_default_epsilon(h: float) -> float:
    """eps(h) = h² / max(1, |log h|): satisfies eps |log eps| <= 3 h²."""
    return h * h / max(1.0, abs(math.log(h)))


def scaling_guard(eps: float, h: float, c: float = SCALING_GUARD_CONSTANT) -> bool:
    """The regularization scaling constraint eps |log eps| <= c h²."""
    return 0.0 < eps and eps * abs(math.log(eps)) <= c * h * h


def resolve_epsilon_rule(rule) -> Callable[[float], float]:
    """Accepts 'paper_default', 'h' (pathological, for the validator), a
    positive number (fixed eps), or a callable h -> eps."""
    if callable(rule):
        return rule
    if rule == "paper_default" or rule is None:
        return paper_default_epsilon
    if rule == "h":
        return lambda h: h
    try:
        value = float(rule)
    except (TypeError, ValueError):
        raise ConfigurationError(f"unknown epsilon rule {rule!r}")
    if value <= 0:
        raise ConfigurationError("fixed epsilon must be positive")
    return lambda h: value


@dataclass(frozen=True)
class SchemeConfig:
    """Run parameters: hN = T exactly, with the scaling guard checked at start.

    The entropic weight of a run is max(epsilon_rule(h), spatial floor): the
    rule must obey the h-scaling guard eps|log eps| <= 3h², while the floor
    keeps the Gibbs kernel wide enough to resolve sub-cell transport on the
    fixed grid (see ot.grid_epsilon_floor).  `debias` subtracts the
    self-transport halves so the floor's blur does not act as extra
    diffusion; turning both off gives the bare scheme.
    """

    T: float
    N: int
    epsilon_rule: object = "paper_default"
    flow: FlowConfig = field(default_factory=FlowConfig)
    tol_marg: float = 1e-8
    max_iter: int = 100_000
    boundary_hard_limit: float = 1e-3
    store_plans: bool = False
    enforce_scaling_guard: bool = True
    debias: bool = True
    grid_adaptive_epsilon: bool = True
    epsilon_floor_theta: float = 1.0

    def __post_init__(self):
        if self.T <= 0 or self.N < 1:
            raise ConfigurationError("need T > 0 and N >= 1")

    @property
    def h(self) -> float:
        return self.T / self.N

    def epsilon(self) -> float:
        eps = resolve_epsilon_rule(self.epsilon_rule)(self.h)
        if eps <= 0:
            raise ConfigurationError("epsilon rule produced a non-positive value")
        if self.enforce_scaling_guard and not scaling_guard(eps, self.h):
            raise ConfigurationError(
                f"epsilon {eps:.3e} violates eps|log eps| <= {SCALING_GUARD_CONSTANT} h² at h={self.h:.3e}"
            )
        return eps

    def effective_epsilon(self, grid, a_h: np.ndarray) -> float:
        eps = self.epsilon()
        if self.grid_adaptive_epsilon:
            from .ot import grid_epsilon_floor

            eps = max(eps, grid_epsilon_floor(grid, a_h, self.h, self.epsilon_floor_theta))
        return eps


@dataclass(frozen=True)
class StepRecord:
    """One RunReport row (CSV columns in this exact order)."""

    n: int
    t: float
    mass_defect: float
    second_moment: float
    entropy: float
    entropy_plus: float
    entropy_minus: float
    free_energy: float
    step_cost: float
    cum_cost: float
    transport_entropy_defect: float
    el_residual: float | None
    boundary_mass: float

    COLUMNS = (
        "n",
        "t",
        "mass_defect",
        "second_moment",
        "entropy",
        "entropy_plus",
        "entropy_minus",
        "free_energy",
        "step_cost",
        "cum_cost",
        "transport_entropy_defect",
        "el_residual",
        "boundary_mass",
    )


@dataclass
class Trajectory:
    """Scheme output: the two density sequences and the diagnostics report."""

    model: Model
    config: SchemeConfig
    cost: CostSpec
    rho_seq: list[Density]           # rho^0 .. rho^N
    rho_tilde_seq: list[Density]     # tilde rho^1 .. tilde rho^N
    records: list[StepRecord]
    step_details: list[dict] = field(default_factory=list)
    plan_log_b: list[np.ndarray] | None = None
    failed_window: int | None = None

    @property
    def h(self) -> float:
        return self.config.h

    def times(self) -> np.ndarray:
        return np.arange(len(self.rho_seq)) * self.h

    def report_csv(self) -> str:
        lines = [",".join(StepRecord.COLUMNS)]
        for r in self.records:
            vals = []
            for name in StepRecord.COLUMNS:
                v = getattr(r, name)
                if v is None:
                    vals.append("")
                elif name == "n":
                    vals.append(str(v))
                else:
                    vals.append(repr(float(v)))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


class SchemeError(RuntimeError):
    """A window failed; the partial trajectory is preserved on the exception."""

    def __init__(self, window: int, cause: Exception, partial: Trajectory):
        self.window = window
        self.cause = cause
        self.partial = partial
        partial.failed_window = window
        super().__init__(f"window {window} failed: {cause}")


def run(model: Model, rho0: Density, cfg: SchemeConfig) -> Trajectory:
    """Full splitting loop: for n < N, transport by h then one proximal step."""
    grid = rho0.grid
    if model.dim != grid.ndim:
        raise ConfigurationError(f"model dim {model.dim} != grid dim {grid.ndim}")
    rho0.require_unit_mass()
    f0 = free_energy(rho0, model.potential)
    if not np.isfinite(f0.free_energy):
        raise ConfigurationError("initial free energy is not finite")
    h = cfg.h
    a = model.diffusion.entries
    a_h = a if model.diffusion_invertible else a + h * np.eye(grid.ndim)
    eps = cfg.effective_epsilon(grid, a_h)
    cost = build_cost(grid, model.diffusion, h, eps, unperturbed=model.diffusion_invertible)

    traj = Trajectory(
        model=model,
        config=cfg,
        cost=cost,
        rho_seq=[rho0],
        rho_tilde_seq=[],
        records=[],
        plan_log_b=[] if cfg.store_plans else None,
    )
    cum_cost = 0.0
    warm: dict | None = None
    rho = rho0
    for n in range(cfg.N):
        try:
            rho_tilde, info = transport_step(rho, model, h, cfg.flow, cfg.boundary_hard_limit)
            result = jko_step(
                rho_tilde,
                cost,
                h,
                model,
                tol_marg=cfg.tol_marg,
                max_iter=cfg.max_iter,
                debias=cfg.debias,
                anneal=warm is None,
                warm=warm,
            )
        except Exception as exc:  # noqa: BLE001 - preserve the partial trajectory
            raise SchemeError(n, exc, traj) from exc
        warm = result.warm_out
        rho_next = result.rho_next
        fn = free_energy(rho_next, model.potential)
        ent_defect = check_entropy_preservation(rho, rho_tilde, tol=np.inf).defect
        step_cost = result.step_value
        cum_cost += step_cost
        traj.rho_tilde_seq.append(rho_tilde)
        traj.rho_seq.append(rho_next)
        traj.step_details.append(
            {
                "transport_cost": result.transport_cost,
                "value_w": result.value_w,
                "self_value_source": result.self_value_source,
                "self_value_target": result.self_value_target,
                "iterations": result.iterations,
            }
        )
        if traj.plan_log_b is not None:
            traj.plan_log_b.append(result.state.log_b)
        traj.records.append(
            StepRecord(
                n=n,
                t=(n + 1) * h,
                mass_defect=info.mass_defect + result.mass_defect,
                second_moment=fn.second_moment,
                entropy=fn.entropy,
                entropy_plus=fn.entropy_plus,
                entropy_minus=fn.entropy_minus,
                free_energy=fn.free_energy,
                step_cost=step_cost,
                cum_cost=cum_cost,
                transport_entropy_defect=ent_defect,
                el_residual=result.el_residual,
                boundary_mass=rho_next.boundary_mass(),
            )
        )
        rho = rho_next
    return traj


# ---------------------------------------------------------------------------
# Interpolations in time
# ---------------------------------------------------------------------------


def evaluate_interpolant(
    traj: Trajectory,
    which: str,
    t: float,
    model: Model | None = None,
    cfg: SchemeConfig | None = None,
) -> Density:
    """The three interpolations: piecewise, piecewise_tilde, transport_continuous.

    Both piecewise interpolants return the *end-of-window* density for
    t in [t_n, t_{n+1}); the transport_continuous one replays the window's
    conservative flow for the partial duration t - t_n.
    """
    cfg = cfg or traj.config
    model = model or traj.model
    h = cfg.h
    if not 0.0 <= t < cfg.T:
        raise ConfigurationError(f"t={t} outside [0, T={cfg.T})")
    n = min(int(t / h), cfg.N - 1)
    if which == "piecewise":
        return traj.rho_seq[n + 1]
    if which == "piecewise_tilde":
        return traj.rho_tilde_seq[n]
    if which == "transport_continuous":
        return continuous_interpolant(traj.rho_seq[n], model, t - n * h, h, cfg.flow)
    raise ConfigurationError(f"unknown interpolant {which!r}")


# ---------------------------------------------------------------------------
# Weak residual
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceTimeTestFunction:
    """phi(t, x) = a(t) psi(x) with a(T) = 0; derivatives are analytic."""

    name: str
    spatial: SpatialTestFunction
    time_profile: Callable[[float], float]
    time_profile_dt: Callable[[float], float]

    def value(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.time_profile(t) * self.spatial.value(pts)

    def dt(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.time_profile_dt(t) * self.spatial.value(pts)

    def grad(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.time_profile(t) * self.spatial.grad(pts)

    def hess(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.time_profile(t) * self.spatial.hess(pts)


def space_time_battery(grid, t_final: float, count: int = 3) -> list[SpaceTimeTestFunction]:
    """Gaussian bumps times the smooth cutoff cos²(pi t / 2T) (zero at T)."""
    lo = np.asarray(grid.lower)
    hi = np.asarray(grid.upper)
    mid = 0.5 * (lo + hi)
    span = float((hi - lo).min())

    def profile(t: float) -> float:
        return math.cos(math.pi * t / (2.0 * t_final)) ** 2

    def profile_dt(t: float) -> float:
        arg = math.pi * t / (2.0 * t_final)
        return -math.pi / t_final * math.cos(arg) * math.sin(arg)

    spatials = [
        gaussian_test_function(mid, span / 6.0, "st0"),
        gaussian_test_function(mid + 0.08 * (hi - lo), span / 8.0, "st1"),
        gaussian_test_function(mid, span / 7.0, "st2", linear_axis=0),
    ]
    return [SpaceTimeTestFunction(s.name, s, profile, profile_dt) for s in spatials[:count]]


def weak_residual(traj: Trajectory, model: Model, phi: SpaceTimeTestFunction) -> float:
    """|space-time weak form| of the piecewise interpolant against phi.

    Evaluates ∫∫ rho (∂t phi + (b[rho] - A ∇f)·∇phi + A:∇²phi) dx dt
    + ∫ rho0 phi(0,·) dx with per-window midpoint sampling in time.  The
    true diffusion matrix A enters, not the perturbed A_h.
    """
    grid = traj.rho_seq[0].grid
    pts = grid.points
    w = grid.cell_volume
    h = traj.h
    a = model.diffusion.entries
    grad_f = None
    if model.potential_gradient is not None:
        grad_f = np.asarray(model.potential_gradient(pts), dtype=float)
    total = 0.0
    for n in range(traj.config.N):
        rho = traj.rho_seq[n + 1]
        t_mid = (n + 0.5) * h
        gphi = phi.grad(t_mid, pts)
        hess = phi.hess(t_mid, pts)
        integrand = phi.dt(t_mid, pts)
        b = eval_drift(model, rho, grid).reshape(-1, grid.ndim)
        adv = b.copy()
        if grad_f is not None:
            adv -= grad_f @ a
        integrand = integrand + np.einsum("nk,nk->n", adv, gphi)
        integrand = integrand + np.einsum("kl,nkl->n", a, hess)
        total += h * float((rho.values.reshape(-1) * integrand).sum() * w)
    total += float((traj.rho_seq[0].values.reshape(-1) * phi.value(0.0, pts)).sum() * w)
    return abs(total)


# ---------------------------------------------------------------------------
# Refinement studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyRow:
    N: int
    h: float
    sup_w2: float
    terminal_l1: float
    weak_residual: float
    cum_cost_over_h: float
    max_second_moment: float
    max_free_energy: float
    max_entropy_plus: float
    error: str = ""

    COLUMNS = (
        "N",
        "h",
        "sup_w2",
        "terminal_l1",
        "weak_residual",
        "cum_cost_over_h",
        "max_second_moment",
        "max_free_energy",
        "max_entropy_plus",
        "error",
    )


def study_csv(rows: Sequence[StudyRow]) -> str:
    lines = [",".join(StudyRow.COLUMNS)]
    for r in rows:
        vals = []
        for name in StudyRow.COLUMNS:
            v = getattr(r, name)
            if name == "N":
                vals.append(str(v))
            elif name == "error":
                vals.append(str(v))
            else:
                vals.append(repr(float(v)))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def convergence_study(
    model: Model,
    rho0: Density,
    t_final: float,
    n_list: Sequence[int],
    cfg: SchemeConfig,
    reference: Callable[[float], Density] | None = None,
    w2_samples: int = 5,
) -> list[StudyRow]:
    """Runs the scheme over an increasing window-count list and tabulates
    errors against the reference (the finest run when none is given).

    Trends are reported, not hard-asserted: the convergence theorem gives no
    rate for the terminal error, only that it vanishes.
    """
    if len(n_list) < 2 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigurationError("need an increasing list of at least two window counts")
    runs: dict[int, Trajectory] = {}
    rows: list[StudyRow] = []
    battery = space_time_battery(rho0.grid, t_final)
    for n in n_list:
        try:
            runs[n] = run(model, rho0, replace(cfg, T=t_final, N=n))
        except SchemeError as exc:
            rows.append(StudyRow(n, t_final / n, math.nan, math.nan, math.nan, math.nan,
                                 math.nan, math.nan, math.nan, error=str(exc)))
    ref_fn = reference
    if ref_fn is None and n_list[-1] in runs:
        finest = runs[n_list[-1]]

        def ref_fn(t: float, _f=finest) -> Density:
            return evaluate_interpolant(_f, "piecewise", min(t, t_final * (1 - 1e-12)))

    for n in n_list:
        if n not in runs:
            continue
        traj = runs[n]
        terminal = traj.rho_seq[-1]
        t_ref = ref_fn(t_final - 1e-12 * t_final) if ref_fn else None
        terminal_l1 = l1_distance(terminal, t_ref) if t_ref is not None else math.nan
        sup_w2 = 0.0
        if ref_fn is not None:
            for t in np.linspace(0.0, t_final, w2_samples, endpoint=False)[1:]:
                sup_w2 = max(
                    sup_w2,
                    wasserstein2(evaluate_interpolant(traj, "piecewise", t), ref_fn(t)),
                )
        wres = max(weak_residual(traj, model, phi) for phi in battery)
        recs = traj.records
        rows.append(
            StudyRow(
                N=n,
                h=traj.h,
                sup_w2=sup_w2,
                terminal_l1=terminal_l1,
                weak_residual=wres,
                cum_cost_over_h=recs[-1].cum_cost / traj.h,
                max_second_moment=max(r.second_moment for r in recs),
                max_free_energy=max(r.free_energy for r in recs),
                max_entropy_plus=max(r.entropy_plus for r in recs),
            )
        )
    return rows


def self_transport_slack(rho: Density, cost: CostSpec, h: float,
                         tol_marg: float = 1e-9, max_iter: int = 100_000) -> tuple[float, float]:
    """((c,gamma) + eps H terms of W_eps(rho, rho)) used in the descent slack.

    Returns (value, plan_entropy) of the self-transport problem; the free
    energy can increase across a drift-free step by at most
    (W_eps(rho,rho) - W_eps(rho, rho_next)) / 2h.
    """
    state, value = sinkhorn(rho, rho, cost, tol_marg=tol_marg, max_iter=max_iter)
    return value, state.plan_entropy()
