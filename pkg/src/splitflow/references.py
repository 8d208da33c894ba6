"""Analytic and ODE reference solutions used by studies and acceptance tests."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .grids import Density, Grid


def heat_gaussian(grid: Grid, mean: np.ndarray, cov_diag: np.ndarray, t: float) -> Density:
    """Heat flow of a diagonal Gaussian: each variance grows by 2t."""
    return Density.gaussian(grid, mean, np.asarray(cov_diag, dtype=float) + 2.0 * t)


def ou_gaussian(grid: Grid, mean: np.ndarray, cov_diag: np.ndarray, t: float) -> Density:
    """Ornstein-Uhlenbeck flow for f(x) = ‖x‖²/2 and unit diffusion.

    mean -> mean e^{-t}, variance -> 1 + (v0 - 1) e^{-2t}; the invariant
    measure is the standard Gaussian e^{-f}/Z.
    """
    m = np.asarray(mean, dtype=float) * np.exp(-t)
    v = 1.0 + (np.asarray(cov_diag, dtype=float) - 1.0) * np.exp(-2.0 * t)
    return Density.gaussian(grid, m, v)


def moments_of_density(rho: Density) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance matrix of a grid density."""
    g = rho.grid
    w = g.cell_volume
    pts = g.points
    vals = rho.values.reshape(-1)
    mean = (pts * vals[:, None]).sum(axis=0) * w
    centered = pts - mean
    cov = np.einsum("nk,nl,n->kl", centered, centered, vals) * w
    return mean, cov


def linear_sde_moments(
    drift_matrix: np.ndarray,
    diffusion: np.ndarray,
    mean0: np.ndarray,
    cov0: np.ndarray,
    t_final: float,
    steps: int = 4096,
) -> Callable[[float], tuple[np.ndarray, np.ndarray]]:
    """Fine-RK4 integration of m' = B m, P' = B P + P B^T + 2 A.

    Returns an evaluator t -> (m(t), P(t)) that interpolates the stored
    RK4 trajectory (dense in `steps` substeps of [0, t_final]).
    """
    b = np.asarray(drift_matrix, dtype=float)
    a = np.asarray(diffusion, dtype=float)
    dt = t_final / steps
    means = [np.asarray(mean0, dtype=float)]
    covs = [np.asarray(cov0, dtype=float)]

    def rhs(m, p):
        return b @ m, b @ p + p @ b.T + 2.0 * a

    m, p = means[0], covs[0]
    for _ in range(steps):
        k1m, k1p = rhs(m, p)
        k2m, k2p = rhs(m + 0.5 * dt * k1m, p + 0.5 * dt * k1p)
        k3m, k3p = rhs(m + 0.5 * dt * k2m, p + 0.5 * dt * k2p)
        k4m, k4p = rhs(m + dt * k3m, p + dt * k3p)
        m = m + (dt / 6.0) * (k1m + 2 * k2m + 2 * k3m + k4m)
        p = p + (dt / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        means.append(m)
        covs.append(p)

    def at(t: float) -> tuple[np.ndarray, np.ndarray]:
        idx = int(round(t / dt))
        if not 0 <= idx <= steps or abs(idx * dt - t) > 1e-9 * max(1.0, t_final):
            raise ValueError(f"time {t} is not a stored RK4 node")
        return means[idx], covs[idx]

    return at


def kramers_moment_reference(t_final: float, mean0, cov0, steps: int = 4096):
    """Moment evolution for the harmonic Kramers model (g = x²/2, f = v²/2)."""
    b = np.array([[0.0, 1.0], [-1.0, -1.0]])
    a = np.diag([0.0, 1.0])
    return linear_sde_moments(b, a, np.asarray(mean0, float), np.asarray(cov0, float), t_final, steps)
