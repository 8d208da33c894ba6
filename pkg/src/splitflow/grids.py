"""Truncated tensor-product grids, cell densities, and tracked functionals.

The solver represents probability densities on a box chopped into uniform
cells (midpoint rule: one value per cell center).  Tracked functionals:
second moment M = ∫ ‖x‖² ρ, entropy H = ∫ ρ log ρ with the 0·log 0 = 0
convention, its signed parts H± , potential energy ∫ f ρ, and the free
energy ∫ f ρ + H.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateDensityError

MASS_TOL = 1e-10
# Fraction of mass allowed in the outermost cell layer before a warning.
BOUNDARY_WARN_TOL = 1e-6


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered discretization of a box in R^d.

    Axis i covers [lower[i], upper[i]] with shape[i] cells; cell centers sit
    at lower[i] + (j + 1/2) * spacing[i], strictly inside the box.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.shape)):
            raise ConfigurationError("grid axis lists must have equal length")
        if len(self.shape) == 0:
            raise ConfigurationError("grid needs at least one axis")
        for i, (lo, hi, n) in enumerate(zip(self.lower, self.upper, self.shape)):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ConfigurationError(f"axis {i}: bounds must be finite")
            if hi <= lo:
                raise ConfigurationError(f"axis {i}: upper bound {hi} <= lower bound {lo}")
            if int(n) < 2:
                raise ConfigurationError(f"axis {i}: needs >= 2 cells, got {n}")

    @classmethod
    def regular(cls, axes: Sequence[tuple[float, float, int]]) -> "Grid":
        """Build from a list of (lo, hi, n) triples."""
        lo, hi, n = zip(*axes)
        return cls(tuple(float(v) for v in lo), tuple(float(v) for v in hi), tuple(int(v) for v in n))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def ncells(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        out = []
        for lo, n, dx in zip(self.lower, self.shape, self.spacing):
            out.append(lo + (np.arange(n) + 0.5) * dx)
        return tuple(out)

    def meshes(self) -> list[np.ndarray]:
        """Sparse (broadcastable) coordinate arrays, one per axis."""
        return list(np.meshgrid(*self.axes, indexing="ij", sparse=True))

    @cached_property
    def points(self) -> np.ndarray:
        """All cell centers, shape (ncells, ndim), row-major cell order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """True on cells belonging to the outermost layer of any axis."""
        mask = np.zeros(self.shape, dtype=bool)
        for ax, n in enumerate(self.shape):
            idx = [slice(None)] * self.ndim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = n - 1
            mask[tuple(idx)] = True
        mask.setflags(write=False)
        return mask

    def index_coords(self, x: np.ndarray) -> np.ndarray:
        """Map physical points (..., ndim) to fractional cell indices."""
        lo = np.asarray(self.lower)
        return (x - lo) / self.spacing - 0.5


@dataclass(frozen=True)
class Density:
    """Nonnegative cell values of a probability density on a Grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.shape != self.grid.shape:
            raise ConfigurationError(
                f"density shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise DegenerateDensityError("density contains non-finite values")
        if np.any(vals < 0):
            raise DegenerateDensityError("density contains negative values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def boundary_mass(self) -> float:
        return float(self.values[self.grid.boundary_mask].sum() * self.grid.cell_volume)

    def require_unit_mass(self, tol: float = MASS_TOL) -> "Density":
        defect = abs(self.mass() - 1.0)
        if defect > tol:
            raise DegenerateDensityError(f"mass defect {defect:.3e} exceeds {tol:.1e}")
        return self

    @classmethod
    def gaussian(cls, grid: Grid, mean: Sequence[float], cov_diag: Sequence[float]) -> "Density":
        """Normalized diagonal-covariance Gaussian sampled at cell centers."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_1d(np.asarray(cov_diag, dtype=float))
        if mean.size != grid.ndim or cov.size != grid.ndim:
            raise ConfigurationError("gaussian mean/cov length must match grid dimension")
        if np.any(cov <= 0):
            raise ConfigurationError("gaussian needs positive variances")
        logpdf = np.zeros(grid.shape)
        for ax, m in enumerate(grid.meshes()):
            logpdf = logpdf - 0.5 * (m - mean[ax]) ** 2 / cov[ax]
        return normalize(cls(grid, np.exp(logpdf)))

    @classmethod
    def uniform(cls, grid: Grid, box: Sequence[tuple[float, float]] | None = None) -> "Density":
        """Normalized indicator of a sub-box (whole grid when box is None)."""
        vals = np.ones(grid.shape)
        if box is not None:
            if len(box) != grid.ndim:
                raise ConfigurationError("uniform box must match grid dimension")
            for ax, (lo, hi) in enumerate(box):
                m = grid.meshes()[ax]
                vals = vals * ((m >= lo) & (m <= hi))
        return normalize(cls(grid, vals))


@dataclass(frozen=True)
class Functionals:
    """One-pass evaluation of the tracked functionals of a density."""

    second_moment: float
    entropy: float
    entropy_plus: float
    entropy_minus: float
    potential_energy: float

    @property
    def free_energy(self) -> float:
        return self.potential_energy + self.entropy


def normalize(rho: Density) -> Density:
    """Rescale to unit mass.  Idempotent; rejects all-zero input."""
    total = rho.values.sum() * rho.grid.cell_volume
    if total <= 0.0:
        raise DegenerateDensityError("cannot normalize a zero-mass density")
    if total == 1.0:
        return rho
    return Density(rho.grid, rho.values / total)


def second_moment(rho: Density) -> float:
    """M(rho) = sum ||x_cell||^2 rho_cell * cell_volume."""
    acc = np.zeros(rho.grid.shape)
    for m in rho.grid.meshes():
        acc = acc + m**2
    return float((acc * rho.values).sum() * rho.grid.cell_volume)


def entropy_parts(rho: Density) -> tuple[float, float, float]:
    """Return (H, H+, H-); zero cells contribute nothing (x log x -> 0)."""
    v = rho.values
    w = rho.grid.cell_volume
    with np.errstate(divide="ignore", invalid="ignore"):
        vlogv = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)
    plus = float(np.maximum(vlogv, 0.0).sum() * w)
    minus = float(-np.minimum(vlogv, 0.0).sum() * w)
    return plus - minus, plus, minus


def entropy(rho: Density) -> float:
    return entropy_parts(rho)[0]


def potential_energy(rho: Density, potential: Callable[[np.ndarray], np.ndarray] | None) -> float:
    """∫ f rho with f evaluated at cell centers; zero when f is None."""
    if potential is None:
        return 0.0
    f_vals = np.asarray(potential(rho.grid.points), dtype=float).reshape(rho.grid.shape)
    return float((f_vals * rho.values).sum() * rho.grid.cell_volume)


def free_energy(rho: Density, potential: Callable[[np.ndarray], np.ndarray] | None) -> Functionals:
    h, hp, hm = entropy_parts(rho)
    return Functionals(
        second_moment=second_moment(rho),
        entropy=h,
        entropy_plus=hp,
        entropy_minus=hm,
        potential_energy=potential_energy(rho, potential),
    )


def l1_distance(a: Density, b: Density) -> float:
    if a.grid is not b.grid and a.grid != b.grid:
        raise ConfigurationError("densities live on different grids")
    return float(np.abs(a.values - b.values).sum() * a.grid.cell_volume)


def entropy_floor_ratio(rho: Density) -> float:
    """Monitor H_-(rho) / (M(rho)+1)^alpha with alpha = d/(d+2).

    The lower entropy bound H >= -C (M+1)^alpha holds with a non-constructive
    constant; this reports the empirical ratio instead of asserting a C.
    """
    d = rho.grid.ndim
    alpha = d / (d + 2)
    _, _, hm = entropy_parts(rho)
    return hm / (second_moment(rho) + 1.0) ** alpha


# ---------------------------------------------------------------------------
# Snapshot files: header "d axis0:lo,hi,n axis1:lo,hi,n ..." then row-major
# cell values, either one per line (csv) or raw little-endian float64 with the
# header in a .hdr sidecar (bin).
# ---------------------------------------------------------------------------


def _header_line(grid: Grid) -> str:
    parts = [str(grid.ndim)]
    for i, (lo, hi, n) in enumerate(zip(grid.lower, grid.upper, grid.shape)):
        parts.append(f"{i}:{lo!r},{hi!r},{n}")
    return " ".join(parts)


def _parse_header(line: str) -> Grid:
    tokens = line.split()
    d = int(tokens[0])
    if len(tokens) != d + 1:
        raise ConfigurationError(f"snapshot header announces {d} axes, found {len(tokens) - 1}")
    axes = []
    for tok in tokens[1:]:
        _, spec = tok.split(":")
        lo, hi, n = spec.split(",")
        axes.append((float(lo), float(hi), int(n)))
    return Grid.regular(axes)


def write_density(path: str | Path, rho: Density, fmt: str = "csv") -> None:
    path = Path(path)
    flat = rho.values.reshape(-1)
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write(_header_line(rho.grid) + "\n")
            for v in flat:
                fh.write(f"{v!r}\n")
    elif fmt == "bin":
        path.with_suffix(path.suffix + ".hdr").write_text(_header_line(rho.grid) + "\n")
        path.write_bytes(flat.astype("<f8").tobytes())
    else:
        raise ConfigurationError(f"unknown snapshot format {fmt!r}")


def read_density(path: str | Path) -> Density:
    path = Path(path)
    hdr_sidecar = path.with_suffix(path.suffix + ".hdr")
    if hdr_sidecar.exists():
        grid = _parse_header(hdr_sidecar.read_text().strip())
        flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    else:
        with open(path) as fh:
            grid = _parse_header(fh.readline().strip())
            flat = np.array([float(line) for line in fh if line.strip()], dtype=float)
    if flat.size != grid.ncells:
        raise ConfigurationError(
            f"snapshot holds {flat.size} values, grid needs {grid.ncells}"
        )
    return Density(grid, flat.reshape(grid.shape))


def read_field(path: str | Path, grid: Grid, width: int) -> np.ndarray:
    """Read a tabulated grid field with `width` columns per cell (csv only).

    Used by the CLI 'custom' model: drift files carry d columns per row,
    potential files one.  The header must match `grid` exactly.
    """
    with open(path) as fh:
        header_grid = _parse_header(fh.readline().strip())
        if header_grid != grid:
            raise ConfigurationError(f"field file {path} was tabulated on a different grid")
        rows = [
            [float(tok) for tok in line.replace(",", " ").split()]
            for line in fh
            if line.strip()
        ]
    arr = np.asarray(rows, dtype=float)
    if arr.shape != (grid.ncells, width):
        raise ConfigurationError(
            f"field file {path}: expected {grid.ncells} rows x {width} cols, got {arr.shape}"
        )
    return arr.reshape(grid.shape + (width,)) if width > 1 else arr.reshape(grid.shape)
