"""Exception types shared across the solver."""


class ConfigurationError(ValueError):
    """Invalid model/grid/solver configuration, detected before any compute."""


class DegenerateDensityError(ValueError):
    """A density with zero (or negative) total mass where a probability is required."""


class TruncationError(RuntimeError):
    """Too much mass reached the boundary layer of the truncated box."""

    def __init__(self, boundary_mass: float, limit: float):
        self.boundary_mass = boundary_mass
        self.limit = limit
        super().__init__(
            f"boundary layer holds mass {boundary_mass:.3e} > hard limit {limit:.3e}; "
            "enlarge the box"
        )


class SolverConvergenceError(RuntimeError):
    """Scaling iterations hit max_iter with marginal residual above tolerance."""

    def __init__(self, residual: float, tol: float, iterations: int):
        self.residual = residual
        self.tol = tol
        self.iterations = iterations
        super().__init__(
            f"no convergence after {iterations} iterations: "
            f"marginal residual {residual:.3e} > tol {tol:.3e}"
        )


class OracleError(RuntimeError):
    """A reference (oracle) solve failed to certify its own optimality."""


class SizeError(ValueError):
    """Instance too large for a dense/oracle code path."""
