"""Exception types raised across the package."""

from __future__ import annotations


class QpsdeError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(QpsdeError, ValueError):
    """Invalid configuration value; `path` is the dotted key that failed."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ExplosionError(QpsdeError, RuntimeError):
    """A trajectory left the finite floating-point range.

    `first_index` is the first grid index whose state was non-finite, and
    `seed` identifies the offending sample's noise path.
    """

    def __init__(self, first_index: int, seed: int):
        self.first_index = int(first_index)
        self.seed = int(seed)
        super().__init__(
            f"trajectory for seed {seed} became non-finite at grid index "
            f"{first_index}"
        )


class ConvergenceError(QpsdeError, RuntimeError):
    """A pullback ladder did not settle below tolerance.

    `failed_seeds` lists the noise seeds whose gap was still above
    tolerance at the deepest start level.
    """

    def __init__(self, failed_seeds, tol: float, levels: int):
        self.failed_seeds = [int(s) for s in failed_seeds]
        self.tol = float(tol)
        self.levels = int(levels)
        shown = ", ".join(str(s) for s in self.failed_seeds[:8])
        more = "" if len(self.failed_seeds) <= 8 else ", ..."
        super().__init__(
            f"{len(self.failed_seeds)} sample(s) not below tol={tol:g} after "
            f"{levels} levels (seeds {shown}{more})"
        )


class DomainError(QpsdeError, ValueError):
    """An evaluation argument is outside the function's domain."""


class QuadratureError(QpsdeError, ArithmeticError):
    """A quadrature self-check failed to reach its accuracy target."""


class EllipticityError(QpsdeError, ValueError):
    """The diffusion coefficient is not uniformly positive on the grid."""


class StabilityError(QpsdeError, ValueError):
    """A solver step size violates its accuracy/stability guard."""
