"""Pull-back limits: the random quasi-periodic path and its hull.

A dissipative spec forgets its initial condition at the audited contraction
rate, so integrating from ever earlier starts on one fixed noise realisation
produces iterates that converge to a single state per target time.  Levels
are spaced so each one gains roughly one decimal digit; the iteration stops
when consecutive iterates agree below tolerance.

Single-path entry points return a `PullbackResult` with the full level
ladder (for convergence plots and rate fitting).  The batched entry points
drive the same ladder over a whole sample ensemble and are what the measure
estimators build on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .coefficients import QPCoefficients, contraction_rate
from .errors import ConvergenceError, DomainError
from .flow import integrate, run_grouped, run_peratom
from .noise import NoisePath, TimeGrid


@dataclass(frozen=True)
class PullbackSettings:
    """Ladder controls shared by the batched estimators.

    rate overrides the audited contraction rate (None audits on demand);
    p_order is carried into results as a diagnostic only.
    """

    tol: float = 1e-6
    max_levels: int = 12
    rate: float | None = None
    p_order: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.tol) and self.tol > 0):
            raise DomainError("tol must be a finite positive real")
        if int(self.max_levels) < 2:
            raise DomainError("max_levels must be >= 2")
        object.__setattr__(self, "max_levels", int(self.max_levels))
        if self.rate is not None and not math.isfinite(float(self.rate)):
            raise DomainError("rate override must be finite")
        if not (math.isfinite(self.p_order) and self.p_order >= 1):
            raise DomainError("p_order must be >= 1")


@dataclass(frozen=True, eq=False)
class LevelRecord:
    s_time: float
    value: np.ndarray
    gap: float


@dataclass(frozen=True, eq=False)
class PullbackResult:
    value: np.ndarray
    levels: tuple[LevelRecord, ...]
    converged: bool
    fitted_rate: float
    p_norm_order: float


def _resolved_rate(c: QPCoefficients, rate: float | None) -> float:
    r = contraction_rate(c) if rate is None else float(rate)
    if not (math.isfinite(r) and r > 0):
        raise DomainError(
            f"pull-back needs a positive contraction rate, got {r}")
    return r


def level_spacing_steps(c: QPCoefficients, grid: TimeGrid,
                        rate: float | None = None) -> int:
    """Grid steps between ladder levels: one decimal digit per level."""
    h_time = math.ceil(math.log(10.0) / _resolved_rate(c, rate))
    return max(1, round(h_time / grid.dt))


def _fit_rate(levels) -> float:
    pts = [(rec.s_time, math.log(rec.gap)) for rec in levels
           if math.isfinite(rec.gap) and rec.gap > 0.0]
    if len(pts) < 2:
        return math.nan
    s, g = np.array(pts).T
    return float(np.polyfit(s, g, 1)[0])


def _final_state(c, w, s_idx, t_idx, x0, u1, u2):
    _, finals = run_grouped(
        c, w.grid, keys=[w._key], offsets=[w.offset],
        group=np.zeros(1, dtype=np.int64), u1=[u1], u2=[u2],
        coeff_offset=0, x0=np.asarray(x0, dtype=np.float64)[None, :],
        s_idx=s_idx, n_steps=t_idx - s_idx,
        seeds=np.array([w.seed], dtype=np.int64))
    return finals[0]


def _ladder(c, w, target_idx, x0, u1, u2, tol, max_levels, rate, p_order):
    if not (math.isfinite(tol) and tol > 0):
        raise DomainError("tol must be a finite positive real")
    if max_levels < 2:
        raise DomainError("max_levels must be >= 2")
    x = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x.shape != (c.dim,) or not np.all(np.isfinite(x)):
        raise DomainError(f"x0 must be a finite vector of length {c.dim}")
    h_steps = level_spacing_steps(c, w.grid, rate)

    levels = []
    prev = None
    converged = False
    for k in range(1, max_levels + 1):
        s_idx = target_idx - k * h_steps
        v = _final_state(c, w, s_idx, target_idx, x, u1, u2)
        gap = math.inf if prev is None else float(np.linalg.norm(v - prev))
        levels.append(LevelRecord(s_time=w.grid.time_of(s_idx), value=v,
                                  gap=gap))
        prev = v
        if gap < tol:
            converged = True
            break
    return PullbackResult(value=prev, levels=tuple(levels),
                          converged=converged, fitted_rate=_fit_rate(levels),
                          p_norm_order=float(p_order))


def pullback_limit(c: QPCoefficients, w: NoisePath, t_idx: int, x0,
                   tol: float = 1e-6, max_levels: int = 12,
                   rate: float | None = None,
                   p_order: float = 2.0) -> PullbackResult:
    """Pull-back iterate of the base flow at grid index t_idx.

    Integrates from s_k = t_idx - k*H on the same noise path until two
    consecutive iterates agree within tol (Euclidean norm).  Running out
    of levels is reported via converged=False, not an exception.
    """
    if w.dim != c.dim:
        raise DomainError(f"noise dimension {w.dim} != state dim {c.dim}")
    return _ladder(c, w, int(t_idx), x0, 0.0, 0.0, float(tol),
                   int(max_levels), rate, p_order)


def pullback_hull_limit(c: QPCoefficients, w: NoisePath, t_param: float,
                        s_param: float, x0, tol: float = 1e-6,
                        max_levels: int = 12, rate: float | None = None,
                        p_order: float = 2.0) -> PullbackResult:
    """Pull-back limit of the reparameterised flow, target index 0.

    (t_param, s_param) offset the two coefficient clocks; they enter via
    an entry reduction modulo the periods, so offsetting either by an
    exactly representable multiple of its period returns a bitwise
    identical result.
    """
    if w.dim != c.dim:
        raise DomainError(f"noise dimension {w.dim} != state dim {c.dim}")
    if not (math.isfinite(float(t_param)) and math.isfinite(float(s_param))):
        raise DomainError("non-finite clock shift")
    u1 = _kernels.reduce_mod(float(t_param), c.period1)
    u2 = _kernels.reduce_mod(float(s_param), c.period2)
    return _ladder(c, w, 0, x0, u1, u2, float(tol), int(max_levels), rate,
                   p_order)


def flow_consistency_deviation(c: QPCoefficients, w: NoisePath, s_idx: int,
                               t_idx: int, value_s, value_t) -> float:
    """How far the flow started on a claimed path value drifts off it.

    Integrates from (s_idx, value_s) to t_idx and returns the Euclidean
    distance to value_t.  For values produced by converged pull-backs on
    the same noise the deviation is bounded by the combined tolerances.
    """
    traj = integrate(c, w, s_idx, t_idx, value_s)
    vt = np.asarray(value_t, dtype=np.float64).reshape(-1)
    return float(np.linalg.norm(traj.final - vt))


# ---------------------------------------------------------------------------
# batched ladders (the measure estimators' engine)
# ---------------------------------------------------------------------------

def _ensemble(run_level, seeds, settings, h_steps):
    prev = None
    gaps = None
    for k in range(1, settings.max_levels + 1):
        finals = run_level(k * h_steps)
        if prev is not None:
            gaps = np.linalg.norm(finals - prev, axis=1)
            if float(gaps.max()) < settings.tol:
                return finals, k
        prev = finals
    failed = np.flatnonzero(gaps >= settings.tol)
    raise ConvergenceError(failed_seeds=[int(seeds[i]) for i in failed],
                           tol=settings.tol, levels=settings.max_levels)


def pullback_ensemble_grouped(c: QPCoefficients, grid: TimeGrid, *, keys,
                              offsets, group, u1, u2, coeff_offset=0,
                              x0, target_idx=0, seeds,
                              settings: PullbackSettings):
    """Ladder over an ensemble whose samples share few clock-shift pairs.

    Stops at the first level where every sample's gap is below tol and
    returns (states at target_idx, levels used).  Samples still above tol
    at max_levels raise ConvergenceError listing their seeds.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    h_steps = level_spacing_steps(c, grid, settings.rate)

    def run_level(depth):
        _, finals = run_grouped(
            c, grid, keys=keys, offsets=offsets, group=group, u1=u1, u2=u2,
            coeff_offset=coeff_offset, x0=x0, s_idx=target_idx - depth,
            n_steps=depth, seeds=seeds)
        return finals

    return _ensemble(run_level, seeds, settings, h_steps)


def pullback_ensemble_peratom(c: QPCoefficients, grid: TimeGrid, *, keys,
                              offsets, u1, u2, coeff_offsets, x0,
                              target_idx=0, seeds,
                              settings: PullbackSettings):
    """Ladder over an ensemble with one clock-shift pair per sample."""
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    h_steps = level_spacing_steps(c, grid, settings.rate)

    def run_level(depth):
        _, finals = run_peratom(
            c, grid, keys=keys, offsets=offsets, u1=u1, u2=u2,
            coeff_offsets=coeff_offsets, x0=x0, s_idx=target_idx - depth,
            n_steps=depth, seeds=seeds)
        return finals

    return _ensemble(run_level, seeds, settings, h_steps)


def levels_to_csv(result: PullbackResult, path) -> None:
    """Write the ladder as `s_k,gap_k` rows for convergence plots."""
    with Path(path).open("w") as fh:
        fh.write("s_k,gap_k\n")
        for rec in result.levels:
            fh.write(f"{rec.s_time!r},{rec.gap!r}\n")
