"""Trajectory integration for the two-frequency SDE family.

Euler-Maruyama with left-endpoint coefficient times.  Three flows share one
fused kernel:

  * `integrate`          - coefficients sampled at the running grid time;
  * `integrate_shifted`  - coefficient clock offset by an integer number of
                           grid steps (the caller supplies the noise it
                           means to drive it with);
  * `integrate_reparam`  - the two coefficient clocks offset independently
                           by real shifts (r1, r2), plus an optional integer
                           step offset.

Real shifts enter only through an entry reduction modulo the periods, and
integer offsets stay integers until the single per-step multiply, which is
what makes the shift identities below exact in floating point, not just up
to rounding: grid translations of a run relabel the very same float
sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .coefficients import QPCoefficients, eval_drift
from .errors import DomainError, ExplosionError
from .noise import NoisePath, TimeGrid, shift


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States on grid indices start_index .. start_index + len(values) - 1."""

    grid: TimeGrid
    start_index: int
    values: np.ndarray  # (n_steps + 1, d)
    flavor: str = "u"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise DomainError(f"values shape {v.shape} is not (n+1, d)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "start_index", int(self.start_index))

    @property
    def end_index(self) -> int:
        return self.start_index + self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        idx = np.arange(self.start_index, self.end_index + 1)
        return idx * self.grid.dt

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def to_csv(self, path) -> None:
        """Write `time,x_1..x_d` rows; the header line carries the flavor
        and parameters so the file is self-describing."""
        d = self.values.shape[1]
        items = [f"flavor={self.flavor}"]
        items += [f"{k}={v}" for k, v in sorted(self.params.items())]
        items += [f"dt={self.grid.dt!r}", f"start_index={self.start_index}"]
        cols = ",".join(["time"] + [f"x_{i + 1}" for i in range(d)])
        with Path(path).open("w") as fh:
            fh.write("# " + " ".join(items) + "\n")
            fh.write(cols + "\n")
            for k in range(self.values.shape[0]):
                t = (self.start_index + k) * self.grid.dt
                row = ",".join([repr(t)] + [repr(float(x))
                                            for x in self.values[k]])
                fh.write(row + "\n")


# ---------------------------------------------------------------------------
# batched kernel front-ends (used by every higher module)
# ---------------------------------------------------------------------------

def _alloc_outputs(n_snaps: int, n_samples: int, dim: int):
    out_snap = np.full((n_snaps, n_samples, dim), np.nan)
    out_final = np.empty((n_samples, dim))
    out_bad = np.full(n_samples, _kernels.NO_EXPLOSION, dtype=np.int64)
    return out_snap, out_final, out_bad


def _raise_on_explosion(out_bad: np.ndarray, seeds: np.ndarray):
    bad = np.flatnonzero(out_bad != _kernels.NO_EXPLOSION)
    if bad.size:
        worst = bad[np.argmin(out_bad[bad])]
        raise ExplosionError(first_index=int(out_bad[worst]),
                             seed=int(seeds[worst]))


def run_grouped(c: QPCoefficients, grid: TimeGrid, *, keys, offsets, group,
                u1, u2, coeff_offset: int, x0, s_idx: int, n_steps: int,
                snaps=None, seeds=None):
    """Advance a batch whose samples share few (shift1, shift2) groups.

    u1/u2 hold one entry-reduced shift pair per group; per-step forcing is
    tabulated once per group by the same jitted trig code the inline kernel
    uses, so both batch modes emit identical float streams.  Returns
    (snap_states, finals) with snap_states[(slot), b] the state of sample b
    at the requested absolute grid index.
    """
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    group = np.ascontiguousarray(group, dtype=np.int64)
    u1 = np.ascontiguousarray(u1, dtype=np.float64)
    u2 = np.ascontiguousarray(u2, dtype=np.float64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    n_samples, dim = x0.shape
    n_groups = u1.shape[0]
    if snaps is None:
        snaps = np.empty(0, dtype=np.int64)
    snaps = np.ascontiguousarray(snaps, dtype=np.int64)
    if seeds is None:
        seeds = np.full(n_samples, -1, dtype=np.int64)
    seeds = np.ascontiguousarray(seeds, dtype=np.int64)

    f0tab = np.empty((n_steps, n_groups, dim))
    f1tab = np.zeros((n_steps, n_groups))
    gtab = np.zeros((n_steps, n_groups))
    _kernels.build_forcing_tables(s_idx, n_steps, coeff_offset, grid.dt,
                                  u1, u2, c.period1, c.period2,
                                  *c._trig_args(), f0tab, f1tab, gtab)
    out_snap, out_final, out_bad = _alloc_outputs(snaps.shape[0],
                                                  n_samples, dim)
    _kernels.euler_grouped(keys, offsets, group, x0, s_idx, n_steps,
                           grid.dt, grid.sqrt_dt, c.damping,
                           c.diffusion_const, c.diffusion_saturating,
                           c._nl, c._use_f1, c._use_g,
                           f0tab, f1tab, gtab, snaps,
                           out_snap, out_final, out_bad)
    _raise_on_explosion(out_bad, seeds)
    return out_snap, out_final


def run_peratom(c: QPCoefficients, grid: TimeGrid, *, keys, offsets,
                u1, u2, coeff_offsets, x0, s_idx: int, n_steps: int,
                snaps=None, seeds=None):
    """Advance a batch where every sample has its own phase pair.

    u1/u2/coeff_offsets are per-sample; phases are evaluated inline.  Same
    float stream as `run_grouped` for equal shift values by construction.
    """
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    u1 = np.ascontiguousarray(u1, dtype=np.float64)
    u2 = np.ascontiguousarray(u2, dtype=np.float64)
    coeff_offsets = np.ascontiguousarray(coeff_offsets, dtype=np.int64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    n_samples, dim = x0.shape
    if snaps is None:
        snaps = np.empty(0, dtype=np.int64)
    snaps = np.ascontiguousarray(snaps, dtype=np.int64)
    if seeds is None:
        seeds = np.full(n_samples, -1, dtype=np.int64)
    seeds = np.ascontiguousarray(seeds, dtype=np.int64)

    out_snap, out_final, out_bad = _alloc_outputs(snaps.shape[0],
                                                  n_samples, dim)
    _kernels.euler_peratom(keys, offsets, u1, u2, coeff_offsets, x0,
                           s_idx, n_steps, grid.dt, grid.sqrt_dt,
                           c.period1, c.period2, *c._trig_args(),
                           c.damping, c.diffusion_const,
                           c.diffusion_saturating,
                           c._nl, c._use_f1, c._use_g, snaps,
                           out_snap, out_final, out_bad)
    _raise_on_explosion(out_bad, seeds)
    return out_snap, out_final


def _check_window(s_idx: int, t_idx: int):
    if t_idx < s_idx:
        raise DomainError(f"t_idx {t_idx} < s_idx {s_idx}")


def _state0(c: QPCoefficients, x0) -> np.ndarray:
    x = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x.shape != (c.dim,):
        raise DomainError(f"x0 shape {np.shape(x0)} is not ({c.dim},)")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite initial state")
    return x


def _single(c: QPCoefficients, w: NoisePath, s_idx: int, t_idx: int, x0,
            u1: float, u2: float, coeff_offset: int) -> np.ndarray:
    _check_window(s_idx, t_idx)
    if w.dim != c.dim:
        raise DomainError(f"noise dimension {w.dim} != state dim {c.dim}")
    x = _state0(c, x0)
    snaps = np.arange(s_idx, t_idx + 1, dtype=np.int64)
    snap_states, _ = run_grouped(
        c, w.grid, keys=[w._key], offsets=[w.offset],
        group=np.zeros(1, dtype=np.int64), u1=[u1], u2=[u2],
        coeff_offset=coeff_offset, x0=x[None, :], s_idx=s_idx,
        n_steps=t_idx - s_idx, snaps=snaps,
        seeds=np.array([w.seed], dtype=np.int64))
    return snap_states[:, 0, :]


def integrate(c: QPCoefficients, w: NoisePath, s_idx: int, t_idx: int,
              x0) -> Trajectory:
    """Euler-Maruyama path of the base flow on [s_idx, t_idx]."""
    values = _single(c, w, s_idx, t_idx, x0, 0.0, 0.0, 0)
    return Trajectory(grid=w.grid, start_index=s_idx, values=values,
                      flavor="u", params={"seed": w.seed,
                                          "noise_offset": w.offset})


def integrate_shifted(c: QPCoefficients, w: NoisePath, m: int, s_idx: int,
                      t_idx: int, x0) -> Trajectory:
    """Base flow with the coefficient clock advanced by m grid steps."""
    values = _single(c, w, s_idx, t_idx, x0, 0.0, 0.0, int(m))
    return Trajectory(grid=w.grid, start_index=s_idx, values=values,
                      flavor="u_r", params={"m": int(m), "seed": w.seed,
                                            "noise_offset": w.offset})


def integrate_reparam(c: QPCoefficients, w: NoisePath, r1: float, r2: float,
                      s_idx: int, t_idx: int, x0,
                      coeff_offset: int = 0) -> Trajectory:
    """Flow with coefficient clocks offset by (r1, r2) [+ integer steps].

    The real shifts are reduced modulo the periods on entry, so offsetting
    r1 by an exactly representable multiple of period1 returns a bitwise
    identical trajectory (same for r2/period2).
    """
    if not (math.isfinite(float(r1)) and math.isfinite(float(r2))):
        raise DomainError("non-finite coefficient shift")
    u1 = _kernels.reduce_mod(float(r1), c.period1)
    u2 = _kernels.reduce_mod(float(r2), c.period2)
    values = _single(c, w, s_idx, t_idx, x0, u1, u2, int(coeff_offset))
    return Trajectory(grid=w.grid, start_index=s_idx, values=values,
                      flavor="K",
                      params={"r1": float(r1), "r2": float(r2),
                              "coeff_offset": int(coeff_offset),
                              "seed": w.seed, "noise_offset": w.offset})


def shift_identity_deviation(c: QPCoefficients, w: NoisePath, r1: float,
                             r2: float, m: int, s_idx: int, t_idx: int,
                             x0) -> float:
    """Max deviation between the two sides of the grid-shift identity.

    A run over [s+m, t+m] whose noise is relabeled by -m steps must equal
    the run over [s, t] on the original noise with both coefficient clocks
    advanced m steps.  With counter-based noise and integer clock offsets
    both sides evaluate the same floats, so the deviation is exactly 0; a
    mismatched relabeling breaks it (see the tests).
    """
    m = int(m)
    lhs = integrate_reparam(c, shift(w, -m), r1, r2, s_idx + m, t_idx + m,
                            x0)
    rhs = integrate_reparam(c, w, r1, r2, s_idx, t_idx, x0, coeff_offset=m)
    return float(np.max(np.abs(lhs.values - rhs.values)))


def drift_on_grid(c: QPCoefficients, grid: TimeGrid, j: int, x,
                  r1: float = 0.0, r2: float = 0.0,
                  coeff_offset: int = 0) -> np.ndarray:
    """The exact drift the integrator applies at grid index j.

    Documents (and lets tests assert) that the scalar evaluation path and
    the fused kernel agree bitwise on the diagonal.
    """
    u1 = _kernels.reduce_mod(float(r1), c.period1)
    u2 = _kernels.reduce_mod(float(r2), c.period2)
    t1 = _kernels.phase_at(int(j) + int(coeff_offset), grid.dt, u1,
                           c.period1)
    t2 = _kernels.phase_at(int(j) + int(coeff_offset), grid.dt, u2,
                           c.period2)
    return eval_drift(c, t1, t2, x)


def contraction_slope(c: QPCoefficients, w: NoisePath, s_idx: int,
                      t_idx: int, x0, y0, skip_time: float = 1.0) -> float:
    """Fitted decay slope of log |X - Y| for two starts on shared noise.

    The fit skips the initial transient (`skip_time`) and uses every later
    grid point with a strictly positive gap.
    """
    a = integrate(c, w, s_idx, t_idx, x0)
    b = integrate(c, w, s_idx, t_idx, y0)
    gap = np.linalg.norm(a.values - b.values, axis=1)
    times = a.times
    keep = (times >= times[0] + skip_time) & (gap > 0.0)
    if keep.sum() < 2:
        raise DomainError("not enough points above zero gap to fit a slope")
    slope, _ = np.polyfit(times[keep], np.log(gap[keep]), 1)
    return float(slope)
