"""Empirical laws of the random path and distances between sample clouds.

The law of the path at clock parameters (t, s) is estimated by running the
pull-back ladder over n independent noise realisations; every estimator here
returns an `EmpiricalMeasure` whose `meta` records the full rebuild recipe
(parameters, seed range, ladder controls), so an independent copy for a
Monte-Carlo noise floor is one call away.

Weak-topology comparisons are made concrete by two transport distances
(sorted/quantile W1 in d=1, energy distance in any d) plus a permutation
test for statistical indistinguishability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .coefficients import (
    QPCoefficients,
    check_dissipativity,
    check_lipschitz_and_bounds,
)
from .errors import DomainError
from .flow import run_grouped
from .noise import NoisePath, TimeGrid
from .pullback import PullbackSettings, pullback_ensemble_grouped

_BLOCK = 512  # row block for pairwise-distance sums


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted sample cloud with its provenance."""

    samples: np.ndarray  # (n, d)
    weights: np.ndarray | None = None  # default: uniform
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise DomainError(f"samples shape {s.shape} is not (n, d)")
        if not np.all(np.isfinite(s)):
            raise DomainError("non-finite sample")
        w = self.weights
        if w is None:
            w = np.full(s.shape[0], 1.0 / s.shape[0])
        w = np.ascontiguousarray(w, dtype=np.float64)
        if w.shape != (s.shape[0],):
            raise DomainError("weights must have one entry per sample")
        if np.any(w < 0):
            raise DomainError("negative weight")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise DomainError("weights must sum to 1 within 1e-12")
        s.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "weights", w)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def estimate_hull_law(c: QPCoefficients, grid: TimeGrid, t_param: float,
                      s_param: float, n: int, seed0: int,
                      settings: PullbackSettings = PullbackSettings(),
                      ) -> EmpiricalMeasure:
    """Sample the law of the hull path at clock parameters (t, s).

    Runs the pull-back ladder to target index 0 over n independent noise
    paths with seeds seed0 .. seed0+n-1; equal weights.  Samples that fail
    to converge within the ladder raise ConvergenceError listing their
    seeds.
    """
    n = int(n)
    if n < 1:
        raise DomainError("need at least one sample")
    t_param, s_param = float(t_param), float(s_param)
    if not (np.isfinite(t_param) and np.isfinite(s_param)):
        raise DomainError("non-finite clock parameter")
    seeds = np.arange(seed0, seed0 + n, dtype=np.int64)
    paths = [NoisePath(grid, int(s), dim=c.dim) for s in seeds]
    values, used = pullback_ensemble_grouped(
        c, grid,
        keys=[p._key for p in paths],
        offsets=[p.offset for p in paths],
        group=np.zeros(n, dtype=np.int64),
        u1=[_kernels.reduce_mod(t_param, c.period1)],
        u2=[_kernels.reduce_mod(s_param, c.period2)],
        x0=np.zeros((n, c.dim)), target_idx=0, seeds=seeds,
        settings=settings)
    meta = {
        "kind": "hull_law",
        "time": float(t_param),
        "t_param": float(t_param),
        "s_param": float(s_param),
        "n_samples": n,
        "seed0": int(seed0),
        "seed_last": int(seed0 + n - 1),
        "dt": grid.dt,
        "tol": settings.tol,
        "max_levels": settings.max_levels,
        "levels_used": int(used),
    }
    return EmpiricalMeasure(samples=values, meta=meta)


def estimate_entrance_law(c: QPCoefficients, grid: TimeGrid, t_param: float,
                          n: int, seed0: int,
                          settings: PullbackSettings = PullbackSettings(),
                          ) -> EmpiricalMeasure:
    """Law of the path at real time t: the hull law on its diagonal."""
    return estimate_hull_law(c, grid, t_param, t_param, n, seed0, settings)


def pushforward(c: QPCoefficients, grid: TimeGrid, mu: EmpiricalMeasure,
                s_idx: int, t_idx: int, seed0: int) -> EmpiricalMeasure:
    """Evolve every sample from grid index s_idx to t_idx on fresh noise.

    Sample i uses seed seed0 + i; t_idx == s_idx returns the same cloud
    bitwise.  Weights carry over unchanged.
    """
    if t_idx < s_idx:
        raise DomainError(f"t_idx {t_idx} < s_idx {s_idx}")
    if mu.dim != c.dim:
        raise DomainError(f"measure dimension {mu.dim} != state dim {c.dim}")
    n = mu.n_samples
    seeds = np.arange(seed0, seed0 + n, dtype=np.int64)
    paths = [NoisePath(grid, int(s), dim=c.dim) for s in seeds]
    _, finals = run_grouped(
        c, grid,
        keys=[p._key for p in paths],
        offsets=[p.offset for p in paths],
        group=np.zeros(n, dtype=np.int64), u1=[0.0], u2=[0.0],
        coeff_offset=0, x0=mu.samples, s_idx=int(s_idx),
        n_steps=int(t_idx) - int(s_idx), seeds=seeds)
    meta = {
        **mu.meta,
        "kind": "pushforward",
        "time": grid.time_of(int(t_idx)),
        "pushforward_from": int(s_idx),
        "pushforward_to": int(t_idx),
        "pushforward_seed0": int(seed0),
    }
    return EmpiricalMeasure(samples=finals, weights=mu.weights, meta=meta)


# ---------------------------------------------------------------------------
# transport distances
# ---------------------------------------------------------------------------

def _quantile_coupling_w1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    # exact integral of |Fa^-1 - Fb^-1| over (0, 1]: both quantile
    # functions are step functions, constant between merged jump points
    def prep(m):
        order = np.argsort(m.samples[:, 0], kind="stable")
        xs = m.samples[order, 0]
        cw = np.cumsum(m.weights[order])
        cw[-1] = 1.0  # close the tiny cumsum defect
        return xs, cw

    xa, ca = prep(mu)
    xb, cb = prep(nu)
    q = np.union1d(ca, cb)
    q = q[q > 0.0]
    ia = np.searchsorted(ca, q, side="left")
    ib = np.searchsorted(cb, q, side="left")
    dq = np.diff(q, prepend=0.0)
    return float(np.sum(dq * np.abs(xa[ia] - xb[ib])))


def _mean_pairwise_distance(xa, wa, xb, wb) -> float:
    # sum_ij wa_i wb_j |xa_i - xb_j|, blocked rows, fixed reduction order
    row = np.empty(xa.shape[0])
    for i0 in range(0, xa.shape[0], _BLOCK):
        blk = xa[i0:i0 + _BLOCK, None, :] - xb[None, :, :]
        if xa.shape[1] == 1:
            d = np.abs(blk[:, :, 0])
        else:
            d = np.sqrt(np.sum(blk * blk, axis=2))
        row[i0:i0 + _BLOCK] = d @ wb
    return float(row @ wa)


def transport_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                       kind: str = "energy") -> float:
    """Distance between two sample clouds.

    kind="w1_sorted": exact 1-d Wasserstein via the quantile coupling
    (reduces to the mean absolute difference of matched sorted samples for
    equal counts and uniform weights).  kind="energy": energy distance
    2 E|X-Y| - E|X-X'| - E|Y-Y'| with exact pairwise sums including the
    diagonal, valid in any dimension; zero exactly iff the weighted clouds
    coincide as distributions.
    """
    if mu.dim != nu.dim:
        raise DomainError(f"dimension mismatch {mu.dim} != {nu.dim}")
    if kind == "w1_sorted":
        if mu.dim != 1:
            raise DomainError("w1_sorted requires d=1")
        return _quantile_coupling_w1(mu, nu)
    if kind == "energy":
        ab = _mean_pairwise_distance(mu.samples, mu.weights,
                                     nu.samples, nu.weights)
        aa = _mean_pairwise_distance(mu.samples, mu.weights,
                                     mu.samples, mu.weights)
        bb = _mean_pairwise_distance(nu.samples, nu.weights,
                                     nu.samples, nu.weights)
        return 2.0 * ab - aa - bb
    raise DomainError(f"unknown distance kind {kind!r}")


@dataclass(frozen=True)
class PermutationReport:
    statistic: float
    critical_value: float
    level: float
    n_resamples: int
    passed: bool


def _require_uniform(m: EmpiricalMeasure, who: str):
    if np.max(np.abs(m.weights - 1.0 / m.n_samples)) > 1e-12:
        raise DomainError(f"{who}: permutation test needs uniform weights")


def _partition_energy(dmat, idx_a, idx_b) -> float:
    sub = dmat[idx_a]
    ab = sub[:, idx_b].mean()
    aa = sub[:, idx_a].mean()
    bb = dmat[idx_b][:, idx_b].mean()
    return 2.0 * ab - aa - bb


def energy_permutation_test(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                            n_resamples: int = 200, level: float = 0.01,
                            seed: int = 0) -> PermutationReport:
    """Exchangeability test: is the observed energy distance explainable
    by the pooled cloud's internal variability?

    Recomputes the statistic over n_resamples random relabelings of the
    pooled samples; passed means the observed value does not exceed the
    (1-level) resample quantile.
    """
    if mu.dim != nu.dim:
        raise DomainError(f"dimension mismatch {mu.dim} != {nu.dim}")
    _require_uniform(mu, "mu")
    _require_uniform(nu, "nu")
    n, m = mu.n_samples, nu.n_samples
    pool = np.vstack([mu.samples, nu.samples])
    # pooled pairwise distances, built once and sliced per relabeling
    dmat = np.empty((n + m, n + m))
    for i0 in range(0, n + m, _BLOCK):
        blk = pool[i0:i0 + _BLOCK, None, :] - pool[None, :, :]
        if pool.shape[1] == 1:
            dmat[i0:i0 + _BLOCK] = np.abs(blk[:, :, 0])
        else:
            dmat[i0:i0 + _BLOCK] = np.sqrt(np.sum(blk * blk, axis=2))
    stat = _partition_energy(dmat, np.arange(n), np.arange(n, n + m))
    rng = np.random.default_rng(seed)
    stats = np.empty(n_resamples)
    for r in range(n_resamples):
        perm = rng.permutation(n + m)
        stats[r] = _partition_energy(dmat, perm[:n], perm[n:])
    critical = float(np.quantile(stats, 1.0 - level))
    return PermutationReport(statistic=float(stat), critical_value=critical,
                             level=float(level),
                             n_resamples=int(n_resamples),
                             passed=bool(stat <= critical))


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

def second_moment(mu: EmpiricalMeasure) -> float:
    """Weighted mean of |x|^2 over the cloud."""
    return float(mu.weights @ np.sum(mu.samples * mu.samples, axis=1))


def moment_bound(c: QPCoefficients, n_audit: int = 4096) -> float:
    """Stationary second-moment bound from the audited constants.

    From the generator inequality
      2<x, b(t,x)> + ||sigma(t,x)||^2
        <= -(2a - b^2 - 3e)|x|^2 + M^2 (1/(2e) + b^2/e + 1)
    (a = dissipativity rate, b = diffusion Lipschitz constant, M = origin
    bound; e any value in (0, (2a - b^2)/3), via Young's inequality on the
    cross terms), the second moment of any bounded-start solution settles
    below C(e) = M^2 (1/(2e) + b^2/e + 1) / (2a - b^2 - 3e).  Returns the
    numerical minimum of C over the admissible range.
    """
    cached = c._cache.get("moment_bound")
    if cached is not None:
        return cached
    a = check_dissipativity(c, n_samples=n_audit).alpha_hat
    reg = check_lipschitz_and_bounds(c, n_samples=n_audit)
    b, m = reg.beta_hat, reg.m_hat
    margin = 2.0 * a - b * b
    if margin <= 0:
        raise DomainError(
            f"no stationary second-moment bound: 2a - b^2 = {margin} <= 0")
    eps = (margin / 3.0) * np.linspace(1e-3, 1.0 - 1e-3, 2000)
    bound = (m * m * (0.5 / eps + b * b / eps + 1.0)) / (margin - 3.0 * eps)
    out = float(bound.min())
    c._cache["moment_bound"] = out
    return out


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def measure_to_csv(mu: EmpiricalMeasure, path) -> None:
    """One sample per row, trailing weight column; meta in a JSON sidecar."""
    path = Path(path)
    cols = [f"x_{i + 1}" for i in range(mu.dim)] + ["weight"]
    with path.open("w") as fh:
        fh.write(",".join(cols) + "\n")
        for x, w in zip(mu.samples, mu.weights):
            fh.write(",".join([repr(float(v)) for v in x] + [repr(float(w))])
                     + "\n")
    sidecar = {
        "meta": mu.meta,
        "n_samples": mu.n_samples,
        "dim": mu.dim,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2,
                                              default=str))


def measure_from_csv(path) -> EmpiricalMeasure:
    path = Path(path)
    rows = path.read_text().splitlines()
    if len(rows) < 2:
        raise DomainError(f"{path}: no sample rows")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    meta = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text()).get("meta", {})
    return EmpiricalMeasure(samples=data[:, :-1], weights=data[:, -1],
                            meta=meta)
