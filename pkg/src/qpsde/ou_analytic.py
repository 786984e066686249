"""Closed-form Gaussian oracle for the linear (Ornstein-Uhlenbeck) family.

With linear damping and state-independent diffusion, the pull-back limit is
Gaussian with mean and covariance given by exponentially damped integrals of
the forcing and the diffusion square over the half-line into the past.
These are evaluated here by a self-checking quadrature, plus a termwise
antiderivative formula for d=1 that guards the quadrature itself.  Every
Monte-Carlo estimator in the package is ultimately validated against this
module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .coefficients import QPCoefficients, TrigTerm
from .errors import ConfigError, DomainError, QuadratureError
from .measures import EmpiricalMeasure

TWO_PI = 2.0 * math.pi

# composite Gauss-Legendre: nodes per panel, panels per shortest period,
# and the damped-integral truncation depth in contraction-rate units
_GL_ORDER = 8
_PANELS_PER_PERIOD = 8
_DECAY_DEPTH = 40.0


@dataclass(frozen=True)
class MatrixTrigTerm:
    """One matrix-amplitude harmonic of a time-dependent diffusion."""

    amplitude: tuple  # d x d, stored as nested tuples
    harmonic1: int
    harmonic2: int
    phase: float = 0.0

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.amplitude, dtype=np.float64))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError("diffusion_terms.amplitude",
                              "must be a square matrix")
        if not np.all(np.isfinite(a)):
            raise ConfigError("diffusion_terms.amplitude", "must be finite")
        object.__setattr__(self, "amplitude",
                           tuple(tuple(float(v) for v in row) for row in a))
        object.__setattr__(self, "harmonic1", int(self.harmonic1))
        object.__setattr__(self, "harmonic2", int(self.harmonic2))
        object.__setattr__(self, "phase", float(self.phase))


def matrix_trig_term(amplitude, harmonic1: int, harmonic2: int,
                     phase: float = 0.0) -> MatrixTrigTerm:
    return MatrixTrigTerm(amplitude=amplitude, harmonic1=harmonic1,
                          harmonic2=harmonic2, phase=phase)


@dataclass(frozen=True, eq=False)
class OUSpec:
    """Linear drift toward a two-frequency forcing, time-only diffusion."""

    dim: int
    period1: float
    period2: float
    damping: np.ndarray  # symmetric positive definite
    forcing: tuple[TrigTerm, ...] = ()
    diffusion_const: np.ndarray | None = None  # default: zeros
    diffusion_terms: tuple[MatrixTrigTerm, ...] = ()
    _eig: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ConfigError("dim", "must be >= 1")
        object.__setattr__(self, "dim", d)
        for name in ("period1", "period2"):
            p = float(getattr(self, name))
            if not (math.isfinite(p) and p > 0):
                raise ConfigError(name, "must be a finite positive real")
            object.__setattr__(self, name, p)
        a = np.ascontiguousarray(self.damping, dtype=np.float64)
        if a.shape != (d, d) or not np.all(np.isfinite(a)):
            raise ConfigError("damping", f"must be a finite {d}x{d} matrix")
        scale = 1.0 + np.max(np.abs(a))
        if np.max(np.abs(a - a.T)) > 1e-12 * scale:
            raise ConfigError("damping", "must be symmetric")
        lam, vec = np.linalg.eigh(a)
        if lam[0] <= 0:
            raise ConfigError("damping", "must be positive definite")
        a.setflags(write=False)
        object.__setattr__(self, "damping", a)
        object.__setattr__(self, "_eig", (lam, vec))
        s0 = self.diffusion_const
        s0 = np.zeros((d, d)) if s0 is None else \
            np.ascontiguousarray(s0, dtype=np.float64)
        if s0.shape != (d, d) or not np.all(np.isfinite(s0)):
            raise ConfigError("diffusion_const",
                              f"must be a finite {d}x{d} matrix")
        s0.setflags(write=False)
        object.__setattr__(self, "diffusion_const", s0)
        terms = tuple(self.forcing)
        for t in terms:
            if len(t.amplitude) != d:
                raise ConfigError("forcing", f"amplitude length != {d}")
        object.__setattr__(self, "forcing", terms)
        dterms = tuple(self.diffusion_terms)
        for t in dterms:
            if len(t.amplitude) != d:
                raise ConfigError("diffusion_terms",
                                  f"amplitude shape != {d}x{d}")
        object.__setattr__(self, "diffusion_terms", dterms)


def from_coefficients(c: QPCoefficients) -> OUSpec:
    """View a linear, state-independently driven spec as an OUSpec.

    Saturating drift terms or state-modulated diffusion have no Gaussian
    law, so their presence is rejected.
    """
    if c.saturating_forcing or c.diffusion_modulation:
        raise DomainError(
            "analytic law requires linear drift and state-free diffusion")
    return OUSpec(dim=c.dim, period1=c.period1, period2=c.period2,
                  damping=np.array(c.damping), forcing=tuple(c.forcing),
                  diffusion_const=np.array(c.diffusion_const))


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.mean, dtype=np.float64).reshape(-1)
        cv = np.ascontiguousarray(self.cov, dtype=np.float64)
        d = m.shape[0]
        if cv.shape != (d, d):
            raise DomainError(f"cov shape {cv.shape} != ({d}, {d})")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(cv))):
            raise DomainError("non-finite Gaussian parameters")
        scale = 1.0 + float(np.max(np.abs(cv)))
        if np.max(np.abs(cv - cv.T)) > 1e-12 * scale:
            raise DomainError("cov must be symmetric within 1e-12")
        if float(np.linalg.eigvalsh(cv)[0]) < -1e-12 * scale:
            raise DomainError("cov must be positive semidefinite")
        m.setflags(write=False)
        cv.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", cv)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


# ---------------------------------------------------------------------------
# quadrature over the damped half-line
# ---------------------------------------------------------------------------

def _forcing_at(spec: OUSpec, t1, t2) -> np.ndarray:
    # (n, d) forcing values at node vectors t1, t2
    out = np.zeros((t1.shape[0], spec.dim))
    for term in spec.forcing:
        arg = TWO_PI * (term.harmonic1 * (t1 / spec.period1)
                        + term.harmonic2 * (t2 / spec.period2)) + term.phase
        out += np.sin(arg)[:, None] * np.asarray(term.amplitude)
    return out


def _diffusion_at(spec: OUSpec, t1, t2) -> np.ndarray:
    # (n, d, d) diffusion matrices at node vectors t1, t2
    out = np.broadcast_to(spec.diffusion_const,
                          (t1.shape[0], spec.dim, spec.dim)).copy()
    for term in spec.diffusion_terms:
        arg = TWO_PI * (term.harmonic1 * (t1 / spec.period1)
                        + term.harmonic2 * (t2 / spec.period2)) + term.phase
        out += np.sin(arg)[:, None, None] * np.asarray(term.amplitude)
    return out


def _panel_nodes(spec: OUSpec, panels_per_period: int):
    lam_min = float(spec._eig[0][0])
    depth = _DECAY_DEPTH / lam_min
    width = min(spec.period1, spec.period2) / panels_per_period
    n_panels = int(math.ceil(depth / width))
    x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    edges = -width * np.arange(n_panels + 1)  # 0, -w, ..., -n*w
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + 0.5 * width * x[None, :]).reshape(-1)
    weights = np.broadcast_to(0.5 * width * w,
                              (n_panels, _GL_ORDER)).reshape(-1)
    return nodes, weights


def _quad_law(spec: OUSpec, t: float, s: float, panels_per_period: int):
    lam, q = spec._eig
    r, w = _panel_nodes(spec, panels_per_period)
    decay = np.exp(r[:, None] * lam[None, :])  # (n, d)

    f = _forcing_at(spec, r + t, r + s)  # (n, d)
    f_eig = f @ q  # rows Q^T f
    mean = q @ ((w[:, None] * decay * f_eig).sum(axis=0))

    sig = _diffusion_at(spec, r + t, r + s)  # (n, d, d)
    m = np.einsum("nij,nkj->nik", sig, sig)  # sigma sigma^T per node
    m_eig = np.einsum("pi,npq,qj->nij", q, m, q)  # Q^T M Q per node
    scale = decay[:, :, None] * decay[:, None, :]
    cov_eig = (w[:, None, None] * scale * m_eig).sum(axis=0)
    cov = q @ cov_eig @ q.T
    return mean, 0.5 * (cov + cov.T)


def exact_hull_law(spec: OUSpec, t: float, s: float) -> GaussianLaw:
    """Gaussian law of the hull path at clock parameters (t, s).

    Mean and covariance are damped half-line integrals of the forcing and
    the diffusion square; evaluated at two quadrature resolutions, and the
    run aborts if doubling the resolution moves any entry by more than
    1e-10 (it never should for trig data).
    """
    t, s = float(t), float(s)
    if not (math.isfinite(t) and math.isfinite(s)):
        raise DomainError("non-finite clock parameter")
    m1, c1 = _quad_law(spec, t, s, _PANELS_PER_PERIOD)
    m2, c2 = _quad_law(spec, t, s, 2 * _PANELS_PER_PERIOD)
    err = max(float(np.max(np.abs(m1 - m2))), float(np.max(np.abs(c1 - c2))))
    if err > 1e-10:
        raise QuadratureError(
            f"law quadrature moved by {err:.3e} under refinement")
    return GaussianLaw(mean=m2, cov=c2)


def exact_law(spec: OUSpec, t: float) -> GaussianLaw:
    """Gaussian law of the path at real time t (hull diagonal)."""
    return exact_hull_law(spec, t, t)


def closed_form_mean(spec: OUSpec, t: float) -> float:
    """Termwise antiderivative mean for d=1: the oracle of the oracle.

    Each forcing harmonic amp*sin(w u + psi) on the diagonal (u, u)
    contributes amp*(a sin(w t + psi) - w cos(w t + psi)) / (a^2 + w^2).
    """
    if spec.dim != 1:
        raise DomainError("closed-form mean is implemented for d=1 only")
    a = float(spec.damping[0, 0])
    acc = 0.0
    for term in spec.forcing:
        om = TWO_PI * (term.harmonic1 / spec.period1
                       + term.harmonic2 / spec.period2)
        ph = om * float(t) + term.phase
        acc += term.amplitude[0] * (a * math.sin(ph) - om * math.cos(ph)) \
            / (a * a + om * om)
    return acc


def lyapunov_covariance(spec: OUSpec) -> np.ndarray:
    """Stationary covariance for constant diffusion.

    Solves damping @ C + C @ damping = sigma sigma^T in the damping
    eigenbasis; for d=1 this is sigma0^2 / (2 a).
    """
    if spec.diffusion_terms:
        raise DomainError("Lyapunov covariance needs constant diffusion")
    lam, q = spec._eig
    rhs = q.T @ (spec.diffusion_const @ spec.diffusion_const.T) @ q
    cov_eig = rhs / (lam[:, None] + lam[None, :])
    return q @ cov_eig @ q.T


# ---------------------------------------------------------------------------
# goodness of fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GofReport:
    mean_z: np.ndarray
    cov_rel_err: float
    ks_stat: float
    flags: tuple[str, ...]

    @property
    def flagged(self) -> bool:
        return len(self.flags) > 0


def gaussian_gof(mu: EmpiricalMeasure, law: GaussianLaw) -> GofReport:
    """Sample cloud vs Gaussian law: mean z-scores, covariance error, KS.

    mean_z standardises each sample-mean component by the law's own
    standard error; cov_rel_err is the relative Frobenius error of the
    sample covariance; ks_stat (d=1 only, else NaN) is the KS statistic of
    the standardised samples against a standard normal.  Degenerate
    combinations are reported in flags rather than raising.
    """
    if mu.dim != law.dim:
        raise DomainError(f"dimension mismatch {mu.dim} != {law.dim}")
    n, d = mu.n_samples, mu.dim
    flags: list[str] = []

    w = mu.weights
    sample_mean = w @ mu.samples
    centred = mu.samples - sample_mean
    sample_cov = (w[:, None] * centred).T @ centred

    law_var = np.diag(law.cov)
    scale = 1.0 + float(np.max(np.abs(law.cov)))
    law_degenerate = float(np.linalg.eigvalsh(law.cov)[0]) <= 1e-12 * scale
    spread = float(np.max(np.abs(centred)))
    if law_degenerate and spread > 0.0:
        flags.append("degenerate_law")
    if spread == 0.0 and not law_degenerate:
        flags.append("degenerate_samples")

    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt(law_var / n)
        mean_z = np.where(se > 0.0,
                          (sample_mean - law.mean) / se,
                          np.where(sample_mean == law.mean, 0.0, np.inf))
    denom = float(np.linalg.norm(law.cov))
    num = float(np.linalg.norm(sample_cov - law.cov))
    if denom > 0.0:
        cov_rel_err = num / denom
    else:
        cov_rel_err = 0.0 if num == 0.0 else math.inf

    ks = math.nan
    if d == 1:
        sd = math.sqrt(law.cov[0, 0]) if law.cov[0, 0] > 0 else 0.0
        if sd > 0.0:
            order = np.argsort(mu.samples[:, 0], kind="stable")
            z = (mu.samples[order, 0] - law.mean[0]) / sd
            wts = w[order]
            cdf = ndtr(z)
            hi = np.cumsum(wts)
            ks = float(max(np.max(hi - cdf), np.max(cdf - (hi - wts))))
        else:
            ks = 0.0 if spread == 0.0 and \
                np.all(mu.samples[:, 0] == law.mean[0]) else 1.0
    return GofReport(mean_z=mean_z, cov_rel_err=float(cov_rel_err),
                     ks_stat=ks, flags=tuple(flags))
