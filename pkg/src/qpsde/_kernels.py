"""Jitted numerical core shared by every module that touches trajectories.

All floating-point streams (counter hashing, inverse normal CDF, phase
reduction, trig forcing, Euler stepping) are defined here exactly once, so
scalar Python-level evaluations and batched kernel runs produce bitwise
identical values.  Nothing in this module holds state.
"""

from __future__ import annotations

import math
import os

# Pin the threading layer before numba is imported: workqueue is always
# available, and the results never depend on the layer because every parallel
# region writes disjoint slots.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
from numba import njit, prange

U64 = np.uint64
I64 = np.int64

TWO_PI = 2.0 * math.pi

# uniform in [2**-54, 1 - 2**-54]: the inverse CDF below then stays in
# |z| <= 8.22, so no clipping or rejection branch exists anywhere.
_TWO_NEG53 = 2.0 ** -53
_TWO_NEG54 = 2.0 ** -54

_C_SEED = U64(0x9E3779B97F4A7C15)
_C_INDEX = U64(0xC2B2AE3D27D4EB4F)
_C_COMPONENT = U64(0x165667B19E3779F9)

# int64 sentinel: "no explosion observed for this sample"
NO_EXPLOSION = np.iinfo(np.int64).min


# ---------------------------------------------------------------------------
# counter-based noise
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _mix(z):
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2**64
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def key_of_seed(seed):
    return _mix(seed + _C_SEED)


@njit(cache=True, inline="always")
def _hash_counter(key, idx_u, comp_u):
    v = _mix(key + _C_INDEX * idx_u)
    return _mix(v + _C_COMPONENT * comp_u)


@njit(cache=True, inline="always")
def _uniform_of(h):
    return (h >> U64(11)) * _TWO_NEG53 + _TWO_NEG54


@njit(cache=True, inline="always")
def _ppnd16(u):
    # Wichura's double-precision inverse normal CDF (algorithm AS 241,
    # PPND16), accurate to ~1e-16 relative on (0, 1).
    q = u - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r
                    + 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r
                  + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r
                + 1.3314166789178437745e+2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r
                    + 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r
                  + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r
                + 4.2313330701600911252e+1) * r + 1.0)
        return q * num / den
    r = u if q < 0.0 else 1.0 - u
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    z = num / den
    return -z if q < 0.0 else z


@njit(cache=True, inline="always")
def gauss_increment(key, idx, comp, sqrt_dt):
    # one N(0, dt) variate per (path key, signed grid index, component)
    idx_u = U64(idx)  # two's-complement image keeps negative indices bijective
    return _ppnd16(_uniform_of(_hash_counter(key, idx_u, U64(comp)))) * sqrt_dt


@njit(cache=True)
def fill_increments(key, offset, k0, n, sqrt_dt, out):
    # out: (n, d); increment rows for grid indices k0 .. k0+n-1
    d = out.shape[1]
    for i in range(n):
        idx = k0 + offset + i
        for c in range(d):
            out[i, c] = gauss_increment(key, idx, c, sqrt_dt)
    return out


@njit(cache=True)
def sum_increments(key, offset, k, d, sqrt_dt, out):
    # two-sided partial sum anchored at index 0: rows 0..k-1 for k > 0,
    # negated rows k..-1 for k < 0.  Left-to-right accumulation.
    for c in range(d):
        out[c] = 0.0
    if k > 0:
        for i in range(k):
            idx = offset + i
            for c in range(d):
                out[c] = out[c] + gauss_increment(key, idx, c, sqrt_dt)
    elif k < 0:
        for i in range(k, 0):
            idx = offset + i
            for c in range(d):
                out[c] = out[c] + gauss_increment(key, idx, c, sqrt_dt)
        for c in range(d):
            out[c] = -out[c]
    return out


# ---------------------------------------------------------------------------
# phase arithmetic
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def reduce_mod(x, p):
    """Map x to [0, p) for p > 0, matching CPython float ``%`` semantics.

    Python's float ``%`` can return p itself when x is a tiny negative
    number (e.g. -1e-300 % 1.0 == 1.0), hence the guard.
    """
    y = x % p
    if y >= p:
        y = 0.0
    return y


def reduce_mod_array(x, p):
    # vectorized twin of reduce_mod, bitwise identical per element
    y = np.fmod(x, p)
    neg = (y != 0.0) & ((y < 0.0) != (p < 0.0))
    y = np.where(neg, y + p, y)
    y = np.where(y == 0.0, 0.0, y)  # normalize -0.0 like CPython's %
    return np.where(y >= p, 0.0, y)


@njit(cache=True, inline="always")
def phase_at(j, dt, u, tau):
    # coefficient time for grid index j under an entry-reduced shift u
    return reduce_mod(j * dt + u, tau)


# ---------------------------------------------------------------------------
# trigonometric forcing
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def trig_scalar(t1, t2, tau1, tau2, amp, n1, n2, ph):
    # sum_i amp[i] * sin(2*pi*(n1[i]*t1/tau1 + n2[i]*t2/tau2) + ph[i]),
    # accumulated in term order
    acc = 0.0
    for i in range(amp.shape[0]):
        arg = TWO_PI * (n1[i] * (t1 / tau1) + n2[i] * (t2 / tau2)) + ph[i]
        acc = acc + amp[i] * math.sin(arg)
    return acc


@njit(cache=True, inline="always")
def trig_vector(t1, t2, tau1, tau2, amp, n1, n2, ph, out):
    # amp: (terms, d); per-component accumulation in term order
    d = out.shape[0]
    for c in range(d):
        out[c] = 0.0
    for i in range(amp.shape[0]):
        arg = TWO_PI * (n1[i] * (t1 / tau1) + n2[i] * (t2 / tau2)) + ph[i]
        s = math.sin(arg)
        for c in range(d):
            out[c] = out[c] + amp[i, c] * s
    return out


@njit(cache=True)
def build_forcing_tables(s_idx, n_steps, coeff_off, dt, u1, u2, tau1, tau2,
                         amp0, n10, n20, ph0,
                         amp1, n11, n21, ph1,
                         ampg, n1g, n2g, phg,
                         f0tab, f1tab, gtab):
    # f0tab: (n_steps, G, d), f1tab/gtab: (n_steps, G); group g uses the
    # entry-reduced shifts u1[g], u2[g].  Phases are computed by the same
    # jitted code as the per-atom kernel, so both modes agree bitwise.
    n_groups = u1.shape[0]
    d = f0tab.shape[2]
    buf = np.empty(d)
    for k in range(n_steps):
        j = s_idx + k + coeff_off
        for g in range(n_groups):
            t1 = phase_at(j, dt, u1[g], tau1)
            t2 = phase_at(j, dt, u2[g], tau2)
            trig_vector(t1, t2, tau1, tau2, amp0, n10, n20, ph0, buf)
            for c in range(d):
                f0tab[k, g, c] = buf[c]
            if amp1.shape[0] > 0:
                f1tab[k, g] = trig_scalar(t1, t2, tau1, tau2, amp1, n11, n21, ph1)
            if ampg.shape[0] > 0:
                gtab[k, g] = trig_scalar(t1, t2, tau1, tau2, ampg, n1g, n2g, phg)


# ---------------------------------------------------------------------------
# drift / diffusion evaluation (one definition for kernels and Python API)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def drift_into(x, a_mat, f0vec, f1val, use_f1, nl, out):
    # out_i = -(A x)_i [+ f1 * tanh(x_i)] + f0_i, accumulation order fixed
    d = x.shape[0]
    for i in range(d):
        acc = 0.0
        for c in range(d):
            acc = acc - a_mat[i, c] * x[c]
        if use_f1 and nl == 1:
            acc = acc + f1val * math.tanh(x[i])
        out[i] = acc + f0vec[i]
    return out


@njit(cache=True, inline="always")
def state_average_tanh(x, nl):
    if nl != 1:
        return 0.0
    d = x.shape[0]
    acc = 0.0
    for c in range(d):
        acc = acc + math.tanh(x[c])
    return acc / d


@njit(cache=True, inline="always")
def diffusion_apply(z, s0, s1, gh, use_g, out):
    # out = S0 z + (g * mean tanh) * (S1 z); the two matvecs are kept
    # separate so the op order is pinned
    d = z.shape[0]
    for i in range(d):
        acc = 0.0
        for c in range(d):
            acc = acc + s0[i, c] * z[c]
        if use_g:
            acc1 = 0.0
            for c in range(d):
                acc1 = acc1 + s1[i, c] * z[c]
            acc = acc + gh * acc1
        out[i] = acc
    return out


@njit(cache=True, inline="always")
def _euler_step(x, z, dbuf, nbuf, key, noise_idx, dt, sqrt_dt,
                a_mat, s0, s1, nl, use_f1, use_g, f0vec, f1val, gval):
    # one explicit Euler step in place; returns False when the new state
    # has a non-finite component
    d = x.shape[0]
    for c in range(d):
        z[c] = gauss_increment(key, noise_idx, c, sqrt_dt)
    drift_into(x, a_mat, f0vec, f1val, use_f1, nl, dbuf)
    gh = 0.0
    if use_g:
        gh = gval * state_average_tanh(x, nl)
    diffusion_apply(z, s0, s1, gh, use_g, nbuf)
    ok = True
    for c in range(d):
        xc = x[c] + dbuf[c] * dt + nbuf[c]
        if not math.isfinite(xc):
            ok = False
        x[c] = xc
    return ok


@njit(cache=True, parallel=True)
def euler_grouped(keys, offsets, group, x0, s_idx, n_steps, dt, sqrt_dt,
                  a_mat, s0, s1, nl, use_f1, use_g,
                  f0tab, f1tab, gtab, snaps, out_snap, out_final, out_bad):
    """Fused Euler over samples whose forcing is tabulated per group.

    snaps: sorted absolute grid indices in [s_idx, s_idx + n_steps]; the
    state at each requested index lands in out_snap[(snap slot), sample].
    out_bad[b] stays NO_EXPLOSION unless sample b leaves the finite range,
    in which case it records the first bad grid index and the sample stops.
    """
    n_samples, d = x0.shape
    n_snaps = snaps.shape[0]
    for b in prange(n_samples):
        x = np.empty(d)
        z = np.empty(d)
        dbuf = np.empty(d)
        nbuf = np.empty(d)
        for c in range(d):
            x[c] = x0[b, c]
        key = keys[b]
        off = offsets[b]
        g = group[b]
        sp = 0
        while sp < n_snaps and snaps[sp] == s_idx:
            for c in range(d):
                out_snap[sp, b, c] = x[c]
            sp += 1
        for k in range(n_steps):
            j = s_idx + k
            ok = _euler_step(x, z, dbuf, nbuf, key, j + off, dt, sqrt_dt,
                             a_mat, s0, s1, nl, use_f1, use_g,
                             f0tab[k, g], f1tab[k, g], gtab[k, g])
            if not ok:
                out_bad[b] = j + 1
                break
            while sp < n_snaps and snaps[sp] == j + 1:
                for c in range(d):
                    out_snap[sp, b, c] = x[c]
                sp += 1
        for c in range(d):
            out_final[b, c] = x[c]


@njit(cache=True, parallel=True)
def euler_peratom(keys, offsets, u1, u2, coeff_off, x0, s_idx, n_steps,
                  dt, sqrt_dt, tau1, tau2,
                  amp0, n10, n20, ph0, amp1, n11, n21, ph1,
                  ampg, n1g, n2g, phg,
                  a_mat, s0, s1, nl, use_f1, use_g,
                  snaps, out_snap, out_final, out_bad):
    """Fused Euler with per-sample phase shifts evaluated inline.

    Sample b advances the coefficient clock as
    reduce((j + coeff_off[b]) * dt + u[b], tau); identical float sequence
    to the tabulated kernel for equal shift values.
    """
    n_samples, d = x0.shape
    n_snaps = snaps.shape[0]
    for b in prange(n_samples):
        x = np.empty(d)
        z = np.empty(d)
        dbuf = np.empty(d)
        nbuf = np.empty(d)
        f0vec = np.empty(d)
        for c in range(d):
            x[c] = x0[b, c]
        key = keys[b]
        off = offsets[b]
        gof = coeff_off[b]
        ub1 = u1[b]
        ub2 = u2[b]
        sp = 0
        while sp < n_snaps and snaps[sp] == s_idx:
            for c in range(d):
                out_snap[sp, b, c] = x[c]
            sp += 1
        for k in range(n_steps):
            j = s_idx + k
            t1 = phase_at(j + gof, dt, ub1, tau1)
            t2 = phase_at(j + gof, dt, ub2, tau2)
            trig_vector(t1, t2, tau1, tau2, amp0, n10, n20, ph0, f0vec)
            f1val = 0.0
            if amp1.shape[0] > 0:
                f1val = trig_scalar(t1, t2, tau1, tau2, amp1, n11, n21, ph1)
            gval = 0.0
            if ampg.shape[0] > 0:
                gval = trig_scalar(t1, t2, tau1, tau2, ampg, n1g, n2g, phg)
            ok = _euler_step(x, z, dbuf, nbuf, key, j + off, dt, sqrt_dt,
                             a_mat, s0, s1, nl, use_f1, use_g,
                             f0vec, f1val, gval)
            if not ok:
                out_bad[b] = j + 1
                break
            while sp < n_snaps and snaps[sp] == j + 1:
                for c in range(d):
                    out_snap[sp, b, c] = x[c]
                sp += 1
        for c in range(d):
            out_final[b, c] = x[c]


# scalar wrappers so plain-Python callers share the jitted float paths

@njit(cache=True)
def drift_value(x, t1, t2, tau1, tau2, a_mat,
                amp0, n10, n20, ph0, amp1, n11, n21, ph1, nl, out):
    f0vec = np.empty(x.shape[0])
    trig_vector(t1, t2, tau1, tau2, amp0, n10, n20, ph0, f0vec)
    f1val = 0.0
    use_f1 = amp1.shape[0] > 0
    if use_f1:
        f1val = trig_scalar(t1, t2, tau1, tau2, amp1, n11, n21, ph1)
    drift_into(x, a_mat, f0vec, f1val, use_f1, nl, out)
    return out


@njit(cache=True)
def diffusion_factor(x, t1, t2, tau1, tau2, s0, s1,
                     ampg, n1g, n2g, phg, nl, out):
    # out = S0 + (g(t1, t2) * mean tanh(x)) * S1, the matrix applied to
    # noise increments
    d = x.shape[0]
    use_g = ampg.shape[0] > 0
    gh = 0.0
    if use_g:
        gval = trig_scalar(t1, t2, tau1, tau2, ampg, n1g, n2g, phg)
        gh = gval * state_average_tanh(x, nl)
    for i in range(d):
        for c in range(d):
            out[i, c] = s0[i, c] + gh * s1[i, c]
    return out
