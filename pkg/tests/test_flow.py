"""Trajectory integration: oracles, exact shift identities, convergence."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from qpsde.coefficients import (
    DeclaredBounds,
    QPCoefficients,
    eval_diffusion,
    trig_term,
)
from qpsde.config import ou_benchmark
from qpsde.errors import DomainError, ExplosionError
from qpsde.flow import (
    Trajectory,
    contraction_slope,
    drift_on_grid,
    integrate,
    integrate_reparam,
    integrate_shifted,
    run_grouped,
    run_peratom,
    shift_identity_deviation,
)
from qpsde.noise import NoisePath, TimeGrid, shift


def benchmark():
    return ou_benchmark().coefficients


def linear_pull(dim=1, rate=1.0, sigma=0.5, forcing=()):
    d = dim
    return QPCoefficients(
        dim=d,
        period1=1.0,
        period2=math.sqrt(2.0),
        damping=rate * np.eye(d),
        diffusion_const=sigma * np.eye(d),
        declared=DeclaredBounds(dissipativity_rate=rate,
                                diffusion_lipschitz=0.0,
                                origin_bound=5.0),
        forcing=tuple(forcing),
    )


def rich_coefficients():
    """Every coefficient branch on: forcing, saturating drift, modulated
    diffusion; used to exercise the full kernel paths in identity tests."""
    return QPCoefficients(
        dim=1,
        period1=1.0,
        period2=math.sqrt(2.0),
        damping=[[1.2]],
        diffusion_const=[[0.4]],
        declared=DeclaredBounds(dissipativity_rate=0.4,
                                diffusion_lipschitz=0.3,
                                origin_bound=3.0),
        forcing=(trig_term(1.0, 1, 0), trig_term(0.7, 0, 1)),
        saturating_forcing=(trig_term(0.5, 1, 1, phase=0.3),),
        diffusion_saturating=[[0.2]],
        diffusion_modulation=(trig_term(0.6, 0, 1),),
        saturation="tanh",
    )


def sterbenz_shift(rng, period, n_periods=1):
    """(r, r + n*period) with the difference exactly n periods in floats.

    n_periods must be a power of two so n*period is itself exact.
    """
    lo = n_periods * period
    z = rng.uniform(lo, 2.0 * lo)
    r = z - lo  # exact by Sterbenz's lemma
    assert r + lo == z
    return r, z


GRID = TimeGrid(1e-3)


class TestTrajectory:
    def test_initial_state_and_shape(self):
        c = benchmark()
        w = NoisePath(GRID, seed=11)
        traj = integrate(c, w, 0, 100, [0.25])
        assert traj.values.shape == (101, 1)
        assert traj.values[0, 0] == 0.25
        assert traj.start_index == 0
        assert traj.end_index == 100
        assert traj.times[0] == 0.0
        npt.assert_array_equal(traj.final, traj.values[-1])
        assert np.all(np.isfinite(traj.values))
        assert traj.flavor == "u"

    def test_values_are_read_only(self):
        c = benchmark()
        traj = integrate(c, NoisePath(GRID, seed=1), 0, 5, [0.0])
        with pytest.raises(ValueError):
            traj.values[0, 0] = 1.0

    def test_zero_length_window(self):
        c = benchmark()
        traj = integrate(c, NoisePath(GRID, seed=2), 7, 7, [1.5])
        assert traj.values.shape == (1, 1)
        assert traj.values[0, 0] == 1.5

    def test_rejects_reversed_window(self):
        c = benchmark()
        with pytest.raises(DomainError):
            integrate(c, NoisePath(GRID, seed=3), 10, 9, [0.0])

    def test_rejects_dimension_mismatch(self):
        c = benchmark()
        with pytest.raises(DomainError):
            integrate(c, NoisePath(GRID, seed=3, dim=2), 0, 10, [0.0])
        with pytest.raises(DomainError):
            integrate(c, NoisePath(GRID, seed=3), 0, 10, [0.0, 0.0])

    def test_rejects_bad_initial_state(self):
        c = benchmark()
        with pytest.raises(DomainError):
            integrate(c, NoisePath(GRID, seed=3), 0, 10, [math.nan])
        with pytest.raises(DomainError):
            integrate_reparam(c, NoisePath(GRID, seed=3), math.inf, 0.0,
                              0, 10, [0.0])

    def test_csv_format(self, tmp_path):
        c = benchmark()
        w = NoisePath(GRID, seed=21)
        traj = integrate(c, w, -3, 9, [0.5])
        out = tmp_path / "path.csv"
        traj.to_csv(out)
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# flavor=u ")
        assert "seed=21" in lines[0]
        assert "dt=0.001" in lines[0]
        assert "start_index=-3" in lines[0]
        assert lines[1] == "time,x_1"
        assert len(lines) == 2 + traj.values.shape[0]
        t5, x5 = lines[2 + 5].split(",")
        assert float(t5) == traj.times[5]
        assert float(x5) == traj.values[5, 0]

    def test_csv_names_all_components(self, tmp_path):
        c = linear_pull(dim=2)
        w = NoisePath(GRID, seed=4, dim=2)
        traj = integrate(c, w, 0, 4, [0.1, -0.2])
        out = tmp_path / "path2.csv"
        traj.to_csv(out)
        lines = out.read_text().splitlines()
        assert lines[1] == "time,x_1,x_2"
        assert len(lines[2].split(",")) == 3


class TestDeterministicOracles:
    def test_pure_decay_reaches_exp_minus_one(self):
        # no forcing, no noise: Euler on dx = -x dt from 1.0 over one unit
        c = linear_pull(sigma=0.0)
        w = NoisePath(GRID, seed=0)
        traj = integrate(c, w, 0, 1000, [1.0])
        assert abs(traj.final[0] - math.exp(-1.0)) < 1e-3

    def test_equilibrium_state_is_fixed_point(self):
        c = linear_pull(sigma=0.0)
        traj = integrate(c, NoisePath(GRID, seed=5), 0, 500, [0.0])
        npt.assert_array_equal(traj.values, np.zeros((501, 1)))

    def test_forced_linear_matches_variation_of_constants(self):
        # dx = (-x + sin(2 pi t) + 0.7 sin(2 pi t / sqrt 2)) dt, noise off.
        # Particular solution per term: amp*(sin(w t) - w cos(w t))/(1+w^2).
        cfg = ou_benchmark()
        base = cfg.coefficients
        c = QPCoefficients(
            dim=1, period1=base.period1, period2=base.period2,
            damping=base.damping, diffusion_const=[[0.0]],
            declared=base.declared, forcing=base.forcing)

        def particular(t):
            acc = 0.0
            for amp, om in ((1.0, 2 * math.pi),
                            (0.7, 2 * math.pi / math.sqrt(2.0))):
                acc += amp * (math.sin(om * t) - om * math.cos(om * t)) \
                    / (1.0 + om * om)
            return acc

        grid = TimeGrid(1e-4)
        x0 = 0.3
        traj = integrate(c, NoisePath(grid, seed=0), 0, 10_000, [x0])
        for k in (2500, 5000, 10_000):
            t = k * grid.dt
            exact = (x0 - particular(0.0)) * math.exp(-t) + particular(t)
            assert abs(traj.values[k, 0] - exact) < 2e-3


class TestBitwiseIdentities:
    def test_reparam_zero_shift_is_base_flow(self):
        c = rich_coefficients()
        w = NoisePath(GRID, seed=31)
        a = integrate(c, w, -50, 250, [0.4])
        b = integrate_reparam(c, w, 0.0, 0.0, -50, 250, [0.4])
        npt.assert_array_equal(a.values, b.values)
        assert b.flavor == "K"

    def test_shifted_flow_is_reparam_with_step_offset(self):
        c = rich_coefficients()
        w = NoisePath(GRID, seed=32)
        a = integrate_shifted(c, w, 137, 0, 200, [0.4])
        b = integrate_reparam(c, w, 0.0, 0.0, 0, 200, [0.4],
                              coeff_offset=137)
        npt.assert_array_equal(a.values, b.values)

    def test_period_translation_first_clock(self):
        c = rich_coefficients()
        w = NoisePath(GRID, seed=33)
        rng = np.random.default_rng(101)
        for n in (1, 2, 8):
            r, z = sterbenz_shift(rng, c.period1, n_periods=n)
            r2 = rng.uniform(0, 5)
            a = integrate_reparam(c, w, r, r2, 0, 300, [0.2])
            b = integrate_reparam(c, w, z, r2, 0, 300, [0.2])
            npt.assert_array_equal(a.values, b.values)

    def test_period_translation_second_clock(self):
        c = rich_coefficients()
        w = NoisePath(GRID, seed=34)
        rng = np.random.default_rng(102)
        for n in (1, 4):
            r, z = sterbenz_shift(rng, c.period2, n_periods=n)
            r1 = rng.uniform(0, 5)
            a = integrate_reparam(c, w, r1, r, 0, 300, [0.2])
            b = integrate_reparam(c, w, r1, z, 0, 300, [0.2])
            npt.assert_array_equal(a.values, b.values)

    def test_semi_flow_splices_exactly(self):
        c = rich_coefficients()
        w = NoisePath(GRID, seed=35)
        s, mid, t = -120, 91, 380
        full = integrate(c, w, s, t, [0.7])
        head = integrate(c, w, s, mid, [0.7])
        tail = integrate(c, w, mid, t, head.final)
        npt.assert_array_equal(head.values, full.values[:mid - s + 1])
        npt.assert_array_equal(tail.values, full.values[mid - s:])

    def test_grid_shift_identity_is_exact(self):
        c = rich_coefficients()
        w = NoisePath(GRID, seed=36)
        assert shift_identity_deviation(c, w, 3.7, -1.2, 0,
                                        -40, 200, [0.3]) == 0.0
        assert shift_identity_deviation(c, w, 0.123, 4.56, 137,
                                        0, 250, [0.3]) == 0.0

    def test_grid_shift_identity_exact_on_random_cases(self):
        c = rich_coefficients()
        rng = np.random.default_rng(103)
        for _ in range(20):
            w = NoisePath(GRID, seed=int(rng.integers(1 << 30)))
            m = int(rng.integers(-500, 500))
            s = int(rng.integers(-300, 300))
            t = s + int(rng.integers(50, 400))
            r1 = float(rng.uniform(-10, 10))
            r2 = float(rng.uniform(-10, 10))
            x0 = [float(rng.uniform(-2, 2))]
            assert shift_identity_deviation(c, w, r1, r2, m, s, t, x0) == 0.0

    def test_wrong_relabeling_is_detected(self):
        # pairing the coefficient offset m with a noise relabel of m+1
        # steps must produce a strictly positive deviation
        c = rich_coefficients()
        w = NoisePath(GRID, seed=37)
        m = 23
        lhs = integrate_reparam(c, shift(w, -(m + 1)), 0.5, 0.5,
                                m, m + 200, [0.3])
        rhs = integrate_reparam(c, w, 0.5, 0.5, 0, 200, [0.3],
                                coeff_offset=m)
        assert float(np.max(np.abs(lhs.values - rhs.values))) > 0.0

    def test_reparam_on_shifted_noise_is_translated_base_flow(self):
        # relabeled noise + matching coefficient offset replays the base
        # flow on the translated window, float for float
        c = rich_coefficients()
        for m in (137, -250):
            w = NoisePath(GRID, seed=38 + m)
            a = integrate_reparam(c, shift(w, m), 0.0, 0.0, 0, 300, [0.6],
                                  coeff_offset=m)
            b = integrate(c, w, m, 300 + m, [0.6])
            npt.assert_array_equal(a.values, b.values)

    def test_batch_modes_agree(self):
        # grouped (tabulated forcing) and per-atom (inline phases) kernels
        # must emit identical floats for equal shift pairs
        c = rich_coefficients()
        rng = np.random.default_rng(104)
        paths = [NoisePath(GRID, seed=s, offset=o)
                 for s, o in ((3, 0), (4, 7), (5, -3), (6, 2))]
        keys = [p._key for p in paths]
        offsets = [p.offset for p in paths]
        ua, _ = sterbenz_shift(rng, c.period1)
        ub, _ = sterbenz_shift(rng, c.period2)
        x0 = rng.uniform(-1, 1, (4, 1))
        snaps = np.array([-10, 27, 190], dtype=np.int64)
        m = 41
        snap_g, fin_g = run_grouped(
            c, GRID, keys=keys, offsets=offsets, group=[0, 0, 1, 1],
            u1=[0.0, ua], u2=[0.0, ub], coeff_offset=m, x0=x0,
            s_idx=-10, n_steps=200, snaps=snaps)
        snap_p, fin_p = run_peratom(
            c, GRID, keys=keys, offsets=offsets,
            u1=[0.0, 0.0, ua, ua], u2=[0.0, 0.0, ub, ub],
            coeff_offsets=[m] * 4, x0=x0, s_idx=-10, n_steps=200,
            snaps=snaps)
        npt.assert_array_equal(fin_g, fin_p)
        npt.assert_array_equal(snap_g, snap_p)

    def test_kernel_steps_match_scalar_evaluations(self):
        # replay a 2-d run in plain Python from the scalar drift/noise
        # APIs; every float must coincide with the fused kernel's
        c = QPCoefficients(
            dim=2,
            period1=1.0,
            period2=math.sqrt(2.0),
            damping=[[1.0, 0.3], [0.3, 2.0]],
            diffusion_const=[[0.5, 0.1], [0.0, 0.4]],
            declared=DeclaredBounds(dissipativity_rate=0.8,
                                    diffusion_lipschitz=0.0,
                                    origin_bound=3.0),
            forcing=(trig_term((1.0, -0.5), 1, 0),
                     trig_term((0.3, 0.2), 0, 1, phase=0.7)),
        )
        w = NoisePath(GRID, seed=39, dim=2, offset=5)
        s, t = -25, 40
        traj = integrate(c, w, s, t, [0.3, -0.8])

        s0 = c.diffusion_const
        x = np.array([0.3, -0.8])
        for j in range(s, t):
            b = drift_on_grid(c, GRID, j, x)
            z = w.increment(j)
            for i in range(2):
                acc = 0.0
                for k in range(2):
                    acc = acc + s0[i, k] * z[k]
                x[i] = x[i] + b[i] * GRID.dt + acc
            npt.assert_array_equal(x, traj.values[j - s + 1])


class TestStrongConvergence:
    def test_halving_dt_halves_strong_error(self):
        # reference on dt=1e-5; coarse Euler on the same Brownian sums at
        # dt=1e-3 and dt=5e-4.  Order-one scheme: error ratio near 1/2.
        c = benchmark()
        fine = TimeGrid(1e-5)
        n_fine = 100_000  # one time unit
        x0 = 0.3
        ratios = []
        for seed in range(20):
            w = NoisePath(fine, seed=seed)
            ref = integrate(c, w, 0, n_fine, [x0])
            dw_fine = w.increments(0, n_fine)[:, 0]
            errs = {}
            for dt_c in (1e-3, 5e-4):
                grid_c = TimeGrid(dt_c)
                stride = round(dt_c / fine.dt)
                n_c = n_fine // stride
                dw = dw_fine.reshape(n_c, stride).sum(axis=1)
                sig = eval_diffusion(c, 0.0, 0.0, [0.0])[0, 0]
                x = x0
                worst = 0.0
                for k in range(n_c):
                    b = drift_on_grid(c, grid_c, k, [x])[0]
                    x = x + b * dt_c + sig * dw[k]
                    err = abs(x - ref.values[(k + 1) * stride, 0])
                    worst = max(worst, err)
                errs[dt_c] = worst
            ratios.append(errs[5e-4] / errs[1e-3])
        assert 0.4 < float(np.mean(ratios)) < 0.6


class TestContraction:
    def test_benchmark_slope_matches_declared_rate(self):
        # additive noise cancels in the pair difference, so the gap decays
        # at the dissipativity rate; fit skips the first time unit
        c = benchmark()
        w = NoisePath(GRID, seed=41)
        slope = contraction_slope(c, w, 0, 5000, [3.0], [-2.0])
        assert abs(slope + 1.0) < 0.1

    def test_slope_tracks_slowest_direction(self):
        c = QPCoefficients(
            dim=2,
            period1=1.0,
            period2=math.sqrt(2.0),
            damping=[[1.5, 0.5], [0.5, 1.5]],  # eigenvalues 1 and 2
            diffusion_const=0.3 * np.eye(2),
            declared=DeclaredBounds(dissipativity_rate=1.0,
                                    diffusion_lipschitz=0.0,
                                    origin_bound=2.0),
            forcing=(trig_term((0.8, 0.3), 1, 0),),
        )
        w = NoisePath(GRID, seed=42, dim=2)
        slope = contraction_slope(c, w, 0, 6000, [1.0, 0.0], [0.0, 1.0],
                                  skip_time=2.0)
        assert abs(slope + 1.0) < 0.1

    def test_equal_starts_cannot_be_fitted(self):
        c = benchmark()
        w = NoisePath(GRID, seed=43)
        with pytest.raises(DomainError):
            contraction_slope(c, w, 0, 2000, [1.0], [1.0])


class TestExplosion:
    def test_explosion_reports_first_bad_index(self):
        # dx = +100 x dt from 1e307: overflow after 31 steps of *1.1
        c = linear_pull(rate=-100.0, sigma=0.0)
        w = NoisePath(GRID, seed=44)
        # replay the recursion to find the expected overflow step
        x, k = 1e307, 0
        while math.isfinite(x):
            x = x + (100.0 * x) * GRID.dt
            k += 1
        with pytest.raises(ExplosionError) as exc:
            integrate(c, w, 0, 200, [1e307])
        assert exc.value.first_index == k
        assert exc.value.seed == 44

    def test_explosion_offset_window(self):
        c = linear_pull(rate=-100.0, sigma=0.0)
        w = NoisePath(GRID, seed=45)
        with pytest.raises(ExplosionError) as exc:
            integrate(c, w, 1000, 1200, [1e307])
        assert exc.value.first_index > 1000
