"""Pull-back ladders: convergence, rate fitting, hull periodicity."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from qpsde.coefficients import DeclaredBounds, QPCoefficients
from qpsde.config import ou_benchmark
from qpsde.errors import ConvergenceError, DomainError
from qpsde.noise import NoisePath, TimeGrid, shift
from qpsde.pullback import (
    PullbackSettings,
    flow_consistency_deviation,
    level_spacing_steps,
    levels_to_csv,
    pullback_ensemble_grouped,
    pullback_ensemble_peratom,
    pullback_hull_limit,
    pullback_limit,
)

GRID = TimeGrid(1e-3)


def benchmark():
    return ou_benchmark().coefficients


def quiet_linear():
    # no forcing, no noise: global attractor at the origin
    return QPCoefficients(
        dim=1,
        period1=1.0,
        period2=math.sqrt(2.0),
        damping=[[1.0]],
        diffusion_const=[[0.0]],
        declared=DeclaredBounds(dissipativity_rate=1.0,
                                diffusion_lipschitz=0.0,
                                origin_bound=0.0),
    )


def sterbenz_shift(rng, period, n_periods=1):
    lo = n_periods * period
    z = rng.uniform(lo, 2.0 * lo)
    r = z - lo  # exact by Sterbenz's lemma
    assert r + lo == z
    return r, z


class TestLadder:
    def test_benchmark_converges_at_unit_rate(self):
        c = benchmark()
        w = NoisePath(GRID, seed=7)
        res = pullback_limit(c, w, 0, [10.0])
        assert res.converged
        assert res.levels[-1].gap < 1e-6
        assert abs(res.fitted_rate - 1.0) < 0.1
        assert res.p_norm_order == 2.0
        assert len(res.levels) <= 12

    def test_level_spacing_gains_one_digit(self):
        c = benchmark()
        # audited rate ~1.0 -> 3 time units per level on the default grid
        assert level_spacing_steps(c, GRID) == 3000

    def test_limit_independent_of_start(self):
        c = benchmark()
        w = NoisePath(GRID, seed=8)
        a = pullback_limit(c, w, 0, [0.0])
        b = pullback_limit(c, w, 0, [10.0])
        assert float(np.linalg.norm(a.value - b.value)) < 1e-6

    def test_limit_independent_over_random_ball(self):
        c = benchmark()
        w = NoisePath(GRID, seed=9)
        rng = np.random.default_rng(55)
        values = [pullback_limit(c, w, 500, [rng.uniform(-10, 10)]).value
                  for _ in range(10)]
        spread = max(float(np.linalg.norm(v - values[0])) for v in values)
        assert spread < 2e-6

    def test_gaps_decay_geometrically(self):
        c = benchmark()
        w = NoisePath(GRID, seed=10)
        res = pullback_limit(c, w, 0, [10.0])
        gaps = [rec.gap for rec in res.levels[1:]]
        bound = 3.0 * math.exp(-1.0 * 3.0)  # rate * level spacing
        for a, b in zip(gaps[1:], gaps[2:]):
            assert b / a <= bound

    def test_deterministic_attractor_is_origin(self):
        c = quiet_linear()
        w = NoisePath(GRID, seed=11)
        res = pullback_limit(c, w, 0, [10.0], tol=1e-12, max_levels=30)
        assert res.converged
        assert abs(res.value[0]) < 1e-12

    def test_equilibrium_start_converges_immediately(self):
        c = quiet_linear()
        res = pullback_limit(c, NoisePath(GRID, seed=12), 0, [0.0])
        assert res.converged
        assert res.value[0] == 0.0
        assert len(res.levels) == 2

    def test_unconverged_run_is_flagged_not_raised(self):
        c = benchmark()
        w = NoisePath(GRID, seed=13)
        res = pullback_limit(c, w, 0, [10.0], tol=1e-16, max_levels=2)
        assert not res.converged
        assert len(res.levels) == 2
        assert np.all(np.isfinite(res.value))

    def test_rejects_bad_arguments(self):
        c = benchmark()
        w = NoisePath(GRID, seed=14)
        with pytest.raises(DomainError):
            pullback_limit(c, w, 0, [0.0], tol=0.0)
        with pytest.raises(DomainError):
            pullback_limit(c, w, 0, [0.0], max_levels=1)
        with pytest.raises(DomainError):
            pullback_limit(c, w, 0, [0.0], rate=-2.0)
        with pytest.raises(DomainError):
            pullback_limit(c, NoisePath(GRID, seed=1, dim=2), 0, [0.0])

    def test_levels_csv(self, tmp_path):
        c = benchmark()
        res = pullback_limit(c, NoisePath(GRID, seed=15), 0, [10.0])
        out = tmp_path / "levels.csv"
        levels_to_csv(res, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "s_k,gap_k"
        assert len(lines) == 1 + len(res.levels)
        s1, g1 = lines[1].split(",")
        assert float(s1) == res.levels[0].s_time
        assert math.isinf(float(g1))
        assert float(lines[-1].split(",")[1]) == res.levels[-1].gap


class TestHull:
    def test_first_clock_period_translation_is_bitwise(self):
        c = benchmark()
        w = NoisePath(GRID, seed=16)
        rng = np.random.default_rng(56)
        r, z = sterbenz_shift(rng, c.period1, n_periods=2)
        s_param = rng.uniform(0, 5)
        a = pullback_hull_limit(c, w, r, s_param, [0.0])
        b = pullback_hull_limit(c, w, z, s_param, [0.0])
        npt.assert_array_equal(a.value, b.value)
        assert len(a.levels) == len(b.levels)

    def test_second_clock_period_translation_is_bitwise(self):
        c = benchmark()
        w = NoisePath(GRID, seed=17)
        rng = np.random.default_rng(57)
        r, z = sterbenz_shift(rng, c.period2, n_periods=4)
        t_param = rng.uniform(0, 5)
        a = pullback_hull_limit(c, w, t_param, r, [0.0])
        b = pullback_hull_limit(c, w, t_param, z, [0.0])
        npt.assert_array_equal(a.value, b.value)

    def test_diagonal_matches_shifted_base_flow(self):
        # hull at equal clock parameters r = m*dt vs the base-flow limit
        # at index m on noise relabeled by -m steps
        c = benchmark()
        w = NoisePath(GRID, seed=18)
        m = 500
        r = m * GRID.dt
        a = pullback_hull_limit(c, w, r, r, [0.0])
        b = pullback_limit(c, shift(w, -m), m, [0.0])
        assert a.converged and b.converged
        assert float(np.linalg.norm(a.value - b.value)) < 2e-6


class TestFlowConsistency:
    def test_benchmark_two_unit_window(self):
        c = benchmark()
        w = NoisePath(GRID, seed=19)
        phi_s = pullback_limit(c, w, 0, [0.0])
        phi_t = pullback_limit(c, w, 2000, [0.0])
        dev = flow_consistency_deviation(c, w, 0, 2000, phi_s.value,
                                         phi_t.value)
        assert dev < 5e-6

    def test_random_windows(self):
        c = benchmark()
        w = NoisePath(GRID, seed=20)
        rng = np.random.default_rng(58)
        for _ in range(20):
            s = int(rng.integers(-1000, 3000))
            t = s + int(rng.integers(0, 2500))
            phi_s = pullback_limit(c, w, s, [0.0])
            phi_t = pullback_limit(c, w, t, [0.0])
            dev = flow_consistency_deviation(c, w, s, t, phi_s.value,
                                             phi_t.value)
            assert dev < 5e-6

    def test_empty_window_is_exact(self):
        c = benchmark()
        w = NoisePath(GRID, seed=21)
        phi = pullback_limit(c, w, 100, [0.0])
        assert flow_consistency_deviation(c, w, 100, 100, phi.value,
                                          phi.value) == 0.0

    def test_deterministic_equilibrium_is_exact(self):
        c = quiet_linear()
        w = NoisePath(GRID, seed=22)
        phi_s = pullback_limit(c, w, 0, [0.0])
        phi_t = pullback_limit(c, w, 1500, [0.0])
        assert flow_consistency_deviation(c, w, 0, 1500, phi_s.value,
                                          phi_t.value) == 0.0


class TestEnsembles:
    def test_grouped_ensemble_matches_single_runs(self):
        c = benchmark()
        settings = PullbackSettings()
        seeds = np.array([30, 31, 32], dtype=np.int64)
        paths = [NoisePath(GRID, seed=int(s)) for s in seeds]
        x0 = np.zeros((3, 1))
        values, used = pullback_ensemble_grouped(
            c, GRID, keys=[p._key for p in paths],
            offsets=[p.offset for p in paths],
            group=np.zeros(3, dtype=np.int64), u1=[0.0], u2=[0.0],
            x0=x0, target_idx=0, seeds=seeds, settings=settings)
        h = level_spacing_steps(c, GRID)
        for i, p in enumerate(paths):
            single = pullback_limit(c, p, 0, [0.0])
            assert float(np.linalg.norm(values[i] - single.value)) < 2e-6
            # the ensemble state is exactly the ladder iterate at the
            # stopping depth
            from qpsde.pullback import _final_state
            direct = _final_state(c, p, -used * h, 0, [0.0], 0.0, 0.0)
            npt.assert_array_equal(values[i], direct)

    def test_peratom_matches_grouped_for_shared_shifts(self):
        c = benchmark()
        settings = PullbackSettings()
        seeds = np.array([40, 41], dtype=np.int64)
        paths = [NoisePath(GRID, seed=int(s)) for s in seeds]
        keys = [p._key for p in paths]
        offsets = [0, 0]
        x0 = np.zeros((2, 1))
        u = 0.37
        va, la = pullback_ensemble_grouped(
            c, GRID, keys=keys, offsets=offsets,
            group=np.zeros(2, dtype=np.int64), u1=[u], u2=[u], x0=x0,
            seeds=seeds, settings=settings)
        vb, lb = pullback_ensemble_peratom(
            c, GRID, keys=keys, offsets=offsets, u1=[u, u], u2=[u, u],
            coeff_offsets=[0, 0], x0=x0, seeds=seeds, settings=settings)
        assert la == lb
        npt.assert_array_equal(va, vb)

    def test_ensemble_reports_failed_seeds(self):
        c = benchmark()
        settings = PullbackSettings(tol=1e-16, max_levels=2)
        seeds = np.array([50, 51], dtype=np.int64)
        paths = [NoisePath(GRID, seed=int(s)) for s in seeds]
        with pytest.raises(ConvergenceError) as exc:
            pullback_ensemble_grouped(
                c, GRID, keys=[p._key for p in paths], offsets=[0, 0],
                group=np.zeros(2, dtype=np.int64), u1=[0.0], u2=[0.0],
                x0=np.zeros((2, 1)), seeds=seeds, settings=settings)
        assert set(exc.value.failed_seeds) == {50, 51}

    def test_settings_validation(self):
        with pytest.raises(DomainError):
            PullbackSettings(tol=-1.0)
        with pytest.raises(DomainError):
            PullbackSettings(max_levels=1)
        with pytest.raises(DomainError):
            PullbackSettings(p_order=0.5)
