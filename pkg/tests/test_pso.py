import numpy as np
import pytest

from calib.pso import Evaluated, SwarmConfig, Swarm, init_swarm, lattice, run, select_best, step

BOX = ((0.7046, -75.0), (0.8188, -35.0))
WIDTH = np.array(BOX[1]) - np.array(BOX[0])


def sphere(x0):
    x0 = np.asarray(x0)

    def ev(X):
        d = (X - x0) / WIDTH
        return -np.sum(d * d, axis=1), np.zeros(len(X))

    return ev


class TestSelectBest:
    def test_both_feasible(self):
        assert select_best(Evaluated(0.5, 0.0), Evaluated(0.4, 0.0)) == Evaluated(0.5, 0.0)

    def test_tie_keeps_incumbent(self):
        inc = Evaluated(0.4, 0.01)
        assert select_best(Evaluated(0.4, 0.0), inc) is inc

    def test_feasible_beats_infeasible(self):
        assert select_best(Evaluated(-1e9, 0.0), Evaluated(10.0, 0.9)).beta == 0.0
        assert select_best(Evaluated(10.0, 0.9), Evaluated(-1e9, 0.0)).beta == 0.0

    def test_both_infeasible(self):
        assert select_best(Evaluated(0.0, 0.2), Evaluated(1.0, 0.3)).beta == 0.2
        inc = Evaluated(5.0, 0.2)
        assert select_best(Evaluated(9.0, 0.2), inc) is inc


class TestLattice:
    def test_ten_by_ten(self):
        pts = lattice(100, *BOX)
        assert pts.shape == (100, 2)
        assert len(np.unique(pts[:, 0])) == 10 and len(np.unique(pts[:, 1])) == 10
        np.testing.assert_allclose(pts.min(axis=0), BOX[0])
        np.testing.assert_allclose(pts.max(axis=0), BOX[1])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n_pso=0), dict(iterations=0), dict(c0=1.0), dict(c1=-0.1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SwarmConfig(*BOX, **kw)


class TestStep:
    def test_zero_coefficients_freeze(self):
        cfg = SwarmConfig(*BOX, n_pso=16, c0=0.0, c1=0.0, c2=0.0)
        rng = np.random.default_rng(0)
        s = init_swarm(cfg, sphere([0.76, -55]), rng)
        s2 = step(s, sphere([0.76, -55]), rng, cfg)
        np.testing.assert_array_equal(s2.x, s.x)

    def test_single_particle_velocity_decay(self):
        cfg = SwarmConfig(*BOX, n_pso=1, init_velocity=0.01)
        ev = lambda X: (np.zeros(len(X)), np.zeros(len(X)))  # noqa: E731
        rng = np.random.default_rng(1)
        s = init_swarm(cfg, ev, rng)
        s.x[:] = s.pbest_x[:] = s.gbest_x[:] = np.array([0.76, -55.0])
        v0 = s.v.copy()
        s1 = step(s, ev, rng, cfg)
        np.testing.assert_allclose(s1.v, 0.1 * v0, rtol=1e-12)
        s2 = step(s1, ev, rng, cfg)
        # pbest stays put under ties, so the pull terms only use the old position
        assert np.all(np.abs(s2.v) <= np.abs(s1.v) * 0.1 + 0.11 * np.abs(s1.x - s.x) + 1e-15)

    def test_positions_clamped(self):
        cfg = SwarmConfig(*BOX, n_pso=25, init_velocity=5.0)
        rng = np.random.default_rng(2)
        s = init_swarm(cfg, sphere([0.7, -80]), rng)
        for _ in range(5):
            s = step(s, sphere([0.7, -80]), rng, cfg)
            assert np.all(s.x >= BOX[0]) and np.all(s.x <= BOX[1])

    def test_feasible_pbest_never_replaced_by_infeasible(self):
        def ev(X):
            return -X[:, 0], np.where(X[:, 1] > -55, 0.5, 0.0)
        cfg = SwarmConfig(*BOX, n_pso=25)
        rng = np.random.default_rng(3)
        s = init_swarm(cfg, ev, rng)
        for _ in range(20):
            feas_before = s.pbest_beta <= 0.05
            s = step(s, ev, rng, cfg)
            assert np.all(s.pbest_beta[feas_before] <= 0.05)


class TestRun:
    @pytest.mark.parametrize("seed", range(10))
    def test_sphere(self, seed):
        x0 = np.array([0.7617, -55.0]) + np.random.default_rng(100 + seed).uniform(-0.3, 0.3, 2) * WIDTH
        res = run(SwarmConfig(*BOX, seed=seed), sphere(x0))
        assert np.all(np.abs(res.position - x0) <= 1e-2 * WIDTH)
        assert not res.degenerate

    def test_gbest_monotone(self):
        res = run(SwarmConfig(*BOX, seed=0, iterations=30), sphere([0.75, -60]))
        assert np.all(np.diff(res.gbest_trace) >= 0)

    def test_constant_acquisition(self):
        ev = lambda X: (np.ones(len(X)), np.zeros(len(X)))  # noqa: E731
        res = run(SwarmConfig(*BOX, seed=0, iterations=5), ev)
        assert not res.degenerate
        assert any(np.allclose(res.position, p) for p in lattice(100, *BOX))

    def test_feasible_half(self):
        mid = 0.5 * (BOX[0][0] + BOX[1][0])

        def ev(X):
            return -X[:, 0], np.where(X[:, 0] >= mid, 0.0, 1.0)

        res = run(SwarmConfig(*BOX, seed=4), ev)
        assert res.position[0] >= mid and res.beta <= 0.05
        # dense-grid oracle: best feasible value is at the dividing line
        assert res.position[0] == pytest.approx(mid, abs=0.01 * WIDTH[0])

    def test_all_infeasible(self):
        def ev(X):
            d = (X - [0.8, -40.0]) / WIDTH
            return np.zeros(len(X)), 0.5 + 0.4 * np.sum(d * d, axis=1)

        res = run(SwarmConfig(*BOX, seed=5), ev)
        assert res.degenerate
        assert res.beta == pytest.approx(0.5, abs=1e-3)

    def test_deterministic(self):
        a = run(SwarmConfig(*BOX, seed=9, iterations=20), sphere([0.75, -60]))
        b = run(SwarmConfig(*BOX, seed=9, iterations=20), sphere([0.75, -60]))
        np.testing.assert_array_equal(a.position, b.position)
        np.testing.assert_array_equal(a.gbest_trace, b.gbest_trace)
