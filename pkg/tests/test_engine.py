import dataclasses

import numpy as np
import pytest

from calib.engine import (ActuatorBox, AirPath, FuelSettings, ImepController, PlantParams, SurrogatePlant,
                          combustion_state, converge_noiseless, cov_imep, grid_oracle, imep_controller_step, metrics,
                          simulate_cycle)
from calib.geometry import Quadrature
from calib.itc import OttoParams, otto_pressure
from calib.pcd import PressureTrace

BOX = ActuatorBox()


@pytest.fixture(scope="module")
def oracle50():
    return grid_oracle(PlantParams(), AirPath(), 50)


class TestPlant:
    def test_deterministic_noiseless(self, plant):
        s = FuelSettings(2022.7, 0.76, -55.0)
        np.testing.assert_array_equal(plant.cycle(s).pressure, plant.cycle(s).pressure)

    def test_seed_determinism(self, plant):
        s = FuelSettings(2000.0, 0.78, -50.0)
        a = [plant.cycle(s, np.random.default_rng(4)).pressure for _ in range(3)]
        np.testing.assert_array_equal(a[0], a[1])
        r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
        for _ in range(3):
            np.testing.assert_array_equal(plant.cycle(s, r1).pressure, plant.cycle(s, r2).pressure)

    def test_simulate_cycle_wrapper(self, plant):
        s = FuelSettings(2000.0, 0.78, -50.0)
        np.testing.assert_array_equal(simulate_cycle(s, AirPath(), PlantParams()).pressure, plant.cycle(s).pressure)

    def test_low_fuel_poor_combustion_is_infeasible(self, plant, geom):
        tr = plant.cycle(FuelSettings(BOX.q_fuel[0], BOX.br[1], BOX.soi_di[1]))
        assert metrics(tr, BOX.q_fuel[0], geom).imep_g < 4e5 * 0.95

    def test_pressure_positive(self, plant):
        rng = np.random.default_rng(0)
        for br in BOX.br:
            for soi in BOX.soi_di:
                for q in BOX.q_fuel:
                    p = plant.cycle(FuelSettings(q, br, soi), rng).pressure
                    assert p.min() > 0.1 * plant.air.p_im

    def test_gie_below_otto(self, plant):
        eta = OttoParams().eta_itc
        for br in np.linspace(*BOX.br, 9):
            for soi in np.linspace(*BOX.soi_di, 9):
                assert 0 < plant.efficiency(br, soi) < eta

    def test_gie_independent_of_fuel(self, plant, geom):
        for q in BOX.q_fuel:
            m = metrics(plant.cycle(FuelSettings(q, 0.77, -50.0)), q, geom)
            assert m.gie == pytest.approx(plant.efficiency(0.77, -50.0), rel=1e-12)

    def test_imep_lipschitz(self, plant, geom):
        brs, sois = np.linspace(*BOX.br, 41), np.linspace(*BOX.soi_di, 41)
        imep = np.array([[metrics(plant.cycle(FuelSettings(2000.0, b, s)), 2000.0, geom).imep_g for s in sois]
                         for b in brs])
        # slopes per unit of normalised actuator range
        d_br = np.abs(np.diff(imep, axis=0)) / (1 / 40)
        d_soi = np.abs(np.diff(imep, axis=1)) / (1 / 40)
        assert max(d_br.max(), d_soi.max()) < 1e6
        # second differences stay small: no hidden kinks
        assert np.abs(np.diff(imep, 2, axis=0)).max() < 0.05 * d_br.max() / 40

    def test_noise_grows_toward_late_soi(self):
        p = PlantParams()
        early = combustion_state(0.76, BOX.soi_di[0], p)
        late = combustion_state(0.76, BOX.soi_di[1], p)
        assert late.sigma_ca50 > early.sigma_ca50

    def test_noiseless_params(self):
        n = PlantParams().noiseless()
        assert n.sigma_ca50_0 == n.sigma_ca50_v == n.sigma_energy_0 == n.sigma_energy_k == 0.0
        assert dataclasses.replace(n, sigma_ca50_0=0.5).wiebe_a == n.wiebe_a


class TestMetrics:
    def test_motored(self, plant, geom, grid):
        tr = PressureTrace(grid, plant.pressure(0.0, 5.0, 10.0), 1e5)
        m = metrics(tr, 2000.0, geom)
        assert abs(m.imep_g) < 1e-6 * 1e5 and abs(m.gie) < 1e-9

    def test_constant_pressure(self, geom, grid):
        m = metrics(PressureTrace(grid, np.full(grid.n_ca, 3e5), 1e5), 2000.0, geom)
        assert abs(m.imep_g) < 1e-9 * 3e5

    def test_otto_trace(self, geom, grid):
        tr = otto_pressure(2000.0, 1e5, OttoParams(geom), grid).trace
        assert metrics(tr, 2000.0, geom).gie == pytest.approx(OttoParams(geom).eta_itc, rel=1e-3)

    def test_definitions(self, plant, geom):
        tr = plant.cycle(FuelSettings(2000.0, 0.77, -50.0))
        m = metrics(tr, 2000.0, geom)
        w = Quadrature(tr.grid, geom).work(tr.pressure)
        assert m.imep_g == pytest.approx(w / geom.displacement)
        assert m.p_max == tr.pressure.max()
        i = np.argmax(np.diff(tr.pressure))
        assert m.dpdtheta_max >= (tr.pressure[i + 1] - tr.pressure[i]) / tr.grid.delta_ca * 0.99


class TestCov:
    def test_identical(self):
        assert cov_imep([4e5] * 5) == 0.0

    def test_hand_value(self):
        # sample sd of {4, 4, 4, 4.4} is 0.2, mean 4.1
        assert cov_imep([4.0, 4.0, 4.0, 4.4]) == pytest.approx(0.2 / 4.1, rel=1e-14)

    def test_scale_invariant(self):
        x = np.array([3.9, 4.1, 4.0, 4.3])
        assert cov_imep(2 * x) == pytest.approx(cov_imep(x), rel=1e-14)

    def test_errors(self):
        with pytest.raises(ValueError):
            cov_imep([4.0])
        with pytest.raises(ValueError):
            cov_imep([-1.0, 0.5])


class TestController:
    def test_on_target(self, geom):
        q, sat = imep_controller_step(4e5, 2000.0, 4e5, 0.5, geom.displacement, BOX.q_fuel)
        assert q == 2000.0 and not sat

    def test_linear_plant_geometric_convergence(self, geom):
        c = 0.46 / geom.displacement  # IMEP = c * Q
        ctl = ImepController(4e5, (0.0, 1e6), geom.displacement, 0.5)
        q, q_star = 1700.0, 4e5 / c
        errs = []
        for _ in range(10):
            q = ctl.step(c * q, q)
            errs.append(q - q_star)
        ratios = np.array(errs[1:]) / np.array(errs[:-1])
        np.testing.assert_allclose(ratios, 1 - 0.5 * c * geom.displacement, rtol=1e-9)

    def test_saturation(self, geom):
        ctl = ImepController(4e5, BOX.q_fuel, geom.displacement, 0.5)
        q = 2000.0
        for k in range(50):
            q = ctl.step(0.2 * q / geom.displacement, q)
            if ctl.saturated:
                break
        assert ctl.saturated and q == BOX.q_fuel[1] and k < 50

    def test_convergence_declared(self, geom):
        ctl = ImepController(4e5, BOX.q_fuel, geom.displacement, 0.5)
        for _ in range(2):
            ctl.step(4.05e5, 2000.0)
        assert not ctl.converged
        ctl.step(3.95e5, 2000.0)
        assert ctl.converged
        ctl.step(3e5, 2000.0)
        assert not ctl.converged

    def test_converge_noiseless(self, plant, geom):
        tp = converge_noiseless(plant, 0.76, -55.0, 4e5, BOX)
        assert tp.imep == pytest.approx(4e5, rel=1e-6) and not tp.saturated


class TestOracle:
    def test_rejects_coarse(self):
        with pytest.raises(ValueError):
            grid_oracle(PlantParams(), AirPath(), 20)

    def test_optimum_feasible_interior(self, oracle50):
        o = oracle50
        i, j = o.grid_best_index
        assert o.feasible[i, j]
        assert 0 < i < 49 and 0 < j < 49
        assert BOX.br[0] < o.best_br < BOX.br[1] and BOX.soi_di[0] < o.best_soi < BOX.soi_di[1]
        assert o.best_gie >= o.gie[i, j]

    def test_optimum_beats_corners(self, oracle50, plant):
        for br in BOX.br:
            for soi in BOX.soi_di:
                assert oracle50.best_gie > plant.efficiency(br, soi)

    def test_resolution_doubling(self, oracle50):
        fine = grid_oracle(PlantParams(), AirPath(), 100, refine=False)
        cell = np.array([(BOX.br[1] - BOX.br[0]) / 49, (BOX.soi_di[1] - BOX.soi_di[0]) / 49])
        i, j = oracle50.grid_best_index
        fi, fj = fine.grid_best_index
        coarse = np.array([oracle50.br[i, j], oracle50.soi[i, j]])
        assert np.all(np.abs(np.array([fine.br[fi, fj], fine.soi[fi, fj]]) - coarse) < cell)

    def test_noise_ignored(self, oracle50):
        o = grid_oracle(PlantParams().noiseless(), AirPath(), 50)
        assert o.best_gie == oracle50.best_gie and o.best_br == oracle50.best_br
        np.testing.assert_array_equal(o.feasible, oracle50.feasible)

    def test_constraints_active_somewhere(self, oracle50):
        # both infeasible corners exist: fast burns and unreachable load
        assert not oracle50.feasible.all()
        assert (oracle50.dp_max > 25e5).any()
        assert (oracle50.imep < 4e5 * 0.95).any()
