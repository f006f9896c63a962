"""Ensemble integration, drivers, level sets, composition."""

import numpy as np
import pytest

from roughflow import (
    BrownianDriver,
    CoefficientField,
    FlowEnsemble,
    compose_time_shift,
    convergence_metric,
    integrate,
    level_set_tail,
    make_family,
    sup_lp_density_norm,
    track_density,
)
from roughflow._seeds import derive_rng, derive_seed


def zero_field(dim=1):
    return CoefficientField(
        dim, dim,
        sigma_fn=lambda x: np.zeros(x.shape[:-1] + (dim, dim)),
        drift_fn=lambda x: np.zeros_like(x),
        sigma_jac_fn=lambda x: np.zeros(x.shape[:-1] + (dim, dim, dim)),
        drift_jac_fn=lambda x: np.zeros(x.shape[:-1] + (dim, dim)),
        name="zero",
    )


class TestDriver:
    def test_increment_moments(self):
        drv = BrownianDriver.generate(2, dt=2**-8, n_steps=2**8, n_omega=64,
                                      seed=11)
        inc = drv.increments
        n_samples = inc.shape[0] * inc.shape[1]
        assert abs(inc.mean()) < 5 * np.sqrt(drv.dt / n_samples)
        var = inc.var()
        assert abs(var - drv.dt) < 5 * drv.dt / np.sqrt(n_samples)

    def test_time_shift_is_shifted_path(self):
        drv = BrownianDriver.generate(1, dt=0.25, n_steps=8, n_omega=3, seed=5)
        s = 0.5
        shifted = drv.time_shift(s)
        b = drv.path_values()
        bs = shifted.path_values()
        j = drv.step_index(s)
        assert np.allclose(bs, b[:, j:, :] - b[:, j:j + 1, :])

    def test_coarsen_preserves_path(self):
        drv = BrownianDriver.generate(1, dt=2**-6, n_steps=2**6, n_omega=2, seed=9)
        coarse = drv.coarsen(4)
        assert coarse.dt == pytest.approx(2**-4)
        assert np.allclose(coarse.path_values(), drv.path_values()[:, ::4, :])

    def test_off_grid_time_rejected(self):
        drv = BrownianDriver.generate(1, dt=0.25, n_steps=4, n_omega=1, seed=1)
        with pytest.raises(ValueError):
            drv.step_index(0.3)


class TestIntegrate:
    def test_zero_field_constant(self):
        drv = BrownianDriver.generate(1, 2**-6, 2**6, 4, seed=2)
        x0 = np.linspace(-2, 2, 5)[:, None]
        ens = integrate(zero_field(), drv, x0, 1.0)
        assert np.all(ens.states == x0[None, :, None, :])

    def test_contraction_matches_ode(self):
        fam = make_family("pure-drift")
        dt = 2**-9
        drv = BrownianDriver.generate(1, dt, 2**9, 1, seed=3)
        x0 = np.array([[1.0], [-2.0], [0.5]])
        ens = integrate(fam.field, drv, x0, 1.0)
        exact = x0[None, :, None, :] * np.exp(-ens.times)[None, None, :, None]
        assert np.max(np.abs(ens.states - exact)) < 3 * dt

    def test_additive_noise_exact(self):
        # the scheme telescopes for constant additive noise; floating-point
        # summation order differs from cumsum only at rounding level
        fam = make_family("translation")
        drv = BrownianDriver.generate(1, 2**-6, 2**6, 8, seed=4)
        x0 = fam.measure.sample(derive_rng(0, "x0"), 6)
        ens = integrate(fam.field, drv, x0, 1.0)
        expect = x0[None, :, None, :] + drv.path_values()[:, None, :, :]
        assert np.allclose(ens.states, expect, rtol=0, atol=1e-13)

    def test_mismatched_dt_rejected(self):
        drv = BrownianDriver.generate(1, 2**-6, 2**6, 1, seed=5)
        with pytest.raises(ValueError):
            integrate(zero_field(), drv, np.zeros((1, 1)), 1.0, dt=2**-5)

    def test_explosion_flagged_and_frozen(self):
        cubic = CoefficientField(
            1, 1,
            sigma_fn=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
            drift_fn=lambda x: x**3,
            sigma_jac_fn=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
            drift_jac_fn=lambda x: (3 * x[..., 0] ** 2)[..., None, None],
        )
        drv = BrownianDriver.generate(1, 2**-4, 2**4, 1, seed=6)
        ens = integrate(cubic, drv, np.array([[8.0], [0.1]]), 1.0)
        assert ens.n_exploded == 1
        assert np.all(np.isfinite(ens.states))
        assert ens.valid()[0, 1]

    def test_strong_order_half(self):
        fam = make_family("deriv-smooth")  # multiplicative noise
        fine = BrownianDriver.generate(1, 2**-11, 2**11, 24, seed=7)
        x0 = fam.measure.sample(derive_rng(1, "so"), 12)
        errs, dts = [], []
        ref = integrate(fam.field, fine, x0, 1.0).terminal_states()
        for lvl in (5, 6, 7, 8):
            drv = fine.coarsen(2 ** (11 - lvl))
            term = integrate(fam.field, drv, x0, 1.0).terminal_states()
            errs.append(np.sqrt(np.mean((term - ref) ** 2)))
            dts.append(drv.dt)
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert 0.35 <= slope <= 0.65


class TestSupNormAndLevelSets:
    def test_sup_norm_constant_flow(self):
        drv = BrownianDriver.generate(1, 2**-4, 2**4, 2, seed=8)
        x0 = np.array([[1.5], [-0.3]])
        ens = integrate(zero_field(), drv, x0, 1.0)
        assert np.allclose(ens.sup_norm(), np.abs(x0[:, 0])[None, :])

    def test_sup_norm_decaying_flow(self):
        fam = make_family("pure-drift")
        drv = BrownianDriver.generate(1, 2**-6, 2**6, 1, seed=9)
        x0 = np.array([[2.0], [0.7]])
        ens = integrate(fam.field, drv, x0, 1.0)
        assert np.allclose(ens.sup_norm(), np.abs(x0[:, 0])[None, :])

    def test_sup_norm_dominates_initial(self):
        fam = make_family("translation")
        drv = BrownianDriver.generate(1, 2**-6, 2**6, 8, seed=10)
        x0 = fam.measure.sample(derive_rng(2, "sup"), 8)
        ens = integrate(fam.field, drv, x0, 1.0)
        assert np.all(ens.sup_norm() >= np.abs(x0[:, 0])[None, :] - 1e-15)

    def test_static_tail_matches_quadrature(self):
        from scipy import integrate as sci

        fam = make_family("linear")
        m = fam.measure
        drv = BrownianDriver.generate(1, 2**-4, 2**4, 200, seed=11)
        x0 = m.sample(derive_rng(3, "tail"), 400)
        ens = integrate(zero_field(), drv, x0, 1.0)
        radius = 2.0
        frac = float((ens.sup_norm() > radius).mean())
        oracle = 2 * sci.quad(lambda x: (1 + x * x) ** -m.alpha, radius, np.inf)[0]
        oracle /= m.total_mass()
        se = np.sqrt(oracle * (1 - oracle) / 400)
        assert abs(frac - oracle) < 4 * se + 1e-3

    def test_level_set_bound_linear_family(self):
        fam = make_family("linear")
        drv = BrownianDriver.generate(1, 2**-8, 2**8, 40, seed=12)
        x0 = fam.measure.sample(derive_rng(4, "ls"), 40)
        ens = integrate(fam.field, drv, x0, 1.0)
        track = track_density(ens, fam.field, fam.measure)
        lam = sup_lp_density_norm(track, 2.0).value
        rep = level_set_tail(ens, 5.0, fam.measure, 2.0, lam, mc_budget=5000,
                             rng=derive_rng(5, "lsn"))
        assert rep.passed
        # large radius: empirical tail vanishes
        rep_far = level_set_tail(ens, 1000.0, fam.measure, 2.0, lam,
                                 mc_budget=2000, rng=derive_rng(6, "lsf"))
        assert rep_far.empirical == 0.0


class TestComposition:
    def test_zero_shift_identical(self):
        fam = make_family("linear")
        drv = BrownianDriver.generate(1, 2**-6, 2**6, 4, seed=13)
        x0 = fam.measure.sample(derive_rng(7, "cmp"), 6)
        ens = integrate(fam.field, drv, x0, 1.0)
        again = compose_time_shift(fam.field, ens, 0.0, 1.0)
        assert np.array_equal(again.states, ens.states)

    def test_contraction_semigroup(self):
        fam = make_family("pure-drift")
        drv = BrownianDriver.generate(1, 2**-8, 2**8, 1, seed=14)
        x0 = np.array([[1.0]])
        ens = integrate(fam.field, drv, x0, 1.0)
        comp = compose_time_shift(fam.field, ens, 0.5, 0.5)
        assert comp.terminal_states()[0, 0, 0] == pytest.approx(np.exp(-1.0),
                                                                rel=3e-3)

    def test_bitwise_composition_smooth_sde(self):
        fam = make_family("deriv-smooth")
        drv = BrownianDriver.generate(1, 2**-7, 2**7, 6, seed=15)
        x0 = fam.measure.sample(derive_rng(8, "bw"), 10)
        ens = integrate(fam.field, drv, x0, 1.0)
        comp = compose_time_shift(fam.field, ens, 0.25, 0.75)
        j = drv.step_index(0.25)
        assert np.array_equal(comp.states, ens.states[:, :, j:, :])


class TestConvergenceMetric:
    def test_identical_ensembles(self):
        fam = make_family("linear")
        drv = BrownianDriver.generate(1, 2**-6, 2**6, 3, seed=16)
        x0 = fam.measure.sample(derive_rng(9, "cm"), 4)
        ens = integrate(fam.field, drv, x0, 1.0)
        assert convergence_metric(ens, ens) == 0.0

    def test_clipping_at_one(self):
        drv = BrownianDriver.generate(1, 2**-4, 2**4, 2, seed=17)
        x0 = np.array([[0.0], [1.0]])
        e1 = integrate(zero_field(), drv, x0, 1.0)
        shifted = e1.states.copy()
        shifted[:, :, 1:, :] += 2.0  # differ by 2 after time zero
        e2 = FlowEnsemble(shifted, e1.times, e1.x0s, e1.field, e1.driver,
                          e1.exploded.copy())
        assert convergence_metric(e1, e2) == 1.0

    def test_mismatched_drivers_rejected(self):
        fam = make_family("linear")
        d1 = BrownianDriver.generate(1, 2**-4, 2**4, 2, seed=18)
        d2 = BrownianDriver.generate(1, 2**-4, 2**4, 2, seed=19)
        x0 = fam.measure.sample(derive_rng(10, "mm"), 3)
        e1 = integrate(fam.field, d1, x0, 1.0)
        e2 = integrate(fam.field, d2, x0, 1.0)
        with pytest.raises(ValueError):
            convergence_metric(e1, e2)


class TestDeterminism:
    def test_bitwise_reproducible(self):
        fam = make_family("log-singular")
        seed = derive_seed(123, "flow")
        runs = []
        for _ in range(2):
            drv = BrownianDriver.generate(2, 2**-6, 2**6, 3, seed=seed)
            x0 = fam.measure.sample(derive_rng(123, "x0"), 5)
            runs.append(integrate(fam.field, drv, x0, 1.0).states.tobytes())
        assert runs[0] == runs[1]

    def test_csv_export(self, tmp_path):
        fam = make_family("linear")
        drv = BrownianDriver.generate(1, 2**-4, 2**4, 2, seed=20)
        x0 = fam.measure.sample(derive_rng(11, "csv"), 3)
        ens = integrate(fam.field, drv, x0, 1.0)
        path = tmp_path / "ens.csv"
        ens.to_csv(path, time_stride=4)
        lines = path.read_text().splitlines()
        assert lines[0] == "omega_index,x_index,t,x0"
        assert len(lines) == 1 + 2 * 3 * 5  # header + omega*x*times
