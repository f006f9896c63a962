"""Derivative system, finite-difference flows, and hypothesis checks."""

import numpy as np
import pytest

from roughflow import BrownianDriver, CoefficientField, ReferenceMeasure, make_family
from roughflow._seeds import derive_rng, derive_seed
from roughflow.derivative import (
    derivative_flow,
    difference_flow,
    lift,
    verify_hypotheses,
    weak_derivative_convergence,
)


def lifted_measure(d=1, q=2.0):
    alpha1 = q + d / 2.0 + 0.5
    return (ReferenceMeasure(2 * d, 2 * alpha1 + q + d / 2.0 + 0.5),
            ReferenceMeasure(d, alpha1))


def sample_xy(seed, count, m2):
    return m2.sample(derive_rng(seed, "xy"), count)


class TestLift:
    def test_linear_drift_block_independent_of_x(self):
        sys_ = lift(make_family("deriv-linear").field)
        xy = np.array([[0.3, 1.0], [7.0, 1.0], [-2.0, 1.0]])
        b2 = sys_.lifted._blocks["drift2_fn"](xy)
        assert np.allclose(b2, -0.8)  # A y with A = -0.8, y = 1

    def test_constant_sigma_gives_zero_noise_block(self):
        sys_ = lift(make_family("deriv-linear").field)
        xy = np.array([[1.0, 2.0]])
        assert np.allclose(sys_.lifted._blocks["sigma2_fn"](xy), 0.0)

    def test_linear_difference_block_exact_for_every_eps(self):
        sys_ = lift(make_family("deriv-linear").field)
        xy = np.array([[0.5, 2.0], [-1.0, 0.3]])
        want = -0.8 * xy[:, 1:]
        for eps in (0.5, 0.01, 1e-4):
            got = sys_.epsilon_system(eps)._blocks["drift2_fn"](xy)
            assert np.allclose(got, want, atol=1e-9)

    def test_nonanalytic_base_rejected(self):
        bare = CoefficientField(
            1, 1,
            sigma_fn=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
            drift_fn=lambda x: -x,
        )
        with pytest.raises(ValueError):
            lift(bare)


class TestFlows:
    def test_linear_base_exactness(self):
        sys_ = lift(make_family("deriv-linear").field)
        m2, _ = lifted_measure()
        xy = sample_xy(1, 16, m2)
        drv = BrownianDriver.generate(1, 2**-8, 2**8, 6, derive_seed(1, "d"))
        table = weak_derivative_convergence(sys_, [0.5, 0.125, 2**-6], drv, xy,
                                            1.0)
        assert max(table.metrics()) < 1e-10

    def test_matrix_exponential_oracle(self):
        sys_ = lift(make_family("deriv-linear").field)
        m2, _ = lifted_measure()
        xy = sample_xy(2, 12, m2)
        dt = 2**-9
        drv = BrownianDriver.generate(1, dt, 2**9, 4, derive_seed(2, "d"))
        ens = derivative_flow(sys_, drv, xy, 1.0)
        want = xy[None, :, 1] * np.exp(-0.8)
        got = ens.terminal_states()[..., 1]
        assert np.allclose(got, want, atol=5 * dt * np.abs(want).max() + 1e-6)

    def test_geometric_noise_derivative_identity(self):
        c = 0.4
        gbm = CoefficientField(
            1, 1,
            sigma_fn=lambda x: (c * x[..., 0])[..., None, None],
            drift_fn=lambda x: np.zeros_like(x),
            sigma_jac_fn=lambda x: np.full(x.shape[:-1] + (1, 1, 1), c),
            drift_jac_fn=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        )
        sys_ = lift(gbm)
        xy = np.array([[1.0, 0.5], [2.0, -1.0]])
        drv = BrownianDriver.generate(1, 2**-9, 2**9, 8, derive_seed(3, "g"))
        ens = derivative_flow(sys_, drv, xy, 1.0)
        x_t = ens.states[..., 0]
        y_t = ens.states[..., 1]
        # under the scheme Y and X satisfy the same recursion, so Y = (X/x) y
        pred = x_t / xy[None, :, None, 0] * xy[None, :, None, 1]
        assert np.allclose(y_t, pred, rtol=1e-11, atol=1e-11)
        # and X follows geometric Brownian motion up to scheme error
        b_t = drv.path_values()[:, None, -1, 0]
        gbm_oracle = xy[None, :, 0] * np.exp(c * b_t - c**2 / 2)
        rms = np.sqrt(np.mean((ens.terminal_states()[..., 0] - gbm_oracle) ** 2))
        assert rms < 10 * np.sqrt(2**-9)

    def test_zero_initial_derivative_stays_zero(self):
        sys_ = lift(make_family("deriv-smooth").field)
        xy = np.array([[0.7, 0.0], [-1.2, 0.0]])
        drv = BrownianDriver.generate(1, 2**-7, 2**7, 3, derive_seed(4, "z"))
        ens = derivative_flow(sys_, drv, xy, 1.0)
        assert np.all(ens.states[..., 1] == 0.0)

    def test_linearity_in_y(self):
        sys_ = lift(make_family("deriv-smooth").field)
        drv = BrownianDriver.generate(1, 2**-7, 2**7, 4, derive_seed(5, "l"))
        xy = np.array([[0.5, 0.8]])
        xy2 = np.array([[0.5, 1.6]])
        e1 = derivative_flow(sys_, drv, xy, 1.0)
        e2 = derivative_flow(sys_, drv, xy2, 1.0)
        assert np.allclose(e2.states[..., 1], 2.0 * e1.states[..., 1],
                           rtol=1e-12, atol=1e-13)

    def test_difference_flow_deterministic(self):
        sys_ = lift(make_family("deriv-smooth").field)
        m2, _ = lifted_measure()
        xy = sample_xy(6, 8, m2)
        runs = []
        for _ in range(2):
            drv = BrownianDriver.generate(1, 2**-7, 2**7, 3, derive_seed(6, "r"))
            runs.append(difference_flow(sys_, 0.25, drv, xy, 1.0).states.tobytes())
        assert runs[0] == runs[1]

    def test_difference_flow_eps_trend_smooth(self):
        sys_ = lift(make_family("deriv-smooth").field)
        m2, _ = lifted_measure()
        xy = sample_xy(7, 16, m2)
        drv = BrownianDriver.generate(1, 2**-8, 2**8, 6, derive_seed(7, "t"))
        e_deriv = derivative_flow(sys_, drv, xy, 1.0)
        gaps = []
        for eps in (1e-2, 1e-3):
            e_diff = difference_flow(sys_, eps, drv, xy, 1.0)
            gaps.append(np.abs(e_diff.states[..., 1]
                               - e_deriv.states[..., 1]).max())
        assert gaps[1] < gaps[0]

    def test_jacobian_vector_product_oracle(self):
        from roughflow import integrate

        fam = make_family("deriv-smooth")
        sys_ = lift(fam.field)
        m2, _ = lifted_measure()
        xy = sample_xy(8, 24, m2)
        dt = 2**-9
        drv = BrownianDriver.generate(1, dt, 2**9, 8, derive_seed(8, "jvp"))
        ens = derivative_flow(sys_, drv, xy, 1.0)
        h = 1e-4
        plus = integrate(fam.field, drv, xy[:, :1] + h * xy[:, 1:], 1.0)
        minus = integrate(fam.field, drv, xy[:, :1] - h * xy[:, 1:], 1.0)
        jvp = (plus.terminal_states() - minus.terminal_states()) / (2 * h)
        y_t = ens.terminal_states()[..., 1:]
        rel_rms = np.sqrt(np.mean((y_t - jvp) ** 2)) / np.sqrt(np.mean(jvp**2))
        assert rel_rms < 10 * np.sqrt(dt)


class TestConvergence:
    def test_monotone_decrease_smooth(self):
        sys_ = lift(make_family("deriv-smooth").field)
        m2, _ = lifted_measure()
        xy = sample_xy(9, 32, m2)
        drv = BrownianDriver.generate(1, 2**-9, 2**9, 8, derive_seed(9, "m"))
        table = weak_derivative_convergence(
            sys_, [0.5, 0.25, 0.125, 0.0625], drv, xy, 1.0
        )
        assert table.monotone_decreasing()
        ms = table.metrics()
        assert ms[-1] < ms[0] / 4

    def test_csv(self, tmp_path):
        sys_ = lift(make_family("deriv-linear").field)
        m2, _ = lifted_measure()
        xy = sample_xy(10, 8, m2)
        drv = BrownianDriver.generate(1, 2**-6, 2**6, 2, derive_seed(10, "c"))
        table = weak_derivative_convergence(sys_, [0.5, 0.25], drv, xy, 1.0)
        path = tmp_path / "deriv.csv"
        table.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epsilon,metric,se"
        assert len(lines) == 3


class TestHypotheses:
    def test_linear_base_finite_for_large_p0(self):
        sys_ = lift(make_family("deriv-linear").field)
        m2, m1 = lifted_measure()
        rep = verify_hypotheses(sys_, m2, m1, p0=2.0,
                                eps_set=[0.5, 0.25], budget=4000,
                                rng=derive_rng(11, "h"))
        assert rep.passed

    def test_rough_base_eps_uniform(self):
        sys_ = lift(make_family("deriv-rough").field)
        m2, m1 = lifted_measure()
        rep = verify_hypotheses(sys_, m2, m1, p0=0.5,
                                eps_set=[0.5, 0.25, 0.125], budget=8000,
                                rng=derive_rng(12, "h2"))
        assert rep.eps_ratio < 10.0
        assert rep.drift_domination_fraction == 1.0
        assert rep.sigma_domination_fraction == 1.0
        assert rep.passed

    def test_wrong_measure_dimension_rejected(self):
        sys_ = lift(make_family("deriv-linear").field)
        m2, m1 = lifted_measure()
        with pytest.raises(ValueError):
            verify_hypotheses(sys_, m1, m1, 1.0, [0.5], 100,
                              derive_rng(13, "bad"))
