import numpy as np
import pytest

from curveblocks.data import CellCurve
from curveblocks.errors import DataError
from curveblocks.nlme_fit import BlockData, fit_block, init_block
from curveblocks.sim_model import (
    BlockParams,
    RandomEffectConfig,
    sample_cell,
)
from curveblocks.splines import SplineSpec, clipped_shape_values, eval_shape, make_basis

SPEC = SplineSpec(degree=3, interior_knot_count=2)
FFF = RandomEffectConfig(False, False, False)
AMP = RandomEffectConfig(True, False, False)
TFT = RandomEffectConfig(True, False, True)


def ols_beta(cells, spec):
    """Normal-equations oracle for the pooled spline fit."""
    t = np.concatenate([c.times[c.observed_mask] for c in cells])
    y = np.concatenate([c.values[c.observed_mask] for c in cells])
    X = np.asarray(make_basis(spec, t))
    return np.linalg.solve(X.T @ X, X.T @ y)


def simulate_cells(config, beta, var, sigma_eps, n_cells, T, seed):
    params = BlockParams(np.zeros(3), np.asarray(var, float), sigma_eps, beta)
    times = np.linspace(0, 1, T)
    rng = np.random.default_rng(seed)
    return [sample_cell(params, config, SPEC, times, rng) for _ in range(n_cells)]


class TestInitBlock:
    def test_beta_matches_normal_equations(self):
        rng = np.random.default_rng(0)
        beta0 = rng.normal(size=SPEC.basis_dim)
        cells = simulate_cells(FFF, beta0, (0, 0, 0), 0.2, 12, 10, seed=1)
        data = BlockData(cells)
        init = init_block(data, SPEC, FFF)
        np.testing.assert_allclose(init.beta, ols_beta(cells, SPEC), atol=1e-8)

    def test_noiseless_residual_sd_near_zero(self):
        rng = np.random.default_rng(1)
        beta0 = rng.normal(size=SPEC.basis_dim)
        cells = simulate_cells(FFF, beta0, (0, 0, 0), 1e-12, 6, 12, seed=2)
        init = init_block(BlockData(cells), SPEC, FFF)
        assert init.sigma_eps <= 1e-4 + 1e-12

    def test_all_off_gives_zero_variances(self):
        cells = simulate_cells(FFF, np.ones(SPEC.basis_dim), (0, 0, 0), 0.3, 4, 9, seed=3)
        init = init_block(BlockData(cells), SPEC, FFF)
        np.testing.assert_array_equal(init.sigma_alpha, 0.0)

    def test_active_variances_at_tenth_of_pooled(self):
        cells = simulate_cells(AMP, np.ones(SPEC.basis_dim), (1.0, 0, 0), 0.3, 30, 10, seed=4)
        init = init_block(BlockData(cells), SPEC, AMP)
        pooled = np.concatenate([c.values[c.observed_mask] for c in cells])
        assert init.sigma_alpha[0] == pytest.approx(0.1 * pooled.var(ddof=1))
        assert init.sigma_alpha[1] == 0.0 and init.sigma_alpha[2] == 0.0

    def test_underdetermined_falls_back_to_ridge(self):
        cells = [CellCurve(np.linspace(0, 1, 3), np.array([0.5, 0.1, -0.2]))]
        init = init_block(BlockData(cells), SPEC, FFF)
        assert np.isfinite(init.beta).all()


class TestFitBlockAllOff:
    def test_matches_ols_oracle_within_two_se(self):
        rng = np.random.default_rng(5)
        beta0 = rng.normal(size=SPEC.basis_dim)
        sigma = 0.25
        cells = simulate_cells(FFF, beta0, (0, 0, 0), sigma, 40, 10, seed=6)
        data = BlockData(cells)
        params, diags = fit_block(data, FFF, SPEC, init_block(data, SPEC, FFF))
        want = ols_beta(cells, SPEC)
        # standard error of the OLS coefficients
        t = np.concatenate([c.times for c in cells])
        X = np.asarray(make_basis(SPEC, t))
        se = np.sqrt(np.diag(np.linalg.inv(X.T @ X))) * sigma
        assert diags.converged
        assert np.all(np.abs(params.beta - want) <= 2 * se + 1e-9)

    def test_noiseless_exact_recovery(self):
        rng = np.random.default_rng(7)
        beta0 = rng.normal(size=SPEC.basis_dim)
        times = np.linspace(0, 1, 15)
        curve = CellCurve(times, clipped_shape_values(SPEC, beta0, times))
        data = BlockData([curve])
        init = BlockParams(np.zeros(3), np.zeros(3), 0.1, beta0 + rng.normal(size=beta0.size) * 0.05)
        params, diags = fit_block(data, FFF, SPEC, init)
        np.testing.assert_allclose(params.beta, beta0, atol=1e-6)
        assert params.sigma_eps == pytest.approx(1e-4, abs=1e-6)  # floored variance

    def test_off_coordinates_exactly_zero(self):
        cells = simulate_cells(AMP, np.ones(SPEC.basis_dim), (0.5, 0, 0), 0.3, 20, 10, seed=8)
        data = BlockData(cells)
        params, diags = fit_block(data, AMP, SPEC, init_block(data, SPEC, AMP))
        assert params.mu_alpha.tolist() == [0.0, 0.0, 0.0]
        assert params.sigma_alpha[1] == 0.0 and params.sigma_alpha[2] == 0.0
        assert np.all(diags.re_modes[:, 1] == 0.0) and np.all(diags.re_modes[:, 2] == 0.0)


class TestFitBlockAmplitude:
    def test_variance_recovery_at_scenario_settings(self):
        # 200 cells, amplitude variance 1, noise sd 0.3, averaged over 10 seeds
        rng = np.random.default_rng(9)
        beta0 = rng.normal(size=SPEC.basis_dim)
        sig_hats, eps_hats = [], []
        for seed in range(10):
            cells = simulate_cells(AMP, beta0, (1.0, 0, 0), 0.3, 200, 15, seed=100 + seed)
            data = BlockData(cells)
            params, _ = fit_block(data, AMP, SPEC, init_block(data, SPEC, AMP))
            sig_hats.append(params.sigma_alpha[0])
            eps_hats.append(params.sigma_eps)
        assert abs(np.mean(sig_hats) - 1.0) <= 0.2
        assert abs(np.mean(eps_hats) - 0.3) <= 0.03

    def test_shrinkage_of_amplitude_modes(self):
        rng = np.random.default_rng(10)
        beta0 = rng.normal(size=SPEC.basis_dim)
        ratios = []
        for seed in range(10):
            cells = simulate_cells(AMP, beta0, (0.5, 0, 0), 0.4, 60, 8, seed=200 + seed)
            data = BlockData(cells)
            params, diags = fit_block(data, AMP, SPEC, init_block(data, SPEC, AMP))
            shape_vals = [clipped_shape_values(SPEC, params.beta, c.times) for c in cells]
            raw = np.array(
                [np.mean(c.values - sv) for c, sv in zip(cells, shape_vals)]
            )
            ratios.append(diags.re_modes[:, 0].var(ddof=1) / raw.var(ddof=1))
        assert np.mean(ratios) < 1.0

    def test_pnls_objective_descends(self):
        # the reported linearized marginal log-likelihood must not jump around:
        # successive outer iterations from a cold start improve it monotonically
        # up to the convergence tolerance
        rng = np.random.default_rng(11)
        beta0 = rng.normal(size=SPEC.basis_dim)
        cells = simulate_cells(AMP, beta0, (1.0, 0, 0), 0.3, 50, 10, seed=300)
        data = BlockData(cells)
        init = init_block(data, SPEC, AMP)
        lls = []
        for iters in (1, 2, 4, 8):
            _, diags = fit_block(data, AMP, SPEC, init, tol=0.0, max_iter=iters)
            lls.append(diags.objective)
        assert lls[-1] >= lls[0] - 1e-6


class TestFitBlockPhase:
    def test_scale_parameterization_invariance(self):
        # refits with perturbed initial scale-related values must give the
        # same fitted mean curves
        rng = np.random.default_rng(12)
        beta0 = np.sin(np.linspace(0, np.pi, SPEC.basis_dim))
        cfg = RandomEffectConfig(True, True, False)
        cells = simulate_cells(cfg, beta0, (0.4, 0.05, 0), 0.1, 120, 12, seed=400)
        data = BlockData(cells)
        init_a = init_block(data, SPEC, cfg)
        init_b = init_a.copy()
        init_b.sigma_alpha = init_b.sigma_alpha.copy()
        init_b.sigma_alpha[1] *= 4.0
        pa, da = fit_block(data, cfg, SPEC, init_a)
        pb, db = fit_block(data, cfg, SPEC, init_b)
        times = np.linspace(0, 1, 25)
        curves_a = np.array(
            [
                am[0] + np.exp(am[1]) * clipped_shape_values(SPEC, pa.beta, times - am[2])
                for am in da.re_modes
            ]
        )
        curves_b = np.array(
            [
                bm[0] + np.exp(bm[1]) * clipped_shape_values(SPEC, pb.beta, times - bm[2])
                for bm in db.re_modes
            ]
        )
        rms = np.sqrt(np.mean((curves_a - curves_b) ** 2))
        scale = np.sqrt(np.mean(curves_a**2))
        assert rms <= 0.02 * max(scale, 1.0)

    def test_phase_and_amplitude_recovery(self):
        rng = np.random.default_rng(13)
        beta0 = np.cos(np.linspace(0, 2 * np.pi, SPEC.basis_dim))
        cells = simulate_cells(TFT, beta0, (1.0, 0, 0.05), 0.3, 150, 15, seed=500)
        data = BlockData(cells)
        params, diags = fit_block(data, TFT, SPEC, init_block(data, SPEC, TFT))
        assert diags.converged
        assert 0.5 <= params.sigma_alpha[0] <= 2.0
        assert params.sigma_alpha[2] <= 0.3


class TestBlockData:
    def test_size_invariant(self):
        cells = [CellCurve(np.linspace(0, 1, 3), np.array([1.0, 2.0, 1.0]))]
        with pytest.raises(DataError):
            BlockData(cells).check_size(SPEC, TFT)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            BlockData([])
