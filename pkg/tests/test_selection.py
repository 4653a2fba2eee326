import math

import numpy as np
import pytest

from curveblocks.datagen import ScenarioSpec, generate
from curveblocks.errors import ConfigError, NumericError
from curveblocks.msem import MsemConfig, run
from curveblocks.selection import (
    ModelGrid,
    block_param_count,
    icl,
    icl_from_loglik,
    model_search,
    score_fit,
)
from curveblocks.sim_model import RandomEffectConfig
from curveblocks.splines import SplineSpec
from curveblocks._rng import TAG_SCORING, derive_seed
from curveblocks.lbm import CoPartition, complete_loglik
from curveblocks.msem import Theta, marginalization_step

SPEC = SplineSpec(degree=3, interior_knot_count=2, domain=(0.0, 1.0))
FFF = RandomEffectConfig.from_string("FFF")


def base_config(**kw):
    defaults = dict(
        K=1, L=1, re_config=FFF, spline=SPEC, mc_samples=16, gibbs_sweeps=2,
        iterations=6, burn_in=3, n_starts=1, seed=0, nlme_max_iter=10,
    )
    defaults.update(kw)
    return MsemConfig(**defaults)


class TestBlockParamCount:
    @pytest.mark.parametrize(
        "config,basis_dim,want",
        [("FFF", 8, 9), ("TFT", 8, 11), ("TTT", 5, 9), ("TFF", 8, 10)],
    )
    def test_counts(self, config, basis_dim, want):
        assert block_param_count(RandomEffectConfig.from_string(config), basis_dim) == want


class TestIclFormula:
    def test_single_block_penalty(self):
        # only the per-block parameter penalty survives at K = L = 1
        n, d, nu = 50, 8, 9
        want = -nu / 2 * math.log(n * d)
        assert icl_from_loglik(0.0, n, d, 1, 1, nu) == pytest.approx(want, abs=1e-12)

    def test_direct_arithmetic(self):
        # -(3/2)ln(100) - (2/2)ln(20) - (132/2)ln(2000), written out longhand
        want = -(
            1.5 * math.log(100.0)
            + 1.0 * math.log(20.0)
            + 66.0 * math.log(2000.0)
        )
        got = icl_from_loglik(0.0, 100, 20, 4, 3, 11)
        assert got == pytest.approx(want, abs=1e-10)
        assert got == pytest.approx(-511.5630498823136, abs=1e-9)

    def test_doubling_nu_decreases(self):
        base = icl_from_loglik(0.0, 100, 20, 4, 3, 11)
        assert icl_from_loglik(0.0, 100, 20, 4, 3, 22) < base

    def test_loglik_enters_additively(self):
        a = icl_from_loglik(0.0, 30, 10, 2, 2, 5)
        b = icl_from_loglik(123.5, 30, 10, 2, 2, 5)
        assert b - a == pytest.approx(123.5, abs=1e-12)


def noise_grid(seed, n=10, d=5):
    spec = ScenarioSpec(
        n=n, d=d, T=8, seed=seed, K_true=1, L_true=1, shape_layout=((1,),),
        sigma_eps=0.3, sigma_alpha=(0.0, 0.0, 0.0),
    )
    return generate(spec)[0]


class TestScoreFit:
    def test_matches_manual_recomputation(self):
        grid = noise_grid(0)
        cfg = base_config()
        fit = run(grid, cfg)
        icl_val, lc, nu = score_fit(grid, fit, cfg)
        theta = Theta(fit.pi, fit.rho, fit.blocks)
        scoring_cfg = base_config(mc_samples=cfg.mc_samples * 10)
        cache = marginalization_step(
            grid, theta, scoring_cfg, 0, derive_seed(cfg.seed, TAG_SCORING)
        )
        want_lc = complete_loglik(cache, CoPartition(fit.z_hat, fit.w_hat, fit.pi, fit.rho))
        assert lc == want_lc
        assert nu == block_param_count(cfg.re_config, SPEC.basis_dim)
        assert icl_val == pytest.approx(icl_from_loglik(lc, grid.n, grid.d, 1, 1, nu), abs=1e-12)

    def test_icl_wrapper_consistent(self):
        grid = noise_grid(1)
        cfg = base_config()
        fit = run(grid, cfg)
        theta = Theta(fit.pi, fit.rho, fit.blocks)
        cache = marginalization_step(grid, theta, cfg, 0, 42)
        via_wrapper = icl(fit, cache, grid.n, grid.d, 1, 1, 9)
        lc = complete_loglik(cache, CoPartition(fit.z_hat, fit.w_hat, fit.pi, fit.rho))
        assert via_wrapper == pytest.approx(icl_from_loglik(lc, grid.n, grid.d, 1, 1, 9), abs=1e-12)


class TestModelSearch:
    def test_single_point(self):
        grid = noise_grid(2)
        search = model_search(grid, ModelGrid([1], [1], [FFF], base_config()))
        assert len(search.ranked) == 1
        assert not search.failures
        assert np.isfinite(search.best().icl)

    def test_ranking_sorted_and_deterministic(self):
        grid = noise_grid(3, n=12, d=6)
        mg = ModelGrid([1, 2], [1, 2], [FFF], base_config())
        a = model_search(grid, mg)
        b = model_search(grid, mg)
        icls = [s.icl for s in a.ranked]
        assert icls == sorted(icls, reverse=True)
        assert [(s.K, s.L, s.icl) for s in a.ranked] == [(s.K, s.L, s.icl) for s in b.ranked]

    def test_failed_points_recorded(self):
        grid = noise_grid(4)  # n = 10 rows
        mg = ModelGrid([1, 99], [1], [FFF], base_config())
        search = model_search(grid, mg)
        assert len(search.ranked) == 1
        assert len(search.failures) == 1
        assert search.failures[0].K == 99

    def test_all_failed_raises_aggregate(self):
        grid = noise_grid(5)
        mg = ModelGrid([99], [1], [FFF], base_config())
        with pytest.raises(NumericError, match="every grid point failed"):
            model_search(grid, mg)

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError):
            ModelGrid([], [1], [FFF], base_config())

    def test_pure_noise_selects_single_block(self):
        picks = []
        for seed in range(10):
            grid = noise_grid(100 + seed, n=10, d=5)
            search = model_search(
                grid, ModelGrid([1, 2], [1, 2], [FFF], base_config(seed=seed))
            )
            best = search.best()
            picks.append((best.K, best.L))
        assert sum(p == (1, 1) for p in picks) > 5
