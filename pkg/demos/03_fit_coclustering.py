"""Fit the co-clustering model on a small simulated grid and score it.

Runs the marginalized stochastic EM on a 24 x 9 grid with amplitude and
phase effects on, then compares the recovered partition to the truth with
the co-clustering adjusted Rand index.
"""

import numpy as np

from curveblocks import (
    MsemConfig,
    RandomEffectConfig,
    ScenarioSpec,
    SplineSpec,
    cari,
    generate,
    run,
)

grid, z_true, w_true = generate(
    ScenarioSpec(n=24, d=9, T=15, seed=11, sigma_alpha=(1.0, 0.0, 0.05))
)

cfg = MsemConfig(
    K=4,
    L=3,
    re_config=RandomEffectConfig.from_string("TFT"),
    spline=SplineSpec(degree=3, interior_knot_count=4, domain=(0.0, 1.0)),
    mc_samples=60,
    iterations=25,
    burn_in=12,
    n_starts=2,
    seed=0,
)

fit = run(grid, cfg)

print(f"chains run: {cfg.n_starts}, selected chain: {fit.chain_index}")
print(f"iterations: {fit.iterations_run} (early stop: {fit.early_stopped})")
print("complete-data log-likelihood, first and last iterations:")
print("  ", [round(v) for v in fit.loglik_trace[:3]], "...",
      [round(v) for v in fit.loglik_trace[-3:]])
print("row weights:", np.round(fit.pi, 3))
print("col weights:", np.round(fit.rho, 3))
print("recovered row labels:", fit.z_hat)
print("true row labels     :", z_true)
print(f"\nCARI vs truth: {cari(fit.z_hat, fit.w_hat, z_true, w_true):.3f}")

sigma = np.array([[fit.blocks[k][l].sigma_eps for l in range(cfg.L)] for k in range(cfg.K)])
print("fitted noise sd per block (true 0.3):")
print(np.round(sigma, 2))
