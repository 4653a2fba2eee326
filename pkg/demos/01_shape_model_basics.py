"""Walk through the curve model's building blocks.

A block's mean curve is a B-spline; every curve in the block is an
amplitude / scale / phase transformation of it plus noise. This script
builds a basis, checks its partition-of-unity property, and shows what each
random effect does to a fixed shape.
"""

import numpy as np

from curveblocks import (
    BlockParams,
    RandomEffectConfig,
    SplineSpec,
    conditional_mean,
    eval_shape,
    make_basis,
    sample_cell,
)

spec = SplineSpec(degree=3, interior_knot_count=4, domain=(0.0, 1.0))
print(f"cubic basis with 4 interior knots -> {spec.basis_dim} basis functions")
print("knot vector:", np.round(spec.knots, 3))

times = np.linspace(0.0, 1.0, 9)
basis = make_basis(spec, times)
print("\nbasis rows sum to 1 (partition of unity):", np.asarray(basis).sum(axis=1))

# a bump-like mean shape
beta = np.array([0.0, 0.2, 1.6, 0.4, -0.3, -0.4, -0.2, 0.0])
print("\nmean shape m(t) on a coarse grid:")
print(np.round(eval_shape(basis, beta), 3))

params = BlockParams(np.zeros(3), np.array([0.5, 0.0, 0.02]), 0.15, beta)
base = conditional_mean(times, np.zeros(3), params, spec)
for label, alpha in [
    ("amplitude +0.8", (0.8, 0.0, 0.0)),
    ("scale x2 (log-scale effect ln 2)", (0.0, np.log(2.0), 0.0)),
    ("phase +0.15", (0.0, 0.0, 0.15)),
]:
    transformed = conditional_mean(times, np.array(alpha), params, spec)
    print(f"\n{label}:")
    print("  base       ", np.round(base, 2))
    print("  transformed", np.round(transformed, 2))

# draw a few noisy curves from the block
config = RandomEffectConfig.from_string("TFT")
rng = np.random.default_rng(0)
print("\nthree sampled cell curves (amplitude and phase random, scale off):")
for _ in range(3):
    cell = sample_cell(params, config, spec, times, rng)
    print(" ", np.round(cell.values, 2))
