"""Synthetic curve grids with a known block structure.

Four analytic mean shapes (a parabola, a narrow Gaussian bump, a notch step
and a logistic ramp) are arranged in a 4 x 3 block layout; each shape is
standardized to zero mean and unit sample sd over the observation grid so
that every block carries the same signal-to-noise ratio. Cells are drawn
from the shape-invariant generative model with keyed substreams, so grids
are reproducible cell by cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._rng import TAG_DATAGEN, derive_rng
from .data import CurveGrid
from .errors import ConfigError, DomainError
from .sim_model import sample_transformed_curve

SHAPE_IDS = (1, 2, 3, 4)


def raw_shape(shape_id: int, t) -> np.ndarray:
    """Unstandardized mean shape `shape_id` evaluated at times in [0, 1]."""
    t = np.asarray(t, dtype=float)
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise DomainError("shape functions are defined on [0, 1]")
    if shape_id == 1:
        return 6.0 * t**2 - 7.0 * t + 1.0
    if shape_id == 2:
        return norm.pdf(t, loc=0.2, scale=np.sqrt(0.008))
    if shape_id == 3:
        return 0.75 - 0.8 * ((t > 0.4) & (t < 0.6))
    if shape_id == 4:
        return 1.0 / (1.0 + np.exp(-10.0 * t + 5.0))
    raise ConfigError(f"shape id must be one of {SHAPE_IDS}, got {shape_id}")


def standardized_shape(shape_id: int, grid):
    """Shape `shape_id` standardized to mean 0, sample sd 1 over `grid`.

    Returns a callable usable at arbitrary times in [0, 1]; the
    standardization constants are frozen from the grid.
    """
    grid = np.asarray(grid, dtype=float)
    vals = raw_shape(shape_id, grid)
    mean = vals.mean()
    sd = vals.std(ddof=1)
    if sd == 0.0:
        raise ConfigError(f"shape {shape_id} is constant on the given grid")

    def shape(t):
        return (raw_shape(shape_id, t) - mean) / sd

    return shape


def shape_function(shape_id: int, t, grid=None) -> np.ndarray:
    """Shape values at `t`; standardized over `grid` when one is given."""
    if grid is None:
        return raw_shape(shape_id, t)
    return standardized_shape(shape_id, grid)(t)


def default_layout() -> tuple:
    """4 x 3 table of shape ids; all row profiles and column profiles distinct."""
    return ((1, 2, 1), (3, 4, 2), (2, 3, 1), (2, 3, 4))


@dataclass
class ScenarioSpec:
    """Dimensions, block layout and generative parameters of a synthetic grid."""

    n: int = 100
    d: int = 20
    T: int = 15
    seed: int = 0
    K_true: int = 4
    L_true: int = 3
    shape_layout: tuple = field(default_factory=default_layout)
    sigma_eps: float = 0.3
    sigma_alpha: tuple = (1.0, 0.0, 0.1)
    mu_alpha: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        layout = tuple(tuple(row) for row in self.shape_layout)
        if len(layout) != self.K_true or any(len(r) != self.L_true for r in layout):
            raise ConfigError("shape_layout must be K_true x L_true")
        if len(set(layout)) != self.K_true:
            raise ConfigError("shape_layout row profiles must be pairwise distinct")
        cols = tuple(zip(*layout))
        if len(set(cols)) != self.L_true:
            raise ConfigError("shape_layout column profiles must be pairwise distinct")
        if self.n < self.K_true or self.d < self.L_true:
            raise ConfigError("need n >= K_true and d >= L_true")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        self.shape_layout = layout


def _ids(prefix: str, count: int) -> list:
    width = len(str(count))
    return [f"{prefix}{i + 1:0{width}d}" for i in range(count)]


def generate(spec: ScenarioSpec):
    """Generate a grid plus its true row and column labels (1-based).

    Rows cycle through the K_true row clusters and columns through the
    L_true column clusters (balanced round-robin). Cell (i, j) is drawn from
    the shape-invariant model with its block's standardized shape.
    """
    times = np.linspace(0.0, 1.0, spec.T)
    z_true = np.arange(spec.n) % spec.K_true + 1
    w_true = np.arange(spec.d) % spec.L_true + 1
    shapes = {sid: standardized_shape(sid, times) for sid in SHAPE_IDS}
    mu = np.asarray(spec.mu_alpha, dtype=float)
    var = np.asarray(spec.sigma_alpha, dtype=float)

    values = []
    for i in range(spec.n):
        row = np.empty((spec.d, spec.T))
        for j in range(spec.d):
            sid = spec.shape_layout[z_true[i] - 1][w_true[j] - 1]
            rng = derive_rng(spec.seed, TAG_DATAGEN, i, j)
            row[j] = sample_transformed_curve(
                shapes[sid], (0.0, 1.0), mu, var, spec.sigma_eps, times, rng
            )
        values.append(row)
    grid = CurveGrid(_ids("r", spec.n), _ids("c", spec.d), [times] * spec.n, values)
    return grid, z_true, w_true
