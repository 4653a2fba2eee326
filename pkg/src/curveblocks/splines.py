"""B-spline bases for the common block shape functions.

A block's mean curve is a spline ``m(t) = B(t) @ beta`` on a fixed domain,
with a clamped knot vector and equally spaced interior knots. Basis matrices
are built with the Cox-de Boor recursion (scipy's implementation) and kept in
sparse form so that ``eval_shape`` reproduces scipy's pointwise spline
evaluation exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigError, DomainError, ShapeError


@dataclass(frozen=True)
class SplineSpec:
    """Degree, interior knot count and domain of a clamped B-spline basis.

    The basis has ``interior_knot_count + degree + 1`` elements; interior
    knots sit at equally spaced interior points of the domain. A degree-d
    spec with zero interior knots is an ordinary degree-d polynomial basis.
    """

    degree: int = 3
    interior_knot_count: int = 4
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if not isinstance(self.degree, int) or self.degree < 0:
            raise ConfigError(f"spline degree must be a nonnegative integer, got {self.degree}")
        if not isinstance(self.interior_knot_count, int) or self.interior_knot_count < 0:
            raise ConfigError(
                f"interior knot count must be a nonnegative integer, got {self.interior_knot_count}"
            )
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigError(f"spline domain must be a nonempty finite interval, got {self.domain}")

    @property
    def basis_dim(self) -> int:
        return self.interior_knot_count + self.degree + 1

    @property
    def knots(self) -> np.ndarray:
        """Full nondecreasing knot vector with (degree+1)-fold boundary knots."""
        lo, hi = self.domain
        interior = np.linspace(lo, hi, self.interior_knot_count + 2)[1:-1]
        return np.concatenate(
            [np.full(self.degree + 1, lo), interior, np.full(self.degree + 1, hi)]
        )


class BasisMatrix:
    """B-spline basis evaluations, one row per time, one column per basis element.

    The matrix is held in CSR form; ``eval_shape`` uses the sparse product so
    that its result is bit-identical to scipy's direct spline evaluation.
    ``np.asarray(basis)`` gives the dense view.
    """

    def __init__(self, csr, spec: SplineSpec):
        self._csr = csr
        self.spec = spec

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def __array__(self, dtype=None, copy=None) -> np.ndarray:
        arr = self.toarray()
        return arr.astype(dtype) if dtype is not None else arr


def make_basis(spec: SplineSpec, times) -> BasisMatrix:
    """Evaluate the basis of `spec` at `times`, which must lie in the domain."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    lo, hi = spec.domain
    if times.size and (times.min() < lo or times.max() > hi or not np.isfinite(times).all()):
        bad = times[(times < lo) | (times > hi) | ~np.isfinite(times)][0]
        raise DomainError(f"evaluation time {bad} outside spline domain [{lo}, {hi}]")
    return _basis_unchecked(spec, times)


def _basis_unchecked(spec: SplineSpec, times: np.ndarray) -> BasisMatrix:
    csr = BSpline.design_matrix(times, spec.knots, spec.degree, extrapolate=False)
    return BasisMatrix(csr, spec)


def shifted_basis(spec: SplineSpec, times, shift: float) -> BasisMatrix:
    """Basis at ``times - shift``, clamping shifted times to the domain ends."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    lo, hi = spec.domain
    return _basis_unchecked(spec, np.clip(times - shift, lo, hi))


def eval_shape(basis: BasisMatrix, beta) -> np.ndarray:
    """Evaluate ``m(t) = B(t) @ beta`` for all rows of the basis matrix."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.shape[0] != basis.shape[1]:
        raise ShapeError(
            f"coefficient vector of length {beta.shape} does not match basis dimension {basis.shape[1]}"
        )
    return basis._csr @ beta


def shape_fn(spec: SplineSpec, beta) -> BSpline:
    """Callable spline ``m(.; beta)``; evaluation matches ``eval_shape`` bitwise."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.basis_dim,):
        raise ShapeError(f"beta shape {beta.shape} does not match basis dimension {spec.basis_dim}")
    return BSpline(spec.knots, beta, spec.degree, extrapolate=False)


def shape_deriv_fn(spec: SplineSpec, beta) -> BSpline:
    """Callable first derivative of ``m(.; beta)``."""
    return shape_fn(spec, beta).derivative()


def clipped_shape_values(spec: SplineSpec, beta, raw_times) -> np.ndarray:
    """``m(clip(t); beta)`` for arbitrary times, clamped to the domain ends."""
    lo, hi = spec.domain
    return shape_fn(spec, beta)(np.clip(raw_times, lo, hi))
