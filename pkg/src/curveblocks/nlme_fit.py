"""Approximate maximum likelihood for one block's nonlinear mixed-effects model.

Fitting alternates two sub-steps until the linearized marginal log-likelihood
stabilizes:

* a penalized nonlinear least-squares (PNLS) pass that jointly updates the
  shape coefficients and the per-cell random effect modes by Gauss-Newton
  with step halving, the random effects being ridge-penalized by the current
  variances;
* a variance pass that linearizes the mean in the random effects around the
  current modes and maximizes the resulting closed-form Gaussian marginal
  likelihood over the noise variance and the active random effect variances.

The random effect means are fixed at zero: a free mean is confounded with
the shape coefficients (a constant added to every coefficient is an
amplitude shift). The Gauss-Newton normal equations exploit the arrow
structure of the problem (dense shape block, per-cell effect blocks) through
a Schur complement, so cost is linear in the number of cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import minimize

from .data import CellCurve
from .errors import DataError, NumericError
from .sim_model import LOG_2PI, BlockParams, RandomEffectConfig
from .splines import SplineSpec

VAR_FLOOR = 1e-8
LEVENBERG_START = 1e-6
LEVENBERG_CAP = 1e2
PNLS_MAX_ITER = 100
PNLS_REL_TOL = 1e-9
MIN_STEP = 2.0 ** -20


@dataclass
class BlockData:
    """Curves currently assigned to one block, tagged with their cell indices."""

    cells: list
    indices: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.cells:
            raise DataError("block data must contain at least one curve")
        if not self.indices:
            self.indices = [(c, 0) for c in range(len(self.cells))]

    def total_observed(self) -> int:
        return sum(c.n_observed for c in self.cells)

    def check_size(self, spec: SplineSpec, config: RandomEffectConfig) -> None:
        needed = spec.basis_dim + config.n_active + 1
        if self.total_observed() < needed:
            raise DataError(
                f"block has {self.total_observed()} observed points, needs at least {needed}"
            )


@dataclass
class FitDiagnostics:
    converged: bool
    iterations: int
    objective: float
    re_modes: np.ndarray
    regularized: bool = False


class _Stacked:
    """Cells padded to a common length with an observation mask."""

    def __init__(self, cells):
        T = max(c.times.size for c in cells)
        C = len(cells)
        lo = cells[0].times[0]
        self.times = np.full((C, T), lo)
        self.values = np.zeros((C, T))
        self.mask = np.zeros((C, T), dtype=bool)
        for c, curve in enumerate(cells):
            m = curve.times.size
            self.times[c, :m] = curve.times
            obs = curve.observed_mask
            self.values[c, :m][obs] = curve.values[obs]
            self.mask[c, :m] = obs
        self.n_obs = self.mask.sum(axis=1)
        self.N = int(self.n_obs.sum())


def _solve_boosted(mat: np.ndarray, rhs: np.ndarray):
    """Solve a (possibly stacked) SPD system, boosting the diagonal if singular."""
    eye = np.eye(mat.shape[-1])
    lam = 0.0
    while True:
        try:
            sol = np.linalg.solve(mat + lam * eye, rhs)
            if np.isfinite(sol).all():
                return sol, lam > 0
        except np.linalg.LinAlgError:
            pass
        lam = LEVENBERG_START if lam == 0.0 else lam * 10.0
        if lam > LEVENBERG_CAP:
            raise NumericError("Gauss-Newton system remained singular after diagonal boosting")


def _inv_boosted(mats: np.ndarray):
    """Batched inverse with the same diagonal-boost escalation."""
    eye = np.eye(mats.shape[-1])
    lam = 0.0
    while True:
        try:
            inv = np.linalg.inv(mats + lam * eye)
            if np.isfinite(inv).all():
                return inv, lam > 0
        except np.linalg.LinAlgError:
            pass
        lam = LEVENBERG_START if lam == 0.0 else lam * 10.0
        if lam > LEVENBERG_CAP:
            raise NumericError("per-cell Gauss-Newton blocks remained singular after boosting")


def _design_stack(spec: SplineSpec, u: np.ndarray) -> np.ndarray:
    """Dense design matrices at clipped shifted times, shape ``u.shape + (p,)``.

    Evaluates all basis elements through one spline with identity
    coefficients; values match the sparse design matrix bit for bit.
    """
    p = spec.basis_dim
    return BSpline(spec.knots, np.eye(p), spec.degree, extrapolate=False)(u)


def _model_pieces(stacked: _Stacked, spec: SplineSpec, beta: np.ndarray, alpha: np.ndarray):
    """Mean curves and the ingredients of their derivatives at (beta, alpha)."""
    lo, hi = spec.domain
    raw = stacked.times - alpha[:, 2:3]
    inside = (raw >= lo) & (raw <= hi)
    u = np.clip(raw, lo, hi)
    Phi = _design_stack(spec, u)
    m = Phi @ beta
    scale = np.exp(alpha[:, 1])
    f = alpha[:, 0:1] + scale[:, None] * m
    return u, inside, Phi, m, scale, f


def _mean_curves(stacked: _Stacked, spec: SplineSpec, beta: np.ndarray, alpha: np.ndarray):
    """Mean curves only; pointwise spline evaluation, no design matrix build."""
    lo, hi = spec.domain
    u = np.clip(stacked.times - alpha[:, 2:3], lo, hi)
    m = BSpline(spec.knots, beta, spec.degree, extrapolate=False)(u)
    return alpha[:, 0:1] + np.exp(alpha[:, 1])[:, None] * m


def _pnls_objective(stacked, spec, beta, alpha, sigma_eps, D_act, active) -> float:
    f = _mean_curves(stacked, spec, beta, alpha)
    e = np.where(stacked.mask, stacked.values - f, 0.0)
    pen = np.sum(alpha[:, active] ** 2 / D_act) if active.size else 0.0
    return float(np.sum(e * e) / sigma_eps**2 + pen)


def _pnls(stacked, spec, config, beta, alpha, sigma_eps, D_act):
    """Gauss-Newton with step halving on the penalized least-squares objective."""
    active = config.active_indices
    a = active.size
    deriv = None
    regularized = False
    obj = _pnls_objective(stacked, spec, beta, alpha, sigma_eps, D_act, active)
    step_start = 1.0
    for _ in range(PNLS_MAX_ITER):
        u, inside, Phi, m, scale, f = _model_pieces(stacked, spec, beta, alpha)
        e = np.where(stacked.mask, stacked.values - f, 0.0) / sigma_eps
        A = (scale[:, None, None] * Phi) * stacked.mask[:, :, None] / sigma_eps
        AtA = np.einsum("cti,ctj->ij", A, A)
        Atr = np.einsum("cti,ct->i", A, e)
        if a:
            deriv = BSpline(spec.knots, beta, spec.degree, extrapolate=False).derivative()
            cols = []
            for idx in active:
                if idx == 0:
                    cols.append(np.ones_like(f))
                elif idx == 1:
                    cols.append(scale[:, None] * m)
                else:
                    cols.append(-scale[:, None] * deriv(u) * inside)
            B = np.stack(cols, axis=-1) * stacked.mask[:, :, None] / sigma_eps
            G = np.einsum("cti,ctj->cij", B, B) + np.diag(1.0 / D_act)[None]
            Ginv, reg1 = _inv_boosted(G)
            v = np.einsum("cti,ct->ci", B, e) - alpha[:, active] / D_act
            CAB = np.einsum("ctp,cta->cpa", A, B)
            smat = AtA - np.einsum("cpa,cab,cqb->pq", CAB, Ginv, CAB)
            rhs = Atr - np.einsum("cpa,cab,cb->p", CAB, Ginv, v)
            dbeta, reg2 = _solve_boosted(smat, rhs)
            dalpha = np.einsum("cab,cb->ca", Ginv, v - np.einsum("cpa,p->ca", CAB, dbeta))
            regularized = regularized or reg1 or reg2
        else:
            dbeta, reg2 = _solve_boosted(AtA, Atr)
            dalpha = None
            regularized = regularized or reg2

        # halve from just above the last accepted step size rather than from 1,
        # so a string of short steps does not re-pay the whole halving ladder
        step = step_start
        accepted = False
        while step >= MIN_STEP:
            beta_try = beta + step * dbeta
            alpha_try = alpha.copy()
            if a:
                alpha_try[:, active] = alpha[:, active] + step * dalpha
            obj_try = _pnls_objective(stacked, spec, beta_try, alpha_try, sigma_eps, D_act, active)
            if obj_try < obj:
                beta, alpha, accepted = beta_try, alpha_try, True
                improvement = obj - obj_try
                obj = obj_try
                break
            step *= 0.5
        if not accepted:
            if step_start < 1.0:
                step_start = 1.0  # retry once from a full step before giving up
                continue
            break
        step_start = min(1.0, step * 4.0)
        if improvement <= PNLS_REL_TOL * (1.0 + abs(obj)):
            break
    return beta, alpha, obj, regularized


PHASE_GRID_POINTS = 13
PHASE_GRID_SDS = 2.5


def _seed_phase_modes(stacked, spec, config, beta, alpha, sigma_eps, D_act):
    """Grid-search a starting phase mode per cell.

    The penalized objective is multimodal in the phase shift (a narrow shape
    feature can lock onto the wrong bump), so Gauss-Newton from zero often
    stalls with an inflated noise variance. For each cell, candidate shifts
    over +-2.5 prior sd are scored with the amplitude coordinate profiled out
    at its penalized optimum, and the best one seeds the mode.
    """
    active = list(config.active_indices)
    phase_pos = active.index(2)
    s_phase = D_act[phase_pos]
    if s_phase <= VAR_FLOOR:
        return alpha
    amp_on = 0 in active
    s_amp = D_act[active.index(0)] if amp_on else 0.0
    lo, hi = spec.domain
    shifts = np.linspace(-PHASE_GRID_SDS, PHASE_GRID_SDS, PHASE_GRID_POINTS) * np.sqrt(s_phase)
    u = np.clip(stacked.times[:, None, :] - shifts[None, :, None], lo, hi)  # (C, G, T)
    m = BSpline(spec.knots, beta, spec.degree, extrapolate=False)(u)
    mask = stacked.mask[:, None, :]
    resid = np.where(mask, stacked.values[:, None, :] - m, 0.0)
    n_obs = stacked.n_obs[:, None]
    if amp_on:
        a1 = (resid.sum(axis=2) / sigma_eps**2) / (n_obs / sigma_eps**2 + 1.0 / max(s_amp, VAR_FLOOR))
    else:
        a1 = np.zeros(resid.shape[:2])
    err = np.where(mask, resid - a1[:, :, None], 0.0)
    obj = (err * err).sum(axis=2) / sigma_eps**2 + shifts[None, :] ** 2 / s_phase
    if amp_on:
        obj = obj + a1 * a1 / max(s_amp, VAR_FLOOR)
    pick = np.argmin(obj, axis=1)
    out = alpha.copy()
    out[:, 2] = shifts[pick]
    if amp_on:
        out[:, 0] = a1[np.arange(a1.shape[0]), pick]
    return out


def _variance_pieces(stacked, spec, config, beta, alpha, sigma_eps):
    """Per-cell sufficient statistics for the linearized marginal likelihood."""
    active = config.active_indices
    u, inside, Phi, m, scale, f = _model_pieces(stacked, spec, beta, alpha)
    cols = []
    if active.size:
        deriv = BSpline(spec.knots, beta, spec.degree, extrapolate=False).derivative()
        for idx in active:
            if idx == 0:
                cols.append(np.ones_like(f))
            elif idx == 1:
                cols.append(scale[:, None] * m)
            else:
                cols.append(-scale[:, None] * deriv(u) * inside)
    Z = (
        np.stack(cols, axis=-1) * stacked.mask[:, :, None]
        if cols
        else np.zeros(f.shape + (0,))
    )
    e = np.where(stacked.mask, stacked.values - f, 0.0)
    w = e + np.einsum("cta,ca->ct", Z, alpha[:, active]) if active.size else e
    w = np.where(stacked.mask, w, 0.0)
    return {
        "wss": np.sum(w * w, axis=1),
        "Ztw": np.einsum("cta,ct->ca", Z, w),
        "ZtZ": np.einsum("cta,ctb->cab", Z, Z),
    }


def _marginal_loglik(pieces, n_obs, s2: float, D_act: np.ndarray) -> float:
    """Linearized marginal log-likelihood at noise variance s2, effect variances D_act."""
    N = float(n_obs.sum())
    quad = pieces["wss"] / s2
    logdet = n_obs * np.log(s2)
    a = D_act.size
    if a:
        sqrtD = np.sqrt(D_act)
        G = np.eye(a)[None] + (sqrtD[:, None] * sqrtD[None, :]) * pieces["ZtZ"] / s2
        sign, ld = np.linalg.slogdet(G)
        if np.any(sign <= 0):
            return -np.inf
        q = sqrtD * pieces["Ztw"]
        sol = np.linalg.solve(G, q[..., None])[..., 0]
        quad = quad - np.einsum("ca,ca->c", q, sol) / s2**2
        logdet = logdet + ld
    return float(-0.5 * (N * LOG_2PI + logdet.sum() + quad.sum()))


def _variance_update(stacked, spec, config, beta, alpha, s2, D_act):
    """Maximize the linearized marginal likelihood over the variances."""
    pieces = _variance_pieces(stacked, spec, config, beta, alpha, np.sqrt(s2))
    a = config.n_active
    if a == 0:
        s2_new = max(float(pieces["wss"].sum()) / stacked.N, VAR_FLOOR)
        return s2_new, D_act, _marginal_loglik(pieces, stacked.n_obs, s2_new, D_act)

    def neg(logx):
        return -_marginal_loglik(pieces, stacked.n_obs, np.exp(logx[0]), np.exp(logx[1:]))

    x0 = np.log(np.concatenate([[max(s2, VAR_FLOOR)], np.maximum(D_act, VAR_FLOOR)]))
    bounds = [(np.log(VAR_FLOOR), np.log(1e8))] * (1 + a)
    res = minimize(neg, x0, method="L-BFGS-B", bounds=bounds)
    x = res.x if np.isfinite(res.fun) else x0
    s2_new = float(np.exp(x[0]))
    D_new = np.exp(x[1:])
    return s2_new, D_new, _marginal_loglik(pieces, stacked.n_obs, s2_new, D_new)


def fit_block(data: BlockData, config: RandomEffectConfig, spec: SplineSpec,
              init: BlockParams, tol: float = 1e-6, max_iter: int = 50,
              modes0: np.ndarray | None = None):
    """Fit one block's parameters; returns (BlockParams, FitDiagnostics).

    Alternates PNLS and variance sub-steps until the relative change of the
    linearized marginal log-likelihood drops below `tol`. The returned
    ``re_modes`` are the per-cell shrinkage estimates of the random effects;
    `modes0` warm-starts them (one row per cell).
    """
    data.check_size(spec, config)
    init.validate(config, spec)
    stacked = _Stacked(data.cells)
    active = config.active_indices
    C = len(data.cells)

    beta = init.beta.copy()
    alpha = np.zeros((C, 3))
    if modes0 is not None and modes0.shape == (C, 3):
        alpha[:, active] = modes0[:, active]
    s2 = max(init.sigma_eps**2, VAR_FLOOR)
    D_act = np.maximum(init.sigma_alpha[active], VAR_FLOOR) if active.size else np.zeros(0)
    if config.phase_on:
        fresh = ~alpha.any(axis=1)
        if fresh.any():
            seeded = _seed_phase_modes(stacked, spec, config, beta, alpha, np.sqrt(s2), D_act)
            alpha[fresh] = seeded[fresh]

    ll_prev = -np.inf
    converged = False
    regularized = False
    iterations = 0
    ll = -np.inf
    for iterations in range(1, max_iter + 1):
        beta, alpha, _, reg = _pnls(stacked, spec, config, beta, alpha, np.sqrt(s2), D_act)
        regularized = regularized or reg
        s2, D_act, ll = _variance_update(stacked, spec, config, beta, alpha, s2, D_act)
        if np.isfinite(ll) and abs(ll - ll_prev) <= tol * (1.0 + abs(ll)):
            converged = True
            break
        ll_prev = ll

    sigma_alpha = np.zeros(3)
    if active.size:
        sigma_alpha[active] = D_act
    params = BlockParams(np.zeros(3), sigma_alpha, float(np.sqrt(s2)), beta)
    diags = FitDiagnostics(converged, iterations, float(ll), alpha.copy(), regularized)
    return params, diags


def init_block(data: BlockData, spec: SplineSpec, config: RandomEffectConfig) -> BlockParams:
    """Starting values: pooled spline fit, pooled residual sd, small effect variances."""
    t_all = np.concatenate([c.times[c.observed_mask] for c in data.cells])
    y_all = np.concatenate([c.values[c.observed_mask] for c in data.cells])
    Phi = _design_stack(spec, np.clip(t_all, *spec.domain))
    p = spec.basis_dim
    if t_all.size >= p:
        beta, *_ = np.linalg.lstsq(Phi, y_all, rcond=None)
    else:
        beta = np.linalg.solve(Phi.T @ Phi + 1e-6 * np.eye(p), Phi.T @ y_all)
    resid = y_all - Phi @ beta
    sigma_eps = max(float(np.std(resid, ddof=1)) if resid.size > 1 else 0.0, 1e-4)
    pooled_var = float(np.var(y_all, ddof=1)) if y_all.size > 1 else 0.0
    sigma_alpha = np.zeros(3)
    sigma_alpha[config.active_indices] = max(0.1 * pooled_var, VAR_FLOOR)
    return BlockParams(np.zeros(3), sigma_alpha, sigma_eps, beta)
