"""
Maximum-likelihood fitting of the random-coefficient model.

Observations are grouped by level of ``z``; within a level the model is a
bivariate normal whose mean and covariance follow from
:func:`covariability.linear_model.conditional_moments`, so the likelihood only
needs per-level counts, means and scatter matrices.

Fitting details
---------------
* The four mean parameters enter the likelihood as a generalized least
  squares problem once the per-level covariances are fixed, so they are
  profiled out exactly. The simplex only searches the covariance parameters
  (9 for the full model, 8 for the reduced one).
* The search runs in coordinates where ``z`` is centred and scaled and each
  quadratic coefficient is scaled by the level of the curve it belongs to.
  This is a fixed linear change of variables; results are reported in the
  natural parameters.
* Parameter vectors that make a per-level covariance non positive definite,
  or a natural variance negative, have objective ``-inf``.
* Starts: a method-of-moments seed (quadratic fits to the per-level sample
  moments) followed by seeded random perturbations of it. Start ``k`` always
  uses the stream ``(seed, k)``, so adding starts never changes earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np
from scipy import stats

from .dataset import Dataset
from .linear_model import PARAM_NAMES, LinearModelParams, NotPositiveDefiniteError, conditional_moments
from .streams import map_ordered, stream

__all__ = [
    "FitConfig",
    "FitResult",
    "FitError",
    "LrtResult",
    "BootstrapSummary",
    "log_likelihood",
    "fit",
    "fit_pair",
    "likelihood_ratio_test",
    "lrt_from_loglik",
    "bootstrap",
]

LOG_2PI = math.log(2.0 * math.pi)


class FitError(RuntimeError):
    """The optimizer could not produce a valid fit."""


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    ``tol`` is the spread of log-likelihood values across the simplex at
    which a run stops; ``dispersion`` scales the random start perturbations
    relative to the level of each moment curve.
    """

    n_starts: int = 32
    tol: float = 1e-9
    max_iter: int = 20000
    dispersion: float = 0.05
    reduced: bool = False
    seed: int = 0
    threads: int = 1
    restarts: int = 3

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.dispersion < 0:
            raise ValueError("dispersion must be >= 0")


# sufficient statistics


@dataclass(frozen=True)
class _Levels:
    z: np.ndarray  # distinct levels
    n: np.ndarray  # (weighted) counts
    mx: np.ndarray
    my: np.ndarray
    sxx: np.ndarray  # biased (1/n) scatter
    syy: np.ndarray
    sxy: np.ndarray

    @property
    def total(self) -> float:
        return float(self.n.sum())


def _level_stats(data: Dataset, weights: np.ndarray | None = None, index=None) -> _Levels:
    # index: precomputed np.unique(data.z, return_inverse=True), reused across resamples
    levels, inv = np.unique(data.z, return_inverse=True) if index is None else index
    w = np.ones(len(data)) if weights is None else np.asarray(weights, dtype=float)
    k = len(levels)
    n = np.bincount(inv, weights=w, minlength=k)
    keep = n > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        mx = np.bincount(inv, weights=w * data.x, minlength=k) / n
        my = np.bincount(inv, weights=w * data.y, minlength=k) / n
        dx = data.x - mx[inv]
        dy = data.y - my[inv]
        sxx = np.bincount(inv, weights=w * dx * dx, minlength=k) / n
        syy = np.bincount(inv, weights=w * dy * dy, minlength=k) / n
        sxy = np.bincount(inv, weights=w * dx * dy, minlength=k) / n
    return _Levels(levels[keep], n[keep], mx[keep], my[keep], sxx[keep], syy[keep], sxy[keep])


def _level_loglik(lv: _Levels, mean_x, mean_y, var_x, var_y, cov_xy) -> np.ndarray:
    det = var_x * var_y - cov_xy * cov_xy
    rx = lv.mx - mean_x
    ry = lv.my - mean_y
    qx = lv.sxx + rx * rx
    qy = lv.syy + ry * ry
    qxy = lv.sxy + rx * ry
    quad = (var_y * qx + var_x * qy - 2.0 * cov_xy * qxy) / det
    return -lv.n * (LOG_2PI + 0.5 * np.log(det) + 0.5 * quad)


def log_likelihood(data: Dataset, p: LinearModelParams, grouped: bool = True) -> float:
    """Gaussian log-likelihood of ``data`` under ``p``.

    ``grouped=False`` evaluates the bivariate normal density row by row; the
    grouped form uses per-level sufficient statistics and agrees with it to
    rounding error.

    Raises
    ------
    NotPositiveDefiniteError
        If the conditional covariance is not positive definite at an observed z.
    """
    if grouped:
        lv = _level_stats(data)
        m = conditional_moments(p, lv.z)
        return float(_level_loglik(lv, m.mean_x, m.mean_y, m.var_x, m.var_y, m.cov_xy).sum())
    m = conditional_moments(p, data.z)
    det = m.var_x * m.var_y - m.cov_xy**2
    rx = data.x - m.mean_x
    ry = data.y - m.mean_y
    quad = (m.var_y * rx * rx + m.var_x * ry * ry - 2.0 * m.cov_xy * rx * ry) / det
    return float(np.sum(-LOG_2PI - 0.5 * np.log(det) - 0.5 * quad))


# compiled objective and simplex


@nb.njit(cache=True, nogil=True)
def _spd_solve4(G, h):
    """Cholesky solve of the 4x4 GLS system; NaNs when G is numerically singular."""
    L = np.zeros((4, 4))
    out = np.empty(4)
    for j in range(4):
        d = G[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 1e-13 * G[j, j]:
            out[:] = np.nan
            return out
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, 4):
            s = G[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    for i in range(4):
        s = h[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(3, -1, -1):
        s = out[i]
        for k in range(i + 1, 4):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return out


@nb.njit(cache=True, nogil=True)
def _profile_negll(theta, t, n, mx, my, sxx, syy, sxy, t_zero, beta_out):
    """Negative log-likelihood maximized over the mean parameters.

    theta: quadratic coefficients (A, B, C) in t for var_x, var_y, cov_xy.
    Returns inf when infeasible. The GLS mean solution is written to beta_out
    as (a_x, slope_x, a_y, slope_y) in t units.
    """
    ax, bx, cx, ay, by, cy, ac, bc, cc = (
        theta[0], theta[1], theta[2], theta[3], theta[4], theta[5], theta[6], theta[7], theta[8],
    )
    if ax < 0.0 or ay < 0.0:
        return np.inf
    # natural error variances are the curves evaluated at z = 0
    if ax * t_zero * t_zero + bx * t_zero + cx < 0.0:
        return np.inf
    if ay * t_zero * t_zero + by * t_zero + cy < 0.0:
        return np.inf
    k = t.shape[0]
    vx = np.empty(k)
    vy = np.empty(k)
    vc = np.empty(k)
    det = np.empty(k)
    G = np.zeros((4, 4))
    h = np.zeros(4)
    for i in range(k):
        ti = t[i]
        vx[i] = (ax * ti + bx) * ti + cx
        vy[i] = (ay * ti + by) * ti + cy
        vc[i] = (ac * ti + bc) * ti + cc
        det[i] = vx[i] * vy[i] - vc[i] * vc[i]
        if vx[i] <= 0.0 or vy[i] <= 0.0 or det[i] <= 0.0:
            return np.inf
        # precision matrix entries, weighted by count
        pxx = n[i] * vy[i] / det[i]
        pyy = n[i] * vx[i] / det[i]
        pxy = -n[i] * vc[i] / det[i]
        # M = [[1, t, 0, 0], [0, 0, 1, t]]; G += M' P M, h += M' P m
        rows_x = (1.0, ti)
        for a in range(2):
            for b in range(2):
                G[a, b] += rows_x[a] * rows_x[b] * pxx
                G[2 + a, 2 + b] += rows_x[a] * rows_x[b] * pyy
                G[a, 2 + b] += rows_x[a] * rows_x[b] * pxy
                G[2 + a, b] += rows_x[a] * rows_x[b] * pxy
            h[a] += rows_x[a] * (pxx * mx[i] + pxy * my[i])
            h[2 + a] += rows_x[a] * (pxy * mx[i] + pyy * my[i])
    beta = _spd_solve4(G, h)
    if beta[0] != beta[0]:
        return np.inf
    for j in range(4):
        beta_out[j] = beta[j]
    total = 0.0
    for i in range(k):
        rx = mx[i] - (beta[0] + beta[1] * t[i])
        ry = my[i] - (beta[2] + beta[3] * t[i])
        qx = sxx[i] + rx * rx
        qy = syy[i] + ry * ry
        qxy = sxy[i] + rx * ry
        quad = (vy[i] * qx + vx[i] * qy - 2.0 * vc[i] * qxy) / det[i]
        total += n[i] * (1.8378770664093453 + 0.5 * np.log(det[i]) + 0.5 * quad)
    return total


@nb.njit(cache=True, nogil=True)
def _objective(phi, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta):
    theta = base.copy()
    for j in range(free.shape[0]):
        theta[free[j]] = phi[j] * scale[free[j]]
    return _profile_negll(theta, t, n, mx, my, sxx, syy, sxy, t_zero, beta)


@nb.njit(cache=True, nogil=True)
def _nelder_mead(x0, step, ftol, xtol, max_iter, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero):
    """Adaptive Nelder-Mead (dimension-dependent coefficients) minimizing _objective.

    Returns (best point, best value, iterations used, converged flag).
    """
    d = x0.shape[0]
    beta = np.empty(4)
    alpha_r = 1.0
    gamma_e = 1.0 + 2.0 / d
    rho_c = 0.75 - 1.0 / (2.0 * d)
    sigma_s = 1.0 - 1.0 / d

    sim = np.empty((d + 1, d))
    fs = np.empty(d + 1)
    sim[0] = x0
    fs[0] = _objective(x0, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta)
    for i in range(d):
        v = x0.copy()
        s = step
        fv = np.inf
        # prefer a feasible vertex: try +step, -step, then shrink
        for attempt in range(12):
            v[i] = x0[i] + s
            fv = _objective(v, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta)
            if fv < np.inf:
                break
            v[i] = x0[i] - s
            fv = _objective(v, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta)
            if fv < np.inf:
                break
            s *= 0.5
        sim[i + 1] = v
        fs[i + 1] = fv

    it = 0
    converged = False
    xr = np.empty(d)
    xe = np.empty(d)
    xc = np.empty(d)
    cen = np.empty(d)
    while it < max_iter:
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        if fs[0] < np.inf:
            spread = fs[d] - fs[0]
            size = 0.0
            for i in range(1, d + 1):
                for j in range(d):
                    a = abs(sim[i, j] - sim[0, j])
                    if a > size:
                        size = a
            if spread <= ftol and size <= xtol:
                converged = True
                break
        it += 1
        for j in range(d):
            acc = 0.0
            for i in range(d):
                acc += sim[i, j]
            cen[j] = acc / d
        for j in range(d):
            xr[j] = cen[j] + alpha_r * (cen[j] - sim[d, j])
        fr = _objective(xr, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta)
        if fr < fs[0]:
            for j in range(d):
                xe[j] = cen[j] + gamma_e * (xr[j] - cen[j])
            fe = _objective(xe, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta)
            if fe < fr:
                sim[d] = xe
                fs[d] = fe
            else:
                sim[d] = xr
                fs[d] = fr
            continue
        if fr < fs[d - 1]:
            sim[d] = xr
            fs[d] = fr
            continue
        if fr < fs[d]:
            for j in range(d):
                xc[j] = cen[j] + rho_c * (xr[j] - cen[j])
            fc = _objective(xc, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta)
            if fc <= fr:
                sim[d] = xc
                fs[d] = fc
                continue
        else:
            for j in range(d):
                xc[j] = cen[j] - rho_c * (cen[j] - sim[d, j])
            fc = _objective(xc, free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta)
            if fc < fs[d]:
                sim[d] = xc
                fs[d] = fc
                continue
        for i in range(1, d + 1):
            for j in range(d):
                sim[i, j] = sim[0, j] + sigma_s * (sim[i, j] - sim[0, j])
            fs[i] = _objective(sim[i], free, scale, base, t, n, mx, my, sxx, syy, sxy, t_zero, beta)
    best = int(np.argmin(fs))
    return sim[best].copy(), fs[best], it, converged


# coordinate handling


@dataclass(frozen=True)
class _Problem:
    lv: _Levels
    z0: float
    h: float
    t: np.ndarray
    t_zero: float
    reduced: bool

    @property
    def free(self) -> np.ndarray:
        return np.array([0, 1, 2, 3, 4, 5, 7, 8] if self.reduced else list(range(9)), dtype=np.int64)

    def negll(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        beta = np.empty(4)
        lv = self.lv
        f = _profile_negll(np.asarray(theta, dtype=float), self.t, lv.n, lv.mx, lv.my, lv.sxx, lv.syy, lv.sxy, self.t_zero, beta)
        return f, beta

    def to_natural(self, theta: np.ndarray, beta: np.ndarray) -> LinearModelParams:
        z0, h = self.z0, self.h

        def curve(a, b, c):
            # a t^2 + b t + c with t = (z - z0)/h  ->  q z^2 + 2 l z + k
            q = a / h**2
            lin = b / h - 2.0 * a * z0 / h**2
            k = a * z0**2 / h**2 - b * z0 / h + c
            return q, lin / 2.0, k

        vbx, cbxex, vex = curve(*theta[0:3])
        vby, cbyey, vey = curve(*theta[3:6])
        cbxby, cbxey, cexey = curve(*theta[6:9])
        b_x = beta[1] / h
        b_y = beta[3] / h
        d = dict(
            mu_x=beta[0] - b_x * z0,
            mu_y=beta[2] - b_y * z0,
            b_x=b_x,
            b_y=b_y,
            var_bx=max(vbx, 0.0),
            var_by=max(vby, 0.0),
            var_ex=max(vex, 0.0),
            var_ey=max(vey, 0.0),
            cov_bxby=0.0 if self.reduced else cbxby,
            cov_exey=cexey,
            cov_bxex=cbxex,
            cov_byey=cbyey,
            cov_bxey=cbxey,
        )
        return LinearModelParams.from_dict(d, reduced=self.reduced)

    def from_natural(self, p: LinearModelParams) -> np.ndarray:
        z0, h = self.z0, self.h
        c = p.cov

        def curve(q, half_lin, k):
            lin = 2.0 * half_lin
            a = q * h**2
            b = (lin + 2.0 * q * z0) * h
            cc = q * z0**2 + lin * z0 + k
            return a, b, cc

        out = np.array(
            curve(c.var_bx, c.cov_bxex, c.var_ex)
            + curve(c.var_by, c.cov_byey, c.var_ey)
            + curve(0.0 if self.reduced else c.cov_bxby, c.cov_bxey, c.cov_exey)
        )
        return out


def _problem(lv: _Levels, reduced: bool) -> _Problem:
    w = lv.n / lv.n.sum()
    z0 = float(np.sum(w * lv.z))
    h = float(np.sqrt(np.sum(w * (lv.z - z0) ** 2)))
    if not h > 0:
        raise FitError("need at least two distinct z levels")
    t = (lv.z - z0) / h
    return _Problem(lv, z0, h, t, -z0 / h, reduced)


def _moment_seed(pr: _Problem) -> tuple[np.ndarray, np.ndarray]:
    """Method-of-moments start in t coordinates and the per-curve scale vector."""
    lv = pr.lv
    n = lv.n
    # unbiased per-level moments where possible
    corr = np.where(n > 1, n / np.maximum(n - 1, 1), 1.0)
    vx, vy, vc = lv.sxx * corr, lv.syy * corr, lv.sxy * corr
    sw = np.sqrt(n)
    quad = np.column_stack([pr.t**2, pr.t, np.ones_like(pr.t)])

    def wls(v, cols):
        X = quad[:, cols] * sw[:, None]
        coef = np.linalg.lstsq(X, v * sw, rcond=None)[0]
        out = np.zeros(3)
        out[cols] = coef
        return out

    all3 = [0, 1, 2]
    theta = np.concatenate(
        [wls(vx, all3), wls(vy, all3), wls(vc, [1, 2] if pr.reduced else all3)]
    )
    pooled_x = float(np.sum(n * lv.sxx) / n.sum())
    pooled_y = float(np.sum(n * lv.syy) / n.sum())
    pooled_c = float(np.sum(n * lv.sxy) / n.sum())
    if not (pooled_x > 0 and pooled_y > 0 and pooled_x * pooled_y - pooled_c**2 > 0):
        raise FitError("degenerate data: within-level covariance is singular")
    flat = np.array([0, 0, pooled_x, 0, 0, pooled_y, 0, 0, pooled_c], dtype=float)
    theta = _shrink_to_feasible(pr, theta, flat)
    mx_, my_ = pooled_x, pooled_y
    mc = math.sqrt(mx_ * my_)
    scale = np.array([mx_, mx_, mx_, my_, my_, my_, mc, mc, mc])
    return theta, scale


def _shrink_to_feasible(pr: _Problem, theta: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    if pr.reduced:
        theta = theta.copy()
        theta[6] = 0.0
    lam = 1.0
    for _ in range(40):
        cand = anchor + lam * (theta - anchor)
        if np.isfinite(pr.negll(cand)[0]):
            return cand
        lam *= 0.5
    return anchor.copy()


def _run_start(pr: _Problem, theta0: np.ndarray, scale: np.ndarray, cfg: FitConfig):
    free = pr.free
    base = theta0.copy()
    if pr.reduced:
        base[6] = 0.0
    x = base[free] / scale[free]
    lv = pr.lv
    f_best = np.inf
    converged = False
    iters = 0
    step = 0.05
    for _ in range(max(1, cfg.restarts + 1)):
        x_new, f_new, it, conv = _nelder_mead(
            x, step, cfg.tol, 1e-10, cfg.max_iter, free, scale, base, pr.t,
            lv.n, lv.mx, lv.my, lv.sxx, lv.syy, lv.sxy, pr.t_zero,
        )
        iters += it
        improved = f_best - f_new
        if f_new <= f_best:
            x, f_best = x_new, f_new
        converged = conv
        if not np.isfinite(f_best):
            break
        if improved <= cfg.tol and conv:
            break
        step *= 0.5
    theta = base.copy()
    theta[free] = x * scale[free]
    return theta, f_best, iters, converged


@dataclass(frozen=True)
class FitResult:
    params: LinearModelParams
    log_likelihood: float
    start_log_likelihoods: tuple[float, ...]
    converged: bool
    n_obs: int
    data_hash: str
    best_start: int = 0
    iterations: int = 0

    @property
    def reduced(self) -> bool:
        return self.params.reduced

    @property
    def n_params(self) -> int:
        return 12 if self.reduced else 13

    def to_keyvalue(self, prefix: str = "") -> str:
        lines = [
            f"{prefix}model={'reduced' if self.reduced else 'full'}",
            f"{prefix}log_likelihood={self.log_likelihood!r}",
            f"{prefix}converged={str(self.converged).lower()}",
            f"{prefix}n_obs={self.n_obs}",
            f"{prefix}n_params={self.n_params}",
            f"{prefix}n_starts={len(self.start_log_likelihoods)}",
            f"{prefix}best_start={self.best_start}",
            f"{prefix}data_hash={self.data_hash}",
        ]
        lines += [f"{prefix}{k}={v!r}" for k, v in self.params.as_dict().items()]
        return "\n".join(lines) + "\n"

    def report(self) -> str:
        head = f"{'reduced' if self.reduced else 'full'} model  n={self.n_obs}  logL={self.log_likelihood:.4f}  " + (
            "converged" if self.converged else "NOT converged"
        )
        rows = [head, "-" * len(head)]
        for k, v in self.params.as_dict().items():
            if self.reduced and k == "cov_bxby":
                rows.append(f"  {k:<9s} {'n.a.':>14s}")
            else:
                rows.append(f"  {k:<9s} {v:14.6g}")
        return "\n".join(rows) + "\n"


def _check_data(data: Dataset, lv: _Levels) -> None:
    if len(lv.z) < 2:
        raise FitError("need at least two distinct z levels")
    if len(data) < 20:
        raise FitError(f"need at least 20 observations, got {len(data)}")


def _fit_levels(
    lv: _Levels, cfg: FitConfig, warm: list[LinearModelParams] | None = None
) -> tuple[_Problem, np.ndarray, float, list[float], bool, int, int]:
    pr = _problem(lv, cfg.reduced)
    seed_theta, scale = _moment_seed(pr)
    starts = [seed_theta]
    for k in range(1, cfg.n_starts):
        rng = stream(cfg.seed, k)
        pert = seed_theta + cfg.dispersion * scale * rng.standard_normal(9)
        starts.append(_shrink_to_feasible(pr, pert, seed_theta))
    for w in warm or ():
        th = pr.from_natural(w)
        if np.isfinite(pr.negll(th)[0]):
            starts.append(th)

    results = map_ordered(lambda th: _run_start(pr, th, scale, cfg), [(s,) for s in starts], cfg.threads)
    values = [-r[1] for r in results]
    if not any(np.isfinite(v) for v in values):
        raise FitError("every start failed: no positive definite parameter vector found")
    # ties go to the lowest start index
    best = max(range(len(values)), key=lambda i: (values[i], -i))
    theta, f, iters, conv = results[best]
    return pr, theta, -f, values, conv, best, sum(r[2] for r in results)


def fit(data: Dataset, cfg: FitConfig | None = None, warm_start: list[LinearModelParams] | None = None) -> FitResult:
    """Maximum-likelihood fit of the full (or, with ``cfg.reduced``, reduced) model.

    ``warm_start`` parameter sets are added as extra starts after the
    configured ones; fitting the full model with the reduced optimum as a warm
    start guarantees the nesting inequality.

    Raises
    ------
    FitError
        On too little data, degenerate data, or if no start is feasible.
    """
    cfg = cfg or FitConfig()
    lv = _level_stats(data)
    _check_data(data, lv)
    pr, theta, _, values, conv, best, iters = _fit_levels(lv, cfg, warm_start)
    _, beta = pr.negll(theta)
    params = pr.to_natural(theta, beta)
    try:
        ll = log_likelihood(data, params)
    except NotPositiveDefiniteError as exc:  # pragma: no cover - coordinate round-off at the boundary
        raise FitError(f"fitted parameters are on the positive-definiteness boundary: {exc}") from exc
    return FitResult(params, ll, tuple(values), bool(conv), len(data), data.digest(), best, iters)


def fit_pair(data: Dataset, cfg: FitConfig | None = None) -> tuple[FitResult, FitResult]:
    """Fit reduced then full model; the full fit is warm-started at the reduced optimum."""
    cfg = cfg or FitConfig()
    red = fit(data, replace(cfg, reduced=True))
    full = fit(data, replace(cfg, reduced=False), warm_start=[red.params])
    return full, red


# likelihood-ratio test


@dataclass(frozen=True)
class LrtResult:
    D: float
    df: int
    p_value: float
    negative_slack: bool = False

    def to_keyvalue(self) -> str:
        return (
            f"lrt_D={self.D!r}\nlrt_df={self.df}\nlrt_p_value={self.p_value!r}\n"
            f"lrt_negative_slack={str(self.negative_slack).lower()}\n"
        )

    def report(self) -> str:
        return f"likelihood-ratio test: D = {self.D:.2f}, df = {self.df}, p = {self.p_value:.3g}\n"


NEGATIVE_SLACK = 1e-6


def lrt_from_loglik(ll_full: float, ll_reduced: float, df: int = 1) -> LrtResult:
    """D = 2 (ll_full - ll_reduced) with an upper-tail chi-square p-value.

    Raises
    ------
    ValueError
        If the reduced model fits better by more than optimizer noise.
    """
    D = 2.0 * (float(ll_full) - float(ll_reduced))
    if D < -NEGATIVE_SLACK:
        raise ValueError(f"D = {D:.6g} < 0: the reduced model fits better, so the models are not nested fits")
    slack = D < 0
    p = float(stats.chi2.sf(max(D, 0.0), df))
    return LrtResult(D, df, min(max(p, 0.0), 1.0), slack)


def likelihood_ratio_test(full: FitResult, reduced: FitResult) -> LrtResult:
    if full.reduced or not reduced.reduced:
        raise ValueError("expected a full-model fit and a reduced-model fit, in that order")
    if full.n_obs != reduced.n_obs or full.data_hash != reduced.data_hash:
        raise ValueError("fits were made on different datasets")
    return lrt_from_loglik(full.log_likelihood, reduced.log_likelihood, full.n_params - reduced.n_params)


# bootstrap


@dataclass(frozen=True)
class BootstrapSummary:
    point: LinearModelParams
    intervals: dict[str, tuple[float, float]]
    estimates: np.ndarray  # (n_ok, 13) in PARAM_NAMES order
    n_resamples: int
    n_failed: int
    seed: int
    level: float = 0.95
    failures: tuple[str, ...] = field(default=())

    def standard_errors(self) -> dict[str, float]:
        sd = self.estimates.std(axis=0, ddof=1)
        return dict(zip(PARAM_NAMES, sd.tolist()))

    def to_keyvalue(self) -> str:
        lines = [f"boot_n_resamples={self.n_resamples}", f"boot_n_failed={self.n_failed}", f"boot_seed={self.seed}"]
        for k, (lo, hi) in self.intervals.items():
            lines.append(f"boot_{k}_lower={lo!r}")
            lines.append(f"boot_{k}_upper={hi!r}")
        return "\n".join(lines) + "\n"


MAX_FAILURE_FRACTION = 0.2


def bootstrap(
    data: Dataset,
    cfg: FitConfig | None = None,
    n_resamples: int = 160,
    seed: int = 0,
    level: float = 0.95,
    point: FitResult | None = None,
    threads: int | None = None,
) -> BootstrapSummary:
    """Percentile bootstrap over rows (one row per unit).

    Resample ``r`` draws from the stream ``(seed, r)``; each refit starts from
    the full-data estimate plus ``cfg.n_starts`` starts of its own.

    Raises
    ------
    FitError
        If the full-data fit fails or more than 20% of the resample fits fail.
    """
    if n_resamples < 2:
        raise ValueError("n_resamples must be >= 2")
    cfg = cfg or FitConfig()
    if point is None:
        point = fit(data, cfg)
    n = len(data)
    rows = np.empty((n_resamples, len(PARAM_NAMES)))
    ok = np.zeros(n_resamples, dtype=bool)
    errors: list[str] = []
    index = np.unique(data.z, return_inverse=True)

    def one(r: int):
        counts = np.bincount(stream(seed, r).integers(0, n, size=n), minlength=n).astype(float)
        lv = _level_stats(data, counts, index)
        if len(lv.z) < 2:
            raise FitError("resample has a single z level")
        pr, theta, _, _, _, _, _ = _fit_levels(lv, cfg, [point.params])
        _, beta = pr.negll(theta)
        return pr.to_natural(theta, beta).as_vector()

    def guarded(r: int):
        try:
            return one(r), None
        except (FitError, NotPositiveDefiniteError, np.linalg.LinAlgError, ValueError) as exc:
            return None, f"resample {r}: {exc}"

    out = map_ordered(guarded, [(r,) for r in range(n_resamples)], threads or cfg.threads)
    for r, (vec, err) in enumerate(out):
        if vec is None:
            errors.append(err)
        else:
            rows[r] = vec
            ok[r] = True
    n_failed = int((~ok).sum())
    if n_failed > MAX_FAILURE_FRACTION * n_resamples:
        raise FitError(f"{n_failed} of {n_resamples} bootstrap fits failed; first: {errors[0]}")
    est = rows[ok]
    q = 100.0 * (1.0 - level) / 2.0
    lo = np.percentile(est, q, axis=0)
    hi = np.percentile(est, 100.0 - q, axis=0)
    intervals = {k: (float(a), float(b)) for k, a, b in zip(PARAM_NAMES, lo, hi)}
    return BootstrapSummary(point.params, intervals, est, n_resamples, n_failed, seed, level, tuple(errors))
