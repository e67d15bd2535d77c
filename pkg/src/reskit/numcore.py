"""
Shared numerical machinery: a damped Gauss-Newton (Levenberg-Marquardt)
least-squares solver with residual-based covariance, regression through the
origin, edge-renormalized Gaussian smoothing, weighted averaging and
Student-t helpers.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import kernels


class FitInputError(ValueError):
    """Raised when a fit problem is rejected before any iteration."""


@dataclass
class FitProblem:
    residual_evaluator: Callable[[np.ndarray], np.ndarray]
    param_count: int
    data_count: int
    lower_bounds: Optional[Sequence[float]] = None
    upper_bounds: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.data_count < self.param_count:
            raise FitInputError(
                f"underdetermined problem: {self.data_count} data < {self.param_count} parameters"
            )
        lo = self.lower
        hi = self.upper
        if np.any(lo > hi):
            raise FitInputError("lower bound exceeds upper bound")

    @property
    def lower(self):
        if self.lower_bounds is None:
            return np.full(self.param_count, -np.inf)
        return np.asarray(self.lower_bounds, dtype=float)

    @property
    def upper(self):
        if self.upper_bounds is None:
            return np.full(self.param_count, np.inf)
        return np.asarray(self.upper_bounds, dtype=float)


@dataclass
class FitResult:
    params: np.ndarray
    standard_errors: np.ndarray
    dof: int
    residual_norm: float
    covariance: np.ndarray
    converged: bool
    iterations: int
    message: str = ""
    jacobian: Optional[np.ndarray] = field(default=None, repr=False)
    residuals: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def covariance_available(self):
        return bool(np.all(np.isfinite(self.covariance)))

    def ci_halfwidth(self, level=0.95):
        """Half-width of the two-sided t interval for each parameter."""
        return student_t_quantile(self.dof, 0.5 + level / 2.0) * self.standard_errors


def _fd_jacobian(fun, p, r0, lo, hi, origin, scale):
    # central differences; step in offset/scale coordinates when scale is given
    n = p.shape[0]
    jac = np.empty((r0.shape[0], n))
    for j in range(n):
        if scale is None:
            h = max(1e-8, 1e-6 * abs(p[j]))
        else:
            u = (p[j] - origin[j]) / scale[j]
            h = max(1e-8, 1e-6 * abs(u)) * scale[j]
        pp = p.copy()
        pm = p.copy()
        pp[j] = p[j] + h
        pm[j] = p[j] - h
        if pp[j] > hi[j]:
            pp[j] = p[j]
        if pm[j] < lo[j]:
            pm[j] = p[j]
        rp = fun(pp) if pp[j] != p[j] else r0
        rm = fun(pm) if pm[j] != p[j] else r0
        jac[:, j] = (rp - rm) / (pp[j] - pm[j])
    return jac


def _scaled_gradient(jac, r, p, lo, hi):
    # largest cosine between the residual and a Jacobian column, ignoring
    # columns pinned at an active bound
    g = jac.T @ r
    rn = np.linalg.norm(r)
    cn = np.linalg.norm(jac, axis=0)
    active = ((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0))
    g = np.where(active, 0.0, g)
    denom = cn * rn
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, np.abs(g) / denom, 0.0)
    return float(np.max(cos)) if cos.size else 0.0


def lm_fit(problem: FitProblem, init, max_iter=200, tolerance=1e-10, x_scale=None,
           jacobian=None):
    """
    Minimize the sum of squared residuals of ``problem`` from ``init``.

    Parameters
    ----------
    problem : FitProblem
    init : array_like
        Starting parameters, inside the bounds.
    max_iter : int
        Maximum number of accepted-or-rejected damping iterations.
    tolerance : float
        Stop when the relative decrease of the residual norm, the scaled
        gradient or the relative step falls below this value.
    x_scale : array_like, optional
        Characteristic size of each parameter. Finite-difference steps are
        then taken in the coordinates ``(p - init) / x_scale``, which keeps
        them sensible for parameters such as a 5 GHz resonance frequency
        that must be resolved to a fraction of a linewidth.
    jacobian : callable, optional
        Analytic Jacobian ``jacobian(p) -> (m, n)``; finite differences otherwise.

    Returns
    -------
    FitResult
        ``covariance = inv(J^T J) * |r|^2 / dof``. When the normal matrix is
        singular the covariance is NaN and ``converged`` is False.
    """
    p = np.array(init, dtype=float)
    n = problem.param_count
    if p.shape != (n,):
        raise FitInputError(f"expected {n} initial parameters, got {p.shape}")
    lo = problem.lower
    hi = problem.upper
    if np.any(p < lo) or np.any(p > hi):
        raise FitInputError("initial parameters outside bounds")
    fun = problem.residual_evaluator
    r = np.asarray(fun(p), dtype=float)
    if not np.all(np.isfinite(r)):
        raise FitInputError("non-finite residuals at the initial parameters")
    if r.shape[0] != problem.data_count:
        raise FitInputError(f"residual length {r.shape[0]} != data_count {problem.data_count}")
    origin = p.copy()
    scale = None if x_scale is None else np.where(np.asarray(x_scale, float) > 0,
                                                   np.asarray(x_scale, float), 1.0)

    def jac_at(pv, rv):
        if jacobian is not None:
            return np.asarray(jacobian(pv), dtype=float)
        return _fd_jacobian(fun, pv, rv, lo, hi, origin, scale)

    cost = float(r @ r)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    J = jac_at(p, r)
    it = 0
    while it < max_iter:
        it += 1
        if cost == 0.0:
            converged, message = True, "exact fit"
            break
        if _scaled_gradient(J, r, p, lo, hi) < tolerance:
            converged, message = True, "gradient tolerance"
            break
        A = J.T @ J
        g = J.T @ r
        # parameters pinned at a bound with the descent direction pointing
        # outward are frozen for this step (projected active set)
        free = ~(((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0)))
        if not np.any(free):
            converged, message = True, "all parameters at active bounds"
            break
        Af = A[np.ix_(free, free)]
        gf = g[free]
        d = np.diag(Af).copy()
        d[d <= 0] = max(float(np.max(d)) * 1e-12, 1e-300) if np.any(d > 0) else 1.0
        accepted = False
        while lam < 1e16:
            try:
                step_f = -np.linalg.solve(Af + lam * np.diag(d), gf)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            step = np.zeros(n)
            step[free] = step_f
            p_new = np.clip(p + step, lo, hi)
            r_new = np.asarray(fun(p_new), dtype=float)
            if np.all(np.isfinite(r_new)):
                cost_new = float(r_new @ r_new)
                if cost_new < cost:
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            # damping exhausted: no representable step lowers the cost
            converged, message = True, "no further decrease possible"
            break
        rel_drop = (cost - cost_new) / cost if cost > 0 else 0.0
        rel_step = np.linalg.norm(p_new - p) / (np.linalg.norm(p) + 1e-300)
        p, r, cost = p_new, r_new, cost_new
        lam_used = lam
        lam = max(lam / 10.0, 1e-12)
        J = jac_at(p, r)
        # residual-norm change |r_old| - |r_new| relative to |r_old|; only
        # trusted for near Gauss-Newton steps
        small = 1.0 - np.sqrt(max(1.0 - rel_drop, 0.0)) < tolerance or rel_step < tolerance * 1e-2
        if small and lam_used <= 1.0:
            converged, message = True, "residual tolerance"
            break
    dof = problem.data_count - n
    cov, ok = covariance_from_jacobian(J, cost, dof)
    if not ok:
        converged, message = False, "singular normal equations"
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None)) if ok else np.full(n, np.nan)
    return FitResult(
        params=p,
        standard_errors=se,
        dof=dof,
        residual_norm=float(np.sqrt(cost)),
        covariance=cov,
        converged=bool(converged),
        iterations=it,
        message=message,
        jacobian=J,
        residuals=r,
    )


def covariance_from_jacobian(J, cost, dof):
    """
    ``inv(J^T J) * cost / dof`` and a flag that is False when the normal
    matrix is singular (the covariance is then NaN). Conditioning is judged
    on the column-equilibrated matrix so that parameters of very different
    magnitude do not look singular.
    """
    n = J.shape[1]
    cov = np.full((n, n), np.nan)
    cn = np.linalg.norm(J, axis=0)
    if not (np.all(cn > 0) and np.all(np.isfinite(cn))):
        return cov, False
    Js = J / cn
    As = Js.T @ Js
    try:
        if np.linalg.cond(As) >= 1e15:
            return cov, False
        s2 = cost / dof if dof > 0 else np.nan
        cov = np.linalg.inv(As) / np.outer(cn, cn) * s2
    except np.linalg.LinAlgError:
        return cov, False
    return 0.5 * (cov + cov.T), True


def linreg_origin(xs, ys):
    """Least-squares slope through the origin and its standard error (dof = n - 1)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size == 0:
        raise ValueError("xs and ys must be non-empty and of equal length")
    sxx = float(x @ x)
    if sxx == 0.0:
        raise ValueError("all xs are zero; slope through the origin is undefined")
    slope = float(x @ y) / sxx
    n = x.size
    if n > 1:
        res = y - slope * x
        slope_se = float(np.sqrt((res @ res) / (n - 1) / sxx))
    else:
        slope_se = float("nan")
    return {"slope": slope, "slope_se": slope_se}


def weighted_mean(values, weights):
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.shape != w.shape:
        raise ValueError("values and weights differ in length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    tot = w.sum()
    if not tot > 0:
        raise ValueError("total weight must be positive")
    return float((w @ v) / tot)


def gaussian_smooth(series, sigma_points):
    """
    Convolve with a unit-sum Gaussian truncated at 4 sigma. Near the edges the
    kernel is renormalized over the samples that exist.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    if sigma_points < 0:
        raise ValueError("sigma_points must be >= 0")
    return kernels.gaussian_filter(x, float(sigma_points))


def student_t_draw(dof, seed, size=None):
    if dof < 1:
        raise ValueError("dof must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_t(dof, size=size)


def student_t_quantile(dof, p):
    if np.any(np.asarray(dof) < 1):
        raise ValueError("dof must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return stats.t.ppf(p, dof)
