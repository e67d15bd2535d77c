"""
Staged resonance fit: cable delay, algebraic circle fit, phase unwrapping,
phase fit of the nonlinear model, phi correction and the final direct
complex fit.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from . import kernels
from .numcore import FitInputError, FitProblem, covariance_from_jacobian, lm_fit, student_t_quantile
from .sigmodel import DOWN, UP, FrequencySweep

log = logging.getLogger(__name__)

PARAM_NAMES = ("a", "alpha", "phi", "q_l", "q_c", "f_r0", "beta")


class PipelineError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class DegenerateGeometryError(PipelineError):
    def __init__(self, message):
        super().__init__("circle_fit", message)


def _wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# stage 1: cable delay
# ---------------------------------------------------------------------------

def estimate_resonance_window(freqs, z, k=3.0):
    """
    Frequency interval of +-k half-power widths around the resonance, located
    from the speed |dz/df| of the trace, which peaks with a Lorentzian profile
    of one loaded linewidth regardless of the delay or the coupling phase.
    """
    f = np.asarray(freqs, float)
    z = np.asarray(z, complex)
    if f.size < 5:
        return (f[0], f[-1])
    speed = np.abs(np.diff(z)) / np.diff(f)
    fm = 0.5 * (f[1:] + f[:-1])
    speed = kernels.gaussian_filter(speed, 2.0)
    speed = speed - np.median(speed)
    i = int(np.argmax(speed))
    half = speed[i] / 2.0
    lo = i
    while lo > 0 and speed[lo] > half:
        lo -= 1
    hi = i
    while hi < fm.size - 1 and speed[hi] > half:
        hi += 1
    width = max(fm[hi] - fm[lo], 2 * np.median(np.diff(f)))
    return (fm[i] - k * width, fm[i] + k * width)


def fit_cable_delay(sweep: FrequencySweep, exclude_window=None, min_points=10):
    """
    Linear fit of the unwrapped raw phase over background points.

    Returns ``{"tau": s, "intercept": rad, "n_background": int}``; the
    intercept refers to the phase at 0 Hz.
    """
    f = sweep.freqs_hz
    phase = np.unwrap(np.angle(sweep.s21))
    if exclude_window is None:
        mask = np.ones(f.size, bool)
    else:
        lo, hi = exclude_window
        mask = (f < lo) | (f > hi)
    if mask.sum() < min_points:
        raise PipelineError("cable_delay", f"only {int(mask.sum())} background points outside the resonance")
    fc = np.mean(f[mask])
    slope, icpt = np.polyfit(f[mask] - fc, phase[mask], 1)
    return {"tau": float(-slope / (2 * np.pi)), "intercept": float(icpt - slope * fc),
            "n_background": int(mask.sum())}


def refine_delay(freqs, s21, tau0, half_range=None):
    """
    Adjust a delay estimate so the de-rotated trace is as close to a circle
    as possible. The resonance tails bend the raw phase even far from
    resonance, which biases a straight-line background fit; the circle
    residual has no such bias. Returns the refined delay in seconds.
    """
    f = np.asarray(freqs, float)
    s = np.asarray(s21, complex)
    span = f[-1] - f[0]
    if half_range is None:
        half_range = 0.25 / span + 0.5 * abs(tau0)
    # normalize by a fixed data scale; dividing by the fitted radius would
    # reward nearly straight arcs fitted by huge circles
    scale = float(np.ptp(s.real) + np.ptp(s.imag)) or 1.0

    def cost(t):
        try:
            c = circle_fit(s * np.exp(2j * np.pi * f * t))
        except DegenerateGeometryError:
            return np.inf
        return (c.rms_residual / scale) ** 2

    # coarse scan then bounded Brent around the best cell
    grid = np.linspace(tau0 - half_range, tau0 + half_range, 41)
    vals = np.array([cost(t) for t in grid])
    k = int(np.argmin(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    res = scipy.optimize.minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                                         options={"xatol": 1e-7 / span})
    return float(res.x) if res.fun <= vals[k] else float(grid[k])


def remove_delay(sweep_or_freqs, tau, s21=None):
    """Multiply by exp(+2 pi i f tau); returns z(f)."""
    if isinstance(sweep_or_freqs, FrequencySweep):
        f, s = sweep_or_freqs.freqs_hz, sweep_or_freqs.s21
    else:
        f, s = np.asarray(sweep_or_freqs, float), np.asarray(s21, complex)
    return s * np.exp(2j * np.pi * f * tau)


# ---------------------------------------------------------------------------
# stage 2: circle fit
# ---------------------------------------------------------------------------

@dataclass
class CircleFit:
    xc: float
    yc: float
    radius: float
    rms_residual: float

    @property
    def center(self):
        return complex(self.xc, self.yc)


_PRATT_B = np.array([[0.0, 0.0, 0.0, -2.0],
                     [0.0, 1.0, 0.0, 0.0],
                     [0.0, 0.0, 1.0, 0.0],
                     [-2.0, 0.0, 0.0, 0.0]])


def circle_fit(points) -> CircleFit:
    """
    Algebraic circle fit A(x^2+y^2) + Bx + Cy + D = 0 under B^2 + C^2 - 4AD = 1.

    The constrained minimum of the moment form A^T M A is the generalized
    eigenvector of (M, B) with the smallest nonnegative eigenvalue. Points
    are centred and scaled first; the fit is equivariant under both.
    """
    p = np.asarray(points, dtype=complex).ravel()
    if p.size < 4:
        raise DegenerateGeometryError(f"need at least 4 points, got {p.size}")
    x0 = p.real.mean()
    y0 = p.imag.mean()
    scale = np.sqrt(np.mean(np.abs(p - complex(x0, y0)) ** 2))
    if not scale > 0:
        raise DegenerateGeometryError("all points coincide")
    x = (p.real - x0) / scale
    y = (p.imag - y0) / scale
    zz = x * x + y * y
    cols = np.vstack([zz, x, y, np.ones_like(x)])
    M = cols @ cols.T
    w, V = scipy.linalg.eig(M, _PRATT_B)
    best = None
    for k in range(4):
        if not np.isfinite(w[k]) or abs(w[k].imag) > 1e-8 * (1 + abs(w[k].real)):
            continue
        v = V[:, k].real
        nb = v @ _PRATT_B @ v
        if nb <= 0:
            continue
        v = v / np.sqrt(nb)
        eta = float(v @ M @ v)
        if best is None or eta < best[0]:
            best = (eta, v)
    if best is None:
        raise DegenerateGeometryError("no admissible eigenvector")
    A, B, C, D = best[1]
    if abs(A) < 1e-14:
        raise DegenerateGeometryError("points are collinear")
    xc = -B / (2 * A)
    yc = -C / (2 * A)
    r = np.sqrt(max(B * B + C * C - 4 * A * D, 0.0)) / (2 * abs(A))
    xc = x0 + scale * xc
    yc = y0 + scale * yc
    r = scale * r
    rms = float(np.sqrt(np.mean((np.abs(p - complex(xc, yc)) - r) ** 2)))
    return CircleFit(float(xc), float(yc), float(r), rms)


def center_and_circularize(z, circle: CircleFit):
    """
    Returns ``(z1, z1_circ, valid)``; samples sitting exactly on the centre
    have no angle and are marked invalid.
    """
    z1 = np.asarray(z, complex) - circle.center
    valid = z1 != 0
    z1_circ = circle.radius * np.exp(1j * np.angle(z1))
    return z1, z1_circ, valid


# ---------------------------------------------------------------------------
# stage 3: phase unwrapping
# ---------------------------------------------------------------------------

STANDARD = "standard"
SMOOTHED = "smoothed"
BIFURCATION_AWARE = "bifurcation_aware"


def unwrap_phase(angles, mode=STANDARD, sigma_points=3.0, threshold_up=1.5 * np.pi,
                 threshold_down=1.9 * np.pi, direction=UP):
    """
    Unwrap a phase sequence stored in ascending frequency.

    ``bifurcation_aware`` treats a step as a wrap only if it rises by more
    than ``threshold_up`` or falls by more than ``threshold_down`` in the
    order the sweep visited the points; for a down-sweep the thresholds are
    mirrored.
    """
    p = np.asarray(angles, dtype=float)
    if p.size == 0:
        raise ValueError("empty phase sequence")
    if mode == STANDARD:
        return kernels.unwrap_thresholds(p, np.pi, np.pi)
    if mode == SMOOTHED:
        s = kernels.gaussian_filter(np.sin(p), sigma_points)
        c = kernels.gaussian_filter(np.cos(p), sigma_points)
        return kernels.unwrap_thresholds(np.arctan2(s, c), np.pi, np.pi)
    if mode == BIFURCATION_AWARE:
        if direction == UP:
            return kernels.unwrap_thresholds(p, threshold_up, threshold_down)
        out = kernels.unwrap_thresholds(p[::-1].copy(), threshold_down, threshold_up)[::-1]
        return out - 2 * np.pi * np.round((out[0] - p[0]) / (2 * np.pi))
    raise ValueError(f"unknown unwrap mode {mode!r}")


# ---------------------------------------------------------------------------
# stage 4: phase fit
# ---------------------------------------------------------------------------

@dataclass
class PhaseFitResult:
    q_l: float
    f_r0: float
    beta: float
    theta: float
    q_l_se: float
    f_r0_se: float
    beta_se: float
    theta_se: float
    dof: int
    converged: bool
    rms: float
    phase_offset: float = 0.0


def _half_max_q(f, u):
    i = int(np.argmax(u))
    half = u[i] / 2.0
    lo = i
    while lo > 0 and u[lo] > half:
        lo -= 1
    hi = i
    while hi < f.size - 1 and u[hi] > half:
        hi += 1
    width = f[hi] - f[lo]
    if width <= 0:
        width = np.median(np.diff(f)) if f.size > 1 else f[i] * 1e-6
    return f[i], f[i] / width


def phase_model(params, f, z1_circ, radius):
    q_l, f_r0, beta, theta = params
    off = radius * np.exp(1j * (np.pi - theta))
    u = np.abs(z1_circ - off) ** 2
    fr = f_r0 * (1.0 - beta * u)
    return 2.0 * np.arctan(2.0 * q_l * (fr - f) / fr) - theta


def phase_fit(freqs, phase, z1_circ, radius, p_g=None, beta0=1e9, inits=None, fit_beta=True,
              max_iter=200):
    """
    Least-squares fit of the unwrapped centred phase with Q_l, f_r0, beta and
    theta free.

    Initial values: Q_l from the half-power width of |z1 - z1_off|^2, f_r0
    at its peak, pi - theta from the mean end-point angle, and beta from
    ``beta0 * p_g / radius`` plus a few fixed drive levels; the lowest-cost
    start wins. ``inits`` overrides any of ``q_l, f_r0, beta, theta``.
    """
    f = np.asarray(freqs, float)
    order = np.argsort(f, kind="stable")
    f = f[order]
    ph = np.asarray(phase, float)[order]
    zc = np.asarray(z1_circ, complex)[order]
    n = f.size
    if n < 5:
        raise PipelineError("phase_fit", "too few points")
    if not radius > 0:
        raise PipelineError("phase_fit", "radius must be positive")
    inits = dict(inits or {})
    nend = max(1, n // 40)
    ends = np.concatenate([zc[:nend], zc[-nend:]])
    off_angle = np.angle(np.mean(ends / np.abs(ends)))
    theta0 = inits.get("theta", np.pi - off_angle)
    u0 = np.abs(zc - radius * np.exp(1j * (np.pi - theta0))) ** 2
    f_peak, q0 = _half_max_q(f, kernels.gaussian_filter(u0, 1.0) if n > 20 else u0)
    q0 = inits.get("q_l", q0)
    beta_unit = 1.0 / (q0 * 4.0 * radius ** 2)  # beta giving a_n0 = 1
    starts = []
    if "beta" in inits or "f_r0" in inits:
        starts.append((inits.get("f_r0", f_peak), inits.get("beta", 0.0)))
    else:
        levels = [0.0, 0.3, 1.0] if fit_beta else [0.0]
        for an in levels:
            starts.append((f_peak * (1 + an / q0), an * beta_unit))
        if fit_beta and p_g:
            starts.append((f_peak, beta0 * p_g / radius))
    # unwrapped data may sit a multiple of 2 pi away from the model branch
    span = f[-1] - f[0]
    lo = np.array([q0 * 1e-3, f[0] - span, 0.0, -np.inf])
    hi = np.array([q0 * 1e3, f[-1] + span, np.inf if fit_beta else 0.0, np.inf])
    best = None
    for fr_init, b_init in starts:
        b_init = float(np.clip(b_init, 0.0, 50 * beta_unit)) if fit_beta else 0.0
        x0 = np.array([q0, np.clip(fr_init, f[0], f[-1]), b_init, theta0])
        model0 = phase_model(x0, f, zc, radius)
        shift = 2 * np.pi * np.round(np.median(ph - model0) / (2 * np.pi))
        data = ph - shift
        if fit_beta:
            def resid(p, data=data):
                return _wrap(phase_model(p, f, zc, radius) - data)
            npar = 4
            scale = [q0, f_peak / q0, beta_unit, 1.0]
        else:
            def resid(p, data=data):
                return _wrap(phase_model((p[0], p[1], 0.0, p[2]), f, zc, radius) - data)
            npar = 3
            x0 = x0[[0, 1, 3]]
            scale = [q0, f_peak / q0, 1.0]
        lo_, hi_ = (lo, hi) if fit_beta else (lo[[0, 1, 3]], hi[[0, 1, 3]])
        try:
            res = lm_fit(FitProblem(resid, npar, n, lo_, hi_), x0, max_iter=max_iter, x_scale=scale)
        except FitInputError as exc:
            log.debug("phase fit start rejected: %s", exc)
            continue
        if best is None or res.residual_norm < best[0].residual_norm:
            best = (res, shift)
    if best is None:
        raise PipelineError("phase_fit", "no admissible starting point")
    res, shift = best
    p = res.params
    se = res.standard_errors
    if not fit_beta:
        p = np.array([p[0], p[1], 0.0, p[2]])
        se = np.array([se[0], se[1], 0.0, se[2]])
    return PhaseFitResult(
        q_l=float(p[0]), f_r0=float(p[1]), beta=float(p[2]), theta=float(p[3]),
        q_l_se=float(se[0]), f_r0_se=float(se[1]), beta_se=float(se[2]), theta_se=float(se[3]),
        dof=res.dof, converged=res.converged, rms=res.residual_norm / np.sqrt(n),
        phase_offset=float(shift),
    )


# ---------------------------------------------------------------------------
# stages 5-6: phi correction and direct complex fit
# ---------------------------------------------------------------------------

def z_model_measured(params, f, z):
    """
    Nonlinear transmission with the circulating-energy term evaluated on the
    measured samples ``z`` (the fitting form of the model).
    """
    a, alpha, phi, q_l, q_c, f_r0, beta = params
    z_off = a * np.exp(1j * alpha)
    u = np.abs(z - z_off) ** 2
    fr = f_r0 * (1.0 - beta * u)
    y = ((f - f_r0) + f_r0 * beta * u) / fr
    return z_off * (1.0 - (q_l / q_c) * np.exp(1j * phi) / (1.0 + 2j * q_l * y))


def _stack(c):
    return np.concatenate([c.real, c.imag])


def geometric_phi(alpha, theta):
    """Impedance-mismatch phase implied by the circle geometry: pi - theta - alpha."""
    return float(_wrap(np.pi - theta - alpha))


def phi_correction(freqs, z, fixed, phi_init, max_iter=100):
    """
    One-parameter refinement of phi with every other parameter frozen.

    ``fixed`` maps ``a, alpha, q_l, q_c, f_r0, beta`` to values. Returns
    ``(phi, converged)``; on failure ``phi_init`` is returned unchanged.
    """
    f = np.asarray(freqs, float)
    z = np.asarray(z, complex)
    base = [fixed["a"], fixed["alpha"], 0.0, fixed["q_l"], fixed["q_c"], fixed["f_r0"], fixed.get("beta", 0.0)]

    def resid(p):
        q = list(base)
        q[2] = p[0]
        return _stack(z - z_model_measured(q, f, z))

    try:
        res = lm_fit(FitProblem(resid, 1, 2 * f.size), [phi_init], max_iter=max_iter, x_scale=[1.0])
    except FitInputError:
        return float(phi_init), False
    if not res.converged:
        return float(phi_init), False
    return float(_wrap(res.params[0])), True


@dataclass
class FullFitResult:
    a: float
    alpha: float
    phi: float
    q_l: float
    q_c: float
    f_r0: float
    beta: float
    tau: float
    standard_errors: dict
    dof: int
    q_i: float
    q_i_se: float
    q_i_ci: tuple
    q_c_corrected: float
    converged: bool
    residual_rms: float
    covariance: Optional[np.ndarray] = field(default=None, repr=False)
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def params_vector(self):
        return np.array([getattr(self, k) for k in PARAM_NAMES])

    def se(self, name):
        return self.standard_errors.get(name, float("nan"))

    @property
    def a_n0(self):
        return self.q_l * self.beta * (self.a * self.q_l / self.q_c) ** 2


def _q_i_with_se(q_l, q_c, phi, cov_sub, dof):
    inv = 1.0 / q_l - np.cos(phi) / q_c
    q_i = 1.0 / inv if inv != 0 else float("inf")
    # delta method on (phi, q_l, q_c)
    g = np.array([-q_i ** 2 * np.sin(phi) / q_c, q_i ** 2 / q_l ** 2, -q_i ** 2 * np.cos(phi) / q_c ** 2])
    if cov_sub is not None and np.all(np.isfinite(cov_sub)):
        se = float(np.sqrt(max(g @ cov_sub @ g, 0.0)))
    else:
        se = float("nan")
    if dof > 0 and np.isfinite(se):
        h = float(student_t_quantile(dof, 0.975)) * se
        ci = (q_i - h, q_i + h)
    else:
        ci = (float("nan"), float("nan"))
    return q_i, se, ci


def _delay_column(f, z, p):
    """d(residual)/d(tau) at fixed parameters, for the covariance only."""
    # rotating by the centre frequency is absorbed exactly by alpha, so the
    # derivative is taken about the centre to keep the column well scaled
    fc = 0.5 * (f[0] + f[-1])
    h = 1e-6 / (2 * np.pi * max(np.ptp(f), 1.0))

    def r(t):
        zt = z * np.exp(2j * np.pi * (f - fc) * t)
        return _stack(zt - z_model_measured(p, f, zt))

    return (r(h) - r(-h)) / (2 * h)


def direct_fit(freqs, z, init, tau=0.0, fit_beta=True, max_iter=300, tau_uncertain=False):
    """
    Minimize sum |z_i - z_fit(f_i, z_i)|^2 over a, alpha, phi, Q_l, Q_c, f_r0
    and beta (beta held at 0 when ``fit_beta`` is False). The real and
    imaginary parts are stacked as residuals, which is the same objective.

    ``init`` maps parameter names to starting values. With ``tau_uncertain``
    the delay stays fixed but the covariance is computed with its Jacobian
    column included, so the standard errors carry the delay uncertainty.
    """
    f = np.asarray(freqs, float)
    z = np.asarray(z, complex)
    x0 = np.array([init[k] for k in PARAM_NAMES], float)
    if not fit_beta:
        x0[6] = 0.0
    radius = x0[0] * x0[3] / (2 * x0[4])
    beta_unit = 1.0 / (x0[3] * 4.0 * radius ** 2)
    scale = np.array([x0[0], 1.0, 1.0, x0[3], x0[4], x0[5] / x0[3], max(beta_unit, x0[6])])
    lo = np.array([0.0, -np.inf, -np.inf, 1.0, 1.0, 0.0, 0.0])
    hi = np.full(7, np.inf)
    free = np.arange(7) if fit_beta else np.arange(6)

    def full(p):
        q = x0.copy()
        q[free] = p
        return q

    def resid(p):
        return _stack(z - z_model_measured(full(p), f, z))

    n = 2 * f.size
    flags = []
    try:
        res = lm_fit(FitProblem(resid, free.size, n, lo[free], hi[free]), x0[free],
                     max_iter=max_iter, x_scale=scale[free])
    except FitInputError as exc:
        raise PipelineError("direct_fit", str(exc)) from exc
    p = full(res.params)
    cov = np.zeros((7, 7))
    cov[np.ix_(free, free)] = res.covariance
    tau_se = 0.0
    if tau_uncertain and res.jacobian is not None:
        Ja = np.column_stack([res.jacobian, _delay_column(f, z, p)])
        ca, ok = covariance_from_jacobian(Ja, res.residual_norm ** 2, res.dof)
        if ok:
            cov[np.ix_(free, free)] = ca[:-1, :-1]
            tau_se = float(np.sqrt(max(ca[-1, -1], 0.0)))
    p[2] = _wrap(p[2])
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None)) if np.all(np.isfinite(cov)) else np.full(7, np.nan)
    if not res.converged:
        flags.append("direct_fit_not_converged")
    if abs(p[2]) >= np.pi / 2:
        flags.append("phi_outside_half_pi")
    sub = cov[np.ix_([2, 3, 4], [2, 3, 4])]
    q_i, q_i_se, q_i_ci = _q_i_with_se(p[3], p[4], p[2], sub, res.dof)
    if not q_i > 0:
        flags.append("nonpositive_q_i")
    return FullFitResult(
        a=float(p[0]), alpha=float(_wrap(p[1])), phi=float(p[2]), q_l=float(p[3]), q_c=float(p[4]),
        f_r0=float(p[5]), beta=float(p[6]), tau=float(tau),
        standard_errors={**{k: float(se[i]) for i, k in enumerate(PARAM_NAMES)}, "tau": tau_se},
        dof=res.dof, q_i=float(q_i), q_i_se=q_i_se, q_i_ci=tuple(float(c) for c in q_i_ci),
        q_c_corrected=float(p[4] / np.cos(p[2])), converged=res.converged,
        residual_rms=float(res.residual_norm / np.sqrt(f.size)), covariance=cov, flags=flags,
    )


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    exclude_window: Optional[tuple] = None
    exclude_linewidths: float = 3.0
    tau: Optional[float] = None
    refine_delay: bool = True
    unwrap_mode: str = "auto"
    smooth_sigma: float = 3.0
    threshold_up: float = 1.5 * np.pi
    threshold_down: float = 1.9 * np.pi
    snr_smooth_db: float = 20.0
    nonlinear_threshold: float = 0.05
    beta0: float = 1e9
    fit_beta: bool = True
    max_iter: int = 300


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except PipelineError:
        raise
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise PipelineError(name, str(exc)) from exc


def initial_estimates(f, z, p_g=None, config=PipelineConfig(), direction=UP):
    """Circle fit, unwrapping and phase fit; returns (init dict, diagnostics)."""
    circle = _stage("circle_fit", circle_fit, z)
    z1, z1_circ, valid = center_and_circularize(z, circle)
    fv, z1v, zcv = f[valid], z1[valid], z1_circ[valid]
    snr_db = 20 * np.log10(2 * circle.radius / circle.rms_residual) if circle.rms_residual > 0 else np.inf
    ang = np.angle(z1v)
    mode = config.unwrap_mode
    kw = dict(sigma_points=config.smooth_sigma, threshold_up=config.threshold_up,
              threshold_down=config.threshold_down, direction=direction)

    def fit_with(m):
        ph = unwrap_phase(ang, m, **kw)
        return _stage("phase_fit", phase_fit, fv, ph, zcv, circle.radius, p_g=p_g, beta0=config.beta0,
                      fit_beta=config.fit_beta)

    if mode == "auto":
        if snr_db < config.snr_smooth_db:
            mode = SMOOTHED
            pf = fit_with(mode)
        else:
            mode = STANDARD
            pf = fit_with(mode)
            a_n_est = pf.q_l * pf.beta * 4 * circle.radius ** 2
            if a_n_est >= config.nonlinear_threshold:
                mode = BIFURCATION_AWARE
                pf = fit_with(mode)
    else:
        pf = fit_with(mode)
    z_off = circle.radius * np.exp(1j * (np.pi - pf.theta)) + circle.center
    a = abs(z_off)
    alpha = float(np.angle(z_off))
    q_c = pf.q_l * a / (2 * circle.radius)
    init = {"a": a, "alpha": alpha, "phi": geometric_phi(alpha, pf.theta), "q_l": pf.q_l, "q_c": q_c,
            "f_r0": pf.f_r0, "beta": pf.beta}
    diag = {"circle": circle, "snr_db": float(snr_db), "unwrap_mode": mode, "phase_fit": pf}
    return init, diag


def full_pipeline(sweep: FrequencySweep, config: PipelineConfig = PipelineConfig()) -> FullFitResult:
    """Delay fit and removal, circle fit, unwrap, phase fit, phi correction, direct fit."""
    if len(sweep) < 10:
        raise PipelineError("input", f"sweep has {len(sweep)} points; at least 10 are required")
    f = sweep.freqs_hz
    if config.tau is not None:
        tau = {"tau": float(config.tau), "intercept": 0.0, "n_background": 0}
    else:
        window = config.exclude_window
        if window is None:
            window = estimate_resonance_window(f, sweep.s21, config.exclude_linewidths)
        tau = _stage("cable_delay", fit_cable_delay, sweep, window)
        tau["tau_linear"] = tau["tau"]
        if config.refine_delay:
            tau["tau"] = _stage("cable_delay", refine_delay, f, sweep.s21, tau["tau"])
    z = remove_delay(sweep, tau["tau"])
    init, diag = initial_estimates(f, z, sweep.p_g_w, config, sweep.sweep_direction)
    phi0 = init["phi"]
    fixed = {k: init[k] for k in ("a", "alpha", "q_l", "q_c", "f_r0", "beta")}
    phi, phi_ok = _stage("phi_correction", phi_correction, f, z, fixed, phi0)
    init["phi"] = phi
    result = _stage("direct_fit", direct_fit, f, z, init, tau=tau["tau"], fit_beta=config.fit_beta,
                    max_iter=config.max_iter, tau_uncertain=config.tau is None)
    if not phi_ok:
        result.flags.append("phi_correction_not_converged")
    result.diagnostics = {
        "tau": tau,
        "snr_db": diag["snr_db"],
        "unwrap_mode": diag["unwrap_mode"],
        "circle": diag["circle"],
        "phase_fit": diag["phase_fit"],
        "phi_geometric": phi0,
        "phi_corrected": phi,
    }
    return result


def phi_rotation_fit(freqs, z, config: PipelineConfig = PipelineConfig()):
    """
    Linear-model fit (no energy-dependent frequency term) with the resonance
    frequency free, for tracking f_r and Q_i against drive power.
    """
    f = np.asarray(freqs, float)
    z = np.asarray(z, complex)
    cfg = PipelineConfig(**{**config.__dict__, "fit_beta": False})
    init, _ = initial_estimates(f, z, None, cfg)
    fixed = {k: init[k] for k in ("a", "alpha", "q_l", "q_c", "f_r0")}
    fixed["beta"] = 0.0
    phi, _ = phi_correction(f, z, fixed, init["phi"])
    init["phi"] = phi
    init["beta"] = 0.0
    res = direct_fit(f, z, init, fit_beta=False, max_iter=cfg.max_iter)
    return {"f_r": res.f_r0, "q_i": res.q_i, "q_l": res.q_l, "q_c": res.q_c, "fit": res}
