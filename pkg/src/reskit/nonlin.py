"""
Scaling energy of the kinetic-inductance nonlinearity.

Stored energy and fractional frequency shift are computed per sample from a
fitted trace, E* follows from a regression through the origin of E against
-dx, and a parametric bootstrap over the fit parameters gives percentile
intervals for E* and a_n0.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as sc

from . import kernels
from .numcore import linreg_origin, weighted_mean
from .respipe import PARAM_NAMES, FullFitResult

log = logging.getLogger(__name__)

BOOT_CHUNK = 4096
# columns handed to the kernel, in kernel order
_KERNEL_COLS = ("a", "alpha", "q_l", "q_c", "f_r0", "beta")


def _z_off(fit):
    return fit.a * np.exp(1j * fit.alpha)


def freq_shift(fit: FullFitResult, z):
    """dx = (f_r - f_r0)/f_r0 = -beta |z - a e^{i alpha}|^2 on the measured samples."""
    return -fit.beta * np.abs(np.asarray(z, complex) - _z_off(fit)) ** 2


def stored_energy(fit: FullFitResult, p_g, freqs, z):
    """
    E(f) = (2 Q_l^2/Q_c) P_g / (omega_r (1 + 4 Q_l^2 x^2)), x = (f - f_r)/f_r,
    with f_r following the measured circulating energy.
    """
    f = np.asarray(freqs, float)
    fr = fit.f_r0 * (1.0 + freq_shift(fit, z))
    x = (f - fr) / fr
    return 2.0 * fit.q_l ** 2 / fit.q_c * p_g / (1.0 + 4.0 * fit.q_l ** 2 * x * x) / (2.0 * np.pi * fr)


def stored_energy_at(q_l, q_c, p_g, f_r, x):
    return 2.0 * q_l ** 2 / q_c * p_g / (1.0 + 4.0 * q_l ** 2 * np.asarray(x) ** 2) / (2.0 * np.pi * f_r)


@dataclass
class ScalingEnergy:
    e_star: float
    e_star_se: float
    available: bool
    note: str = ""


def extract_scaling_energy(energy, dx):
    """E* = -slope of the origin regression of E on dx."""
    e = np.asarray(energy, float)
    d = np.asarray(dx, float)
    if not np.any(d != 0):
        return ScalingEnergy(float("nan"), float("nan"), False, "no frequency shift; E* unavailable")
    r = linreg_origin(d, e)
    return ScalingEnergy(-r["slope"], r["slope_se"], True)


def nonlinearity_parameter(q_l, q_c, f_r0, p_g, e_star):
    """a_n0 = (2 Q_l^3/Q_c) P_g / (omega_r0 E*); NaN when E* is unavailable."""
    if e_star is None or not np.isfinite(e_star):
        return float("nan")
    return 2.0 * q_l ** 3 / q_c * p_g / (2.0 * np.pi * f_r0 * e_star)


def beta_from_e_star(e_star, a, q_c, f_r0, p_g):
    """beta of the transmission model that corresponds to a scaling energy E* at drive P_g."""
    return 2.0 * q_c * p_g / (a * a * 2.0 * np.pi * f_r0 * e_star)


def e_star_from_beta(beta, a, q_c, f_r0, p_g):
    return 2.0 * q_c * p_g / (a * a * 2.0 * np.pi * f_r0 * beta)


def per_photon(e_star, f_r0):
    """E* in units of the photon energy hbar omega_r0."""
    return e_star / (sc.hbar * 2.0 * np.pi * f_r0)


@dataclass
class BootstrapDistribution:
    samples: np.ndarray = field(repr=False)
    p2_5: float
    p97_5: float
    point_estimate: float


@dataclass
class NonlinExtraction:
    e_star: float
    e_star_ci: tuple
    a_n0: float
    a_n0_ci: tuple
    energy: np.ndarray = field(repr=False)
    dx: np.ndarray = field(repr=False)
    bootstrap_iterations: int
    seed: object
    e_star_per_photon: float = float("nan")
    available: bool = True
    note: str = ""
    e_star_dist: BootstrapDistribution = field(default=None, repr=False)
    a_n0_dist: BootstrapDistribution = field(default=None, repr=False)


def _chunk_draws(seed, chunk_idx, size, dof, se, cov_chol):
    # one generator per fixed-size chunk, keyed on (seed, chunk index); the
    # stream therefore does not depend on how chunks are spread over workers
    rng = np.random.default_rng([*(int(v) for v in np.atleast_1d(seed)), int(chunk_idx)])
    npar = se.size
    if cov_chol is None:
        t = rng.standard_t(dof, size=(size, npar))
        return t * se
    g = rng.standard_normal(size=(size, npar)) @ cov_chol.T
    w = np.sqrt(rng.chisquare(dof, size=size) / dof)
    return g / w[:, None]


def bootstrap_nonlin(fit: FullFitResult, p_g, freqs, z, iterations=100_000, seed=0, jobs=1,
                     full_covariance=False):
    """
    Parametric bootstrap of (E*, a_n0).

    Every fit parameter is perturbed independently as p0 + SE * t(dof)
    (``full_covariance`` draws from the multivariate t with the fit
    covariance instead); f, z(f) and P_g stay fixed. Percentiles 2.5 and
    97.5 bound the intervals. Draws are generated in chunks of
    ``BOOT_CHUNK`` iterations seeded by ``(seed, chunk index)``, so the
    result is identical for any ``jobs``.
    """
    if fit.dof <= 0:
        raise ValueError("bootstrap needs a fit with positive degrees of freedom")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    f = np.asarray(freqs, float)
    z = np.asarray(z, complex)
    p0 = np.array([getattr(fit, k) for k in PARAM_NAMES], float)
    se = np.array([fit.standard_errors.get(k, 0.0) for k in PARAM_NAMES], float)
    se = np.where(np.isfinite(se), se, 0.0)
    cols = [PARAM_NAMES.index(k) for k in _KERNEL_COLS]
    es0, an0 = kernels.nonlin_stats(p0[cols][None, :], f, z, p_g)
    e_point, a_point = float(es0[0]), float(an0[0])
    if iterations == 0:
        empty = np.empty(0)
        return (BootstrapDistribution(empty, float("nan"), float("nan"), e_point),
                BootstrapDistribution(empty, float("nan"), float("nan"), a_point))
    chol = None
    if full_covariance:
        cov = np.asarray(fit.covariance, float)
        if cov is None or not np.all(np.isfinite(cov)):
            raise ValueError("full-covariance bootstrap requires a finite covariance")
        # jitter-free Cholesky on the nonzero block
        keep = np.diag(cov) > 0
        chol = np.zeros_like(cov)
        chol[np.ix_(keep, keep)] = np.linalg.cholesky(cov[np.ix_(keep, keep)])
    nchunks = -(-iterations // BOOT_CHUNK)

    def run(ci):
        size = min(BOOT_CHUNK, iterations - ci * BOOT_CHUNK)
        params = p0 + _chunk_draws(seed, ci, size, fit.dof, se, chol)
        return kernels.nonlin_stats(params[:, cols], f, z, p_g)

    if jobs > 1 and nchunks > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(run, range(nchunks)))
    else:
        parts = [run(i) for i in range(nchunks)]
    es = np.concatenate([p[0] for p in parts])
    an = np.concatenate([p[1] for p in parts])

    def dist(s, point):
        lo, hi = np.nanpercentile(s, [2.5, 97.5]) if np.any(np.isfinite(s)) else (np.nan, np.nan)
        return BootstrapDistribution(s, float(lo), float(hi), point)

    return dist(es, e_point), dist(an, a_point)


def extract_nonlinearity(fit: FullFitResult, p_g, freqs, z, iterations=100_000, seed=0, jobs=1,
                         full_covariance=False):
    """Point estimates, per-sample arrays and bootstrap intervals for one trace."""
    energy = stored_energy(fit, p_g, freqs, z)
    dx = freq_shift(fit, z)
    se = extract_scaling_energy(energy, dx)
    if not se.available:
        return NonlinExtraction(float("nan"), (float("nan"),) * 2, float("nan"), (float("nan"),) * 2,
                                energy, dx, int(iterations), seed, available=False, note=se.note)
    a_n0 = nonlinearity_parameter(fit.q_l, fit.q_c, fit.f_r0, p_g, se.e_star)
    e_ci = a_ci = (float("nan"), float("nan"))
    ed = ad = None
    if iterations > 0:
        ed, ad = bootstrap_nonlin(fit, p_g, freqs, z, iterations, seed, jobs, full_covariance)
        # percentiles bracket the sample; keep the interval ordered around the point estimate
        e_ci = (min(ed.p2_5, se.e_star), max(ed.p97_5, se.e_star))
        a_ci = (min(ad.p2_5, a_n0), max(ad.p97_5, a_n0))
    return NonlinExtraction(
        e_star=float(se.e_star), e_star_ci=e_ci, a_n0=float(a_n0), a_n0_ci=a_ci, energy=energy, dx=dx,
        bootstrap_iterations=int(iterations), seed=seed,
        e_star_per_photon=float(per_photon(se.e_star, fit.f_r0)), e_star_dist=ed, a_n0_dist=ad,
    )


def weighted_e_star(values, ci_widths):
    """
    Weighted average with weights 1/width^2; points with nonpositive or
    non-finite width are dropped with a warning. Returns
    ``{"e_star", "ci_width", "n_used", "excluded"}``; ``ci_width`` is the
    inverse-variance combination 1/sqrt(sum 1/w^2).
    """
    v = np.asarray(values, float)
    w = np.asarray(ci_widths, float)
    if v.shape != w.shape or v.size == 0:
        raise ValueError("values and widths must be non-empty and of equal length")
    good = np.isfinite(w) & (w > 0) & np.isfinite(v)
    excluded = np.flatnonzero(~good).tolist()
    if excluded:
        log.warning("excluded %d E* values with nonpositive or missing CI width", len(excluded))
    if not np.any(good):
        raise ValueError("no E* value has a positive CI width")
    wt = 1.0 / w[good] ** 2
    return {"e_star": weighted_mean(v[good], wt), "ci_width": float(1.0 / np.sqrt(wt.sum())),
            "n_used": int(good.sum()), "excluded": excluded}


@dataclass(frozen=True)
class CondensationInputs:
    n0: float  # states per um^3 per eV
    t_c: float  # K
    volume: float  # um^3

    def __post_init__(self):
        if not (self.n0 > 0 and self.t_c > 0 and self.volume > 0):
            raise ValueError("N0, T_c and volume must all be positive")


def condensation_energy(inputs: CondensationInputs):
    """
    E_cond = N0 Delta^2 V / 2 with Delta = 1.75 k_B T_c, in joules.
    """
    delta_ev = 1.75 * sc.k * inputs.t_c / sc.e
    return inputs.n0 * delta_ev ** 2 * inputs.volume / 2.0 * sc.e
