"""
Power-sweep analysis: photon numbers, linear/nonlinear regime split, TLS
saturation fit, phenomenological log-log power law, loss budget and group
statistics.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import constants as sc

from .numcore import FitInputError, FitProblem, lm_fit, student_t_quantile
from .respipe import FullFitResult

log = logging.getLogger(__name__)

HBAR = sc.hbar
H = sc.h
K_B = sc.k
REGIME_THRESHOLD = 0.05
LINEAR = "linear"
NONLINEAR = "nonlinear"


def p_g_watts(source_power_dbm, attenuation_db=-75.0):
    return 10.0 ** ((source_power_dbm + attenuation_db) / 10.0 - 3.0)


def photon_number(q_l, q_c, f_r0, p_g, z0=50.0, zr=50.0):
    """<n> = 2/(hbar w^2) (Z0/Zr) (Q_l^2/Q_c) P_g with w = 2 pi f_r0."""
    for name, v in (("q_l", q_l), ("q_c", q_c), ("f_r0", f_r0), ("p_g", p_g), ("z0", z0), ("zr", zr)):
        if not np.all(np.asarray(v) > 0):
            raise ValueError(f"{name} must be positive")
    w = 2.0 * np.pi * f_r0
    return 2.0 / (HBAR * w * w) * (z0 / zr) * (q_l * q_l / q_c) * p_g


def photon_number_from_fit(fit: FullFitResult, p_g, z0=50.0, zr=50.0):
    return photon_number(fit.q_l, fit.q_c, fit.f_r0, p_g, z0, zr)


@dataclass
class TraceFitRecord:
    source_power_dbm: float
    p_g: float
    fit: FullFitResult
    n_bar: float
    a_n0: float
    regime: str
    entry_index: int = -1

    @classmethod
    def build(cls, fit: FullFitResult, source_power_dbm, attenuation_db=-75.0, a_n0=None,
              threshold=REGIME_THRESHOLD, z0=50.0, zr=50.0):
        """
        ``a_n0`` defaults to the value implied by the fitted beta.
        """
        p_g = p_g_watts(source_power_dbm, attenuation_db)
        an = fit.a_n0 if a_n0 is None else a_n0
        return cls(source_power_dbm=float(source_power_dbm), p_g=p_g, fit=fit,
                   n_bar=float(photon_number_from_fit(fit, p_g, z0, zr)), a_n0=float(an),
                   regime=LINEAR if an < threshold else NONLINEAR)

    @property
    def q_i(self):
        return self.fit.q_i


def split_regimes(records, threshold=REGIME_THRESHOLD):
    lin = [r for r in records if r.a_n0 < threshold]
    non = [r for r in records if r.a_n0 >= threshold]
    return lin, non


# ---------------------------------------------------------------------------
# TLS model
# ---------------------------------------------------------------------------

def thermal_factor(f_r0, temperature_k):
    return np.tanh(H * f_r0 / (2.0 * K_B * temperature_k))


def q_tls(n_bar, q_tls0, n_c, alpha_tls, f_r0, temperature_k=0.015):
    n = np.asarray(n_bar, float)
    return q_tls0 * np.sqrt(1.0 + (n / n_c) ** alpha_tls) / thermal_factor(f_r0, temperature_k)


def q_i_tls_model(n_bar, q_tls0, n_c, alpha_tls, q_other, f_r0, temperature_k=0.015):
    return 1.0 / (1.0 / q_tls(n_bar, q_tls0, n_c, alpha_tls, f_r0, temperature_k) + 1.0 / q_other)


@dataclass
class TLSFit:
    q_tls0: float
    n_c: float
    alpha_tls: float
    q_other: float
    se: dict
    ci: dict
    temperature_k: float
    f_r0_hz: float
    dof: int
    converged: bool
    low_confidence: bool
    n_support: tuple
    residuals: Optional[np.ndarray] = field(default=None, repr=False)
    jacobian: Optional[np.ndarray] = field(default=None, repr=False)

    def q_i(self, n_bar):
        return q_i_tls_model(n_bar, self.q_tls0, self.n_c, self.alpha_tls, self.q_other, self.f_r0_hz,
                             self.temperature_k)

    def low_power_loss(self):
        return self.q_i(0.0) ** -1


TLS_NAMES = ("q_tls0", "n_c", "alpha_tls", "q_other")


def fit_tls(records, temperature_k=0.015, f_r0=None, max_iter=500):
    """
    Fit 1/Q_i(<n>) = 1/Q_TLS(<n>) + 1/Q_other over linear-regime records.

    ``records`` may be TraceFitRecords or ``(n_bar, q_i)`` pairs. ``f_r0``
    defaults to the mean fitted resonance frequency. Residuals are loss
    differences scaled by the median Q_i; 95% intervals are t-intervals from
    the residual-based covariance.
    """
    recs = list(records)
    if recs and isinstance(recs[0], TraceFitRecord):
        n = np.array([r.n_bar for r in recs], float)
        qi = np.array([r.q_i for r in recs], float)
        if f_r0 is None:
            f_r0 = float(np.mean([r.fit.f_r0 for r in recs]))
    else:
        arr = np.asarray(recs, float).reshape(-1, 2)
        n, qi = arr[:, 0], arr[:, 1]
    if f_r0 is None:
        raise ValueError("f_r0 is required when records carry no fits")
    if n.size < len(TLS_NAMES) + 1:
        raise FitInputError(f"TLS fit needs at least {len(TLS_NAMES) + 1} records, got {n.size}")
    if np.any(n <= 0) or np.any(qi <= 0):
        raise FitInputError("photon numbers and Q_i must be positive")
    decades = np.log10(n.max() / n.min())
    low_conf = n.size < 5 or decades < 2.0
    if low_conf:
        warnings.warn("TLS fit is low-confidence: fewer than 5 records or under 2 decades in <n>")
    loss = 1.0 / qi
    scale = float(np.median(qi))
    th = thermal_factor(f_r0, temperature_k)

    def model_loss(p):
        q0, nc, al, qo = p
        return th / (q0 * np.sqrt(1.0 + (n / nc) ** al)) + 1.0 / qo

    def resid(p):
        return (model_loss(p) - loss) * scale

    lo_loss = loss[np.argmin(n)]
    hi_loss = loss[np.argmax(n)]
    qo0 = 1.0 / max(hi_loss, 1e-30)
    tls0 = max(lo_loss - hi_loss, 0.1 * lo_loss)
    q00 = th / tls0
    lo = np.array([q00 * 1e-6, n.min() * 1e-6, 1e-6, qo0 * 1e-6])
    hi = np.array([np.inf, n.max() * 1e6, 2.0, np.inf])
    best = None
    for nc0 in np.geomspace(max(n.min(), 1e-3), n.max(), 7):
        for al0 in (0.5, 1.0, 1.5):
            x0 = np.array([q00, nc0, al0, qo0])
            try:
                res = lm_fit(FitProblem(resid, 4, n.size, lo, hi), x0, max_iter=max_iter,
                             tolerance=1e-13, x_scale=[q00, nc0, 1.0, qo0])
            except FitInputError:
                continue
            if best is None or res.residual_norm < best.residual_norm:
                best = res
    if best is None:
        raise FitInputError("no admissible starting point for the TLS fit")
    res = best
    p = res.params
    se = res.standard_errors
    if res.dof > 0 and np.all(np.isfinite(se)):
        t = float(student_t_quantile(res.dof, 0.975))
        ci = {k: (float(p[i] - t * se[i]), float(p[i] + t * se[i])) for i, k in enumerate(TLS_NAMES)}
    else:
        ci = {k: (float("nan"), float("nan")) for k in TLS_NAMES}
    return TLSFit(
        q_tls0=float(p[0]), n_c=float(p[1]), alpha_tls=float(p[2]), q_other=float(p[3]),
        se={k: float(se[i]) for i, k in enumerate(TLS_NAMES)}, ci=ci,
        temperature_k=float(temperature_k), f_r0_hz=float(f_r0), dof=res.dof, converged=res.converged,
        low_confidence=bool(low_conf), n_support=(float(n.min()), float(n.max())),
        residuals=res.residuals, jacobian=res.jacobian,
    )


def quality_filter(tls: TLSFit):
    """True iff the 95% intervals of Q_TLS0 and Q_other both exclude zero (strictly)."""
    ok = True
    for k in ("q_tls0", "q_other"):
        lo, hi = tls.ci[k]
        if not (np.isfinite(lo) and np.isfinite(hi)):
            return False
        ok &= (lo > 0 and hi > 0) or (lo < 0 and hi < 0)
    return bool(ok)


# ---------------------------------------------------------------------------
# Power law in log-log coordinates
# ---------------------------------------------------------------------------

@dataclass
class PowerLawFit:
    k: float
    b: float
    c: float
    se: dict
    converged: bool
    n_support: tuple
    power_points: list = field(default_factory=list)

    def log10_q_i(self, n_bar):
        return self.k * np.log10(np.asarray(n_bar, float)) ** self.b + self.c

    def q_i(self, n_bar):
        return 10.0 ** self.log10_q_i(n_bar)

    def __getitem__(self, key):
        return getattr(self, key)


def fit_powerlaw(records, max_iter=500):
    """
    log10 Q_i = k (log10 <n>)^b + c by least squares in log-log coordinates.

    A phenomenological curve for comparing losses at a common power, not a
    physical model. ``records`` may be TraceFitRecords or ``(n_bar, q_i)``
    pairs. <n> must exceed 1 so that the power of log10 <n> stays real.
    """
    recs = list(records)
    powers = []
    if recs and isinstance(recs[0], TraceFitRecord):
        n = np.array([r.n_bar for r in recs], float)
        qi = np.array([r.q_i for r in recs], float)
        powers = [(r.source_power_dbm, r.n_bar) for r in recs]
    else:
        arr = np.asarray(recs, float).reshape(-1, 2)
        n, qi = arr[:, 0], arr[:, 1]
    if n.size < 4:
        raise FitInputError(f"power-law fit needs at least 4 records, got {n.size}")
    if np.any(n <= 0) or np.any(qi <= 0):
        raise FitInputError("photon numbers and Q_i must be positive")
    if np.any(n <= 1):
        raise FitInputError("power-law fit requires <n> > 1 (log10 <n> must be positive)")
    x = np.log10(n)
    y = np.log10(qi)
    # fit K (x/x0)^b + c and map back to k = K x0^-b; same model, but K and b
    # are far less correlated than k and b when log10 <n> is large
    x0 = float(np.exp(np.mean(np.log(x))))
    u = x / x0
    k0, c0 = np.polyfit(u, y, 1)

    def resid(p):
        return p[0] * u ** p[1] + p[2] - y

    best = None
    for b0 in (1.0, 0.5, 2.0):
        try:
            res = lm_fit(FitProblem(resid, 3, x.size, [-np.inf, 1e-3, -np.inf], [np.inf, 20.0, np.inf]),
                         [k0, b0, c0], max_iter=max_iter)
        except FitInputError:
            continue
        if best is None or res.residual_norm < best.residual_norm:
            best = res
    big_k, b, c = best.params
    k = big_k * x0 ** -b
    # delta method for k; b and c carry over unchanged
    g = np.array([x0 ** -b, -k * np.log(x0), 0.0])
    cov = best.covariance
    k_se = float(np.sqrt(max(g @ cov @ g, 0.0))) if np.all(np.isfinite(cov)) else float("nan")
    se = [k_se, best.standard_errors[1], best.standard_errors[2]]
    p = [k, b, c]
    return PowerLawFit(k=float(p[0]), b=float(p[1]), c=float(p[2]),
                       se={"k": float(se[0]), "b": float(se[1]), "c": float(se[2])},
                       converged=best.converged, n_support=(float(n.min()), float(n.max())),
                       power_points=sorted(powers))


# ---------------------------------------------------------------------------
# Loss budget
# ---------------------------------------------------------------------------

@dataclass
class LossBudget:
    delta_tls: float
    delta_other: float
    delta_power: float
    eval_power_dbm: float
    n_bar_eval: float = float("nan")
    extrapolated: bool = False
    warnings: list = field(default_factory=list)

    @property
    def total(self):
        return self.delta_tls + self.delta_other + self.delta_power


def n_bar_at_power(power_points, power_dbm):
    """
    <n> at a source power from (power_dbm, n_bar) pairs: the record itself if
    present, otherwise the nearest record scaled by the drive-power ratio.
    """
    if not power_points:
        raise ValueError("no (power, n_bar) pairs to evaluate <n> at a source power")
    pw = np.array([p for p, _ in power_points], float)
    nb = np.array([v for _, v in power_points], float)
    i = int(np.argmin(np.abs(pw - power_dbm)))
    return float(nb[i] * 10.0 ** ((power_dbm - pw[i]) / 10.0))


def loss_budget(tls: TLSFit, powerlaw: Optional[PowerLawFit], eval_power_dbm=10.0, n_bar_eval=None):
    """
    delta_tls = 1/Q_TLS0, delta_other = 1/Q_other and
    delta_power = 1/Q_i,powerlaw(<n>(eval power)) - 1/Q_other floored at 0.

    ``n_bar_eval`` overrides the photon number at the evaluation power;
    otherwise it is taken from the power-law records at the same source power.
    """
    notes = []
    d_tls = 1.0 / tls.q_tls0
    d_other = 1.0 / tls.q_other
    if powerlaw is None:
        return LossBudget(d_tls, d_other, float("nan"), float(eval_power_dbm),
                          warnings=["power-law fit unavailable; delta_power not evaluated"])
    n_eval = n_bar_eval if n_bar_eval is not None else n_bar_at_power(powerlaw.power_points, eval_power_dbm)
    lo, hi = powerlaw.n_support
    extrap = not (lo * (1 - 1e-12) <= n_eval <= hi * (1 + 1e-12))
    if extrap:
        notes.append(f"<n> = {n_eval:.4g} at {eval_power_dbm} dBm is outside the power-law support [{lo:.4g}, {hi:.4g}]")
    d_pow = 1.0 / float(powerlaw.q_i(n_eval)) - d_other
    if d_pow < 0:
        notes.append("power-law Q_i exceeds Q_other at the evaluation power; delta_power floored at 0")
        d_pow = 0.0
    if _curves_cross(tls, powerlaw):
        notes.append("power-law and TLS curves intersect inside the linear-regime window; Q_other may be underestimated")
    for msg in notes:
        log.warning(msg)
    return LossBudget(d_tls, d_other, float(d_pow), float(eval_power_dbm), float(n_eval), bool(extrap), notes)


def _curves_cross(tls: TLSFit, powerlaw: PowerLawFit, npts=200):
    lo, hi = tls.n_support
    lo = max(lo, 1.0 + 1e-9)
    if hi <= lo:
        return False
    n = np.geomspace(lo, hi, npts)
    d = np.log10(tls.q_i(n)) - powerlaw.log10_q_i(n)
    d = d[np.isfinite(d)]
    return bool(d.size and np.any(np.sign(d[1:]) != np.sign(d[:-1])))


# ---------------------------------------------------------------------------
# Group statistics
# ---------------------------------------------------------------------------

COMPONENTS = ("delta_tls", "delta_other", "delta_power")


def group_stats(groups):
    """
    ``groups`` maps a category to a list of LossBudgets (or dicts with the
    same keys). Returns ``(stats, notes)`` with
    ``stats[category][component] = {"mean", "sem", "n"}``; SEM is NaN for n = 1.
    """
    stats = {}
    notes = []
    for cat, items in groups.items():
        items = list(items)
        if not items:
            notes.append(f"category {cat!r} is empty and was omitted")
            continue
        out = {}
        for comp in COMPONENTS:
            vals = np.array([(it[comp] if isinstance(it, dict) else getattr(it, comp)) for it in items], float)
            vals = vals[np.isfinite(vals)]
            m = vals.size
            if m == 0:
                out[comp] = {"mean": float("nan"), "sem": float("nan"), "n": 0}
                continue
            sem = float(np.std(vals, ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
            out[comp] = {"mean": float(np.mean(vals)), "sem": sem, "n": int(m)}
        stats[cat] = out
    return stats, notes
