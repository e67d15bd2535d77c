"""Kinetic-inductance fraction from measured vs designed frequencies, and its width scaling."""
import logging
import warnings
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

OPEN = "open"
SHORT = "short"


@dataclass(frozen=True)
class WidthFrequencyPoint:
    width_um: float
    f_meas_hz: float
    f_design_hz: float
    end_type: str

    def __post_init__(self):
        if not self.width_um > 0:
            raise ValueError("width must be positive")
        if not 0 < self.f_meas_hz <= self.f_design_hz:
            raise ValueError("need 0 < f_meas <= f_design")
        if self.end_type not in (OPEN, SHORT):
            raise ValueError(f"end_type must be 'open' or 'short', got {self.end_type!r}")

    @property
    def alpha_l(self):
        return alpha_fraction(self.f_meas_hz, self.f_design_hz)


def alpha_fraction(f_meas, f_design):
    """alpha_L = 1 - (f_meas/f_design)^2."""
    f_meas = np.asarray(f_meas, float)
    f_design = np.asarray(f_design, float)
    if np.any(f_meas <= 0) or np.any(f_design <= 0):
        raise ValueError("frequencies must be positive")
    if np.any(f_meas > f_design):
        raise ValueError("measured frequency above design frequency gives a negative fraction")
    # (f_d - f_m)(f_d + f_m)/f_d^2: the difference is exact, so no cancellation near alpha = 0
    out = (f_design - f_meas) * (f_design + f_meas) / (f_design * f_design)
    return float(out) if out.ndim == 0 else out


def f_meas_for_alpha(alpha_l, f_design):
    return f_design * np.sqrt(1.0 - alpha_l)


def _ols(x, y):
    xm = x.mean()
    ym = y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise ValueError("need at least two distinct widths")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    icpt = ym - slope * xm
    res = y - (slope * x + icpt)
    sst = np.sum((y - ym) ** 2)
    r2 = 1.0 - np.sum(res ** 2) / sst if sst > 0 else 1.0
    return float(slope), float(icpt), float(r2)


def fit_inverse_alpha_vs_width(points):
    """
    Ordinary least squares of 1/alpha_L against width, separately per end type.

    Returns ``{end_type: {"slope", "intercept", "r_squared", "intercept_deviation",
    "n_points", "excluded"}}``; the intercept is free and its distance from 1
    is reported only as a diagnostic. Points with alpha_L = 0 are excluded.
    """
    groups = {}
    for p in points:
        groups.setdefault(p.end_type, []).append(p)
    out = {}
    for end, pts in sorted(groups.items()):
        alpha = np.array([p.alpha_l for p in pts])
        width = np.array([p.width_um for p in pts])
        zero = alpha == 0
        if np.any(zero):
            warnings.warn(f"{int(zero.sum())} '{end}' points with alpha_L = 0 excluded (1/alpha_L infinite)")
        width = width[~zero]
        inv = 1.0 / alpha[~zero]
        if np.unique(width).size < 3:
            raise ValueError(f"group '{end}' needs at least 3 distinct widths, has {np.unique(width).size}")
        slope, icpt, r2 = _ols(width, inv)
        out[end] = {"slope": slope, "intercept": icpt, "r_squared": r2, "intercept_deviation": icpt - 1.0,
                    "n_points": int(width.size), "excluded": int(zero.sum())}
    return out
