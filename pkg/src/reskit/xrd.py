"""
Diffraction peak analysis: pseudo-Voigt profiles and window fits, Bragg
spacing, c-lattice parameter and out-of-plane strain.
"""
import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numcore import FitInputError, FitProblem, lm_fit

CU_KA1_NM = 0.154060
CU_KA2_NM = 0.154443
BULK_D002_NM = 0.265
BULK_D004_NM = 0.133


@dataclass
class PseudoVoigtPeak:
    amplitude: float
    center_2theta: float
    fwhm: float
    eta: float
    r_squared: float = float("nan")
    background: tuple = (0.0, 0.0)
    se: Optional[dict] = None
    converged: bool = True

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError("fwhm must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")


def _profile(x, amp, center, fwhm, eta):
    dx = (np.asarray(x, float) - center) / fwhm
    lor = 1.0 / (1.0 + 4.0 * dx * dx)
    gau = np.exp(-4.0 * np.log(2.0) * dx * dx)
    return amp * (eta * lor + (1.0 - eta) * gau)


def pseudo_voigt_eval(peak: PseudoVoigtPeak, two_theta):
    """eta L + (1 - eta) G, both unit height at the centre and sharing the FWHM."""
    return _profile(two_theta, peak.amplitude, peak.center_2theta, peak.fwhm, peak.eta)


def read_diffractogram(path):
    """Two-column CSV with a header row: two_theta_deg, counts."""
    tt, counts = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected two columns")
            try:
                tt.append(float(row[0]))
                counts.append(float(row[1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not tt:
        raise ValueError(f"{path}: no data rows")
    return np.array(tt), np.array(counts)


def _fit_window(xw, yw, pk, lo, hi, nb, max_iter):
    xc = 0.5 * (xw[0] + xw[-1])

    def resid(p):
        bg = p[4] + (p[5] * (xw - xc) if nb == 2 else 0.0)
        return _profile(xw, p[0], p[1], p[2], p[3]) + bg - yw

    bg0 = float(np.median(np.concatenate([yw[:3], yw[-3:]])))
    x0 = [pk.amplitude, pk.center_2theta, pk.fwhm, pk.eta, bg0] + ([0.0] if nb == 2 else [])
    span = xw[-1] - xw[0]
    # a profile narrower than the sampling is not resolvable
    w_min = max(2.0 * float(np.median(np.diff(xw))), 0.1 * pk.fwhm)
    lo_b = [-np.inf, lo, w_min, 0.0, -np.inf] + ([-np.inf] if nb == 2 else [])
    hi_b = [np.inf, hi, span, 1.0, np.inf] + ([np.inf] if nb == 2 else [])
    x0 = np.clip(x0, lo_b, hi_b)
    amp_scale = max(abs(pk.amplitude), np.ptp(yw), 1.0)
    scale = [amp_scale, pk.fwhm, pk.fwhm, 1.0, amp_scale] + ([amp_scale / span] if nb == 2 else [])
    res = lm_fit(FitProblem(resid, 4 + nb, xw.size, lo_b, hi_b), x0, max_iter=max_iter, x_scale=scale)
    p = res.params
    sst = np.sum((yw - yw.mean()) ** 2)
    r2 = 1.0 - res.residual_norm ** 2 / sst if sst > 0 else float("nan")
    names = ["amplitude", "center_2theta", "fwhm", "eta", "bg_const"] + (["bg_slope"] if nb == 2 else [])
    return PseudoVoigtPeak(
        amplitude=float(p[0]), center_2theta=float(p[1]), fwhm=float(p[2]), eta=float(p[3]),
        r_squared=float(r2), background=(float(p[4]), float(p[5]) if nb == 2 else 0.0),
        se={n: float(s) for n, s in zip(names, res.standard_errors)}, converged=res.converged,
    )


def fit_peaks(two_theta, counts, init_peaks, background="linear", window_fwhm=6.0, windows=None,
              max_iter=400, neighbour_passes=1):
    """
    Fit each initial peak inside its own window with a pseudo-Voigt plus a
    constant or linear background.

    ``init_peaks`` holds PseudoVoigtPeaks (or dicts with the same fields).
    The window defaults to ``center +- window_fwhm * fwhm``; ``windows`` may
    give explicit ``(lo, hi)`` intervals instead. After the first pass each
    window is refitted ``neighbour_passes`` times with the other fitted
    profiles subtracted, so long Lorentzian tails do not leak between
    windows. Peaks whose fit does not converge are returned with
    ``converged=False``.
    """
    x = np.asarray(two_theta, float)
    y = np.asarray(counts, float)
    if background not in ("constant", "linear"):
        raise ValueError("background must be 'constant' or 'linear'")
    nb = 1 if background == "constant" else 2
    peaks = [PseudoVoigtPeak(**pk) if isinstance(pk, dict) else pk for pk in init_peaks]
    masks = []
    for k, pk in enumerate(peaks):
        if windows is not None:
            lo, hi = windows[k]
        else:
            lo = pk.center_2theta - window_fwhm * pk.fwhm
            hi = pk.center_2theta + window_fwhm * pk.fwhm
        m = (x >= lo) & (x <= hi)
        if m.sum() < 10:
            raise FitInputError(f"peak {k}: window [{lo}, {hi}] holds {int(m.sum())} samples, need >= 10")
        masks.append((m, lo, hi))
    fits = [_fit_window(x[m], y[m], pk, lo, hi, nb, max_iter) for pk, (m, lo, hi) in zip(peaks, masks)]
    if len(fits) > 1:
        for _ in range(neighbour_passes):
            prev = fits
            fits = []
            for k, (m, lo, hi) in enumerate(masks):
                others = sum(pseudo_voigt_eval(q, x[m]) for j, q in enumerate(prev) if j != k)
                fits.append(_fit_window(x[m], y[m] - others, prev[k], lo, hi, nb, max_iter))
    return fits


def bragg_spacing(two_theta_deg, lambda_nm=CU_KA1_NM, order=1):
    """d = n lambda / (2 sin theta)."""
    tt = np.asarray(two_theta_deg, float)
    if np.any(tt <= 0) or np.any(tt >= 180):
        raise ValueError("2 theta must lie in (0, 180) degrees")
    s = np.sin(np.deg2rad(tt / 2.0))
    if np.any(s == 0):
        raise ValueError("sin(theta) = 0")
    d = order * lambda_nm / (2.0 * s)
    return float(d) if d.ndim == 0 else d


def c_lattice(d_hkl_nm, l_index):
    """c = l d for (00l) reflections, l in {1, 2, 4}."""
    if l_index not in (1, 2, 4):
        raise ValueError(f"unsupported (00l) index {l_index}; use 1, 2 or 4")
    if not d_hkl_nm > 0:
        raise ValueError("d must be positive")
    return l_index * d_hkl_nm


def out_of_plane_strain(d_meas_nm, d_bulk_nm=BULK_D002_NM):
    if not d_bulk_nm > 0:
        raise ValueError("bulk spacing must be positive")
    return (d_meas_nm - d_bulk_nm) / d_bulk_nm


@dataclass
class LatticeResult:
    d_hkl_nm: float
    c_nm: float
    strain_zz: float


def lattice_from_peak(two_theta_deg, l_index, lambda_nm=CU_KA1_NM, d_bulk_nm=None):
    d = bragg_spacing(two_theta_deg, lambda_nm)
    if d_bulk_nm is None:
        d_bulk_nm = {2: BULK_D002_NM, 4: BULK_D004_NM}.get(l_index, BULK_D002_NM * 2 / l_index)
    return LatticeResult(d, c_lattice(d, l_index), out_of_plane_strain(d, d_bulk_nm))
