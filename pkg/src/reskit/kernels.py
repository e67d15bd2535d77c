"""
Hot numeric loops, each in two flavours: a numba-compiled version and a
pure-numpy version. The public names dispatch on ``_accel.USE_NUMBA``; the
``*_numpy`` and ``*_jit`` variants stay importable so tests and the benchmark
can compare them directly.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

TWO_PI = 2.0 * np.pi
# p(1) >= 0 holds exactly but can round negative when d = -eps; search a hair beyond 1
V_TOP = 1.0 + 1e-9


# ---------------------------------------------------------------------------
# Energy branch of the kinetic-inductance nonlinear resonator
#
# With v = |z - z_off|^2 / (a Q_l/Q_c)^2 in (0, 1], d = f/f_r0 - 1 and
# eps = beta * (a Q_l/Q_c)^2 the implicit transmission model becomes
#   p(v) = c3 v^3 + c2 v^2 + c1 v - 1 = 0
#   c3 = eps^2 (1 + 4 q^2)
#   c2 = -2 eps + 8 q^2 d eps - eps^2
#   c1 = 1 + 4 q^2 d^2 + 2 eps
# p(0) = -1 and p(1) = 4 q^2 (eps + d)^2 >= 0, so (0, 1] always holds a root.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _poly(c3, c2, c1, v):
    return ((c3 * v + c2) * v + c1) * v - 1.0


@njit(cache=True)
def _dpoly(c3, c2, c1, v):
    return (3.0 * c3 * v + 2.0 * c2) * v + c1


@njit(cache=True)
def _bracketed_root(c3, c2, c1, lo, hi):
    plo = _poly(c3, c2, c1, lo)
    phi = _poly(c3, c2, c1, hi)
    if plo == 0.0:
        return lo
    if phi == 0.0:
        return hi
    if plo > 0.0:
        lo, hi = hi, lo
    v = 0.5 * (lo + hi)
    for _ in range(200):
        p = _poly(c3, c2, c1, v)
        if p == 0.0:
            return v
        if p < 0.0:
            lo = v
        else:
            hi = v
        dp = _dpoly(c3, c2, c1, v)
        step_ok = False
        if dp != 0.0:
            vn = v - p / dp
            if (vn - lo) * (vn - hi) < 0.0:
                step_ok = True
        if not step_ok:
            vn = 0.5 * (lo + hi)
        if abs(vn - v) <= 4e-16 * max(abs(v), 1e-300):
            return vn
        v = vn
    return v


@njit(cache=True)
def _cubic_roots_unit(c3, c2, c1, out):
    """Real roots of the branch cubic in (0, 1], ascending. Returns the count."""
    if c3 == 0.0 and c2 == 0.0:
        out[0] = min(1.0 / c1, 1.0)
        return 1
    # split (0, 1] at the stationary points of p
    edges = np.empty(4)
    ne = 0
    edges[ne] = 0.0
    ne += 1
    disc = c2 * c2 - 3.0 * c3 * c1
    if c3 != 0.0 and disc > 0.0:
        sq = math.sqrt(disc)
        if c2 > 0.0:
            qq = -(c2 + sq)
        else:
            qq = -(c2 - sq)
        s1 = qq / (3.0 * c3)
        s2 = c1 / qq if qq != 0.0 else s1
        if s1 > s2:
            s1, s2 = s2, s1
        if 0.0 < s1 < 1.0:
            edges[ne] = s1
            ne += 1
        if 0.0 < s2 < 1.0 and s2 != s1:
            edges[ne] = s2
            ne += 1
    elif c3 == 0.0 and c2 != 0.0:
        s = -c1 / (2.0 * c2)
        if 0.0 < s < 1.0:
            edges[ne] = s
            ne += 1
    edges[ne] = V_TOP
    ne += 1
    n = 0
    for k in range(ne - 1):
        lo = edges[k]
        hi = edges[k + 1]
        plo = _poly(c3, c2, c1, lo)
        phi = _poly(c3, c2, c1, hi)
        if k > 0 and plo == 0.0:
            continue  # already reported as the previous interval's upper end
        if plo * phi <= 0.0:
            out[n] = min(_bracketed_root(c3, c2, c1, lo, hi), 1.0)
            n += 1
    return n


@njit(cache=True)
def _energy_branch_jit(detune, eps, q, v_start):
    npts = detune.shape[0]
    v = np.empty(npts)
    roots = np.empty(3)
    prev = v_start
    for i in range(npts):
        d = detune[i]
        c3 = eps * eps * (1.0 + 4.0 * q * q)
        c2 = -2.0 * eps + 8.0 * q * q * d * eps - eps * eps
        c1 = 1.0 + 4.0 * q * q * d * d + 2.0 * eps
        n = _cubic_roots_unit(c3, c2, c1, roots)
        if n == 0:
            v[i] = np.nan
            continue
        if n == 1:
            pick = roots[0]
        elif prev < 0.0:
            pick = roots[0]
        else:
            # the middle root of three is the unstable branch
            lo = roots[0]
            hi = roots[n - 1]
            pick = lo if abs(lo - prev) <= abs(hi - prev) else hi
        v[i] = pick
        prev = pick
    return v


def _real_cubic_roots_numpy(c3, c2, c1):
    """Vectorized roots of the branch cubic in (0, 1]; rows ascending, NaN-padded."""
    npts = c1.shape[0]
    c3b = np.broadcast_to(c3, c1.shape)
    # stationary points split (0, 1] into monotone pieces
    s1 = np.full(npts, np.nan)
    s2 = np.full(npts, np.nan)
    disc = c2 * c2 - 3.0 * c3b * c1
    cub = (c3b != 0.0) & (disc > 0.0)
    if np.any(cub):
        sq = np.sqrt(disc[cub])
        qq = np.where(c2[cub] > 0.0, -(c2[cub] + sq), -(c2[cub] - sq))
        r1 = qq / (3.0 * c3b[cub])
        with np.errstate(divide="ignore", invalid="ignore"):
            r2 = np.where(qq != 0.0, c1[cub] / qq, r1)
        s1[cub] = np.minimum(r1, r2)
        s2[cub] = np.maximum(r1, r2)
    quad = (c3b == 0.0) & (c2 != 0.0)
    if np.any(quad):
        s1[quad] = -c1[quad] / (2.0 * c2[quad])
    s1 = np.where((s1 > 0.0) & (s1 < 1.0), s1, np.nan)
    s2 = np.where((s2 > 0.0) & (s2 < 1.0) & (s2 != s1), s2, np.nan)
    edges = np.column_stack([np.zeros(npts), s1, s2, np.full(npts, V_TOP)])
    edges = np.sort(edges, axis=1)  # NaNs go last
    out = np.full((npts, 3), np.nan)

    def poly(v):
        return ((c3b * v + c2) * v + c1) * v - 1.0

    for k in range(3):
        lo = edges[:, k].copy()
        hi = edges[:, k + 1].copy()
        ok = np.isfinite(lo) & np.isfinite(hi)
        plo = np.where(ok, poly(np.nan_to_num(lo)), np.nan)
        phi = np.where(ok, poly(np.nan_to_num(hi)), np.nan)
        has = ok & (plo * phi <= 0.0)
        if k > 0:
            has &= plo != 0.0
        if not np.any(has):
            continue
        lo = lo[has]
        hi = hi[has]
        a3, a2, a1 = c3b[has], c2[has], c1[has]
        neg_lo = _poly_np(a3, a2, a1, lo) < 0.0
        lo_n = np.where(neg_lo, lo, hi)
        hi_p = np.where(neg_lo, hi, lo)
        for _ in range(64):
            mid = 0.5 * (lo_n + hi_p)
            pm = _poly_np(a3, a2, a1, mid)
            neg = pm < 0.0
            lo_n = np.where(neg, mid, lo_n)
            hi_p = np.where(neg, hi_p, mid)
        v = 0.5 * (lo_n + hi_p)
        for _ in range(2):
            pv = _poly_np(a3, a2, a1, v)
            dv = (3.0 * a3 * v + 2.0 * a2) * v + a1
            with np.errstate(divide="ignore", invalid="ignore"):
                vn = np.where(dv != 0.0, v - pv / dv, v)
            inside = (vn - np.minimum(lo_n, hi_p)) * (vn - np.maximum(lo_n, hi_p)) <= 0.0
            v = np.where(inside, vn, v)
        out[has, k] = np.minimum(v, 1.0)
    out.sort(axis=1)
    return out


def _poly_np(c3, c2, c1, v):
    return ((c3 * v + c2) * v + c1) * v - 1.0


def _energy_branch_numpy(detune, eps, q, v_start):
    c3 = np.full(detune.shape, eps * eps * (1.0 + 4.0 * q * q))
    c2 = -2.0 * eps + 8.0 * q * q * detune * eps - eps * eps
    c1 = 1.0 + 4.0 * q * q * detune * detune + 2.0 * eps
    roots = _real_cubic_roots_numpy(c3, c2, c1)
    count = np.sum(np.isfinite(roots), axis=1)
    v = roots[:, 0].copy()
    multi = np.flatnonzero(count > 1)
    if multi.size == 0:
        return v
    prev = v_start
    last = 0
    for i in multi:
        if i > last:
            prev = v[i - 1]
        lo = roots[i, 0]
        hi = roots[i, count[i] - 1]
        if prev < 0.0:
            pick = lo
        else:
            pick = lo if abs(lo - prev) <= abs(hi - prev) else hi
        v[i] = pick
        prev = pick
        last = i + 1
    return v


def energy_branch(detune, eps, q, v_start=-1.0):
    """
    Normalized circulating energy along a sweep, in sweep order.

    ``v_start < 0`` means a cold start (lowest-energy root at the first point).
    """
    detune = np.ascontiguousarray(detune, dtype=float)
    if _accel.USE_NUMBA:
        v = _energy_branch_jit(detune, float(eps), float(q), float(v_start))
    else:
        v = _energy_branch_numpy(detune, float(eps), float(q), float(v_start))
    return _polish(v, detune, float(eps), float(q))


def _polish(v, d, eps, q):
    # Newton on the factored form; the expanded cubic loses digits to
    # cancellation when q is large. A step is kept only if it lowers |r|.
    def resid(x):
        w = 1.0 - eps * x
        y = d + eps * x
        return x * w * w + 4.0 * q * q * x * y * y - w * w

    def deriv(x):
        w = 1.0 - eps * x
        y = d + eps * x
        return w * w - 2.0 * eps * x * w + 4.0 * q * q * y * (y + 2.0 * eps * x) + 2.0 * eps * w

    for _ in range(2):
        r = resid(v)
        dr = deriv(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            vn = np.where(dr != 0.0, v - r / dr, v)
        vn = np.minimum(vn, 1.0)
        keep = np.isfinite(vn) & (vn > 0.0) & (np.abs(resid(vn)) < np.abs(r))
        v = np.where(keep, vn, v)
    return v


def branch_roots(d, eps, q):
    """All admissible roots v in (0, 1] at a single normalized detuning."""
    c3 = eps * eps * (1.0 + 4.0 * q * q)
    c2 = -2.0 * eps + 8.0 * q * q * d * eps - eps * eps
    c1 = 1.0 + 4.0 * q * q * d * d + 2.0 * eps
    out = np.empty(3)
    n = _cubic_roots_unit(c3, c2, c1, out)
    return out[:n].copy()


# ---------------------------------------------------------------------------
# Gaussian smoothing with edge renormalization
# ---------------------------------------------------------------------------

def _gauss_kernel(sigma):
    half = int(math.ceil(4.0 * sigma))
    k = np.arange(-half, half + 1, dtype=float)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


@njit(cache=True)
def _smooth_jit(x, w):
    n = x.shape[0]
    half = (w.shape[0] - 1) // 2
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        norm = 0.0
        lo = max(0, i - half)
        hi = min(n - 1, i + half)
        for j in range(lo, hi + 1):
            wk = w[j - i + half]
            acc += wk * x[j]
            norm += wk
        out[i] = acc / norm
    return out


def _smooth_numpy(x, w):
    num = np.convolve(x, w, mode="same")
    den = np.convolve(np.ones_like(x), w, mode="same")
    if w.shape[0] > x.shape[0]:
        # np.convolve 'same' centres on the longer input; trim explicitly
        full_n = np.convolve(x, w, mode="full")
        full_d = np.convolve(np.ones_like(x), w, mode="full")
        half = (w.shape[0] - 1) // 2
        num = full_n[half:half + x.shape[0]]
        den = full_d[half:half + x.shape[0]]
    return num / den


def gaussian_filter(x, sigma):
    x = np.ascontiguousarray(x, dtype=float)
    if sigma == 0:
        return x.copy()
    w = _gauss_kernel(sigma)
    if _accel.USE_NUMBA:
        return _smooth_jit(x, w)
    return _smooth_numpy(x, w)


# ---------------------------------------------------------------------------
# Phase unwrapping with (possibly asymmetric) wrap thresholds
# ---------------------------------------------------------------------------

@njit(cache=True)
def _unwrap_jit(p, up, down):
    n = p.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    out[0] = p[0]
    shift = 0.0
    for i in range(1, n):
        d = p[i] - p[i - 1]
        if d > up:
            shift -= TWO_PI * math.ceil((d - up) / TWO_PI)
        elif d < -down:
            shift += TWO_PI * math.ceil((-down - d) / TWO_PI)
        out[i] = p[i] + shift
    return out


def _unwrap_numpy(p, up, down):
    if p.shape[0] == 0:
        return p.copy()
    d = np.diff(p)
    k = np.zeros_like(d)
    hi = d > up
    lo = d < -down
    k[hi] = -np.ceil((d[hi] - up) / TWO_PI)
    k[lo] = np.ceil((-down - d[lo]) / TWO_PI)
    out = p.copy()
    out[1:] += TWO_PI * np.cumsum(k)
    return out


def unwrap_thresholds(p, up, down):
    """Add multiples of 2 pi wherever a step rises above ``up`` or falls below ``-down``."""
    p = np.ascontiguousarray(p, dtype=float)
    if _accel.USE_NUMBA:
        return _unwrap_jit(p, float(up), float(down))
    return _unwrap_numpy(p, float(up), float(down))


# ---------------------------------------------------------------------------
# Scaling-energy bootstrap
# params rows: (a, alpha, q_l, q_c, f_r0, beta)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _nonlin_stats_jit(params, f, zr, zi, p_g):
    m = params.shape[0]
    n = f.shape[0]
    e_star = np.empty(m)
    a_n0 = np.empty(m)
    for k in range(m):
        a = params[k, 0]
        alpha = params[k, 1]
        ql = params[k, 2]
        qc = params[k, 3]
        fr0 = params[k, 4]
        beta = params[k, 5]
        xr = a * math.cos(alpha)
        xi = a * math.sin(alpha)
        pref = 2.0 * ql * ql / qc * p_g
        sxy = 0.0
        sxx = 0.0
        for i in range(n):
            dr = zr[i] - xr
            di = zi[i] - xi
            u = dr * dr + di * di
            dx = -beta * u
            fr = fr0 * (1.0 + dx)
            x = f[i] / fr - 1.0
            e = pref / (1.0 + 4.0 * ql * ql * x * x) / (TWO_PI * fr)
            sxy += dx * e
            sxx += dx * dx
        if sxx > 0.0:
            es = -sxy / sxx
            e_star[k] = es
            a_n0[k] = 2.0 * ql ** 3 / qc * p_g / (TWO_PI * fr0 * es)
        else:
            e_star[k] = np.nan
            a_n0[k] = np.nan
    return e_star, a_n0


def _nonlin_stats_numpy(params, f, zr, zi, p_g, chunk=2048):
    m = params.shape[0]
    e_star = np.empty(m)
    a_n0 = np.empty(m)
    for s in range(0, m, chunk):
        pr = params[s:s + chunk]
        a, alpha, ql, qc, fr0, beta = (pr[:, j][:, None] for j in range(6))
        u = (zr - a * np.cos(alpha)) ** 2 + (zi - a * np.sin(alpha)) ** 2
        dx = -beta * u
        fr = fr0 * (1.0 + dx)
        x = f / fr - 1.0
        e = 2.0 * ql ** 2 / qc * p_g / (1.0 + 4.0 * ql ** 2 * x ** 2) / (TWO_PI * fr)
        sxx = np.sum(dx * dx, axis=1)
        sxy = np.sum(dx * e, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            es = np.where(sxx > 0.0, -sxy / np.where(sxx > 0.0, sxx, 1.0), np.nan)
            an = 2.0 * ql[:, 0] ** 3 / qc[:, 0] * p_g / (TWO_PI * fr0[:, 0] * es)
        e_star[s:s + chunk] = es
        a_n0[s:s + chunk] = an
    return e_star, a_n0


def nonlin_stats(params, f, z, p_g):
    """Scaling energy and nonlinearity parameter for each parameter row."""
    params = np.ascontiguousarray(np.atleast_2d(params), dtype=float)
    f = np.ascontiguousarray(f, dtype=float)
    z = np.asarray(z, dtype=complex)
    zr = np.ascontiguousarray(z.real)
    zi = np.ascontiguousarray(z.imag)
    if _accel.USE_NUMBA:
        return _nonlin_stats_jit(params, f, zr, zi, float(p_g))
    return _nonlin_stats_numpy(params, f, zr, zi, float(p_g))


if _accel.HAVE_NUMBA:
    energy_branch_jit = _energy_branch_jit
    smooth_jit = _smooth_jit
    unwrap_jit = _unwrap_jit
    nonlin_stats_jit = _nonlin_stats_jit
energy_branch_numpy = _energy_branch_numpy
smooth_numpy = _smooth_numpy
unwrap_numpy = _unwrap_numpy
nonlin_stats_numpy = _nonlin_stats_numpy
