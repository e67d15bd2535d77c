"""
Forward model of a hanger-coupled resonator, linear and with a
kinetic-inductance (energy-dependent resonance frequency) nonlinearity, plus
a synthetic sweep generator.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import kernels

UP = "up"
DOWN = "down"


@dataclass(frozen=True)
class ResonatorParams:
    a: float
    alpha: float
    tau: float
    phi: float
    q_l: float
    q_c: float
    f_r0: float
    beta: float = 0.0

    def __post_init__(self):
        if not (self.q_l > 0 and self.q_c > 0):
            raise ValueError("quality factors must be positive")
        if not self.a > 0:
            raise ValueError("off-resonance magnitude a must be positive")
        if not self.f_r0 > 0:
            raise ValueError("f_r0 must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def z_off(self):
        return self.a * np.exp(1j * self.alpha)

    @property
    def radius(self):
        """Radius of the resonance circle in the complex plane."""
        return self.a * self.q_l / (2.0 * self.q_c)

    @property
    def a_n0(self):
        """Nonlinearity parameter implied by beta: Q_l * beta * (a Q_l/Q_c)^2."""
        return self.q_l * self.beta * (self.a * self.q_l / self.q_c) ** 2

    @property
    def q_i(self):
        return 1.0 / (1.0 / self.q_l - np.cos(self.phi) / self.q_c)

    def with_(self, **kw):
        return replace(self, **kw)


def beta_for_a_n0(a_n0, a, q_l, q_c):
    """Inverse of ``ResonatorParams.a_n0``."""
    return a_n0 / (q_l * (a * q_l / q_c) ** 2)


@dataclass
class FrequencySweep:
    freqs_hz: np.ndarray
    s21: np.ndarray
    source_power_dbm: float = 0.0
    attenuation_db: float = -75.0
    temperature_k: float = 0.015
    sweep_direction: str = UP

    def __post_init__(self):
        self.freqs_hz = np.asarray(self.freqs_hz, dtype=float)
        self.s21 = np.asarray(self.s21, dtype=complex)
        if self.freqs_hz.ndim != 1 or self.freqs_hz.shape != self.s21.shape:
            raise ValueError("freqs_hz and s21 must be 1-D and of equal length")
        if self.freqs_hz.size and np.any(np.diff(self.freqs_hz) <= 0):
            raise ValueError("frequencies must be strictly increasing (storage is ascending)")
        if not np.all(np.isfinite(self.s21)):
            raise ValueError("s21 contains non-finite values")
        if self.sweep_direction not in (UP, DOWN):
            raise ValueError(f"sweep_direction must be 'up' or 'down', got {self.sweep_direction!r}")

    def __len__(self):
        return self.freqs_hz.size

    @property
    def p_g_w(self):
        """Power at the feedline, W."""
        return 10.0 ** ((self.source_power_dbm + self.attenuation_db) / 10.0 - 3.0)


def eval_linear_z(params: ResonatorParams, f):
    f = np.asarray(f, dtype=float)
    den = 1.0 + 2j * params.q_l * (f - params.f_r0) / params.f_r0
    return params.z_off * (1.0 - (params.q_l / params.q_c) * np.exp(1j * params.phi) / den)


def _z_from_energy(params, f, v):
    eps = params.beta * (params.a * params.q_l / params.q_c) ** 2
    fr = params.f_r0 * (1.0 - eps * v)
    # f - f_r written without subtracting two nearly equal large numbers
    den = 1.0 + 2j * params.q_l * ((f - params.f_r0) + params.f_r0 * eps * v) / fr
    return params.z_off * (1.0 - (params.q_l / params.q_c) * np.exp(1j * params.phi) / den)


def _normalized_detuning(params, f):
    return (np.asarray(f, dtype=float) - params.f_r0) / params.f_r0


def eval_nonlinear_z(params: ResonatorParams, f, state: Optional[float] = None):
    """
    Self-consistent transmission at a single frequency.

    ``state`` is the normalized energy ``|z - z_off|^2 / (a Q_l/Q_c)^2`` of the
    previous sweep point (None for a cold start). Returns ``(z, new_state)``.
    When several solutions coexist the unstable middle one is never chosen;
    of the remaining two, the one nearest ``state`` wins, and a cold start
    takes the low-energy solution connected to the off-resonance response.
    """
    eps = params.beta * (params.a * params.q_l / params.q_c) ** 2
    d = _normalized_detuning(params, np.atleast_1d(f))
    v = kernels.energy_branch(d, eps, params.q_l, -1.0 if state is None else state)
    if not np.isfinite(v[0]):
        raise ArithmeticError("no admissible energy root; model parameters are unphysical")
    z = _z_from_energy(params, float(np.asarray(f)), v[0])
    return complex(z), float(v[0])


def nonlinear_z_trace(params: ResonatorParams, freqs, direction=UP):
    """
    Transmission along a sweep. ``freqs`` is ascending; the solution is
    continued in the order the sweep visits them.
    """
    f = np.asarray(freqs, dtype=float)
    if params.beta == 0:
        return eval_linear_z(params, f)
    eps = params.beta * (params.a * params.q_l / params.q_c) ** 2
    d = _normalized_detuning(params, f)
    if direction == UP:
        v = kernels.energy_branch(d, eps, params.q_l)
    else:
        v = kernels.energy_branch(d[::-1].copy(), eps, params.q_l)[::-1]
    if not np.all(np.isfinite(v)):
        raise ArithmeticError("no admissible energy root; model parameters are unphysical")
    return _z_from_energy(params, f, v)


def energy_trace(params: ResonatorParams, freqs, direction=UP):
    """|z - z_off|^2 along a sweep, as tracked by the synthesizer."""
    z = nonlinear_z_trace(params, freqs, direction)
    return np.abs(z - params.z_off) ** 2


def eval_s21(params: ResonatorParams, f, direction=UP):
    f = np.asarray(f, dtype=float)
    z = nonlinear_z_trace(params, np.atleast_1d(f), direction) if params.beta > 0 else eval_linear_z(params, f)
    out = np.exp(-2j * np.pi * f * params.tau) * np.reshape(z, f.shape)
    return out if out.ndim else complex(out)


def apply_delay(freqs, z, tau):
    return np.exp(-2j * np.pi * np.asarray(freqs, float) * tau) * np.asarray(z, complex)


@dataclass(frozen=True)
class GridSpec:
    """
    Frequency grid centred on ``center_hz`` (default f_r0). The span is
    ``span_linewidths`` loaded linewidths (f_r0/Q_l) unless ``span_hz`` is set.
    """
    n_points: int = 401
    span_linewidths: float = 10.0
    span_hz: Optional[float] = None
    center_hz: Optional[float] = None
    allow_narrow: bool = False

    def frequencies(self, params: ResonatorParams):
        if self.n_points < 1:
            raise ValueError("grid needs at least one point")
        lw = params.f_r0 / params.q_l
        span = self.span_hz if self.span_hz is not None else self.span_linewidths * lw
        if span < 5 * lw and not self.allow_narrow:
            raise ValueError("grid must cover at least 5 linewidths (set allow_narrow to override)")
        c = params.f_r0 if self.center_hz is None else self.center_hz
        if self.n_points == 1:
            return np.array([c])
        return np.linspace(c - span / 2, c + span / 2, self.n_points)


def synth_trace(params: ResonatorParams, grid=GridSpec(), noise_sigma=0.0, seed=None,
                direction=UP, source_power_dbm=0.0, attenuation_db=-75.0, temperature_k=0.015):
    """
    Synthetic sweep: delayed transmission plus independent Gaussian noise of
    standard deviation ``noise_sigma`` on each quadrature.
    """
    f = grid.frequencies(params) if isinstance(grid, GridSpec) else np.asarray(grid, dtype=float)
    z = nonlinear_z_trace(params, f, direction)
    s21 = apply_delay(f, z, params.tau)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, noise_sigma, size=(2, f.size))
        s21 = s21 + noise[0] + 1j * noise[1]
    return FrequencySweep(f, s21, source_power_dbm=source_power_dbm, attenuation_db=attenuation_db,
                          temperature_k=temperature_k, sweep_direction=direction)
