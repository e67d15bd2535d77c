"""
Synthetic power ladders: one resonator swept over source power with Q_i set by
TLS saturation, a power-independent loss and an optional high-power loss
tail, and the frequency pull set by a scaling energy E*.
"""
from dataclasses import dataclass, field, asdict

import numpy as np

from .nonlin import beta_from_e_star
from .powersweep import REGIME_THRESHOLD, p_g_watts, photon_number, q_tls
from .sigmodel import GridSpec, ResonatorParams, synth_trace


@dataclass
class LadderSpec:
    q_tls0: float = 5e5
    n_c: float = 10.0
    alpha_tls: float = 0.8
    q_other: float = 8e5
    q_c: float = 1e5
    f_r0: float = 5e9
    e_star: float = 2.5e-11
    a: float = 0.9
    alpha: float = 0.3
    phi: float = 0.15
    tau: float = 40e-9
    tail_delta: float = 1.5e-6
    tail_exponent: float = 1.0
    tail_n_ref: float = 1e8
    temperature_k: float = 0.015
    attenuation_db: float = -75.0
    powers_dbm: tuple = tuple(range(-80, -14, 5)) + (-4, -1, 2, 5, 8, 10)
    n_points: int = 401
    span_linewidths: float = 12.0
    noise_sigma: float = 0.0
    seed: int = 0
    direction: str = "up"

    def to_dict(self):
        d = asdict(self)
        d["powers_dbm"] = list(self.powers_dbm)
        return d


def tail_loss(spec: LadderSpec, n_bar):
    return spec.tail_delta * (np.asarray(n_bar, float) / spec.tail_n_ref) ** spec.tail_exponent


def q_i_truth(spec: LadderSpec, n_bar):
    loss = 1.0 / q_tls(n_bar, spec.q_tls0, spec.n_c, spec.alpha_tls, spec.f_r0, spec.temperature_k)
    return 1.0 / (loss + 1.0 / spec.q_other + tail_loss(spec, n_bar))


def ladder_point(spec: LadderSpec, power_dbm):
    """Self-consistent operating point at one source power."""
    p_g = p_g_watts(power_dbm, spec.attenuation_db)
    cphi = np.cos(spec.phi)
    n = 0.0
    for _ in range(200):
        qi = q_i_truth(spec, n)
        ql = 1.0 / (1.0 / qi + cphi / spec.q_c)
        n_new = photon_number(ql, spec.q_c, spec.f_r0, p_g)
        if abs(n_new - n) <= 1e-14 * n_new:
            n = n_new
            break
        n = n_new
    qi = q_i_truth(spec, n)
    ql = 1.0 / (1.0 / qi + cphi / spec.q_c)
    beta = beta_from_e_star(spec.e_star, spec.a, spec.q_c, spec.f_r0, p_g)
    params = ResonatorParams(a=spec.a, alpha=spec.alpha, tau=spec.tau, phi=spec.phi, q_l=ql, q_c=spec.q_c,
                             f_r0=spec.f_r0, beta=beta)
    return {
        "source_power_dbm": float(power_dbm), "p_g_w": p_g, "n_bar": float(n), "q_i": float(qi),
        "q_l": float(ql), "beta": float(beta), "a_n0": float(params.a_n0),
        "regime": "linear" if params.a_n0 < REGIME_THRESHOLD else "nonlinear", "params": params,
    }


@dataclass
class Ladder:
    spec: LadderSpec
    points: list
    sweeps: list = field(repr=False)

    def truth_table(self):
        return [{k: v for k, v in p.items() if k != "params"} for p in self.points]


def build_ladder(spec: LadderSpec = LadderSpec()):
    points = []
    sweeps = []
    for i, pw in enumerate(spec.powers_dbm):
        pt = ladder_point(spec, pw)
        grid = GridSpec(n_points=spec.n_points, span_linewidths=spec.span_linewidths)
        sw = synth_trace(pt["params"], grid, noise_sigma=spec.noise_sigma,
                         seed=None if spec.noise_sigma == 0 else [spec.seed, i], direction=spec.direction,
                         source_power_dbm=pw, attenuation_db=spec.attenuation_db,
                         temperature_k=spec.temperature_k)
        points.append(pt)
        sweeps.append(sw)
    return Ladder(spec, points, sweeps)
