import numpy as np
import pytest

from reskit import _accel
from reskit.sigmodel import ResonatorParams, beta_for_a_n0

BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per kernel implementation."""
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


def make_params(a_n0=0.0, **kw):
    base = dict(a=0.9, alpha=0.3, tau=0.0, phi=0.1, q_l=5e4, q_c=8e4, f_r0=5e9, beta=0.0)
    base.update(kw)
    p = ResonatorParams(**base)
    if a_n0:
        p = p.with_(beta=beta_for_a_n0(a_n0, p.a, p.q_l, p.q_c))
    return p


@pytest.fixture
def params():
    return make_params()


def rel(a, b):
    return abs(a / b - 1.0)


def fit_from_params(p, se=None, dof=395):
    """A FullFitResult carrying the generating parameters, for downstream modules."""
    from reskit.respipe import PARAM_NAMES, FullFitResult

    se = se or {k: 0.0 for k in PARAM_NAMES}
    return FullFitResult(a=p.a, alpha=p.alpha, phi=p.phi, q_l=p.q_l, q_c=p.q_c, f_r0=p.f_r0, beta=p.beta,
                         tau=p.tau, standard_errors=dict(se), dof=dof, q_i=p.q_i, q_i_se=0.0,
                         q_i_ci=(p.q_i, p.q_i), q_c_corrected=p.q_c / np.cos(p.phi), converged=True,
                         residual_rms=0.0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s[4:8].strip().rstrip("."))):
            terminalreporter.write_line(line)
