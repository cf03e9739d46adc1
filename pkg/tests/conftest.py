import numpy as np
import pytest
import scipy.sparse as sp

from phmor import _backend, _kernels_py
from phmor.dae import DescriptorSystem
from phmor.param import PhParameterVector, ReducedPhModel

BACKENDS = ["python"] + (["compiled"] if _backend.BACKEND == "compiled" else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available resolvent kernel."""
    if request.param == "python":
        monkeypatch.setattr(_backend, "resolvent_batch", _kernels_py.resolvent_batch)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def scalar_system(E=1.0, J=0.0, R=1.0, G=1.0, P=0.0, S=0.0, N=0.0):
    return DescriptorSystem(E=[[E]], J=[[J]], R=[[R]], G=[[G]], P=[[P]], S=[[S]], N=[[N]])


def random_index1(rng, n=8, m=2, n_alg=3, dense=False):
    """Random normalized index-one pH-DAE with ``E = diag(E11, 0)``."""
    n1 = n - n_alg
    E = np.diag(np.concatenate([rng.uniform(0.5, 2.0, n1), np.zeros(n_alg)]))
    T = rng.standard_normal((n, n))
    J = T - T.T
    F = rng.standard_normal((n + m, n + m)) * 0.5
    W = F @ F.T + np.diag(np.concatenate([rng.uniform(0.2, 1.0, n), np.zeros(m)]))
    G = rng.standard_normal((n, m))
    Nt = np.triu(rng.standard_normal((m, m)), 1)
    mats = dict(E=E, J=J, R=W[:n, :n], G=G, P=W[:n, n:], S=W[n:, n:], N=Nt - Nt.T)
    if not dense:
        mats = {k: (sp.csr_matrix(v) if k not in ("S", "N") else v) for k, v in mats.items()}
    return DescriptorSystem(**mats)


def stable_theta(rng, r, m, scale=0.5):
    """Random parameters whose ROM is asymptotically stable (``R``, ``Q`` positive definite)."""
    theta = PhParameterVector.random(r, m, rng, scale=scale)
    t = theta.theta
    sl = theta.slices
    rows, cols = np.triu_indices(r + m)
    t[sl["W"].start + np.flatnonzero((rows == cols) & (rows < r))] += 1.0
    rows, cols = np.triu_indices(r)
    t[sl["Q"].start + np.flatnonzero(rows == cols)] += 1.0
    return theta


def dense_fom(rng, r, m):
    """Small dense pH-ODE used as a full-order model."""
    from phmor.param import assemble_ph

    model = assemble_ph(stable_theta(rng, r, m))
    return ReducedPhModel(J=model.J, R=model.R, Q=model.Q, G=model.G, P=model.P, S=model.S, N=model.N)


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
