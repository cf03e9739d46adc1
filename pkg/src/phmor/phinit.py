"""Structured initialization from an unstructured stable ROM.

Given a stable ``(A, B, C, D)`` with ``D = S0 - N0``, any ``K`` with a
positive definite solution ``Q`` of ``A^T Q + Q A + K K^T = 0`` yields the
pH-ODE

    J = (A Q^{-1} - Q^{-1} A^T) / 2,  R = -(A Q^{-1} + Q^{-1} A^T) / 2,

with ``(J - R) Q = A``. The input matrix ``G`` is free; ``(G, K)`` are fitted
to the residues of the unstructured model before the full optimization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from .dae import FeedthroughData
from .errors import NotPositiveDefinite, PhMorError, UnstableA
from .optimize import OptimizerConfig, minimize
from .param import PhParameterVector, ReducedPhModel, model_to_theta, n_theta, vtf

log = logging.getLogger(__name__)

RANDOM_INIT_SEED = 0
ZERO_MODEL_MARGIN = 1e-6


@dataclass
class UnstructuredRom:
    """Stable state-space model with its modal data.

    ``bt[i]`` and ``ct[i]`` hold ``C z_i`` and the ``i``-th row of
    ``Z^{-1} B``, so that ``C (sI - A)^{-1} B = sum bt_i ct_i^T / (s - l_i)``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        lam, Z = spla.eig(self.A)
        if np.any(lam.real >= 0):
            raise UnstableA(f"surrogate ROM has poles with Re >= 0 (max {lam.real.max():.3e})")
        self.lambdas = lam
        self.Z = Z
        self.Zinv = np.linalg.inv(Z)
        self.bt = (self.C @ Z).T
        self.ct = self.Zinv @ self.B

    @property
    def r(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def with_feedthrough(self, d0):
        return UnstructuredRom(self.A, self.B, self.C, d0.S0 - d0.N0)

    def transfer_batch(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        M = s[:, None, None] * np.eye(self.r) - self.A
        return self.C @ np.linalg.solve(M, np.broadcast_to(self.B, (len(s),) + self.B.shape)) + self.D


@dataclass
class InitParameterVector:
    """``theta_G`` (length ``r*m``) and ``theta_K`` (length ``r*p``)."""

    r: int
    m: int
    p: int
    theta_G: np.ndarray
    theta_K: np.ndarray

    def __post_init__(self):
        self.theta_G = np.asarray(self.theta_G, dtype=float).ravel()
        self.theta_K = np.asarray(self.theta_K, dtype=float).ravel()
        if self.theta_G.size != self.r * self.m or self.theta_K.size != self.r * self.p:
            raise ValueError("parameter lengths do not match r, m, p")

    @property
    def flat(self):
        return np.concatenate([self.theta_G, self.theta_K])

    @classmethod
    def from_flat(cls, x, r, m, p):
        return cls(r, m, p, x[: r * m], x[r * m :])

    @property
    def G(self):
        return vtf(self.theta_G, self.r, self.m)

    @property
    def K(self):
        return vtf(self.theta_K, self.r, self.p)


def lyap_certificate(A, theta_K, p=None, residual_tol=1e-10):
    """Solve ``A^T Q + Q A + K K^T = 0`` with ``K = vtf(theta_K, r, p)``.

    Raises
    ------
    UnstableA
        If ``A`` has an eigenvalue with nonnegative real part.
    NotPositiveDefinite
        If ``min eig(Q) <= 1e-12 * ||Q||``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    r = A.shape[0]
    theta_K = np.asarray(theta_K, dtype=float).ravel()
    p = p or theta_K.size // r
    K = vtf(theta_K, r, p)
    if np.any(np.linalg.eigvals(A).real >= 0):
        raise UnstableA("A is not Hurwitz")
    KK = K @ K.T
    Q = spla.solve_continuous_lyapunov(A.T, -KK)
    Q = 0.5 * (Q + Q.T)
    res = np.linalg.norm(A.T @ Q + Q @ A + KK)
    if res > residual_tol * max(np.linalg.norm(KK), 1e-300) * max(1.0, np.linalg.cond(A)):
        log.warning("Lyapunov residual %.3e is large", res)
    w = np.linalg.eigvalsh(Q)
    if w[0] <= 1e-12 * max(abs(w).max(), 0.0) or w[-1] <= 0:
        raise NotPositiveDefinite(f"Lyapunov certificate is not positive definite (min eig {w[0]:.3e})")
    return Q


def assemble_init_ph(rom, theta, Q=None):
    """pH model ``(J, R, Q, G, P=0, S0, N0)`` with ``(J - R) Q = rom.A``."""
    A = rom.A
    Q = lyap_certificate(A, theta.theta_K, theta.p) if Q is None else Q
    Qinv = np.linalg.inv(Q)
    Qinv = 0.5 * (Qinv + Qinv.T)
    AQ = A @ Qinv
    J = 0.5 * (AQ - AQ.T)
    R = -0.5 * (AQ + AQ.T)
    d0 = FeedthroughData.from_d0(rom.D)
    return ReducedPhModel(
        J=J, R=R, Q=Q, G=theta.G, P=np.zeros((rom.r, rom.m)), S=d0.S0, N=d0.N0
    )


def default_weights(rom):
    return 1.0 / np.abs(rom.lambdas)


def zero_model_loss(rom, weights=None):
    """Value of :func:`init_loss` for a model with vanishing residues."""
    w = default_weights(rom) if weights is None else np.asarray(weights, dtype=float)
    return float(np.sum(w * np.sum(np.abs(np.einsum("im,in->imn", rom.bt, rom.ct)) ** 2, axis=(1, 2))))


def init_loss(rom, theta, weights=None):
    """Residue-matching loss and its gradient with respect to ``[theta_G, theta_K]``.

    ``F0 = sum_i w_i ||bt_i ct_i^T - b_i c_i^T||_F^2`` with
    ``b_i = G^T Q z_i``, ``c_i = G^T Z^{-T} e_i`` and ``w_i = 1/|l_i|`` by
    default. The ``theta_K`` part differentiates ``Q`` through one Lyapunov
    solve per entry.
    """
    w = default_weights(rom) if weights is None else np.asarray(weights, dtype=float)
    r, p = rom.r, theta.p
    A, Z, Zinv = rom.A, rom.Z, rom.Zinv
    G, K = theta.G, theta.K
    Q = lyap_certificate(A, theta.theta_K, p)
    b = (G.T @ Q @ Z).T
    c = Zinv @ G
    delta = np.einsum("im,in->imn", rom.bt, rom.ct) - np.einsum("im,in->imn", b, c)
    F0 = float(np.sum(w * np.sum(np.abs(delta) ** 2, axis=(1, 2))))

    rho = w[:, None] * np.einsum("imn,in->im", delta.conj(), c)
    kappa = w[:, None] * np.einsum("imn,im->in", delta.conj(), b)
    gG = Q @ Z @ rho + Zinv.T @ kappa
    gQ = G @ rho.T @ Z.T
    grad_G = -2.0 * gG.real.ravel(order="F")
    grad_K = np.empty(r * p)
    for l in range(r * p):
        El = np.zeros(r * p)
        El[l] = 1.0
        El = vtf(El, r, p)
        dQ = spla.solve_continuous_lyapunov(A.T, -(El @ K.T + K @ El.T))
        grad_K[l] = -2.0 * np.sum(gQ.real * dQ)
    return F0, np.concatenate([grad_G, grad_K])


def _explicit_ode(fom, d0=None):
    """Dense ``(A, B, C, d0)`` of the strictly proper part of ``fom``."""
    from .dae import DescriptorSystem, semi_explicit_transform

    if isinstance(fom, DescriptorSystem):
        se = semi_explicit_transform(fom)
        E = se.E11
        if np.array_equal(E, np.diag(np.diag(E))):
            Einv = np.diag(1.0 / np.diag(E))
        else:
            Einv = np.linalg.inv(E)
        return Einv @ se.L11, Einv @ se.B, se.C, d0 or se.feedthrough
    return fom.A, fom.B, fom.C, d0 or FeedthroughData.from_sn(fom.S, fom.N)


def modal_truncation(fom, r, d0=None):
    """Unstructured order-``r`` ROM keeping the most dominant poles.

    Dominance of a pole is ``||residue|| / |Re l|`` on the strictly proper
    part of the semi-explicit form; conjugate pairs are kept together and
    the ROM is returned in a real basis.
    """
    A, B, C, d0 = _explicit_ode(fom, d0)
    lam, Zr = spla.eig(A)
    Zl = np.linalg.inv(Zr)
    res = np.linalg.norm(C @ Zr, axis=0) * np.linalg.norm(Zl @ B, axis=1)
    with np.errstate(divide="ignore"):
        dom = res / np.abs(lam.real)
    order = np.argsort(-dom, kind="stable")
    chosen = []
    slots = r
    for i in order:
        if slots == 0:
            break
        if lam[i].imag < 0:
            continue
        need = 1 if lam[i].imag == 0 else 2
        if need <= slots:
            chosen.append(i)
            slots -= need
    if slots:
        raise PhMorError(f"cannot select a real modal basis of order {r}")
    V, Wl = [], []
    for i in chosen:
        z, y = Zr[:, i], Zl[i, :]
        if lam[i].imag == 0:
            V.append(z.real)
            Wl.append(y.real)
        else:
            V += [z.real, z.imag]
            Wl += [y.real, y.imag]
    V = np.array(V).T
    Wl = np.array(Wl).T
    M = np.linalg.solve(Wl.T @ V, Wl.T)
    return UnstructuredRom(M @ A @ V, M @ B, C @ V, d0.S0 - d0.N0)


def _psd_factor(X):
    w, V = np.linalg.eigh(0.5 * (X + X.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def balanced_truncation(fom, r, d0=None, hsv_tol=1e-14):
    """Unstructured order-``r`` ROM by square-root balanced truncation.

    Works on the dense strictly proper part of the semi-explicit form, so it
    is meant for full-order models whose differential part fits in memory.

    Raises
    ------
    PhMorError
        If fewer than ``r`` Hankel singular values exceed ``hsv_tol`` times
        the largest one.
    """
    A, B, C, d0 = _explicit_ode(fom, d0)
    if np.any(np.linalg.eigvals(A).real >= 0):
        raise UnstableA("full-order differential part is not asymptotically stable")
    Lc = _psd_factor(spla.solve_continuous_lyapunov(A, -B @ B.T))
    Lo = _psd_factor(spla.solve_continuous_lyapunov(A.T, -C.T @ C))
    U, hsv, Vh = np.linalg.svd(Lo.T @ Lc)
    if hsv.size < r or hsv[r - 1] <= hsv_tol * hsv[0]:
        raise PhMorError(f"only {int(np.sum(hsv > hsv_tol * hsv[0]))} Hankel singular values are nonzero, need {r}")
    scale = hsv[:r] ** -0.5
    T = Lc @ Vh[:r].T * scale
    W = Lo @ U[:, :r] * scale
    return UnstructuredRom(W.T @ A @ T, W.T @ B, C @ T, d0.S0 - d0.N0)


SURROGATES = {"balanced": balanced_truncation, "modal": modal_truncation}


def _surrogate_rom(fom, r, d0, surrogate, dense_limit):
    """Resolve ``surrogate``: a ROM, a method name, or ``None`` for the default chain."""
    if surrogate is not None and not isinstance(surrogate, str):
        return surrogate
    if surrogate is not None:
        if surrogate not in SURROGATES:
            raise PhMorError(f"unknown surrogate {surrogate!r}; expected one of {sorted(SURROGATES)}")
        return SURROGATES[surrogate](fom, r, d0)
    if (getattr(fom, "n", None) or fom.r) <= dense_limit:
        try:
            return balanced_truncation(fom, r, d0)
        except (PhMorError, np.linalg.LinAlgError) as exc:
            log.info("balanced truncation unavailable (%s); using modal truncation", exc)
    return modal_truncation(fom, r, d0)


def random_stable_theta(r, m, seed=RANDOM_INIT_SEED):
    """Random parameters with unit diagonals in the ``R`` and ``Q`` factors.

    Entries are uniform on ``[-0.1, 0.1]``; the unit diagonals make ``R`` and
    ``Q`` positive definite, so the ROM is asymptotically stable.
    """
    theta = PhParameterVector.random(r, m, seed)
    sl = theta.slices
    t = theta.theta
    rows, cols = np.triu_indices(r + m)
    diag_w = np.flatnonzero((rows == cols) & (rows < r))
    t[sl["W"].start + diag_w] = 1.0
    rows, cols = np.triu_indices(r)
    t[sl["Q"].start + np.flatnonzero(rows == cols)] = 1.0
    return theta


def fit_init(rom, p=None, seed=0, config=None, weights=None):
    """Minimize the residue-matching loss; returns ``(InitParameterVector, F0)``."""
    r, m = rom.r, rom.m
    p = p or m
    rng = np.random.default_rng(seed)
    K0 = rng.standard_normal((r, p))
    x0 = InitParameterVector(r, m, p, rom.B.ravel(order="F"), K0.ravel(order="F")).flat
    cache = {}

    def evaluate(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            try:
                cache[key] = init_loss(rom, InitParameterVector.from_flat(x, r, m, p), weights)
            except PhMorError:
                cache[key] = (np.inf, np.full(x.size, np.nan))
        return cache[key]

    res = minimize(
        lambda x: evaluate(x)[0], lambda x: evaluate(x)[1], x0,
        config=config or OptimizerConfig(max_iters=1000, grad_tol=1e-12),
    )
    return InitParameterVector.from_flat(res.theta, r, m, p), res.fun


def two_step_init(fom, r, d0, *, p=None, seed=0, surrogate=None, config=None, weights=None, dense_limit=3000):
    """Parameter vector for :func:`phmor.propt.propt_h2` from a fitted Lyapunov-certificate init.

    1. unstructured ROM: ``surrogate`` if it is a model, the named method
       (``"balanced"`` or ``"modal"``) if it is a string, and otherwise
       :func:`balanced_truncation` when the FOM has at most ``dense_limit``
       states, with :func:`modal_truncation` as the fallback; ``D`` is
       overwritten by ``S0 - N0``;
    2. fit ``(theta_G, theta_K)`` to its residues;
    3. convert the resulting pH model to ``theta`` with ``theta_N`` and
       ``theta_W2`` fixed by the feedthrough.

    A fit that does not improve on the zero model counts as a failure.
    Any failure after step 1 starts falls back to :func:`random_stable_theta`
    with ``seed``; an unknown surrogate name raises :class:`PhMorError`.
    """
    from .propt import fix_feedthrough

    if isinstance(surrogate, str) and surrogate not in SURROGATES:
        raise PhMorError(f"unknown surrogate {surrogate!r}; expected one of {sorted(SURROGATES)}")
    try:
        rom = _surrogate_rom(fom, r, d0, surrogate, dense_limit)
        rom = UnstructuredRom(rom.A, rom.B, rom.C, d0.S0 - d0.N0)
        init, F0 = fit_init(rom, p=p, seed=seed, config=config, weights=weights)
        if F0 >= (1.0 - ZERO_MODEL_MARGIN) * zero_model_loss(rom, weights):
            # the fit collapsed to K = 0, a stationary point of the H2 objective
            raise PhMorError("fitted certificate init is no better than the zero model")
        model = assemble_init_ph(rom, init)
        theta = model_to_theta(model)
        if theta.theta.size != n_theta(r, fom.m) or not np.all(np.isfinite(theta.theta)):
            raise PhMorError("conversion to theta failed")
    except (PhMorError, np.linalg.LinAlgError) as exc:
        log.warning("two-step initialization failed (%s); using random stable init (seed %d)", exc, seed)
        theta = random_stable_theta(r, fom.m, seed)
    theta, _ = fix_feedthrough(theta, d0)
    return theta
