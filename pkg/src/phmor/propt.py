"""H2-optimal pH reduction in the pole-residue framework (PROPT-H2).

With matching feedthrough the squared H2 error splits into
``||H_sp||^2 + F(theta)`` where

    F = -2 sum_i b_i^T H_sp(-l_i) c_i
        + sum_{j,k} (b_j^T b_k)(c_k^T c_j) / (-l_j - l_k)

only needs the eigen-decomposition of the reduced matrix and ``r``
evaluations of the full-order strictly proper part.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from .dae import DescriptorSystem, FeedthroughData, estimate_feedthrough, semi_explicit_transform
from .errors import DefectiveMatrix, IndexTooHigh, NotPsd, PhMorError
from .norms import QuadratureConfig, h2_norm_quadrature
from .optimize import OptimizerConfig, minimize
from .param import (
    PhParameterVector,
    ReducedPhModel,
    assemble_ph,
    param_derivatives,
    sutv,
    upper_factor,
    utv,
)

log = logging.getLogger(__name__)

GAP_TOL = 1e-8


# --------------------------------------------------------------------------
# full-order evaluators


class StrictlyProperPart:
    """``H_sp(s) = H(s) - D0`` of a full-order model, evaluated in batches.

    ``fom`` may be a :class:`DescriptorSystem` (sparse solves) or a
    :class:`ReducedPhModel` (dense, used as a small synthetic FOM).
    """

    def __init__(self, fom, feedthrough):
        self.fom = fom
        self.feedthrough = feedthrough
        self.m = fom.m

    def __call__(self, s, derivative=False):
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        D0 = self.feedthrough.D0
        if isinstance(self.fom, DescriptorSystem):
            if derivative:
                H, dH = self.fom.transfer_batch(s, derivative=True)
                return H - D0, dH
            return self.fom.transfer_batch(s) - D0
        from . import _backend

        M = self.fom
        H, X, Y = _backend.resolvent_batch(M.A, M.B, M.C, s)
        H = H + (M.D - D0)
        if derivative:
            return H, -(Y @ X)
        return H


def feedthrough_of(fom, dense_limit=3000):
    """``D0`` via the semi-explicit split when affordable, else by sampling."""
    if isinstance(fom, ReducedPhModel):
        return FeedthroughData.from_sn(fom.S, fom.N)
    if fom.n <= dense_limit:
        try:
            return semi_explicit_transform(fom).feedthrough
        except IndexTooHigh:
            log.info("semi-explicit transform failed; estimating feedthrough by sampling")
    return estimate_feedthrough(fom)


# --------------------------------------------------------------------------
# feedthrough constraint


@dataclass
class FeedthroughConstraint:
    S0: np.ndarray
    N0: np.ndarray
    theta_N_fixed: np.ndarray
    theta_W2_fixed: np.ndarray
    n_W1: int
    n_W2: int
    indices: np.ndarray = field(repr=False)  # positions of theta_N and theta_W2 in theta

    def apply(self, theta):
        """Copy of ``theta`` with the fixed entries installed and frozen."""
        t = theta.theta.copy()
        sl = theta.slices
        t[sl["N"]] = self.theta_N_fixed
        t[theta.w2_indices] = self.theta_W2_fixed
        mask = theta.frozen_mask.copy()
        mask[self.indices] = True
        return PhParameterVector(theta.r, theta.m, t, mask)


def fix_feedthrough(theta, d0, psd_tol=1e-10):
    """Install ``S(theta) = S0`` and ``N(theta) = N0`` and freeze those entries.

    ``theta_N`` is the negated strict upper triangle of ``N0``; the trailing
    ``m x m`` block of ``vtu(theta_W)`` is an upper triangular factor of
    ``S0`` (see :func:`phmor.param.upper_factor`), which leaves ``W(theta)``
    PSD for every value of the remaining ``theta_W`` entries.

    Raises
    ------
    NotPsd
        If ``S0`` has an eigenvalue below ``-psd_tol * max(1, ||S0||)``.
    """
    S0 = np.asarray(d0.S0, dtype=float)
    N0 = np.asarray(d0.N0, dtype=float)
    m = theta.m
    if S0.size:
        w = np.linalg.eigvalsh(0.5 * (S0 + S0.T))
        if w[0] < -psd_tol * max(1.0, abs(w).max()):
            raise NotPsd(f"S0 has eigenvalue {w[0]:.3e} < 0")
    theta_N = -sutv(N0)
    theta_W2 = utv(upper_factor(S0))
    sl = theta.slices
    idx = np.concatenate([np.arange(sl["N"].start, sl["N"].stop), theta.w2_indices])
    n_W2 = m * (m + 1) // 2
    constraint = FeedthroughConstraint(
        S0=S0, N0=N0, theta_N_fixed=theta_N, theta_W2_fixed=theta_W2,
        n_W1=theta.sizes["W"] - n_W2, n_W2=n_W2, indices=idx,
    )
    return constraint.apply(theta), constraint


# --------------------------------------------------------------------------
# spectral data


@dataclass
class SpectralData:
    """Poles ``lambdas`` and residue factors ``b`` (rows ``b_i``), ``c`` (rows ``c_i``)."""

    lambdas: np.ndarray
    Z: np.ndarray
    Zinv: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def transfer(self, s):
        """Strictly proper part ``sum b_i c_i^T / (s - l_i)`` at the points ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        return np.einsum("ki,im,in->kmn", 1.0 / (s[:, None] - self.lambdas[None, :]), self.b, self.c)


def spectral_from_matrices(A, B, C, gap_tol=GAP_TOL):
    """Eigen-decomposition and residues of ``C (sI - A)^{-1} B``.

    Raises
    ------
    DefectiveMatrix
        If a pole is not in the open left half-plane or two poles are closer
        than ``gap_tol`` times the spectral radius.
    """
    lam, Z = spla.eig(A)
    rho = np.abs(lam).max(initial=0.0)
    if np.any(lam.real >= -1e-14 * rho) or rho == 0:
        raise DefectiveMatrix(f"poles not in the open left half-plane (max Re = {lam.real.max():.3e})")
    if lam.size > 1:
        gaps = np.abs(lam[:, None] - lam[None, :]) + np.diag(np.full(lam.size, np.inf))
        if gaps.min() <= gap_tol * rho:
            raise DefectiveMatrix(f"eigenvalue gap {gaps.min():.3e} below {gap_tol:g} * spectral radius")
    try:
        Zinv = np.linalg.inv(Z)
    except np.linalg.LinAlgError as exc:
        raise DefectiveMatrix("eigenvector matrix is singular") from exc
    return SpectralData(lambdas=lam, Z=Z, Zinv=Zinv, b=(C @ Z).T, c=Zinv @ B)


def spectral_decompose(theta, gap_tol=GAP_TOL):
    """Spectral data of the reduced model ``assemble_ph(theta)``."""
    model = assemble_ph(theta)
    return spectral_from_matrices(model.A, model.B, model.C, gap_tol)


# --------------------------------------------------------------------------
# objective and gradient


def _check_real(value, scale, what):
    if abs(value.imag) > 1e-10 * max(scale, 1e-300):
        raise DefectiveMatrix(f"{what} has imaginary residue {value.imag:.3e} (scale {scale:.3e})")
    return float(value.real)


def _objective_terms(spec, hsp, derivative):
    lam, b, c = spec.lambdas, spec.b, spec.c
    out = hsp(-lam, derivative=derivative)
    Hs, dHs = out if derivative else (out, None)
    t1 = -2.0 * np.einsum("im,imn,in->", b, Hs, c)
    inv = 1.0 / (-lam[:, None] - lam[None, :])
    BB = b @ b.T
    CC = c @ c.T
    t2 = np.sum(BB * CC.T * inv)
    return t1, t2, Hs, dHs, inv


def h2_objective(theta, hsp, spec=None):
    """``F(theta) = ||H - H_r||_H2^2 - ||H_sp||_H2^2`` (pole-residue form).

    ``hsp`` evaluates the full-order strictly proper part (see
    :class:`StrictlyProperPart`).
    """
    spec = spec or spectral_decompose(theta)
    t1, t2, *_ = _objective_terms(spec, hsp, derivative=False)
    return _check_real(t1 + t2, abs(t1) + abs(t2), "H2 objective")


def h2_value_and_gradient(theta, hsp, spec=None):
    """Objective and full-length gradient (zeros at frozen entries)."""
    model = assemble_ph(theta)
    spec = spec or spectral_from_matrices(model.A, model.B, model.C)
    t1, t2, Hs, dHs, inv = _objective_terms(spec, hsp, derivative=True)
    F = _check_real(t1 + t2, abs(t1) + abs(t2), "H2 objective")
    lam, b, c, Z, Zinv = spec.lambdas, spec.b, spec.c, spec.Z, spec.Zinv

    Hr = np.einsum("ik,km,kn->imn", inv, b, c)
    dHr = -np.einsum("ik,km,kn->imn", inv**2, b, c)
    delta = Hr - Hs
    gb = 2.0 * np.einsum("imn,in->im", delta, c)
    gc = 2.0 * np.einsum("imn,im->in", delta, b)
    glam = -2.0 * np.einsum("im,imn,in->i", b, dHr - dHs, c)

    K = gb @ b.T
    K = K.T - gc @ c.T
    with np.errstate(all="ignore"):
        Fm = 1.0 / (lam[None, :] - lam[:, None])
    np.fill_diagonal(Fm, 0.0)
    Kt = K * Fm + np.diag(glam)
    GA = Zinv.T @ Kt @ Z.T
    GB = Zinv.T @ gc
    GC = gb.T @ Z.T

    der = param_derivatives(theta, model)
    g = der.pullback(GA, GB, GC)
    scale = np.abs(g).max(initial=0.0)
    if np.abs(g.imag).max(initial=0.0) > 1e-8 * max(scale, 1e-300) + 1e-14:
        raise DefectiveMatrix("H2 gradient has a non-negligible imaginary part")
    g = g.real
    g[theta.frozen_mask] = 0.0
    return F, g


def h2_gradient(theta, hsp, spec=None):
    """Gradient of :func:`h2_objective`; frozen entries are exactly zero."""
    return h2_value_and_gradient(theta, hsp, spec)[1]


# --------------------------------------------------------------------------
# driver


class H2Problem:
    """Memoized objective/gradient pair for the optimizer.

    A (numerically) defective eigenvalue problem is retried once at a
    point perturbed by ``1e-8`` noise in the free entries; if that fails as
    well the point is reported as infeasible (``inf``).
    """

    def __init__(self, template, hsp, seed=0):
        self.template = template
        self.hsp = hsp
        self.rng = np.random.default_rng(seed)
        self._key = None
        self._val = None

    def _eval(self, x):
        key = x.tobytes()
        if key == self._key:
            return self._val
        theta = self.template.with_theta(x)
        try:
            val = h2_value_and_gradient(theta, self.hsp)
        except DefectiveMatrix:
            noise = self.rng.standard_normal(x.size) * 1e-8 * max(1.0, np.abs(x).max())
            noise[theta.frozen_mask] = 0.0
            try:
                val = h2_value_and_gradient(theta.with_theta(x + noise), self.hsp)
            except PhMorError:
                val = (np.inf, np.full(x.size, np.nan))
        except PhMorError:
            val = (np.inf, np.full(x.size, np.nan))
        self._key, self._val = key, val
        return val

    def f(self, x):
        return self._eval(x)[0]

    def grad(self, x):
        return self._eval(x)[1]


@dataclass
class ProptResult:
    model: ReducedPhModel
    history: list  # (iteration, F, ||grad||_inf, step)
    status: str
    feedthrough: FeedthroughData

    def __iter__(self):
        return iter((self.model, self.history))


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "F", "grad_norm", "step"])
        for it, F, g, step in history:
            w.writerow([it, repr(float(F)), repr(float(g)), repr(float(step))])


def propt_h2(fom, r, theta0=None, *, d0=None, config=None, seed=0, init_options=None):
    """Reduce ``fom`` to an order-``r`` pH-ODE minimizing the H2 error.

    Parameters
    ----------
    fom
        Index-one :class:`DescriptorSystem` (or a :class:`ReducedPhModel`
        acting as a small full-order model).
    r
        Reduced order.
    theta0
        Starting parameters; the feedthrough constraint is installed on top.
        Defaults to :func:`phmor.phinit.two_step_init`.
    d0
        Feedthrough of ``fom``; computed when omitted.
    config
        :class:`OptimizerConfig` for the main optimization.

    Returns
    -------
    ProptResult
        Unpacks as ``(model, history)``.
    """
    from .phinit import two_step_init

    d0 = d0 or feedthrough_of(fom)
    if theta0 is None:
        theta0 = two_step_init(fom, r, d0, seed=seed, **(init_options or {}))
    theta0, _ = fix_feedthrough(theta0, d0)
    hsp = StrictlyProperPart(fom, d0)
    prob = H2Problem(theta0, hsp, seed=seed)
    if not np.isfinite(prob.f(theta0.theta)):
        from .phinit import random_stable_theta

        log.warning("initial parameters infeasible for the pole-residue objective; using random stable init")
        theta0, _ = fix_feedthrough(random_stable_theta(r, fom.m, seed), d0)
        prob = H2Problem(theta0, hsp, seed=seed)
    cfg = config or OptimizerConfig(max_iters=2000)
    res = minimize(prob.f, prob.grad, theta0.theta, mask=theta0.frozen_mask, config=cfg)
    theta = theta0.with_theta(res.theta)
    return ProptResult(assemble_ph(theta), res.history, res.status.value, d0)


def h2_error(fom, model, d0=None, config=None, relative=True):
    """H2 error of the strictly proper parts, by quadrature of the error itself.

    Returns ``(error, norm_of_fom_sp)``; the error is divided by the norm
    when ``relative`` is set.
    """
    d0 = d0 or feedthrough_of(fom)
    hsp = StrictlyProperPart(fom, d0)
    cfg = config or QuadratureConfig()
    ref = h2_norm_quadrature(lambda s: hsp(s), cfg)
    ecfg = QuadratureConfig(**{**cfg.__dict__, "abs_tol": 1e-14 * max(ref.squared, 1e-300)})

    def err(s):
        return hsp(s) - model.transfer_batch(s, strictly_proper=True)

    e = h2_norm_quadrature(err, ecfg)
    if relative:
        return e.norm / ref.norm if ref.norm > 0 else e.norm, ref.norm
    return e.norm, ref.norm
