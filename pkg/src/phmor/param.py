"""Parameterization of reduced pH-ODEs by an unconstrained real vector.

The vector ``theta = [theta_J, theta_W, theta_Q, theta_G, theta_N]`` is
mapped to

    J = vtsu(theta_J)^T - vtsu(theta_J)
    W = vtu(theta_W) vtu(theta_W)^T = [[R, P], [P^T, S]]
    Q = vtu(theta_Q) vtu(theta_Q)^T
    G = vtf(theta_G, r, m)
    N = vtsu(theta_N)^T - vtsu(theta_N)

so that every ``theta`` yields a port-Hamiltonian system with ``E_r = I``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .dae import DescriptorSystem, TransferSample
from .errors import LengthMismatch, SingularShift


def vtu(v, n):
    """Fill an ``n x n`` upper triangle (diagonal included) row by row."""
    v = np.asarray(v, dtype=float)
    if v.size != n * (n + 1) // 2:
        raise LengthMismatch(f"vtu: expected {n * (n + 1) // 2} entries for n={n}, got {v.size}")
    M = np.zeros((n, n))
    M[np.triu_indices(n)] = v
    return M


def vtsu(v, n):
    """Fill an ``n x n`` strict upper triangle row by row."""
    v = np.asarray(v, dtype=float)
    if v.size != n * (n - 1) // 2:
        raise LengthMismatch(f"vtsu: expected {n * (n - 1) // 2} entries for n={n}, got {v.size}")
    M = np.zeros((n, n))
    M[np.triu_indices(n, 1)] = v
    return M


def vtf(v, rows, cols):
    """Column-major reshape of a vector to ``rows x cols``."""
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise LengthMismatch(f"vtf: expected {rows * cols} entries, got {v.size}")
    return v.reshape((rows, cols), order="F")


def utv(M):
    """Inverse of :func:`vtu`."""
    return np.asarray(M)[np.triu_indices(M.shape[0])].copy()


def sutv(M):
    """Inverse of :func:`vtsu`."""
    return np.asarray(M)[np.triu_indices(M.shape[0], 1)].copy()


def upper_factor(M, tol=1e-12):
    """Upper triangular ``U`` with ``U U^T = M`` for symmetric PSD ``M``.

    Cholesky run from the last row upwards, without pivoting so that the
    factor stays triangular. Pivots below ``tol * trace(M)`` are treated as
    null directions and their columns are set to zero.
    """
    M = 0.5 * (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T)
    n = M.shape[0]
    U = np.zeros((n, n))
    work = M.copy()
    thresh = tol * max(np.trace(M), 0.0)
    for k in range(n - 1, -1, -1):
        piv = work[k, k]
        if piv <= thresh:
            continue
        col = work[: k + 1, k] / np.sqrt(piv)
        U[: k + 1, k] = col
        work[: k + 1, : k + 1] -= np.outer(col, col)
    return U


def n_theta(r, m):
    return r * (r - 1) // 2 + (r + m) * (r + m + 1) // 2 + r * (r + 1) // 2 + r * m + m * (m - 1) // 2


@dataclass
class PhParameterVector:
    """Flat parameter vector plus the mask of frozen entries."""

    r: int
    m: int
    theta: np.ndarray
    frozen_mask: np.ndarray = None

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float).ravel()
        if self.theta.size != n_theta(self.r, self.m):
            raise LengthMismatch(
                f"theta has {self.theta.size} entries, r={self.r}, m={self.m} needs {n_theta(self.r, self.m)}"
            )
        if self.frozen_mask is None:
            self.frozen_mask = np.zeros(self.theta.size, dtype=bool)
        else:
            self.frozen_mask = np.array(self.frozen_mask, dtype=bool).ravel()
            if self.frozen_mask.size != self.theta.size:
                raise LengthMismatch("frozen_mask length differs from theta")

    @classmethod
    def zeros(cls, r, m):
        return cls(r, m, np.zeros(n_theta(r, m)))

    @classmethod
    def random(cls, r, m, rng=None, scale=0.1):
        """Entries i.i.d. uniform on ``[-scale, scale]``."""
        rng = np.random.default_rng(rng)
        return cls(r, m, rng.uniform(-scale, scale, n_theta(r, m)))

    @property
    def sizes(self):
        r, m = self.r, self.m
        return {
            "J": r * (r - 1) // 2,
            "W": (r + m) * (r + m + 1) // 2,
            "Q": r * (r + 1) // 2,
            "G": r * m,
            "N": m * (m - 1) // 2,
        }

    @property
    def slices(self):
        out = {}
        start = 0
        for key, size in self.sizes.items():
            out[key] = slice(start, start + size)
            start += size
        return out

    @property
    def w2_indices(self):
        """Positions (in ``theta``) of the trailing ``m x m`` block of ``vtu(theta_W)``."""
        r, m = self.r, self.m
        rows, cols = np.triu_indices(r + m)
        local = np.flatnonzero((rows >= r) & (cols >= r))
        return self.slices["W"].start + local

    @property
    def free(self):
        return ~self.frozen_mask

    def part(self, key):
        return self.theta[self.slices[key]]

    def with_theta(self, theta):
        return PhParameterVector(self.r, self.m, np.array(theta, dtype=float), self.frozen_mask.copy())

    def copy(self):
        return self.with_theta(self.theta.copy())


@dataclass
class ReducedPhModel:
    """Dense order-``r`` pH-ODE ``x' = (J-R)Q x + (G-P)u``, ``y = (G+P)^T Q x + (S-N)u``."""

    J: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    P: np.ndarray
    S: np.ndarray
    N: np.ndarray
    theta: PhParameterVector | None = field(default=None, repr=False)

    @property
    def r(self):
        return self.J.shape[0]

    @property
    def m(self):
        return self.G.shape[1]

    @property
    def A(self):
        return (self.J - self.R) @ self.Q

    @property
    def B(self):
        return self.G - self.P

    @property
    def C(self):
        return (self.G + self.P).T @ self.Q

    @property
    def D(self):
        return self.S - self.N

    @property
    def W(self):
        return np.block([[self.R, self.P], [self.P.T, self.S]])

    def transfer_batch(self, s, strictly_proper=False):
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        try:
            H, _, _ = _backend.resolvent_batch(self.A, self.B, self.C, s)
        except ZeroDivisionError as exc:
            raise SingularShift(f"sI - A_r is singular at s={s[exc.args[0]]}") from None
        return H if strictly_proper else H + self.D

    def implicit_form(self, pd_tol=1e-10):
        """Rewrite with ``E_r = Q^{-1}``, ``Q = I`` (needs ``Q`` positive definite)."""
        w = np.linalg.eigvalsh(self.Q)
        if w[0] <= pd_tol * max(w[-1], 1.0):
            raise ValueError("Q_r is not numerically positive definite")
        Einv = np.linalg.inv(self.Q)
        return DescriptorSystem(
            E=0.5 * (Einv + Einv.T), J=self.J, R=self.R, G=self.G, P=self.P, S=self.S, N=self.N
        )

    def to_descriptor(self):
        """Same system as a :class:`DescriptorSystem` with ``E = I``."""
        r = self.r
        return DescriptorSystem(
            E=np.eye(r), J=self.J, R=self.R, Q=self.Q, G=self.G, P=self.P, S=self.S, N=self.N
        )

    @classmethod
    def from_descriptor(cls, sys):
        if abs(sys.E - np.eye(sys.n)).max() != 0:
            raise ValueError("reduced models must have E = I")
        return cls(
            J=sys.J.toarray(), R=sys.R.toarray(), Q=sys.Q.toarray(), G=sys.G.toarray(),
            P=sys.P.toarray(), S=sys.S.copy(), N=sys.N.copy(),
        )


def assemble_ph(theta):
    """Build the :class:`ReducedPhModel` for a parameter vector."""
    r, m = theta.r, theta.m
    T = vtsu(theta.part("J"), r)
    U = vtu(theta.part("W"), r + m)
    V = vtu(theta.part("Q"), r)
    Tn = vtsu(theta.part("N"), m)
    W = U @ U.T
    return ReducedPhModel(
        J=T.T - T,
        R=W[:r, :r].copy(),
        Q=V @ V.T,
        G=vtf(theta.part("G"), r, m),
        P=W[:r, r:].copy(),
        S=W[r:, r:].copy(),
        N=Tn.T - Tn,
        theta=theta,
    )


def model_to_theta(model, frozen_mask=None, tol=1e-12):
    """Parameter vector reproducing ``model`` (inverse of :func:`assemble_ph`).

    ``W`` and ``Q`` are factored with :func:`upper_factor`; the trailing block
    of the ``W`` factor depends on ``S`` only, matching
    :func:`phmor.propt.fix_feedthrough`.
    """
    r, m = model.r, model.m
    theta = np.concatenate([
        -sutv(model.J),
        utv(upper_factor(model.W, tol)),
        utv(upper_factor(model.Q, tol)),
        model.G.ravel(order="F"),
        -sutv(model.N),
    ])
    return PhParameterVector(r, m, theta, frozen_mask)


def rom_transfer(theta, s, with_derivative=False):
    """``H_r(s, theta)`` and optionally ``dH_r/ds = -C (sI - A)^{-2} B``."""
    model = assemble_ph(theta)
    s = complex(s)
    H, X, Y = _resolvent(model, np.array([s]))
    value = H[0] + model.D
    deriv = -(Y[0] @ X[0]) if with_derivative else None
    return TransferSample(s, value, deriv)


def _resolvent(model, s):
    try:
        return _backend.resolvent_batch(model.A, model.B, model.C, s)
    except ZeroDivisionError as exc:
        raise SingularShift(f"sI - A_r is singular at s={s[exc.args[0]]}") from None


@dataclass
class ParamDerivatives:
    """Derivatives of ``A = (J-R)Q``, ``B = G-P``, ``C = (G+P)^T Q``, ``D = S-N``
    with respect to every entry of ``theta`` (leading axis)."""

    dA: np.ndarray
    dB: np.ndarray
    dC: np.ndarray
    dD: np.ndarray

    def pullback(self, gA, gB, gC, gD=None):
        """Contract matrix gradients with the derivatives: ``sum <dX_k, gX>``."""
        out = np.einsum("kij,ij->k", self.dA, gA) + np.einsum("kij,ij->k", self.dB, gB)
        out = out + np.einsum("kij,ij->k", self.dC, gC)
        if gD is not None:
            out = out + np.einsum("kij,ij->k", self.dD, gD)
        return out


def param_derivatives(theta, model=None):
    """Forward derivatives of the state-space matrices for all entries of ``theta``."""
    r, m = theta.r, theta.m
    model = model or assemble_ph(theta)
    nt = theta.theta.size
    sl = theta.slices
    dJ = np.zeros((nt, r, r))
    dW = np.zeros((nt, r + m, r + m))
    dQ = np.zeros((nt, r, r))
    dG = np.zeros((nt, r, m))
    dN = np.zeros((nt, m, m))

    rows, cols = np.triu_indices(r, 1)
    k = np.arange(sl["J"].start, sl["J"].stop)
    dJ[k, cols, rows] = 1.0
    dJ[k, rows, cols] = -1.0

    U = vtu(theta.part("W"), r + m)
    rows, cols = np.triu_indices(r + m)
    k = np.arange(sl["W"].start, sl["W"].stop)
    # d(U U^T) for dU = e_i e_j^T is e_i U[:, j]^T + U[:, j] e_i^T
    dW[k, rows, :] += U[:, cols].T
    dW[k, :, rows] += U[:, cols].T

    V = vtu(theta.part("Q"), r)
    rows, cols = np.triu_indices(r)
    k = np.arange(sl["Q"].start, sl["Q"].stop)
    dQ[k, rows, :] += V[:, cols].T
    dQ[k, :, rows] += V[:, cols].T

    k = np.arange(sl["G"].start, sl["G"].stop)
    idx = np.arange(r * m)
    dG[k, idx % r, idx // r] = 1.0

    rows, cols = np.triu_indices(m, 1)
    k = np.arange(sl["N"].start, sl["N"].stop)
    dN[k, cols, rows] = 1.0
    dN[k, rows, cols] = -1.0

    dR = dW[:, :r, :r]
    dP = dW[:, :r, r:]
    dS = dW[:, r:, r:]
    JR = model.J - model.R
    dA = (dJ - dR) @ model.Q + JR @ dQ
    dB = dG - dP
    GP = model.G + model.P
    dC = np.swapaxes(dG + dP, 1, 2) @ model.Q + GP.T @ dQ
    dD = dS - dN
    return ParamDerivatives(dA=dA, dB=dB, dC=dC, dD=dD)


def rom_param_jacobian(theta, s):
    """``dH_r(s, theta) / dtheta_k`` for every entry; complex array ``(m, m, n_theta)``.

    Frozen entries are included; ``theta.frozen_mask`` flags them.
    """
    model = assemble_ph(theta)
    der = param_derivatives(theta, model)
    s = np.array([complex(s)])
    _, X, Y = _resolvent(model, s)
    X, Y = X[0], Y[0]
    jac = der.dC @ X + Y @ der.dA @ X + Y @ der.dB + der.dD
    return np.moveaxis(jac, 0, -1)
