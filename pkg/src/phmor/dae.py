"""Full-order port-Hamiltonian descriptor systems.

A system is stored as the tuple ``(E, J, R, Q, G, P, S, N)`` and realizes

    E x' = (J - R) Q x + (G - P) u,
    y    = (G + P)^T Q x + (S - N) u.

Everything downstream assumes ``Q = I`` (see :meth:`DescriptorSystem.normalize`).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sp
import scipy.sparse.linalg as spsla

from .errors import IndexTooHigh, InvalidSystem, NoConvergence, NotNormalized, SingularShift

TOL_PSD = 1e-10
_DENSE_LIMIT = 3000


def _num_threads():
    try:
        return max(1, int(os.environ.get("PHMOR_NUM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TransferSample:
    s: complex
    value: np.ndarray
    derivative: np.ndarray | None = None


@dataclass(frozen=True)
class FeedthroughData:
    """Constant part ``D0 = S0 - N0`` of an index-one transfer function."""

    D0: np.ndarray
    S0: np.ndarray
    N0: np.ndarray

    @classmethod
    def from_d0(cls, D0):
        D0 = np.array(D0, dtype=float, ndmin=2)
        S0 = 0.5 * (D0 + D0.T)
        N0 = 0.5 * (D0.T - D0)
        return cls(D0=D0, S0=S0, N0=N0)

    @classmethod
    def from_sn(cls, S0, N0):
        S0 = np.array(S0, dtype=float, ndmin=2)
        N0 = np.array(N0, dtype=float, ndmin=2)
        return cls(D0=S0 - N0, S0=S0, N0=N0)


def _as_sparse(M, shape, name):
    if M is None:
        return sp.csr_matrix(shape)
    M = sp.csr_matrix(M, dtype=float)
    if M.shape != shape:
        raise InvalidSystem(f"{name} has shape {M.shape}, expected {shape}")
    return M


def _as_dense(M, shape, name):
    if M is None:
        return np.zeros(shape)
    M = np.array(M.toarray() if sp.issparse(M) else M, dtype=float, ndmin=2)
    if M.shape != shape:
        raise InvalidSystem(f"{name} has shape {M.shape}, expected {shape}")
    return M


def _min_eig(W):
    n = W.shape[0]
    if n == 0:
        return 0.0
    if n <= _DENSE_LIMIT:
        return float(spla.eigvalsh(W.toarray() if sp.issparse(W) else W)[0])
    return float(spsla.eigsh(sp.csr_matrix(W), k=1, which="SA", return_eigenvectors=False)[0])


class DescriptorSystem:
    """Immutable sparse pH-DAE.

    Parameters
    ----------
    E, J, R, Q
        ``n x n`` matrices (anything :func:`scipy.sparse.csr_matrix` accepts).
        ``Q`` defaults to the identity.
    G, P
        ``n x m`` port matrices; ``P`` defaults to zero.
    S, N
        ``m x m`` feedthrough matrices; default zero.
    tol_psd
        Tolerance for the passivity check, relative to the norm of the
        passivity block.

    Raises
    ------
    InvalidSystem
        If ``J`` or ``N`` is not exactly skew-symmetric, the passivity block
        ``[[R, P], [P^T, S]]`` is indefinite, or the pencil is singular at a
        test shift.
    """

    def __init__(self, E, J, R, G, Q=None, P=None, S=None, N=None, *, tol_psd=TOL_PSD, check=True):
        G = sp.csr_matrix(G, dtype=float)
        n, m = G.shape
        self.n, self.m = n, m
        self.E = _as_sparse(E, (n, n), "E")
        self.J = _as_sparse(J, (n, n), "J")
        self.R = _as_sparse(R, (n, n), "R")
        self.Q = sp.identity(n, format="csr") if Q is None else _as_sparse(Q, (n, n), "Q")
        self.G = G
        self.P = _as_sparse(P, (n, m), "P")
        self.S = _as_dense(S, (m, m), "S")
        self.N = _as_dense(N, (m, m), "N")
        self.tol_psd = tol_psd
        if check:
            self._validate()

    def __setattr__(self, name, value):
        if name in self.__dict__ and not name.startswith("_") and name not in _CACHED:
            raise AttributeError(f"DescriptorSystem is immutable ({name})")
        super().__setattr__(name, value)

    def _validate(self):
        if (self.J + self.J.T).count_nonzero() != 0:
            raise InvalidSystem("J is not skew-symmetric")
        if np.any(self.N + self.N.T != 0):
            raise InvalidSystem("N is not skew-symmetric")
        W = self.passivity_block
        scale = max(1.0, spla.norm(W.toarray(), 2) if W.shape[0] <= _DENSE_LIMIT else spsla.norm(W, 1))
        if _min_eig(W) < -self.tol_psd * scale:
            raise InvalidSystem("passivity block [[R, P], [P^T, S]] is not positive semidefinite")
        if self.n > 0:
            s = complex(*np.random.default_rng(12345).uniform(0.5, 2.0, 2))
            try:
                spsla.splu(self._pencil(s))
            except RuntimeError as exc:
                raise InvalidSystem(f"pencil sE - (J-R)Q is singular at test shift {s}") from exc

    @property
    def passivity_block(self):
        return sp.bmat([[self.R, self.P], [self.P.T, sp.csr_matrix(self.S)]], format="csr")

    @property
    def normalized(self):
        return (self.Q != sp.identity(self.n, format="csr")).count_nonzero() == 0

    def normalize(self):
        """Return an equivalent system with ``Q = I``.

        Multiplies the state equation by ``Q^T`` from the left, which keeps the
        pH structure. Rank-deficient ``Q`` is rejected.
        """
        if self.normalized:
            return self
        Q = self.Q
        try:
            spsla.splu(sp.csc_matrix(Q))
        except RuntimeError as exc:
            raise InvalidSystem("Q is rank deficient; kernel removal is not supported") from exc
        QT = Q.T.tocsr()
        J = QT @ self.J @ Q
        R = QT @ self.R @ Q
        # restore exact skew/symmetry lost to rounding
        return DescriptorSystem(
            E=QT @ self.E,
            J=0.5 * (J - J.T),
            R=0.5 * (R + R.T),
            G=QT @ self.G,
            P=QT @ self.P,
            S=self.S,
            N=self.N,
            tol_psd=self.tol_psd,
        )

    @cached_property
    def A(self):
        return ((self.J - self.R) @ self.Q).tocsc()

    @cached_property
    def B(self):
        return (self.G - self.P).toarray()

    @cached_property
    def C(self):
        return ((self.G + self.P).T @ self.Q).toarray()

    @cached_property
    def D(self):
        return self.S - self.N

    def _pencil(self, s):
        dtype = float if np.imag(s) == 0 else complex
        s = np.real(s) if dtype is float else s
        return (s * self.E - self.A).astype(dtype).tocsc()

    def _factor(self, s):
        try:
            lu = spsla.splu(self._pencil(s))
        except RuntimeError as exc:
            raise SingularShift(f"sE - (J-R)Q is singular at s={s}") from exc
        return lu

    def transfer(self, s, derivative=False):
        """Evaluate ``H(s)`` (and ``H'(s)``) at a single point; see :func:`eval_transfer`."""
        return eval_transfer(self, s, derivative=derivative)

    def transfer_batch(self, s, derivative=False):
        """Evaluate ``H`` at every point of ``s``.

        Returns an array of shape ``(K, m, m)``, or a pair of such arrays when
        ``derivative`` is set. Points are independent and are spread over
        ``PHMOR_NUM_THREADS`` worker threads.
        """
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        workers = _num_threads()
        if workers > 1 and len(s) > 1:
            with ThreadPoolExecutor(workers) as pool:
                samples = list(pool.map(lambda z: eval_transfer(self, z, derivative), s))
        else:
            samples = [eval_transfer(self, z, derivative) for z in s]
        H = np.array([t.value for t in samples]).reshape(len(s), self.m, self.m)
        if derivative:
            dH = np.array([t.derivative for t in samples]).reshape(len(s), self.m, self.m)
            return H, dH
        return H

    def __repr__(self):
        return f"DescriptorSystem(n={self.n}, m={self.m}, normalized={self.normalized})"


_CACHED = {"A", "B", "C", "D"}


def eval_transfer(sys, s, derivative=False):
    """Evaluate the transfer function of a descriptor system.

    ``H(s) = C (sE - A)^{-1} B + D`` with one sparse LU factorization; the
    derivative ``H'(s) = -C (sE - A)^{-1} E (sE - A)^{-1} B`` reuses it.

    Raises
    ------
    SingularShift
        If ``s`` is a generalized eigenvalue of ``(E, (J-R)Q)``.
    """
    s = complex(s)
    if sys.n == 0:
        value = sys.D.astype(complex)
        return TransferSample(s, value, np.zeros_like(value) if derivative else None)
    lu = sys._factor(s)
    X = lu.solve(sys.B.astype(lu.U.dtype))
    value = sys.C @ X + sys.D
    dvalue = None
    if derivative:
        dvalue = -sys.C @ lu.solve(sys.E @ X)
        dvalue = np.asarray(dvalue, dtype=complex)
    return TransferSample(s, np.asarray(value, dtype=complex), dvalue)


@dataclass(frozen=True)
class SemiExplicitSystem:
    """Differential part of an index-one system after eliminating ``x2``.

    ``H_sp(s) = (G_sp + P_sp)^T (s E11 - L11)^{-1} (G_sp - P_sp)`` and
    ``H(s) = H_sp(s) + D0``. ``L11`` is the Schur complement
    ``L11 - L12 L22^{-1} L21`` of the transformed pencil; for block lower
    triangular pencils (``L12 = 0``) it is ``J11 - R11`` and
    ``G_sp = G1 - Y``, ``P_sp = P1 - Y`` with
    ``Y = 1/2 L21^T L22^{-T} (G2 + P2)``.
    """

    E11: np.ndarray
    L11: np.ndarray
    G_sp: np.ndarray
    P_sp: np.ndarray
    feedthrough: FeedthroughData
    n1: int
    n2: int

    @property
    def J11(self):
        return 0.5 * (self.L11 - self.L11.T)

    @property
    def R11(self):
        return -0.5 * (self.L11 + self.L11.T)

    @property
    def B(self):
        return self.G_sp - self.P_sp

    @property
    def C(self):
        return (self.G_sp + self.P_sp).T

    def transfer(self, s):
        """Strictly proper part ``H_sp`` at the points ``s``; shape ``(K, m, m)``."""
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        M = s[:, None, None] * self.E11 - self.L11
        return self.C @ np.linalg.solve(M, np.broadcast_to(self.B, (len(s),) + self.B.shape))


def _block_form(sys, rank_tol):
    """Bring ``E`` to ``diag(E11, 0)``; returns transformed dense blocks."""
    n = sys.n
    E = sys.E
    nz_rows = np.unique(E.nonzero()[0])
    nz_cols = np.unique(E.nonzero()[1])
    A = sys.A.toarray()
    B = sys.B
    Ct = sys.C.T
    Ed = E.toarray()
    normE = spla.norm(Ed, 2) if n else 0.0
    if np.array_equal(nz_rows, nz_cols):
        keep = nz_rows
        alg = np.setdiff1d(np.arange(n), keep)
        E11 = Ed[np.ix_(keep, keep)]
        if E11.size == 0 or spla.svdvals(E11)[-1] > rank_tol * normE:
            perm = np.concatenate([keep, alg])
            return E11, A[np.ix_(perm, perm)], B[perm], Ct[perm], len(keep)
    if np.allclose(Ed, Ed.T, rtol=0, atol=rank_tol * normE):
        w, V = spla.eigh(0.5 * (Ed + Ed.T))
        order = np.argsort(-np.abs(w))
        w, V = w[order], V[:, order]
        n1 = int(np.sum(np.abs(w) > rank_tol * normE))
        U = V
        E11 = np.diag(w[:n1])
    else:
        U, sig, Vt = spla.svd(Ed)
        V = Vt.T
        n1 = int(np.sum(sig > rank_tol * normE))
        E11 = np.diag(sig[:n1])
    return E11, U.T @ A @ V, U.T @ B, V.T @ Ct, n1


def semi_explicit_transform(sys, rank_tol=1e-12):
    """Split an index-one pH-DAE into strictly proper part and constant feedthrough.

    ``E`` is brought to ``diag(E11, 0)`` either by a permutation (when its
    zero rows and columns coincide) or by a rank-revealing decomposition
    with threshold ``rank_tol * ||E||``. The algebraic states are then
    eliminated, giving

        D0 = S - N - (G2 + P2)^T L22^{-1} (G2 - P2).

    Raises
    ------
    NotNormalized
        If ``Q`` is not the identity.
    IndexTooHigh
        If the algebraic block ``L22`` is (numerically) singular.
    """
    if not sys.normalized:
        raise NotNormalized("semi_explicit_transform requires Q = I; call normalize() first")
    E11, L, Bt, Ct, n1 = _block_form(sys, rank_tol)
    n2 = sys.n - n1
    L11, L12 = L[:n1, :n1], L[:n1, n1:]
    L21, L22 = L[n1:, :n1], L[n1:, n1:]
    B1, B2 = Bt[:n1], Bt[n1:]
    C1, C2 = Ct[:n1], Ct[n1:]
    D0 = sys.S - sys.N
    if n2:
        sv = spla.svdvals(L22)
        if sv[-1] <= rank_tol * max(spla.norm(L, 2), 1.0):
            raise IndexTooHigh(
                f"algebraic block L22 is singular (sigma_min={sv[-1]:.3e}); index > 1 or near-singular"
            )
        lu = spla.lu_factor(L22)
        X21 = spla.lu_solve(lu, L21)
        Xb = spla.lu_solve(lu, B2)
        Xc = spla.lu_solve(lu, C2, trans=1)
        L11 = L11 - L12 @ X21
        B1 = B1 - L12 @ Xb
        C1 = C1 - L21.T @ Xc
        D0 = D0 - C2.T @ Xb
    return SemiExplicitSystem(
        E11=E11,
        L11=L11,
        G_sp=0.5 * (C1 + B1),
        P_sp=0.5 * (C1 - B1),
        feedthrough=FeedthroughData.from_d0(D0),
        n1=n1,
        n2=n2,
    )


def estimate_feedthrough(sys, sigma0=1e3, rtol=1e-8, max_iters=40):
    """Estimate ``D0 = lim H(s)`` by sampling at growing real ``s``.

    The samples ``H(sigma0 * 2^k)`` are combined by two levels of Richardson
    extrapolation in ``1/s`` (removing the ``1/s`` and ``1/s^2`` terms of the
    expansion at infinity). Iteration stops once two successive estimates
    differ by less than ``rtol`` relative to ``max(||D0||, ||H(sigma0)||)``.

    Raises
    ------
    NoConvergence
        If the estimates have not settled after ``max_iters`` doublings, which
        usually means the transfer function is improper (index > 1).
    """
    vals = []
    prev = None
    scale = None
    for k in range(max_iters + 1):
        H = eval_transfer(sys, sigma0 * 2.0**k).value.real
        vals.append(H)
        if scale is None:
            scale = max(np.linalg.norm(H), np.finfo(float).tiny)
        if k < 2:
            continue
        r_new = 2 * vals[-1] - vals[-2]
        r_old = 2 * vals[-2] - vals[-3]
        est = (4 * r_new - r_old) / 3
        if prev is not None and np.linalg.norm(est - prev) <= rtol * max(np.linalg.norm(est), scale):
            return FeedthroughData.from_d0(est)
        prev = est
    raise NoConvergence(
        f"feedthrough estimate did not settle after {max_iters} doublings (improper transfer function?)"
    )
