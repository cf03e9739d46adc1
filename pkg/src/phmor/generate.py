"""Synthetic index-one pH-DAE benchmarks.

Two families are available:

``random``
    ``E = diag(E11, 0)`` with a positive diagonal ``E11``, a sparse skew
    ``J`` (random chain couplings plus a few long-range links) and a sparse
    passivity block ``W = diag(d) + F F^T``. The diagonal ``d`` is spread
    logarithmically, so the transfer function has many modes of decreasing
    importance. ``L22 = J22 - R22`` has a negative definite symmetric part and
    is therefore nonsingular.
``embedded``
    A random order-``order`` pH-ODE (brought to ``Q = I`` form), padded with
    port-decoupled stable states and an algebraic block that only adds a
    constant to the transfer function. An order-``order`` ROM can reproduce
    such a system exactly. States are randomly permuted.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .dae import DescriptorSystem
from .errors import InputError

KINDS = ("random", "embedded")


def _sparse_skew(n, rng, extra=None):
    """Skew tridiagonal chain plus ``extra`` random long-range couplings."""
    if n < 2:
        return sp.csr_matrix((n, n))
    upper = sp.diags(rng.uniform(0.5, 2.0, n - 1), 1, shape=(n, n), format="coo")
    rows, cols, vals = [upper.row], [upper.col], [upper.data]
    k = n // 4 if extra is None else extra
    if k:
        i = rng.integers(0, n, k)
        j = rng.integers(0, n, k)
        keep = i < j
        rows.append(i[keep])
        cols.append(j[keep])
        vals.append(rng.uniform(-1.0, 1.0, keep.sum()))
    T = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return (T - T.T).tocsr()


def _sparse_factor(rows, cols, nnz_per_col, rng, scale=1.0):
    r_idx = np.concatenate([rng.choice(rows, min(nnz_per_col, rows), replace=False) for _ in range(cols)])
    c_idx = np.repeat(np.arange(cols), min(nnz_per_col, rows))
    vals = rng.standard_normal(r_idx.size) * scale
    return sp.csr_matrix((vals, (r_idx, c_idx)), shape=(rows, cols))


def _random_dae(n, m, n_alg, rng):
    n1 = n - n_alg
    E = sp.diags(np.concatenate([rng.uniform(0.5, 2.0, n1), np.zeros(n_alg)]), format="csr")
    J = _sparse_skew(n, rng)
    d = np.concatenate([np.logspace(-2, 1, n1), rng.uniform(1.0, 3.0, n_alg), rng.uniform(0.0, 0.5, m)])
    d[:n1] = rng.permutation(d[:n1])
    F = _sparse_factor(n + m, m + 2, 12, rng, scale=0.5).tolil()
    # make every port reach the differential and algebraic parts
    for j in range(m):
        F[n + j, j] = 1.0
        F[rng.integers(0, n1), j] = 1.0
        if n_alg:
            F[n1 + rng.integers(0, n_alg), j] = 1.0
    F = F.tocsr()
    W = (sp.diags(d) + F @ F.T).tocsr()
    W = 0.5 * (W + W.T)
    G = _sparse_factor(n, m, max(3, n // 20), rng)
    if n_alg:
        G = G + _sparse_factor(n, m, 2, rng)
    Nt = np.triu(rng.uniform(-0.5, 0.5, (m, m)), 1)
    return DescriptorSystem(
        E=E, J=J, R=W[:n, :n], G=G, P=W[:n, n:], S=W[n:, n:].toarray(), N=Nt - Nt.T
    )


def _ph_ode(r, m, rng):
    """Random stable order-``r`` pH-ODE ``(J, R, Q, G, P, S)`` with ``Q`` positive definite."""
    T = np.triu(rng.standard_normal((r, r)), 1)
    J = T.T - T
    U = np.triu(rng.standard_normal((r + m, r + m)))
    U[np.diag_indices(r)] = np.abs(U[np.diag_indices(r)]) + 0.5
    W = U @ U.T
    V = np.triu(rng.standard_normal((r, r))) * 0.3
    V[np.diag_indices(r)] = rng.uniform(0.8, 1.5, r)
    Q = V @ V.T
    G = rng.standard_normal((r, m))
    return J, W[:r, :r], Q, G, W[:r, r:], W[r:, r:]


def _embedded(n, m, n_alg, order, rng):
    n_dec = n - n_alg - order
    if n_dec < 0:
        raise InputError(f"n={n} is too small for order {order} plus {n_alg} algebraic states")
    J0, R0, Q0, G0, P0, S0 = _ph_ode(order, m, rng)
    # normalized form: multiply by Q^T from the left
    blocks_E = [Q0]
    blocks_J = [Q0 @ J0 @ Q0]
    blocks_R = [Q0 @ R0 @ Q0]
    G_parts = [Q0 @ G0]
    P_parts = [Q0 @ P0]
    S = S0.copy()
    if n_dec:
        blocks_E.append(sp.diags(rng.uniform(0.5, 2.0, n_dec)))
        blocks_J.append(_sparse_skew(n_dec, rng))
        blocks_R.append(sp.diags(rng.uniform(0.1, 2.0, n_dec)))
        G_parts.append(sp.csr_matrix((n_dec, m)))
        P_parts.append(sp.csr_matrix((n_dec, m)))
    if n_alg:
        Fa = rng.standard_normal((n_alg + m, m)) * 0.5
        Wa = Fa @ Fa.T + np.diag(np.concatenate([rng.uniform(1.0, 2.0, n_alg), np.zeros(m)]))
        blocks_E.append(sp.csr_matrix((n_alg, n_alg)))
        blocks_J.append(_sparse_skew(n_alg, rng))
        blocks_R.append(sp.csr_matrix(Wa[:n_alg, :n_alg]))
        G_parts.append(rng.standard_normal((n_alg, m)))
        P_parts.append(Wa[:n_alg, n_alg:])
        S = S + Wa[n_alg:, n_alg:]
    perm = rng.permutation(n)
    Pm = sp.identity(n, format="csr")[perm]

    def permuted(blocks):
        return (Pm @ sp.block_diag(blocks, format="csr") @ Pm.T).tocsr()

    G = Pm @ sp.csr_matrix(sp.vstack([sp.csr_matrix(g) for g in G_parts]))
    P = Pm @ sp.csr_matrix(sp.vstack([sp.csr_matrix(p) for p in P_parts]))
    Nt = np.triu(rng.uniform(-0.5, 0.5, (m, m)), 1)
    J = permuted(blocks_J)
    J = 0.5 * (J - J.T)
    R = permuted(blocks_R)
    R = 0.5 * (R + R.T)
    E = permuted(blocks_E)
    return DescriptorSystem(E=E, J=J, R=R, G=G, P=P, S=0.5 * (S + S.T), N=Nt - Nt.T)


def generate_benchmark(kind="random", n=200, m=2, n_algebraic=40, seed=0, order=3):
    """Random index-one pH-DAE that passes all :class:`DescriptorSystem` checks.

    Parameters
    ----------
    kind
        ``"random"`` or ``"embedded"`` (see module docstring).
    n, m
        State and port dimension.
    n_algebraic
        Number of algebraic states (zero rows of ``E``).
    seed
        Seed for :func:`numpy.random.default_rng`.
    order
        Order of the embedded pH-ODE (``kind="embedded"`` only).
    """
    if kind not in KINDS:
        raise InputError(f"unknown benchmark kind {kind!r}; expected one of {KINDS}")
    if not (n > n_algebraic >= 0) or m < 1:
        raise InputError("need n > n_algebraic >= 0 and m >= 1")
    rng = np.random.default_rng(seed)
    if kind == "random":
        return _random_dae(n, m, n_algebraic, rng)
    return _embedded(n, m, n_algebraic, order, rng)
