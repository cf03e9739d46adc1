"""Reference H2 and H-infinity norm evaluation from frequency-response samples.

``tf`` arguments are batch callables: given a 1-D array of complex points
they return an array whose first axis runs over the points (any trailing
shape; scalar responses such as ``lambda s: 1 / (s + 1)`` work as is).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import EmptyGrid, NotStrictlyProper

# 15-point Kronrod rule with embedded 7-point Gauss rule (QUADPACK qk15)
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

KRONROD_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_G = np.zeros(15)
_G[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])
GAUSS_WEIGHTS = _G


def frob2(values):
    """Squared Frobenius norm of every sample of a batch response."""
    values = np.asarray(values)
    return np.sum(np.abs(values.reshape(values.shape[0], -1)) ** 2, axis=1)


def sigma_max(values):
    """Largest singular value of every sample of a batch response."""
    values = np.asarray(values)
    if values.ndim == 1:
        return np.abs(values)
    if values.ndim == 2:
        values = values[:, :, None]
    return np.linalg.svd(values, compute_uv=False)[:, 0]


@dataclass
class QuadratureConfig:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    symmetric: bool = True  # real systems: |H(-iw)| = |H(iw)|
    initial_panels: int = 8
    max_panels: int = 4000
    omega_max: float = 1e10
    decay_tol: float = 1e-4
    decay_abs_tol: float = 1e-12  # responses below this are round-off


@dataclass
class H2Result:
    """Outcome of :func:`h2_norm_quadrature`.

    ``omega`` and ``weights`` form the final quadrature rule in the original
    frequency variable: ``squared ~= sum(weights * ||tf(i omega)||_F^2)``.
    """

    norm: float
    error: float
    squared: float
    squared_error: float
    omega: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    n_panels: int = 0

    def __float__(self):
        return self.norm


def _panel(g, a, b):
    half = 0.5 * (b - a)
    phi = 0.5 * (a + b) + half * KRONROD_NODES
    vals = g(phi)
    k = half * KRONROD_WEIGHTS @ vals
    gauss = half * GAUSS_WEIGHTS @ vals
    return k, abs(k - gauss), phi, half * KRONROD_WEIGHTS


def h2_norm_quadrature(tf, config=None):
    """H2 norm ``(1/2pi int ||tf(iw)||_F^2 dw)^(1/2)`` by adaptive quadrature.

    The frequency axis is compactified with ``w = tan(phi)`` and the
    integral over ``phi`` is computed by globally adaptive bisection of
    Gauss-Kronrod (7, 15) panels until the estimated error on the squared
    norm is below ``max(abs_tol, rel_tol * value)``.

    Raises
    ------
    NotStrictlyProper
        If ``||tf(i omega_max)||`` exceeds ``decay_abs_tol`` and does not
        decay relative to the response at moderate frequencies.
    """
    cfg = config or QuadratureConfig()
    probe = 1j * np.concatenate([np.logspace(-3, 3, 13), [cfg.omega_max]])
    pv = np.sqrt(frob2(tf(probe)))
    ref = pv[:-1].max()
    if pv[-1] > max(cfg.decay_tol * ref, cfg.decay_abs_tol):
        raise NotStrictlyProper(
            f"||tf(i*{cfg.omega_max:g})|| = {pv[-1]:.3e} does not decay (reference {ref:.3e})"
        )

    factor = (2.0 if cfg.symmetric else 1.0) / (2 * np.pi)

    def g(phi):
        w = np.tan(phi)
        return factor * frob2(tf(1j * w)) * (1 + w * w)

    lo = 0.0 if cfg.symmetric else -np.pi / 2
    edges = np.linspace(lo, np.pi / 2, cfg.initial_panels + 1)
    heap = []
    total = 0.0
    total_err = 0.0
    counter = 0
    for a, b in zip(edges[:-1], edges[1:]):
        k, e, phi, w = _panel(g, a, b)
        heapq.heappush(heap, (-e, counter, a, b, k, phi, w))
        counter += 1
        total += k
        total_err += e
    while total_err > max(cfg.abs_tol, cfg.rel_tol * abs(total)) and len(heap) < cfg.max_panels:
        neg_e, _, a, b, k, _, _ = heapq.heappop(heap)
        total -= k
        total_err += neg_e
        mid = 0.5 * (a + b)
        for aa, bb in ((a, mid), (mid, b)):
            kk, ee, phi, w = _panel(g, aa, bb)
            heapq.heappush(heap, (-ee, counter, aa, bb, kk, phi, w))
            counter += 1
            total += kk
            total_err += ee
    # recompute the sums from scratch to shed the running-update rounding
    total = sum(item[4] for item in heap)
    total_err = sum(-item[0] for item in heap)
    phis = np.concatenate([item[5] for item in heap])
    wts = np.concatenate([item[6] for item in heap])
    w = np.tan(phis)
    weights = factor * wts * (1 + w * w)
    total = max(total, 0.0)
    norm = np.sqrt(total)
    norm_err = total_err / (2 * norm) if norm > 0 else np.sqrt(total_err)
    return H2Result(
        norm=float(norm),
        error=float(norm_err),
        squared=float(total),
        squared_error=float(total_err),
        omega=w,
        weights=weights,
        n_panels=len(heap),
    )


def hinf_estimate(tf, grid, xtol=1e-10):
    """Lower bound on the H-infinity norm from a frequency grid.

    Takes the largest ``sigma_max(tf(i w))`` over ``grid`` and refines it by a
    golden-section search between the neighbours of the best grid point.

    Raises
    ------
    EmptyGrid
        If ``grid`` has no points.
    """
    grid = np.unique(np.abs(np.asarray(grid, dtype=float).ravel()))
    if grid.size == 0:
        raise EmptyGrid("hinf_estimate needs at least one frequency")
    vals = sigma_max(tf(1j * grid))
    i = int(np.argmax(vals))
    best = float(vals[i])
    if grid.size == 1:
        return best

    def neg(w):
        return -float(sigma_max(tf(np.array([1j * w])))[0])

    if 0 < i < grid.size - 1:
        res = minimize_scalar(
            neg, bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden", tol=xtol
        )
        if res.x >= grid[i - 1] and res.x <= grid[i + 1]:
            best = max(best, -res.fun)
    else:
        j = 1 if i == 0 else grid.size - 2
        a, b = sorted((grid[i], grid[j]))
        res = minimize_scalar(neg, bounds=(a, b), method="bounded", options={"xatol": xtol * max(b, 1e-300)})
        best = max(best, -res.fun)
    return best
