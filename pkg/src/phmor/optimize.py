"""Limited-memory BFGS with a strong Wolfe line search on the free coordinates."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

from .errors import NonFiniteObjective


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    LINE_SEARCH_FAILED = "LineSearchFailed"


@dataclass
class OptimizerConfig:
    max_iters: int = 500
    grad_tol: float = 1e-8
    step_tol: float = 1e-14
    memory: int = 20
    c1: float = 1e-4
    c2: float = 0.9
    max_step: float = 1e10

    def __post_init__(self):
        if min(self.max_iters, self.grad_tol, self.step_tol, self.memory, self.c1, self.c2) <= 0:
            raise ValueError("optimizer settings must be positive")
        if not self.c1 < self.c2 < 1:
            raise ValueError("line-search constants need 0 < c1 < c2 < 1")


@dataclass
class OptimizeResult:
    theta: np.ndarray
    fun: float
    status: Status
    n_iter: int
    grad_norm: float
    history: list = field(default_factory=list)  # (iteration, f, ||g||_inf, step)


class _Cached:
    """Evaluate ``f`` and ``grad`` on the free coordinates, memoizing the last point."""

    def __init__(self, f, grad, x0, free):
        self.f, self.grad = f, grad
        self.full = np.array(x0, dtype=float)
        self.free = free
        self._fx = {}
        self._gx = {}

    def _expand(self, z):
        x = self.full.copy()
        x[self.free] = z
        return x

    def fun(self, z):
        key = z.tobytes()
        if key not in self._fx:
            self._fx = {key: float(self.f(self._expand(z)))}
        return self._fx[key]

    def jac(self, z):
        key = z.tobytes()
        if key not in self._gx:
            g = np.asarray(self.grad(self._expand(z)), dtype=float)[self.free]
            self._gx = {key: g}
        return self._gx[key]


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def minimize(f, grad, theta0, mask=None, config=None, callback=None):
    """Minimize a smooth function over the coordinates not marked in ``mask``.

    Parameters
    ----------
    f, grad
        Callables on the full parameter vector. ``grad`` returns a full-length
        vector; entries at frozen positions are ignored.
    theta0
        Starting point; frozen entries are copied to the result unchanged.
    mask
        Boolean array, ``True`` for frozen entries.
    config
        :class:`OptimizerConfig`.
    callback
        Called as ``callback(iteration, theta, f)`` after each accepted step.

    Returns
    -------
    OptimizeResult
        ``status`` is ``Converged`` when ``||grad||_inf <= grad_tol`` or the
        relative decrease/step fell below ``step_tol``.

    Raises
    ------
    NonFiniteObjective
        If ``f`` or ``grad`` is not finite at ``theta0``.
    """
    cfg = config or OptimizerConfig()
    theta0 = np.array(theta0, dtype=float)
    free = np.ones(theta0.size, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    prob = _Cached(f, grad, theta0, free)
    z = theta0[free].copy()
    fz = prob.fun(z)
    g = prob.jac(z)
    if not np.isfinite(fz) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective(f"objective or gradient not finite at the starting point (f={fz})")

    history = [(0, fz, float(np.max(np.abs(g), initial=0.0)), 0.0)]
    pairs = deque(maxlen=cfg.memory)
    f_old = None
    status = Status.MAX_ITERS
    it = 0
    if z.size == 0 or np.max(np.abs(g)) <= cfg.grad_tol:
        status = Status.CONVERGED
    else:
        while it < cfg.max_iters:
            d = _two_loop(g, pairs)
            if d @ g >= 0:
                pairs.clear()
                d = -g
            alpha, *_rest = _search(prob, z, d, g, fz, f_old, cfg)
            if alpha is None and pairs:
                pairs.clear()
                d = -g
                alpha, *_rest = _search(prob, z, d, g, fz, f_old, cfg)
            if alpha is None:
                status = Status.LINE_SEARCH_FAILED
                break
            z_new = z + alpha * d
            f_new = prob.fun(z_new)
            g_new = prob.jac(z_new)
            s, y = z_new - z, g_new - g
            sy = s @ y
            if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
                pairs.append((s, y, 1.0 / sy))
            it += 1
            f_old, fz, z, g = fz, f_new, z_new, g_new
            gnorm = float(np.max(np.abs(g)))
            history.append((it, fz, gnorm, float(alpha * np.linalg.norm(d))))
            if callback is not None:
                callback(it, prob._expand(z), fz)
            if gnorm <= cfg.grad_tol:
                status = Status.CONVERGED
                break
            if (f_old - fz) <= cfg.step_tol * max(abs(fz), abs(f_old), 1e-300) and np.linalg.norm(s) <= (
                cfg.step_tol ** 0.5
            ) * max(np.linalg.norm(z), 1.0):
                status = Status.CONVERGED
                break
    return OptimizeResult(
        theta=prob._expand(z),
        fun=fz,
        status=status,
        n_iter=it,
        grad_norm=float(np.max(np.abs(g), initial=0.0)),
        history=history,
    )


def _search(prob, z, d, g, fz, f_old, cfg):
    def fun(x):
        v = prob.fun(x)
        return v if np.isfinite(v) else np.inf

    def jac(x):
        gx = prob.jac(x)
        return gx if np.all(np.isfinite(gx)) else np.full_like(gx, np.nan)

    with np.errstate(all="ignore"):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = line_search(
                fun, jac, z, d, gfk=g, old_fval=fz, old_old_fval=f_old,
                c1=cfg.c1, c2=cfg.c2, amax=cfg.max_step, maxiter=40,
            )
    alpha = res[0]
    if alpha is None or not np.isfinite(alpha) or alpha <= 0 or not fun(z + alpha * d) <= fz:
        return _backtrack(fun, z, d, g, fz, cfg)
    return res


def _backtrack(fun, z, d, g, fz, cfg, shrink=0.5, max_halvings=80):
    """Armijo backtracking, used when the Wolfe search gives up (strongly curved objectives)."""
    slope = d @ g
    if not slope < 0:
        return (None,)
    alpha = min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
    for _ in range(max_halvings):
        if fun(z + alpha * d) <= fz + cfg.c1 * alpha * slope:
            return (alpha,)
        alpha *= shrink
    return (None,)
