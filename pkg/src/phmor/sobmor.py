"""Sampling-based optimization of pH ROMs (SOBMOR).

The H-infinity variant minimizes the hinge loss

    L(theta; gamma) = 1/gamma * sum_k sum_j [sigma_j(H(s_k) - H_r(s_k, theta)) - gamma]_+^2

and bisects on ``gamma``. The H2 variant minimizes a quadrature
approximation of the squared H2 error whose nodes are frozen during each
inner optimization.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from . import _backend
from .errors import NonFiniteObjective, OptimizerFailure, PhMorError, SingularShift
from .norms import QuadratureConfig, h2_norm_quadrature, hinf_estimate, sigma_max
from .optimize import OptimizerConfig, minimize
from .param import PhParameterVector, ReducedPhModel, assemble_ph, param_derivatives

log = logging.getLogger(__name__)


def fom_response(fom, s):
    """``H(s)`` of a :class:`DescriptorSystem` or :class:`ReducedPhModel`; shape ``(K, m, m)``."""
    return fom.transfer_batch(np.atleast_1d(np.asarray(s, dtype=complex)))


# --------------------------------------------------------------------------
# samples


class SampleSet:
    """Sorted distinct frequencies ``omega >= 0`` with cached FOM values ``H(i omega)``."""

    def __init__(self, omega, values):
        omega = np.asarray(omega, dtype=float).ravel()
        values = np.asarray(values, dtype=complex)
        if omega.size != values.shape[0]:
            raise ValueError("omega and values differ in length")
        if np.any(omega < 0):
            raise ValueError("sample frequencies must be nonnegative")
        omega, idx = np.unique(omega, return_index=True)
        self.omega = omega
        self.values = values[idx]

    @classmethod
    def from_fom(cls, fom, omega):
        omega = np.unique(np.asarray(omega, dtype=float).ravel())
        return cls(omega, fom_response(fom, 1j * omega))

    @classmethod
    def log_grid(cls, fom, lo=1e-3, hi=1e5, count=20):
        return cls.from_fom(fom, np.logspace(np.log10(lo), np.log10(hi), count))

    @property
    def points(self):
        return 1j * self.omega

    def __len__(self):
        return self.omega.size

    def with_points(self, omega, values):
        return SampleSet(np.concatenate([self.omega, omega]), np.concatenate([self.values, values]))


# --------------------------------------------------------------------------
# hinge loss


def _rom_eval(theta, s):
    model = assemble_ph(theta)
    try:
        H, X, Y = _backend.resolvent_batch(model.A, model.B, model.C, s)
    except ZeroDivisionError as exc:
        raise SingularShift(f"sI - A_r is singular at s={s[exc.args[0]]}") from None
    return model, H + model.D, X, Y


def _pullback_weighted(theta, model, X, Y, Phi):
    """Gradient of ``Re sum_k tr(Phi_k dH_r(s_k))`` with respect to ``theta``."""
    XPhi = X @ Phi
    GA = np.sum(XPhi @ Y, axis=0).T
    GB = np.sum(Phi @ Y, axis=0).T
    GC = np.sum(XPhi, axis=0).T
    GD = np.sum(Phi, axis=0).T
    der = param_derivatives(theta, model)
    return der.pullback(GA, GB, GC, GD).real


def loss(theta, samples, gamma):
    """Hinge loss; exactly zero when every sampled error singular value is ``<= gamma``."""
    _, Hr, _, _ = _rom_eval(theta, samples.points)
    sv = np.linalg.svd(samples.values - Hr, compute_uv=False)
    return float(np.sum(np.maximum(sv - gamma, 0.0) ** 2) / gamma)


def loss_and_gradient(theta, samples, gamma):
    """Hinge loss and its gradient (full length, zeros at frozen entries).

    Uses ``d sigma_j = Re(u_j^H dE v_j)``. Inactive hinge terms contribute
    nothing; for tied singular values the sum over the tied group is used,
    which does not depend on the chosen singular vectors.
    """
    model, Hr, X, Y = _rom_eval(theta, samples.points)
    U, sv, Vh = np.linalg.svd(samples.values - Hr)
    excess = np.maximum(sv - gamma, 0.0)
    value = float(np.sum(excess**2) / gamma)
    g = np.zeros(theta.theta.size)
    if value > 0:
        w = 2.0 * excess / gamma
        # Phi_k = sum_j w_kj v_j u_j^H
        Phi = np.einsum("kj,kjn,kmj->knm", w, Vh.conj(), U.conj())
        g = -_pullback_weighted(theta, model, X, Y, Phi)
        g[theta.frozen_mask] = 0.0
    return value, g


def loss_gradient(theta, samples, gamma):
    return loss_and_gradient(theta, samples, gamma)[1]


# --------------------------------------------------------------------------
# sample update


def update_samples(samples, theta, gamma, fom, probes=32, omega_range=(1e-4, 1e6), xtol=1e-10, peak_rtol=1e-8,
                   noise_rtol=1e-12):
    """Insert local maximizers of the sampled error that exceed ``gamma``.

    Every gap between adjacent samples (and between the outermost samples and
    ``omega_range``) is probed at ``probes`` log-spaced interior points. Each
    local maximum of ``sigma_max(H - H_r)`` above ``gamma`` at a probe (or at
    an end of ``omega_range``) is refined by a bounded scalar search in
    ``log omega`` and inserted. A peak must exceed both neighbours by
    ``peak_rtol * error + noise_rtol * sigma_max(H)``, so round-off ripple on
    flat stretches of the error is ignored. Points are never removed, and a call on a set
    without violations returns it unchanged.
    """
    model = assemble_ph(theta)
    lo, hi = omega_range
    lo = min(lo, samples.omega[samples.omega > 0].min(initial=lo))
    hi = max(hi, samples.omega.max(initial=hi))
    edges = np.unique(np.concatenate([[lo], samples.omega[samples.omega > 0], [hi]]))
    le = np.log10(edges)
    t = np.linspace(0.0, 1.0, probes + 2)[1:-1]
    probe_log = (le[:-1, None] + (le[1:] - le[:-1])[:, None] * t[None, :]).ravel()
    grid_log = np.concatenate([le, probe_log])
    existing = np.isin(edges, samples.omega)
    is_candidate = np.concatenate([~existing, np.ones(probe_log.size, bool)])
    order = np.argsort(grid_log, kind="stable")
    grid_log, is_candidate = grid_log[order], is_candidate[order]
    omega = 10.0**grid_log

    def err(om, with_fom=False):
        s = 1j * np.atleast_1d(om)
        Hf = fom_response(fom, s)
        e = sigma_max(Hf - model.transfer_batch(s))
        return (e, sigma_max(Hf)) if with_fom else e

    e, scale = err(omega, with_fom=True)
    last = omega.size - 1
    new = []
    for i in np.flatnonzero(is_candidate):
        if not e[i] > gamma:
            continue
        left = e[i - 1] if i > 0 else -np.inf
        right = e[i + 1] if i < last else -np.inf
        margin = peak_rtol * e[i] + noise_rtol * scale[i]
        if not (e[i] > left + margin and e[i] > right + margin):
            continue
        a, b = grid_log[max(i - 1, 0)], grid_log[min(i + 1, last)]
        res = minimize_scalar(lambda x: -err(10.0**x)[0], bounds=(a, b), method="bounded",
                              options={"xatol": xtol})
        x = res.x if -res.fun >= e[i] else grid_log[i]
        new.append(10.0**x)
    if not new:
        return samples
    new = np.unique(new)
    keep = [w for w in new if samples.omega.size == 0 or np.min(np.abs(samples.omega - w)) > 1e-9 * w]
    if not keep:
        return samples
    keep = np.array(keep)
    return samples.with_points(keep, fom_response(fom, 1j * keep))


# --------------------------------------------------------------------------
# bisection driver


@dataclass
class BisectionConfig:
    """Inputs of the bisection loop.

    ``gamma_upper=None`` uses twice the estimated H-infinity norm of the FOM;
    ``eps2=None`` uses ``1e-12 * (#samples) * m`` at each step.
    """

    gamma_upper: float | None = None
    eps1: float = 1e-2
    eps2: float | None = None
    max_opt_iters: int = 500
    seed: int = 0
    probes: int = 32
    omega_range: tuple = (1e-4, 1e6)
    initial_omega: tuple = (1e-3, 1e5, 20)
    max_bisection_steps: int = 200
    optimizer: OptimizerConfig | None = None

    def __post_init__(self):
        if self.gamma_upper is not None and not self.gamma_upper > 0:
            raise ValueError("gamma_upper must be positive")
        if not self.eps1 > 0 or (self.eps2 is not None and not self.eps2 > 0):
            raise ValueError("eps1 and eps2 must be positive")
        if self.max_opt_iters < 1:
            raise ValueError("max_opt_iters must be at least 1")


class SobmorResult(NamedTuple):
    model: ReducedPhModel
    gamma_final: float
    trace: list


def initial_theta(r, m, seed=0):
    """Entries i.i.d. uniform on ``[-0.1, 0.1]``, with unit diagonals in the ``R`` and ``Q`` factors.

    With all entries small every pole starts near the origin, and the hinge
    loss then often parks one pole there for good. Unit diagonals start
    from a well-damped model instead.
    """
    from .phinit import random_stable_theta

    return random_stable_theta(r, m, seed)


def default_gamma_upper(fom, omega_range=(1e-4, 1e6), count=200):
    grid = np.logspace(np.log10(omega_range[0]), np.log10(omega_range[1]), count)
    return 2.0 * hinf_estimate(lambda s: fom_response(fom, s), grid)


class _HingeProblem:
    def __init__(self, template, samples, gamma):
        self.template, self.samples, self.gamma = template, samples, gamma
        self._key = None
        self._val = None

    def _eval(self, x):
        key = x.tobytes()
        if key != self._key:
            try:
                self._val = loss_and_gradient(self.template.with_theta(x), self.samples, self.gamma)
            except (SingularShift, np.linalg.LinAlgError):
                self._val = (np.inf, np.full(x.size, np.nan))
            self._key = key
        return self._val

    def f(self, x):
        return self._eval(x)[0]

    def grad(self, x):
        return self._eval(x)[1]


def sobmor_hinf(fom, r, config=None, theta0=None, trace_path=None):
    """Bisection on ``gamma`` with hinge-loss minimization at each step.

    Parameters
    ----------
    fom
        :class:`DescriptorSystem` (or a :class:`ReducedPhModel` acting as FOM).
    r
        Reduced order.
    config
        :class:`BisectionConfig`.
    theta0
        Starting parameters; default :func:`initial_theta` with ``config.seed``.
    trace_path
        If given, the trace is written there as JSON lines.

    Returns
    -------
    SobmorResult
        ``(model, gamma_final, trace)`` where ``gamma_final`` is the last
        upper bound and each trace record holds ``gamma``, the loss,
        the sample count and the interval after the step.

    Raises
    ------
    OptimizerFailure
        If the loss is not finite at an inner starting point.
    """
    cfg = config or BisectionConfig()
    m = fom.m
    theta = theta0 if theta0 is not None else initial_theta(r, m, cfg.seed)
    if not np.all(np.isfinite(theta.theta)):
        raise OptimizerFailure("initial parameters are not finite")
    gamma_u = cfg.gamma_upper if cfg.gamma_upper is not None else default_gamma_upper(fom, cfg.omega_range)
    gamma_l = 0.0
    lo, hi, count = cfg.initial_omega
    samples = SampleSet.log_grid(fom, lo, hi, int(count))
    opt_cfg = cfg.optimizer or OptimizerConfig(max_iters=cfg.max_opt_iters)
    trace = []
    j = 0
    while (gamma_u - gamma_l) / (gamma_u + gamma_l) > cfg.eps1:
        if j >= cfg.max_bisection_steps:
            log.warning("bisection stopped after %d steps", j)
            break
        gamma = 0.5 * (gamma_u + gamma_l)
        samples = update_samples(samples, theta, gamma, fom, cfg.probes, cfg.omega_range)
        prob = _HingeProblem(theta, samples, gamma)
        try:
            res = minimize(prob.f, prob.grad, theta.theta, mask=theta.frozen_mask, config=opt_cfg)
        except NonFiniteObjective as exc:
            raise OptimizerFailure(f"hinge loss not finite at bisection step {j}: {exc}") from exc
        if not np.isfinite(res.fun):
            raise OptimizerFailure(f"hinge loss diverged at bisection step {j}")
        theta = theta.with_theta(res.theta)
        alpha = res.fun
        eps2 = cfg.eps2 if cfg.eps2 is not None else 1e-12 * len(samples) * m
        if alpha > eps2:
            gamma_l = gamma
        else:
            gamma_u = gamma
        j += 1
        trace.append({
            "step": j, "gamma": gamma, "loss": alpha, "eps2": eps2, "n_samples": len(samples),
            "gamma_l": gamma_l, "gamma_u": gamma_u, "status": res.status.value, "n_iter": res.n_iter,
        })
        log.info("bisection step %d: gamma=%.6e loss=%.3e samples=%d", j, gamma, alpha, len(samples))
    if trace_path is not None:
        write_trace_jsonl(trace, trace_path)
    return SobmorResult(assemble_ph(theta), float(gamma_u), trace)


def write_trace_jsonl(trace, path):
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# quadrature-based H2 variant


@dataclass
class SobmorH2Config:
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(max_iters=1000))
    max_outer: int = 5
    outer_rtol: float = 1e-6
    seed: int = 0


def quadrature_objective(theta, nodes, weights, fom_values):
    """``sum_k w_k ||H(i w_k) - H_r(i w_k)||_F^2`` and its gradient (zeros at frozen entries)."""
    model, Hr, X, Y = _rom_eval(theta, 1j * nodes)
    E = fom_values - Hr
    value = float(np.sum(weights * np.sum(np.abs(E) ** 2, axis=(1, 2))))
    # d||E||^2 = -2 Re tr(E^H dH_r)
    Phi = 2.0 * weights[:, None, None] * np.conj(np.swapaxes(E, 1, 2))
    g = -_pullback_weighted(theta, model, X, Y, Phi)
    g[theta.frozen_mask] = 0.0
    return value, g


def sobmor_h2(fom, r, config=None, theta0=None, d0=None):
    """Minimize a frozen-node quadrature of the squared H2 error.

    The feedthrough is fixed to ``S0 - N0`` so the error is strictly proper.
    In each outer iteration the adaptive rule is run on the current error,
    its nodes and weights are frozen, and the resulting weighted sum is
    minimized. Iteration stops when the objective changes by less than
    ``outer_rtol`` relative or after ``max_outer`` rounds.

    Returns
    -------
    SobmorResult
        ``gamma_final`` holds the final H2 error estimate; ``trace`` one
        record per outer iteration.

    Raises
    ------
    NotStrictlyProper
        If the error does not decay (feedthrough mismatch).
    """
    from .phinit import random_stable_theta
    from .propt import feedthrough_of, fix_feedthrough

    cfg = config or SobmorH2Config()
    d0 = d0 or feedthrough_of(fom)
    theta = theta0 if theta0 is not None else random_stable_theta(r, fom.m, cfg.seed)
    theta, _ = fix_feedthrough(theta, d0)
    trace = []
    prev = None
    value = np.inf
    for outer in range(cfg.max_outer):
        model = assemble_ph(theta)

        def err(s, model=model):
            return fom_response(fom, s) - model.transfer_batch(s)

        quad = h2_norm_quadrature(err, cfg.quadrature)
        nodes, weights = quad.omega, quad.weights
        fom_values = fom_response(fom, 1j * nodes)
        cache = {}

        def evaluate(x):
            key = x.tobytes()
            if key not in cache:
                cache.clear()
                try:
                    cache[key] = quadrature_objective(theta.with_theta(x), nodes, weights, fom_values)
                except (PhMorError, np.linalg.LinAlgError):
                    cache[key] = (np.inf, np.full(x.size, np.nan))
            return cache[key]

        res = minimize(lambda x: evaluate(x)[0], lambda x: evaluate(x)[1], theta.theta,
                       mask=theta.frozen_mask, config=cfg.optimizer)
        theta = theta.with_theta(res.theta)
        value = res.fun
        trace.append({"outer": outer, "nodes": int(nodes.size), "start": quad.squared,
                      "objective": value, "status": res.status.value, "n_iter": res.n_iter})
        if prev is not None and abs(prev - value) <= cfg.outer_rtol * max(abs(prev), 1e-300):
            break
        if value == 0.0:
            break
        prev = value
    return SobmorResult(assemble_ph(theta), float(np.sqrt(max(value, 0.0))), trace)
