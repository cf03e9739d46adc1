import json

import numpy as np
import pytest
from conftest import central_difference, dense_fom, rel_err, stable_theta

from phmor.errors import OptimizerFailure
from phmor.param import ReducedPhModel, assemble_ph
from phmor.propt import feedthrough_of, fix_feedthrough
from phmor.sobmor import (
    BisectionConfig,
    SampleSet,
    SobmorH2Config,
    loss,
    loss_and_gradient,
    quadrature_objective,
    sobmor_h2,
    sobmor_hinf,
    update_samples,
)


def resonant_fom(zeta=0.01, w0=3.0):
    """Lightly damped oscillator ``H(s) = s / (s^2 + 2 zeta w0 s + w0^2)`` as a pH model."""
    return ReducedPhModel(
        J=np.array([[0.0, -w0], [w0, 0.0]]), R=np.diag([2 * zeta * w0, 0.0]), Q=np.eye(2),
        G=np.array([[1.0], [0.0]]), P=np.zeros((2, 1)), S=np.zeros((1, 1)), N=np.zeros((1, 1)),
    )


class TestSampleSet:
    def test_sorted_unique(self, rng):
        fom = dense_fom(rng, 2, 1)
        s = SampleSet.from_fom(fom, [3.0, 1.0, 3.0, 2.0])
        np.testing.assert_array_equal(s.omega, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(s.values, fom.transfer_batch(1j * s.omega))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            SampleSet([-1.0], np.zeros((1, 1, 1)))


class TestHingeLoss:
    def test_zero_above_error(self, rng):
        fom = dense_fom(rng, 3, 2)
        samples = SampleSet.log_grid(fom, count=10)
        theta = stable_theta(rng, 2, 2)
        value, g = loss_and_gradient(theta, samples, gamma=1e6)
        assert value == 0.0 and np.all(g == 0)

    def test_hand_formula(self, rng):
        fom = dense_fom(rng, 3, 2)
        samples = SampleSet.log_grid(fom, count=6)
        theta = stable_theta(rng, 2, 2)
        sv = np.linalg.svd(samples.values - assemble_ph(theta).transfer_batch(samples.points), compute_uv=False)
        gamma = 0.5 * sv.max()
        assert loss(theta, samples, gamma) == pytest.approx(np.sum(np.clip(sv - gamma, 0, None) ** 2) / gamma)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        fom = dense_fom(rng, 4, 2)
        samples = SampleSet.log_grid(fom, count=8)
        theta = stable_theta(rng, 2, 2)
        gamma = 0.3 * np.linalg.svd(samples.values - assemble_ph(theta).transfer_batch(samples.points),
                                    compute_uv=False).max()
        _, g = loss_and_gradient(theta, samples, gamma)
        fd = central_difference(lambda x: loss(theta.with_theta(x), samples, gamma), theta.theta)
        assert rel_err(g, fd) < 1e-5

    def test_frozen_entries_zero(self, rng):
        fom = dense_fom(rng, 3, 2)
        samples = SampleSet.log_grid(fom, count=6)
        theta, _ = fix_feedthrough(stable_theta(rng, 2, 2), feedthrough_of(fom))
        _, g = loss_and_gradient(theta, samples, 1e-3)
        assert np.all(g[theta.frozen_mask] == 0) and np.any(g != 0)


class TestUpdateSamples:
    def test_finds_resonance(self):
        fom = resonant_fom()
        theta = stable_theta(np.random.default_rng(0), 1, 1)
        samples = SampleSet.log_grid(fom, 1e-2, 1e2, 5)
        new = update_samples(samples, theta, gamma=1.0, fom=fom)
        added = np.setdiff1d(new.omega, samples.omega)
        assert np.any(np.abs(added - 3.0) < 1e-3)

    def test_no_violation_unchanged(self, rng):
        fom = resonant_fom()
        samples = SampleSet.log_grid(fom, count=5)
        assert update_samples(samples, stable_theta(rng, 1, 1), gamma=1e6, fom=fom) is samples

    def test_only_adds(self, rng):
        fom = dense_fom(rng, 4, 1)
        samples = SampleSet.log_grid(fom, count=7)
        new = update_samples(samples, stable_theta(rng, 1, 1), gamma=1e-6, fom=fom)
        assert set(samples.omega) <= set(new.omega)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    fom = resonant_fom(zeta=0.05, w0=2.0)
    path = tmp_path_factory.mktemp("sob") / "trace.jsonl"
    cfg = BisectionConfig(eps1=0.05, max_opt_iters=100, initial_omega=(1e-2, 1e2, 8))
    return fom, sobmor_hinf(fom, 1, cfg, trace_path=path), path


class TestBisection:
    def test_interval_invariants(self, run):
        _, res, _ = run
        prev_l, prev_u = 0.0, np.inf
        for rec in res.trace:
            assert 0.0 <= rec["gamma_l"] < rec["gamma_u"]
            assert rec["gamma"] in (rec["gamma_l"], rec["gamma_u"])
            assert rec["gamma_l"] >= prev_l
            assert rec["gamma_u"] <= prev_u
            prev_l, prev_u = rec["gamma_l"], rec["gamma_u"]
            assert (rec["loss"] <= rec["eps2"]) == (rec["gamma"] == rec["gamma_u"])
        last = res.trace[-1]
        assert (last["gamma_u"] - last["gamma_l"]) / (last["gamma_u"] + last["gamma_l"]) <= 0.05
        assert res.gamma_final == last["gamma_u"]

    def test_samples_grow(self, run):
        _, res, _ = run
        n = [rec["n_samples"] for rec in res.trace]
        assert n == sorted(n)

    def test_trace_file(self, run):
        _, res, path = run
        lines = [json.loads(x) for x in path.read_text().splitlines()]
        assert lines == json.loads(json.dumps(res.trace))

    def test_gamma_bounds_sampled_error(self, run):
        fom, res, _ = run
        w = np.logspace(-2, 2, 50)
        err = np.linalg.svd(fom.transfer_batch(1j * w) - res.model.transfer_batch(1j * w), compute_uv=False)
        # gamma_final bounds the error where it was sampled; check it is the right scale
        assert err.max() <= 5 * res.gamma_final

    def test_deterministic(self, run):
        fom, res, _ = run
        cfg = BisectionConfig(eps1=0.05, max_opt_iters=100, initial_omega=(1e-2, 1e2, 8))
        again = sobmor_hinf(fom, 1, cfg)
        assert again.gamma_final == res.gamma_final

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            BisectionConfig(eps1=0.0)

    def test_nonfinite_start(self):
        from phmor.param import PhParameterVector

        theta0 = PhParameterVector(1, 1, np.full(5, np.nan))
        with pytest.raises(OptimizerFailure):
            sobmor_hinf(resonant_fom(), 1, BisectionConfig(gamma_upper=1.0), theta0=theta0)


class TestH2Variant:
    def test_objective_gradient(self, rng):
        fom = dense_fom(rng, 3, 1)
        nodes = np.logspace(-1, 1, 7)
        weights = rng.uniform(0.1, 1.0, 7)
        values = fom.transfer_batch(1j * nodes)
        theta = stable_theta(rng, 2, 1)
        _, g = quadrature_objective(theta, nodes, weights, values)
        fd = central_difference(lambda x: quadrature_objective(theta.with_theta(x), nodes, weights, values)[0],
                                theta.theta)
        assert rel_err(g, fd) < 1e-6

    def test_recovers_small_model(self, rng):
        fom = dense_fom(rng, 2, 1)
        res = sobmor_h2(fom, 2, SobmorH2Config(max_outer=3))
        s = 1j * np.logspace(-2, 2, 9)
        H = fom.transfer_batch(s)
        assert np.abs(res.model.transfer_batch(s) - H).max() < 1e-4 * np.abs(H).max()
        assert np.abs(res.model.S - fom.S).max() <= 1e-12
