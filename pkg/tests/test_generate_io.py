import json

import numpy as np
import pytest
from conftest import random_index1

from phmor.dae import semi_explicit_transform
from phmor.errors import InputError
from phmor.generate import KINDS, generate_benchmark
from phmor.io import read_manifest, read_system, write_system
from phmor.propt import h2_error


class TestGenerator:
    @pytest.mark.parametrize("kind", KINDS)
    def test_valid_and_deterministic(self, kind):
        a = generate_benchmark(kind, n=30, m=2, n_algebraic=6, seed=5)
        b = generate_benchmark(kind, n=30, m=2, n_algebraic=6, seed=5)
        assert a.n == 30 and a.m == 2 and a.normalized
        assert (a.J != b.J).nnz == 0
        s = 1j * np.array([0.1, 1.0])
        np.testing.assert_array_equal(a.transfer_batch(s), b.transfer_batch(s))

    def test_seeds_differ(self):
        a = generate_benchmark(n=30, n_algebraic=5, seed=1)
        b = generate_benchmark(n=30, n_algebraic=5, seed=2)
        assert (a.R != b.R).nnz > 0

    def test_algebraic_count(self):
        sys = generate_benchmark(n=50, m=2, n_algebraic=12, seed=0)
        assert np.sum(sys.E.diagonal() == 0) == 12
        assert semi_explicit_transform(sys).n1 == 38

    def test_stable(self):
        sys = generate_benchmark(n=40, m=2, n_algebraic=8, seed=3)
        se = semi_explicit_transform(sys)
        lam = np.linalg.eigvals(np.linalg.solve(se.E11, se.L11))
        assert lam.real.max() < 0

    def test_embedded_is_exactly_representable(self):
        from phmor.phinit import modal_truncation

        fom = generate_benchmark("embedded", n=20, m=2, n_algebraic=4, seed=1, order=3)
        rom = modal_truncation(fom, 3)
        s = 1j * np.logspace(-2, 2, 7)
        np.testing.assert_allclose(rom.transfer_batch(s), fom.transfer_batch(s), rtol=1e-8, atol=1e-10)

    @pytest.mark.parametrize("kw", [dict(kind="nope"), dict(n=10, n_algebraic=10), dict(m=0), dict(n=5, order=6,
                                    kind="embedded")])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            generate_benchmark(**kw)


class TestIO:
    def test_round_trip(self, tmp_path, rng):
        sys = random_index1(rng, n=9, m=2, n_alg=2)
        path = write_system(sys, tmp_path, "fom")
        back = read_system(path)
        for key in ("E", "J", "R", "Q", "G", "P"):
            np.testing.assert_array_equal(getattr(back, key).toarray(), getattr(sys, key).toarray())
        np.testing.assert_array_equal(back.S, sys.S)
        np.testing.assert_array_equal(back.N, sys.N)

    def test_manifest_contents(self, tmp_path, rng):
        path = write_system(random_index1(rng, n=6, m=1, n_alg=1), tmp_path)
        manifest = json.loads(path.read_text())
        assert manifest["n"] == 6 and manifest["m"] == 1 and set(manifest["matrices"]) == set("EJRQGPSN")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InputError):
            read_system(tmp_path / "none.json")

    def test_missing_matrix(self, tmp_path, rng):
        path = write_system(random_index1(rng, n=6, m=1, n_alg=1), tmp_path)
        (tmp_path / "system_R.mtx").unlink()
        with pytest.raises(InputError):
            read_manifest(path)

    def test_bad_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(InputError):
            read_system(tmp_path / "bad.json")

    def test_shape_mismatch(self, tmp_path, rng):
        path = write_system(random_index1(rng, n=6, m=1, n_alg=1), tmp_path)
        manifest = json.loads(path.read_text())
        manifest["m"] = 2
        path.write_text(json.dumps(manifest))
        with pytest.raises(InputError):
            read_system(path)

    def test_normalized_on_load(self, tmp_path, rng):
        from phmor.dae import DescriptorSystem

        sys = DescriptorSystem(E=np.eye(2), J=[[0, 1], [-1, 0]], R=np.eye(2), Q=np.diag([2.0, 3.0]), G=np.ones((2, 1)))
        back = read_system(write_system(sys, tmp_path))
        assert back.normalized
        np.testing.assert_allclose(back.transfer(1j).value, sys.transfer(1j).value, rtol=1e-12)

    def test_generated_round_trip_keeps_error(self, tmp_path):
        from phmor.param import ReducedPhModel

        fom = generate_benchmark(n=20, m=1, n_algebraic=4, seed=0)
        back = read_system(write_system(fom, tmp_path))
        zero = ReducedPhModel(J=np.zeros((1, 1)), R=np.eye(1), Q=np.eye(1), G=np.zeros((1, 1)), P=np.zeros((1, 1)),
                              S=np.zeros((1, 1)), N=np.zeros((1, 1)))
        assert h2_error(back, zero)[1] == pytest.approx(h2_error(fom, zero)[1], rel=1e-12)
