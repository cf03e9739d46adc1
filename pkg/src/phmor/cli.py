"""Command line front end: ``phmor reduce | generate | analyze``.

Failures print ``{"error": <category>, "message": ...}`` to stderr and exit
with the code listed in :data:`EXIT_CODES`; no output files are left behind.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .io import read_system, write_system
from .norms import QuadratureConfig, hinf_estimate, sigma_max
from .optimize import OptimizerConfig
from .param import ReducedPhModel

log = logging.getLogger("phmor")

METHODS = ("sobmor-hinf", "sobmor-h2", "propt-h2")

EXIT_CODES = {
    "InputError": 2,
    "InvalidSystem": 3,
    "NotNormalized": 4,
    "SingularShift": 5,
    "IndexTooHigh": 6,
    "NoConvergence": 7,
    "NotStrictlyProper": 8,
    "NotPsd": 9,
    "DefectiveMatrix": 10,
    "NotPositiveDefinite": 11,
    "UnstableA": 12,
    "OptimizerFailure": 13,
}


def exit_code(exc):
    for cls in type(exc).__mro__:
        if getattr(cls, "__name__", None) in EXIT_CODES:
            return EXIT_CODES[cls.__name__]
    return 1


@dataclass
class GridSpec:
    lo: float = 1e-3
    hi: float = 1e5
    points: int = 400

    def omega(self):
        if not (0 < self.lo < self.hi) or self.points < 2:
            raise errors.InputError("reporting grid needs 0 < lo < hi and at least 2 points")
        return np.logspace(np.log10(self.lo), np.log10(self.hi), self.points)


@dataclass
class RunManifest:
    """Everything that defines a reduction run."""

    method: str
    r: int
    input: str
    output: str
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    grid: GridSpec = field(default_factory=GridSpec)

    def validate(self):
        if self.method not in METHODS:
            raise errors.InputError(f"method must be one of {METHODS}, got {self.method!r}")
        if int(self.r) < 1:
            raise errors.InputError("r must be at least 1")
        if not Path(self.input).is_file():
            raise errors.InputError(f"input manifest {self.input} does not exist")
        known = {"eps1", "eps2", "gamma_upper", "max_iters", "grad_tol", "max_opt_iters"}
        unknown = set(self.tolerances) - known
        if unknown:
            raise errors.InputError(f"unknown tolerance fields {sorted(unknown)}")
        self.grid.omega()
        return self

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise errors.InputError(f"cannot read run manifest {path}: {exc}") from exc
        try:
            grid = GridSpec(**data.pop("grid", {}))
            return cls(grid=grid, **data)
        except TypeError as exc:
            raise errors.InputError(f"bad run manifest {path}: {exc}") from exc


# --------------------------------------------------------------------------
# helpers


def _response(system, s):
    return system.transfer_batch(s)


def write_response_csv(path, omega, fom, rom):
    s = 1j * omega
    Hf = _response(fom, s)
    Hr = _response(rom, s)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "sigma_fom", "sigma_rom", "sigma_error"])
        for row in zip(omega, sigma_max(Hf), sigma_max(Hr), sigma_max(Hf - Hr)):
            w.writerow([repr(float(v)) for v in row])


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _error_report(fom, model, d0, omega):
    from .propt import h2_error

    rel_h2, fom_h2 = h2_error(fom, model, d0=d0, relative=True)
    fom_hinf = hinf_estimate(lambda s: _response(fom, s), omega)
    err_hinf = hinf_estimate(lambda s: _response(fom, s) - _response(model, s), omega)
    return {
        "fom_h2_norm": _finite(fom_h2),
        "h2_error": _finite(rel_h2 * fom_h2),
        "relative_h2_error": _finite(rel_h2),
        "fom_hinf_estimate": _finite(fom_hinf),
        "hinf_error": _finite(err_hinf),
        "relative_hinf_error": _finite(err_hinf / fom_hinf) if fom_hinf > 0 else None,
    }


def _commit(tmp, out):
    out.mkdir(parents=True, exist_ok=True)
    for f in sorted(tmp.iterdir()):
        shutil.move(str(f), out / f.name)


# --------------------------------------------------------------------------
# subcommands


def run(manifest):
    """Execute a reduction; returns the report dictionary."""
    from .propt import feedthrough_of, propt_h2, write_history_csv
    from .sobmor import BisectionConfig, SobmorH2Config, sobmor_h2, sobmor_hinf

    manifest.validate()
    tol = manifest.tolerances
    t0 = time.perf_counter()
    fom = read_system(manifest.input)
    d0 = feedthrough_of(fom)
    out = Path(manifest.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".phmor-", dir=out.parent))
    try:
        report = {"method": manifest.method, "r": int(manifest.r), "n": fom.n, "m": fom.m, "seed": manifest.seed}
        opt = OptimizerConfig(
            max_iters=int(tol.get("max_iters", 2000 if manifest.method == "propt-h2" else 1000)),
            grad_tol=float(tol.get("grad_tol", 1e-8)),
        )
        if manifest.method == "propt-h2":
            res = propt_h2(fom, int(manifest.r), d0=d0, config=opt, seed=manifest.seed)
            model = res.model
            write_history_csv(res.history, tmp / "history.csv")
            report.update(status=res.status, iterations=len(res.history) - 1,
                          final_objective=_finite(res.history[-1][1]))
        elif manifest.method == "sobmor-hinf":
            cfg = BisectionConfig(
                gamma_upper=tol.get("gamma_upper"),
                eps1=float(tol.get("eps1", 1e-2)),
                eps2=tol.get("eps2"),
                max_opt_iters=int(tol.get("max_opt_iters", 500)),
                seed=manifest.seed,
            )
            res = sobmor_hinf(fom, int(manifest.r), cfg, trace_path=tmp / "trace.jsonl")
            model = res.model
            report.update(gamma_final=_finite(res.gamma_final), bisection_steps=len(res.trace),
                          iterations=int(sum(t["n_iter"] for t in res.trace)),
                          gamma_upper_initial=_finite(2 * res.trace[0]["gamma"]) if res.trace else None)
        else:
            res = sobmor_h2(fom, int(manifest.r), SobmorH2Config(optimizer=opt, seed=manifest.seed), d0=d0)
            model = res.model
            with open(tmp / "trace.jsonl", "w") as fh:
                for rec in res.trace:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            report.update(outer_iterations=len(res.trace), iterations=int(sum(t["n_iter"] for t in res.trace)),
                          quadrature_h2_error=_finite(res.gamma_final))
        omega = manifest.grid.omega()
        report.update(_error_report(fom, model, d0, omega))
        report["S0"] = d0.S0.tolist()
        report["N0"] = d0.N0.tolist()
        report["feedthrough_mismatch"] = float(max(np.abs(model.S - d0.S0).max(), np.abs(model.N - d0.N0).max()))
        write_system(model.to_descriptor(), tmp, name="rom")
        write_response_csv(tmp / "response.csv", omega, fom, model)
        report["timing"] = {"wall_time_s": time.perf_counter() - t0}
        (tmp / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        _commit(tmp, out)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return report


def cmd_reduce(args):
    if args.run_manifest:
        manifest = RunManifest.from_json(args.run_manifest)
        if args.output:
            manifest.output = args.output
    else:
        missing = [f for f in ("method", "order", "input", "output") if getattr(args, f) is None]
        if missing:
            raise errors.InputError(f"missing arguments {missing} (or pass --run-manifest)")
        tol = {k: v for k, v in {
            "eps1": args.eps1, "eps2": args.eps2, "gamma_upper": args.gamma_upper,
            "max_iters": args.max_iters, "max_opt_iters": args.max_opt_iters, "grad_tol": args.grad_tol,
        }.items() if v is not None}
        manifest = RunManifest(
            method=args.method, r=args.order, input=args.input, output=args.output, seed=args.seed,
            tolerances=tol, grid=GridSpec(args.grid_min, args.grid_max, args.grid_points),
        )
    report = run(manifest)
    summary = {k: report.get(k) for k in ("method", "r", "relative_h2_error", "relative_hinf_error", "gamma_final")}
    print(json.dumps(summary, sort_keys=True))


def cmd_generate(args):
    from .generate import generate_benchmark

    sys_ = generate_benchmark(args.kind, args.n, args.m, args.n_algebraic, args.seed, args.order)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".phmor-", dir=out.parent))
    try:
        path = write_system(sys_, tmp, name=args.name)
        _commit(tmp, out)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print(str(out / path.name))


def load_rom(path):
    rom = read_system(path, normalize=False)
    return ReducedPhModel.from_descriptor(rom)


def cmd_analyze(args):
    from .dae import estimate_feedthrough
    from .norms import h2_norm_quadrature
    from .propt import StrictlyProperPart, feedthrough_of

    fom = read_system(args.input)
    omega = GridSpec(args.grid_min, args.grid_max, args.grid_points).omega()
    d0 = feedthrough_of(fom)
    sampled = estimate_feedthrough(fom)
    report = {
        "n": fom.n,
        "m": fom.m,
        "D0": d0.D0.tolist(),
        "S0": d0.S0.tolist(),
        "N0": d0.N0.tolist(),
        "D0_sampling_deviation": float(np.abs(sampled.D0 - d0.D0).max()),
        "h2_norm_strictly_proper": h2_norm_quadrature(StrictlyProperPart(fom, d0), QuadratureConfig()).norm,
        "hinf_estimate": hinf_estimate(lambda s: _response(fom, s), omega),
    }
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".phmor-", dir=out.parent))
    try:
        if args.rom:
            model = load_rom(args.rom)
            report["rom"] = {"r": model.r, **_error_report(fom, model, d0, omega)}
            write_response_csv(tmp / "response.csv", omega, fom, model)
        (tmp / "analysis.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        _commit(tmp, out)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print(json.dumps({k: report[k] for k in ("n", "m", "hinf_estimate", "h2_norm_strictly_proper")}, sort_keys=True))


# --------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise errors.InputError(message)


def build_parser():
    p = _Parser(prog="phmor", description="Structure-preserving reduction of port-Hamiltonian descriptor systems.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, help="worker threads for FOM evaluation (sets PHMOR_NUM_THREADS)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def grid_args(q):
        q.add_argument("--grid-min", type=float, default=1e-3)
        q.add_argument("--grid-max", type=float, default=1e5)
        q.add_argument("--grid-points", type=int, default=400)

    q = sub.add_parser("reduce", help="reduce a full-order model")
    q.add_argument("--run-manifest", help="JSON run manifest (overrides the flags below)")
    q.add_argument("--method", choices=METHODS)
    q.add_argument("-r", "--order", type=int)
    q.add_argument("-i", "--input", help="system manifest (.json)")
    q.add_argument("-o", "--output", help="output directory")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--eps1", type=float)
    q.add_argument("--eps2", type=float)
    q.add_argument("--gamma-upper", type=float)
    q.add_argument("--max-iters", type=int)
    q.add_argument("--max-opt-iters", type=int)
    q.add_argument("--grad-tol", type=float)
    grid_args(q)
    q.set_defaults(func=cmd_reduce)

    q = sub.add_parser("generate", help="write a synthetic index-one benchmark")
    q.add_argument("--kind", choices=("random", "embedded"), default="random")
    q.add_argument("-n", type=int, default=200)
    q.add_argument("-m", type=int, default=2)
    q.add_argument("--n-algebraic", type=int, default=40)
    q.add_argument("--order", type=int, default=3, help="order of the embedded pH-ODE")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--name", default="system")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_generate)

    q = sub.add_parser("analyze", help="feedthrough, norms and (optionally) ROM errors")
    q.add_argument("-i", "--input", required=True)
    q.add_argument("--rom", help="ROM manifest to compare against")
    q.add_argument("-o", "--output", required=True)
    grid_args(q)
    q.set_defaults(func=cmd_analyze)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads:
            os.environ["PHMOR_NUM_THREADS"] = str(args.threads)
        args.func(args)
    except errors.PhMorError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return exit_code(exc)
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": "InputError", "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES["InputError"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
