"""Matrix Market + JSON manifest storage for descriptor systems and ROMs.

A manifest looks like::

    {"n": 200, "m": 2, "normalized": true,
     "matrices": {"E": "E.mtx", "J": "J.mtx", ..., "N": "N.mtx"}}

Paths in ``matrices`` are relative to the manifest's directory.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .dae import DescriptorSystem
from .errors import InputError

MATRIX_NAMES = ("E", "J", "R", "Q", "G", "P", "S", "N")


def write_system(sys, directory, name="system"):
    """Write ``sys`` as eight ``.mtx`` files plus ``<name>.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for key in MATRIX_NAMES:
        M = getattr(sys, key)
        fname = f"{name}_{key}.mtx"
        if sp.issparse(M):
            scipy.io.mmwrite(directory / fname, sp.coo_matrix(M), precision=17)
        else:
            scipy.io.mmwrite(directory / fname, np.asarray(M, dtype=float), precision=17)
        files[key] = fname
    manifest = {"n": sys.n, "m": sys.m, "normalized": bool(sys.normalized), "matrices": files}
    path = directory / f"{name}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest {path} does not exist")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest {path} is not valid JSON: {exc}") from exc
    for key in ("n", "m", "matrices"):
        if key not in manifest:
            raise InputError(f"manifest {path} lacks field {key!r}")
    missing = [k for k in MATRIX_NAMES if k not in manifest["matrices"]]
    if missing:
        raise InputError(f"manifest {path} does not name matrices {missing}")
    for key in MATRIX_NAMES:
        f = path.parent / manifest["matrices"][key]
        if not f.is_file():
            raise InputError(f"matrix file {f} named in {path} does not exist")
    return manifest


def read_system(path, normalize=True):
    """Load a :class:`DescriptorSystem` from a manifest.

    If the manifest is not flagged ``normalized`` (or ``Q`` differs from the
    identity) the system is normalized on load unless ``normalize`` is false.
    """
    path = Path(path)
    manifest = read_manifest(path)
    mats = {}
    for key in MATRIX_NAMES:
        try:
            mats[key] = scipy.io.mmread(path.parent / manifest["matrices"][key])
        except (ValueError, OSError) as exc:
            raise InputError(f"cannot parse {manifest['matrices'][key]}: {exc}") from exc
    n, m = int(manifest["n"]), int(manifest["m"])
    if mats["G"].shape != (n, m):
        raise InputError(f"G has shape {mats['G'].shape}, manifest says ({n}, {m})")
    sys = DescriptorSystem(**mats)
    if normalize and not sys.normalized:
        sys = sys.normalize()
    return sys
