"""Serialization: matrices, observation sets, truth sidecars, and JSON reports.

Matrices travel as dense CSV (one row per line) or as a compact binary
format with the 5-byte magic "SSSM1" followed by little-endian u64 row
and column counts and row-major f64 payload; loading sniffs the magic.
JSON output is canonical (sorted keys, fixed separators, trailing
newline) so identical inputs produce byte-identical files; non-finite
floats are written as null.
"""

from __future__ import annotations

import json
import math
import os
import struct

import numpy as np

from .estimators import ObservationSet
from .sampling import SyntheticTruth, gen_low_rank

__all__ = [
    "save_matrix",
    "load_matrix",
    "save_observations",
    "load_observations",
    "save_truth",
    "load_truth",
    "write_json",
    "read_json",
]

_MAGIC = b"SSSM1"

OBS_SCHEMA = "ss3-observations-1"
TRUTH_SCHEMA = "ss3-truth-1"


def save_matrix(M, path: str, fmt: str | None = None) -> None:
    """Write a matrix as CSV or SSSM1 binary; fmt=None decides by suffix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("only 2-d matrices are serialized")
    if fmt is None:
        fmt = "csv" if path.endswith(".csv") else "binary"
    if fmt == "csv":
        np.savetxt(path, M, delimiter=",", fmt="%.17g")
    elif fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<QQ", M.shape[0], M.shape[1]))
            fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def load_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(len(_MAGIC))
        if head == _MAGIC:
            rows, cols = struct.unpack("<QQ", fh.read(16))
            data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
            if data.size != rows * cols:
                raise ValueError(f"truncated binary matrix in {path}")
            return data.reshape(rows, cols).astype(float)
    return np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)


def _jsonify(obj):
    """Python-native, JSON-safe copy; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def write_json(obj, path: str) -> None:
    text = json.dumps(_jsonify(obj), sort_keys=True, indent=2, separators=(",", ": "))
    with open(path, "w") as fh:
        fh.write(text)
        fh.write("\n")


def read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def save_observations(dirpath: str, obs: ObservationSet, meta: dict | None = None):
    """Write an observation set as a directory.

    Entrywise sets become observations.csv with 0-based "i,j,value"
    lines; replicate sets a replicates/ directory of matrix CSVs;
    linear sets a linear_mats/ directory paired with linear_values.csv.
    obs.json records the model, shape, and caller metadata (generation
    parameters live there so downstream oracle tooling can redraw
    datasets from the same distribution).
    """
    os.makedirs(dirpath, exist_ok=True)
    if obs.model == "entrywise":
        ii, jj, y = obs.index_arrays()
        with open(os.path.join(dirpath, "observations.csv"), "w") as fh:
            for i, j, v in zip(ii, jj, y):
                fh.write(f"{int(i)},{int(j)},{v:.17g}\n")
    elif obs.model == "replicate":
        rep_dir = os.path.join(dirpath, "replicates")
        os.makedirs(rep_dir, exist_ok=True)
        for idx in range(obs.n_obs):
            save_matrix(
                obs.replicates[idx], os.path.join(rep_dir, f"rep_{idx:04d}.csv")
            )
    else:
        mat_dir = os.path.join(dirpath, "linear_mats")
        os.makedirs(mat_dir, exist_ok=True)
        mats, values = obs.functionals
        for idx in range(obs.n_obs):
            save_matrix(mats[idx], os.path.join(mat_dir, f"mat_{idx:04d}.csv"))
        np.savetxt(
            os.path.join(dirpath, "linear_values.csv"), values, fmt="%.17g"
        )
    payload = {
        "schema": OBS_SCHEMA,
        "model": obs.model,
        "p1": obs.p1,
        "p2": obs.p2,
        "n_obs": obs.n_obs,
        "meta": meta or {},
    }
    write_json(payload, os.path.join(dirpath, "obs.json"))


def load_observations(dirpath: str):
    """Read an observation directory back; returns (ObservationSet, meta)."""
    info = read_json(os.path.join(dirpath, "obs.json"))
    if info.get("schema") != OBS_SCHEMA:
        raise ValueError(f"not an observation directory: {dirpath}")
    model, p1, p2 = info["model"], int(info["p1"]), int(info["p2"])
    if model == "entrywise":
        raw = np.loadtxt(
            os.path.join(dirpath, "observations.csv"), delimiter=",", ndmin=2
        )
        obs = ObservationSet.entrywise(p1, p2, raw[:, 0], raw[:, 1], raw[:, 2])
    elif model == "replicate":
        rep_dir = os.path.join(dirpath, "replicates")
        names = sorted(n for n in os.listdir(rep_dir) if n.endswith(".csv"))
        mats = np.stack([load_matrix(os.path.join(rep_dir, n)) for n in names])
        obs = ObservationSet.replicate(mats)
    elif model == "linear":
        mat_dir = os.path.join(dirpath, "linear_mats")
        names = sorted(n for n in os.listdir(mat_dir) if n.endswith(".csv"))
        mats = np.stack([load_matrix(os.path.join(mat_dir, n)) for n in names])
        values = np.loadtxt(os.path.join(dirpath, "linear_values.csv"), ndmin=1)
        obs = ObservationSet.linear(mats, values)
    else:
        raise ValueError(f"unknown observation model {model!r}")
    return obs, info.get("meta", {})


def save_truth(dirpath: str, truth: SyntheticTruth) -> None:
    """Write the truth sidecar: L_star.csv plus generation metadata."""
    os.makedirs(dirpath, exist_ok=True)
    save_matrix(truth.L_star, os.path.join(dirpath, "L_star.csv"))
    payload = {
        "schema": TRUTH_SCHEMA,
        "p1": truth.p1,
        "p2": truth.p2,
        "rank": truth.rank,
        "spectrum": list(truth.spectrum),
        "seed": truth.seed,
    }
    write_json(payload, os.path.join(dirpath, "truth.json"))


def load_truth(path: str) -> SyntheticTruth:
    """Regenerate a truth from its sidecar and cross-check the stored matrix.

    Accepts the sidecar directory or the truth.json path. The low-rank
    matrix is rebuilt from (dims, spectrum, seed), which restores the
    full singular bases that the CSV alone cannot carry; the stored
    matrix must agree entrywise to 1e-12.
    """
    if os.path.isdir(path):
        path = os.path.join(path, "truth.json")
    info = read_json(path)
    if info.get("schema") != TRUTH_SCHEMA:
        raise ValueError(f"not a truth sidecar: {path}")
    truth = gen_low_rank(
        int(info["p1"]),
        int(info["p2"]),
        np.asarray(info["spectrum"], dtype=float),
        int(info["seed"]),
    )
    stored = load_matrix(os.path.join(os.path.dirname(path), "L_star.csv"))
    if stored.shape != truth.L_star.shape:
        raise ValueError("stored truth matrix has the wrong shape")
    if float(np.max(np.abs(stored - truth.L_star))) > 1e-12:
        raise ValueError("stored truth matrix disagrees with its regeneration")
    return truth
