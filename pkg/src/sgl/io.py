"""File formats: binary matrices, instance bundles, key=value configs, CSVs.

Matrix files carry a 16-byte header (magic ``SGLM``, u32 rows, u32 cols,
u32 flags = 0, little endian) followed by row-major little-endian float64
payload.  Readers fall back to headerless comma-separated text when the
magic is absent.  An instance bundle is a directory holding design.mat,
response.vec, a groups CSV and a flat key=value meta.cfg.
"""

import csv
import struct
from pathlib import Path

import numpy as np

from .model import ProblemInstance, Truth, make_partition

__all__ = [
    "write_matrix",
    "read_matrix",
    "read_vector",
    "write_kv",
    "read_kv",
    "save_instance",
    "load_instance",
    "write_trace_csv",
    "write_path_csv",
    "write_qq_csv",
    "write_se_outcome",
]

_MAGIC = b"SGLM"
_HEADER = struct.Struct("<4sIII")


def write_matrix(path, arr):
    """Write a matrix (or column vector) in the binary SGLM layout."""
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={arr.ndim}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, rows, cols, 0))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_matrix(path):
    """Read an SGLM binary matrix; headerless CSV accepted as fallback."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) == _HEADER.size and head[:4] == _MAGIC:
            _, rows, cols, flags = _HEADER.unpack(head)
            if flags != 0:
                raise ValueError(f"{path}: unsupported flags {flags}")
            data = np.frombuffer(fh.read(), dtype="<f8")
            if data.size != rows * cols:
                raise ValueError(
                    f"{path}: payload holds {data.size} values, expected {rows * cols}"
                )
            return data.reshape(rows, cols).astype(float)
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def read_vector(path):
    """Read a length-n vector stored as an n x 1 matrix (or 1-row CSV)."""
    return read_matrix(path).ravel()


def write_kv(path, mapping):
    """Write a flat key=value text file (LF endings, keys in given order)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in mapping.items():
            fh.write(f"{key}={value}\n")


def read_kv(path):
    """Parse a flat key=value text file; '#' starts a comment line."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def save_instance(directory, instance, sigma_w, seed):
    """Write an instance bundle: design.mat, response.vec, groups.csv,
    meta.cfg, and truth vectors when present."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix(directory / "design.mat", instance.design)
    write_matrix(directory / "response.vec", instance.response.reshape(-1, 1))
    np.savetxt(directory / "groups.csv", instance.partition.membership[None, :],
               fmt="%d", delimiter=",")
    meta = {
        "lambda": repr(float(instance.lam)),
        "gamma": repr(float(instance.gamma)),
        "sigma_w": repr(float(sigma_w)),
        "seed": int(seed),
        "groups": "groups.csv",
    }
    if instance.truth is not None:
        write_matrix(directory / "beta0.vec", instance.truth.beta0.reshape(-1, 1))
        write_matrix(directory / "noise.vec", instance.truth.noise.reshape(-1, 1))
        meta["truth_beta"] = "beta0.vec"
        meta["truth_noise"] = "noise.vec"
    write_kv(directory / "meta.cfg", meta)


def load_instance(directory):
    """Read an instance bundle written by :func:`save_instance`."""
    directory = Path(directory)
    meta = read_kv(directory / "meta.cfg")
    design = read_matrix(directory / "design.mat")
    response = read_vector(directory / "response.vec")
    membership = read_vector(directory / meta["groups"]).astype(np.int64)
    truth = None
    if "truth_beta" in meta:
        truth = Truth(
            beta0=read_vector(directory / meta["truth_beta"]),
            noise=read_vector(directory / meta["truth_noise"]),
        )
    return ProblemInstance(
        design=design,
        response=response,
        partition=make_partition(membership),
        lam=float(meta["lambda"]),
        gamma=float(meta["gamma"]),
        truth=truth,
    )


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_trace_csv(path, trace):
    """Per-iteration trace: iter,cost,opt_mse,elapsed_ns."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "cost", "opt_mse", "elapsed_ns"])
        for it, c, mse, ns in trace.records:
            writer.writerow([it, _fmt(c), _fmt(mse), ns])


def write_path_csv(path, result):
    """Penalty-path sweep: one row per grid point."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["lambda", "empirical_mse", "predicted_mse", "tpp", "tpp_inf",
             "fdp", "fdp_inf", "n_selected"]
        )
        for row in result.rows:
            writer.writerow(
                [_fmt(row.lam), _fmt(row.empirical_mse), _fmt(row.predicted_mse),
                 _fmt(row.tpp), _fmt(row.tpp_inf), _fmt(row.fdp),
                 _fmt(row.fdp_inf), _fmt(row.n_selected)]
            )


def write_qq_csv(path, table):
    """Quantile table: prob,empirical_q,predicted_q."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["prob", "empirical_q", "predicted_q"])
        for prob, emp, pred in table:
            writer.writerow([_fmt(prob), _fmt(emp), _fmt(pred)])


def write_se_outcome(directory, outcome, basename="se"):
    """Flat key=value dump of an SEOutcome plus a CSV of its tau schedule."""
    directory = Path(directory)
    write_kv(directory / f"{basename}.txt",
             {k: _fmt(v) for k, v in outcome.as_dict().items()})
    with open(directory / f"{basename}_tau_schedule.csv", "w",
              encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "tau"])
        for t, tau in enumerate(outcome.tau_schedule):
            writer.writerow([t, _fmt(tau)])
