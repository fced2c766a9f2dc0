"""Plain-text readers and writers for samples, grids, draws and beliefs.

Numbers are written with ``%.17g`` so values round-trip exactly and
repeated runs produce byte-identical files. JSON is written with sorted
keys and LF line endings.
"""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .baselines import StudyEstimate
from .belief import Dirac, Gaussian, GridPmf, Kde, SampleSet, SoftBernoulli, fit_gaussian, fit_kde
from .errors import InputError

__all__ = [
    "write_csv",
    "read_csv",
    "write_samples",
    "read_samples",
    "write_grid_pmf",
    "write_draws",
    "write_json",
    "read_json",
    "belief_to_dict",
    "belief_from_dict",
    "load_belief",
    "load_estimates",
]

_FMT = "%.17g"


def write_csv(path, header, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    if rows.size:
        np.savetxt(buf, rows, fmt=_FMT, delimiter=",", newline="\n")
    Path(path).write_text(buf.getvalue(), newline="\n")


def read_csv(path):
    """Header list and float matrix; rejects empty files and non-finite entries."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InputError(f"{path}: empty CSV file")
    header = [h.strip() for h in lines[0].split(",")]
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from exc
    if data.size == 0:
        raise InputError(f"{path}: CSV has no data rows")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InputError(f"{path}: rows do not match the header width")
    if not np.all(np.isfinite(data)):
        raise InputError(f"{path}: NaN or Inf entries are not allowed")
    return header, data


def write_samples(path, samples):
    v = samples.values if isinstance(samples, SampleSet) else np.atleast_2d(samples)
    write_csv(path, [f"theta_{k}" for k in range(v.shape[1])], v)


def read_samples(path) -> SampleSet:
    header, data = read_csv(path)
    expected = [f"theta_{k}" for k in range(len(header))]
    if header != expected:
        raise InputError(f"{path}: expected header {','.join(expected)}")
    return SampleSet(data)


def write_grid_pmf(path, pmf, coord_names):
    """Grid coordinates followed by a ``density`` column."""
    rows = np.column_stack([pmf.support, pmf.grid_density()])
    write_csv(path, list(coord_names) + ["density"], rows)


def write_draws(path, samples, indices=None):
    """Joint draws as ``chain,iter,<columns>``.

    With ``indices`` (resampled draws), each row is the selected draw and
    ``chain``/``iter`` identify where it came from.
    """
    M = samples.n_draws
    N = samples.mu.shape[1]
    idx = np.arange(M) if indices is None else np.asarray(indices)
    chain, it = np.divmod(idx, N)
    rows = np.column_stack([chain, it, samples.matrix()[idx]])
    write_csv(path, ["chain", "iter"] + samples.columns(), rows)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj):
    text = json.dumps(obj, sort_keys=True, indent=2, default=_default, allow_nan=False)
    Path(path).write_text(text + "\n", newline="\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from exc


def belief_to_dict(b):
    if isinstance(b, Dirac):
        return {"kind": "dirac", "point": b.point.tolist()}
    if isinstance(b, SoftBernoulli):
        return {"kind": "soft_bernoulli", "p1": float(b.p1)}
    if isinstance(b, Gaussian):
        return {"kind": "gaussian", "mean": b.mean.tolist(), "cov": b.cov.tolist()}
    if isinstance(b, Kde):
        return {"kind": "kde", "bandwidth": b.bandwidth.tolist(), "samples": b.samples.values.tolist()}
    if isinstance(b, GridPmf):
        return {"kind": "grid_pmf", "support": b.support.tolist(), "probs": b.probs.tolist()}
    raise InputError(f"cannot serialise belief of type {type(b).__name__}")


def belief_from_dict(obj):
    try:
        kind = obj["kind"]
        if kind == "dirac":
            return Dirac(obj["point"])
        if kind == "soft_bernoulli":
            return SoftBernoulli(obj["p1"])
        if kind == "gaussian":
            return Gaussian(obj["mean"], obj["cov"])
        if kind == "kde":
            return Kde(SampleSet(obj["samples"]), obj["bandwidth"])
        if kind == "grid_pmf":
            return GridPmf(obj["support"], obj["probs"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"belief JSON is missing a field ({exc})") from exc
    raise InputError(f"unknown belief kind {obj.get('kind')!r}")


def load_belief(path):
    """``(true_belief, gaussian_approx)`` from a sample CSV or a belief JSON.

    Posterior sample files become a KDE with its Gaussian fit. JSON beliefs
    are used as given; the approximation is ``None`` unless the belief is
    itself Gaussian.
    """
    p = Path(path)
    if not p.exists():
        raise InputError(f"input file not found: {path}")
    if p.suffix.lower() == ".csv":
        s = read_samples(p)
        return fit_kde(s), fit_gaussian(s)
    b = belief_from_dict(read_json(p))
    return b, (b if isinstance(b, Gaussian) else None)


def load_estimates(path):
    data = read_json(path)
    if not isinstance(data, list):
        raise InputError(f"{path}: expected a JSON list of {{theta_hat, sigma_hat}}")
    try:
        return [StudyEstimate(e["theta_hat"], e["sigma_hat"]) for e in data]
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: estimate entry is missing a field ({exc})") from exc
