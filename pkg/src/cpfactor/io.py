"""File formats: long-CSV tensor series and JSON model artifacts.

Files use 1-based time and mode indices; everything in memory is 0-based.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .covariance import TensorSeries
from .exceptions import DataError
from .iso import CpModel

FORMAT_VERSION = "1"


def read_series(path, dims: Sequence[int]) -> TensorSeries:
    """Read a full-grid long CSV with header t,i1,...,iK,value."""
    dims = tuple(int(d) for d in dims)
    K = len(dims)
    expected_header = ["t"] + [f"i{k}" for k in range(1, K + 1)] + ["value"]
    cell_count = int(np.prod(dims))
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != expected_header:
            raise DataError(
                f"{path}: expected header {','.join(expected_header)}, got {','.join(header)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != K + 2:
                raise DataError(f"{path}:{lineno}: expected {K + 2} fields, got {len(row)}")
            try:
                t = int(row[0])
                idx = tuple(int(x) for x in row[1:-1])
                value = float(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.append((t, idx, value, lineno))

    if not rows or len(rows) % cell_count != 0:
        raise DataError(
            f"{path}: {len(rows)} data rows do not fill a {dims} grid"
        )
    T = len(rows) // cell_count
    if T < 2:
        raise DataError(f"{path}: need at least 2 time points, found {T}")
    data = np.empty((T,) + dims)
    seen = np.zeros((T,) + dims, dtype=bool)
    for t, idx, value, lineno in rows:
        if not 1 <= t <= T:
            raise DataError(f"{path}:{lineno}: time index {t} outside 1..{T}")
        for k, (i, dk) in enumerate(zip(idx, dims)):
            if not 1 <= i <= dk:
                raise DataError(
                    f"{path}:{lineno}: index i{k + 1}={i} outside 1..{dk}"
                )
        pos = (t - 1,) + tuple(i - 1 for i in idx)
        if seen[pos]:
            raise DataError(
                f"{path}:{lineno}: duplicate cell (t={t}, idx={','.join(map(str, idx))})"
            )
        seen[pos] = True
        data[pos] = value
    if not seen.all():
        first = np.argwhere(~seen)[0]
        coord = ",".join(str(int(i) + 1) for i in first[1:])
        raise DataError(f"{path}: missing cell (t={int(first[0]) + 1}, idx={coord})")
    return TensorSeries(data)


def write_series(path, s: TensorSeries) -> None:
    """Write a series in the long-CSV grid format accepted by read_series."""
    dims = s.dims
    K = len(dims)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"i{k}" for k in range(1, K + 1)] + ["value"])
        for t in range(s.n_obs):
            for idx in np.ndindex(dims):
                writer.writerow(
                    [t + 1, *[i + 1 for i in idx], repr(float(s.data[(t,) + idx]))]
                )


def save_model(model: CpModel, path, config: dict | None = None, seed=None) -> None:
    """Serialize a fitted model (with a config echo) as a JSON document."""
    doc = {
        "format_version": FORMAT_VERSION,
        "dims": list(model.dims),
        "r": model.r,
        "cov_kind": model.cov_kind,
        "lag_h": model.lag_h,
        "n_iter": model.n_iter,
        "converged": model.converged,
        "degenerate": list(model.degenerate) if model.degenerate else [False] * model.r,
        "weights": model.weights.tolist(),
        "loadings": [m.tolist() for m in model.loadings],
        "duals": [m.tolist() for m in model.duals],
        "factors": model.factors.tolist(),
        "config": config or {},
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> CpModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid model document: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported format version {doc.get('format_version')!r}"
        )
    try:
        return CpModel(
            dims=tuple(doc["dims"]),
            loadings=tuple(np.asarray(m, dtype=float) for m in doc["loadings"]),
            duals=tuple(np.asarray(m, dtype=float) for m in doc["duals"]),
            weights=np.asarray(doc["weights"], dtype=float),
            factors=np.asarray(doc["factors"], dtype=float),
            n_iter=int(doc["n_iter"]),
            converged=bool(doc["converged"]),
            cov_kind=doc.get("cov_kind", "contemporary"),
            lag_h=int(doc.get("lag_h", 0)),
            degenerate=tuple(bool(x) for x in doc.get("degenerate", [])),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc} in model document") from None
