"""File formats shared by the command-line tools.

Floats are written with ``repr`` so that every value survives a round trip
bit for bit.

* ``data.csv``: long format ``subject_id,t,value`` plus optional ``lon,lat``
  repeated on every row of a subject.
* ``responses.csv``: ``subject_id,y``.
* ``truth.json``: ``{"partition": [[ids]...], "scenario": str, "coeffs": {id: [a]}}``
  with ``coeffs`` optional.
* ``result.json``: ``k_hat, partition, alpha, lambda1, lambda2, iters, converged, bic``.
* ``curves.csv``: ``group,t,beta_hat`` on 201 equispaced points of the domain.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .bspline import BSplineBasis, build_basis
from .design import Dataset, FunctionalSample
from .errors import InvalidArgumentError
from .solver import FitResult

__all__ = [
    "COVARIATE_ORDER",
    "COVARIATE_KNOTS",
    "write_dataset",
    "read_dataset",
    "write_truth",
    "read_truth",
    "result_dict",
    "write_json",
    "read_json",
    "write_curves",
    "fit_from_result",
    "CURVE_POINTS",
]

COVARIATE_ORDER = 5
COVARIATE_KNOTS = 15
CURVE_POINTS = 201

logger = logging.getLogger(__name__)


def _f(x) -> str:
    return repr(float(x))


def _writer(path: Path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_dataset(dataset: Dataset, data_path, responses_path) -> None:
    with_loc = all(s.location is not None for s in dataset.samples)
    fh, w = _writer(Path(data_path))
    with fh:
        w.writerow(["subject_id", "t", "value"] + (["lon", "lat"] if with_loc else []))
        for s in dataset.samples:
            loc = [_f(s.location[0]), _f(s.location[1])] if with_loc else []
            for t, v in zip(s.grid, s.values):
                w.writerow([s.subject_id, _f(t), _f(v)] + loc)
    fh, w = _writer(Path(responses_path))
    with fh:
        w.writerow(["subject_id", "y"])
        for s in dataset.samples:
            w.writerow([s.subject_id, _f(s.response)])


def _read_rows(path, required: Sequence[str]) -> Tuple[List[str], List[List[str]]]:
    path = Path(path)
    if not path.is_file():
        raise InvalidArgumentError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidArgumentError(f"{path} is empty") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise InvalidArgumentError(f"{path}: missing columns {missing}")
        return header, [row for row in reader if row]


MISSING = {"", "na", "nan", "null", "none"}
MAX_MISSING = 0.5


def _value(text: str, where: str) -> float:
    if text.strip().lower() in MISSING:
        return float("nan")
    return _float(text, where)


def _float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InvalidArgumentError(f"{where}: cannot parse {text!r} as a number") from None


def read_dataset(data_path, responses_path, basis: Optional[BSplineBasis] = None,
                 coeffs: Optional[Dict[str, Sequence[float]]] = None,
                 domain: Optional[Tuple[float, float]] = None) -> Dataset:
    """Load a dataset; ``coeffs`` (from ``truth.json``) enables exact design rows.

    Subjects keep their first-appearance order in ``data.csv``. The spline
    domain defaults to ``[0, 1]``.
    """
    header, rows = _read_rows(data_path, ["subject_id", "t", "value"])
    col = {h: k for k, h in enumerate(header)}
    has_loc = "lon" in col and "lat" in col
    curves: "OrderedDict[str, list]" = OrderedDict()
    locs: Dict[str, Tuple[float, float]] = {}
    for r, row in enumerate(rows, start=2):
        where = f"{data_path}:{r}"
        if len(row) < len(header):
            raise InvalidArgumentError(f"{where}: expected {len(header)} fields")
        sid = row[col["subject_id"]]
        curves.setdefault(sid, []).append(
            (_float(row[col["t"]], where), _value(row[col["value"]], where))
        )
        if has_loc:
            locs[sid] = (_float(row[col["lon"]], where), _float(row[col["lat"]], where))

    header_r, rrows = _read_rows(responses_path, ["subject_id", "y"])
    rc = {h: k for k, h in enumerate(header_r)}
    y = {row[rc["subject_id"]]: _float(row[rc["y"]], str(responses_path)) for row in rrows}
    if set(y) != set(curves):
        extra = sorted(set(y) ^ set(curves))[:5]
        raise InvalidArgumentError(f"subjects differ between data and responses, e.g. {extra}")

    curves = _drop_missing(curves)
    y = {sid: y[sid] for sid in curves}
    if not curves:
        raise InvalidArgumentError("every subject has more than half of its covariate values missing")

    basis = basis or build_basis(4, 8, domain or (0.0, 1.0))
    cov_basis = None
    if coeffs:
        if not set(curves) <= set(coeffs):
            raise InvalidArgumentError("truth coefficients do not cover the same subjects")
        cov_basis = build_basis(COVARIATE_ORDER, COVARIATE_KNOTS, basis.domain)
    samples = []
    for sid, pts in curves.items():
        arr = np.array(pts)
        samples.append(FunctionalSample(
            sid, arr[:, 0], arr[:, 1], y[sid], locs.get(sid),
            None if not coeffs else np.asarray(coeffs[sid], dtype=float),
        ))
    return Dataset(tuple(samples), basis, cov_basis)


def _drop_missing(curves: "OrderedDict[str, list]") -> "OrderedDict[str, list]":
    """Drop subjects missing more than half their values; remove the other gaps.

    Removing a missing observation is the same as interpolating it linearly,
    since design rows treat the covariate as piecewise linear anyway.
    """
    kept: "OrderedDict[str, list]" = OrderedDict()
    for sid, pts in curves.items():
        miss = sum(np.isnan(v) for _, v in pts)
        if miss > MAX_MISSING * len(pts):
            logger.warning("dropping subject %s: %d of %d covariate values missing", sid, miss, len(pts))
            continue
        kept[sid] = sorted((t, v) for t, v in pts if not np.isnan(v))
    return kept


def write_json(obj, path) -> None:
    text = json.dumps(_clean(obj), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise InvalidArgumentError(f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from None


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_truth(partition_ids: Sequence[Sequence[str]], scenario: str, path,
                coeffs: Optional[Dict[str, Sequence[float]]] = None) -> None:
    obj = {"partition": [list(g) for g in partition_ids], "scenario": scenario}
    if coeffs is not None:
        obj["coeffs"] = {k: [float(v) for v in a] for k, a in coeffs.items()}
    write_json(obj, path)


def read_truth(path) -> dict:
    obj = read_json(path)
    if "partition" not in obj:
        raise InvalidArgumentError(f"{path}: truth file lacks 'partition'")
    return obj


def result_dict(fit: FitResult, bic: float) -> dict:
    ids = list(fit.ids)
    return {
        "k_hat": int(fit.k_hat),
        "partition": [[ids[i] for i in g] for g in fit.partition],
        "alpha": fit.alpha.tolist(),
        "lambda1": float(fit.lambda1),
        "lambda2": float(fit.lambda2),
        "iters": int(fit.iters),
        "converged": bool(fit.converged),
        "bic": float(bic),
    }


def write_curves(fit: FitResult, basis: BSplineBasis, path, n_points: int = CURVE_POINTS) -> None:
    a, b = basis.domain
    t = np.linspace(a, b, n_points)
    values = basis.curve(fit.alpha.T, t)
    fh, w = _writer(Path(path))
    with fh:
        w.writerow(["group", "t", "beta_hat"])
        for k in range(fit.k_hat):
            for tk, vk in zip(t, values[:, k]):
                w.writerow([k + 1, _f(tk), _f(vk)])


def fit_from_result(result: dict, ids: Sequence[str]) -> FitResult:
    """Rebuild a :class:`FitResult` from ``result.json`` for the subjects ``ids``.

    Every subject takes its group's coefficients.
    """
    index = {sid: i for i, sid in enumerate(ids)}
    try:
        partition = [np.array(sorted(index[s] for s in g), dtype=int) for g in result["partition"]]
        alpha = np.asarray(result["alpha"], dtype=float)
    except KeyError as exc:
        raise InvalidArgumentError(f"result does not match the data: unknown subject {exc}") from None
    if sum(len(g) for g in partition) != len(ids):
        raise InvalidArgumentError("result partition does not cover the data's subjects")
    order = np.argsort([g[0] for g in partition], kind="stable")
    partition = [partition[k] for k in order]
    alpha = alpha[order]
    theta = np.empty((len(ids), alpha.shape[1]))
    for k, g in enumerate(partition):
        theta[g] = alpha[k]
    return FitResult(partition, alpha, theta, np.full(len(ids), np.nan),
                     iters=int(result.get("iters", 0)), converged=bool(result.get("converged", True)),
                     lambda1=float(result.get("lambda1") or np.nan),
                     lambda2=float(result.get("lambda2") or np.nan), ids=tuple(ids))
