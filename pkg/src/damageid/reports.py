"""Report files: deterministic JSON and CSV writers plus report builders.

Every report carries a ``provenance`` block with a hash of the settings that
produced it, the seed and the package version. No timestamps are written,
so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .bayes_update import PosteriorEstimate
from .sparse_id import DamageResult, relative_error

BO_TRACE_COLUMNS = ("sensitivity_iteration", "iteration", "lambda", "loss", "incumbent")
POSTERIOR_COLUMNS = ("element", "mean", "std", "theta_hat")
DAMAGE_COLUMNS = ("element", "theta_dmg", "in_support")
COMPARE_COLUMNS = ("trial", "seed", "method", "relative_error", "n_iterations", "converged")
COMPARE_ELEMENT_COLUMNS = ("trial", "method", "element", "estimate", "truth")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def config_hash(config: dict) -> str:
    text = json.dumps(_plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def provenance(config: dict, seed: int) -> dict:
    return {"config_hash": config_hash(config), "seed": int(seed), "version": __version__, "settings": _plain(config)}


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# -- builders -------------------------------------------------------------


def posterior_report(post: PosteriorEstimate, settings: dict, seed: int, theta_true=None) -> dict:
    report = post.to_dict()
    report["n_iterations"] = post.n_iterations
    if theta_true is not None:
        err = np.asarray(post.theta_hat) - np.asarray(theta_true)
        report["theta_true"] = list(theta_true)
        report["max_abs_error"] = float(np.max(np.abs(err)))
        report["correlation"] = float(np.corrcoef(post.theta_hat, theta_true)[0, 1])
    report["provenance"] = provenance(settings, seed)
    return report


def posterior_rows(post: PosteriorEstimate):
    return [(i, m, s, float(t)) for i, ((m, s), t) in enumerate(zip(post.per_param, post.theta_hat))]


def damage_report(res: DamageResult, settings: dict, seed: int, theta_true=None) -> dict:
    report = res.to_dict()
    report["n_iterations"] = res.n_iterations
    report["lambda_trace"] = res.lambda_trace
    if theta_true is not None:
        report["theta_dmg_true"] = list(theta_true)
        report["relative_error"] = relative_error(res.theta_dmg, theta_true)
    report["provenance"] = provenance(settings, seed)
    return report


def damage_rows(res: DamageResult):
    support = set(res.support)
    return [(i, float(v), i in support) for i, v in enumerate(res.theta_dmg)]


def bo_trace_rows(res: DamageResult):
    rows = []
    for h in res.history:
        for t in h.get("bayes_opt_trace", []):
            rows.append((h["iteration"], t["iteration"], t["lambda"], t["loss"], t["incumbent"]))
    return rows
