"""Input validation shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array, check_X_y

from .structural_model import AssembledSystem, ModalData, check_theta


def check_linear_system(X, y):
    """Validate a Jacobian ``X`` (n_rows, n_params) and residue ``y`` (n_rows,)."""
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True, ensure_min_samples=1)
    return X, y


def check_groups(groups, n_rows: int) -> np.ndarray:
    """Integer observation labels, one per row; ``None`` means a single observation."""
    if groups is None:
        return np.zeros(n_rows, dtype=int)
    groups = np.asarray(groups).ravel()
    if groups.shape[0] != n_rows:
        raise ValueError(f"groups has {groups.shape[0]} entries, expected {n_rows}")
    _, codes = np.unique(groups, return_inverse=True)
    return codes


def check_design(X, n_features: int) -> np.ndarray:
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} columns, expected {n_features}")
    return X


def check_measurement_sets(measured, system: AssembledSystem | None = None) -> list[ModalData]:
    """A non-empty list of :class:`ModalData` sharing sensor DOFs and mode count."""
    if isinstance(measured, ModalData):
        measured = [measured]
    measured = list(measured)
    if not measured:
        raise ValueError("need at least one measurement set")
    if not all(isinstance(m, ModalData) for m in measured):
        raise TypeError("measurements must be ModalData instances")
    first = measured[0]
    for m in measured[1:]:
        if tuple(m.sensor_dofs) != tuple(first.sensor_dofs) or m.n_modes != first.n_modes:
            raise ValueError("all measurement sets must share sensor DOFs and mode count")
    if system is not None:
        if max(first.sensor_dofs) >= system.n_dof:
            raise ValueError("sensor DOF index exceeds the model's DOF count")
        if first.n_modes > system.n_dof:
            raise ValueError("more measured modes than model DOFs")
    return measured


def check_parameter_vector(system: AssembledSystem, theta) -> np.ndarray:
    theta = check_array(np.asarray(theta, dtype=float).reshape(1, -1), dtype=np.float64).ravel()
    return check_theta(system, theta)


def check_betas(betas) -> tuple[float, float]:
    betas = tuple(float(b) for b in betas)
    if len(betas) != 2 or not all(np.isfinite(b) and b > 0 for b in betas):
        raise ValueError("betas must be two positive finite weights")
    return betas
