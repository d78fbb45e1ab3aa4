"""Modal sensitivities and the linearized sensitivity equation ``r = S @ dtheta``.

Eigenpair derivatives use the closed forms for mass-normalized modes of an
undamped system whose stiffness is affine in ``theta`` (the mass matrix does
not depend on ``theta``)::

    d lam_j / d theta_i = phi_j^T K_i phi_j
    d phi_j / d theta_i = sum_{r != j} (phi_r^T K_i phi_j) / (lam_j - lam_r) * phi_r

The residue vector is stacked mode-major: for each matched mode, one
eigenvalue row followed by one row per sensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateModeError, ModeMatchError
from .structural_model import (
    REPEATED_EIG_RTOL,
    AssembledSystem,
    ModalData,
    apply_parameters,
    full_eigensolution,
)

MAC_FLOOR = 0.5


@dataclass(frozen=True)
class SensitivitySystem:
    """Residue ``r`` and Jacobian ``S`` of one sensitivity iteration."""

    residue: np.ndarray
    jacobian: np.ndarray
    beta_lambda: float
    beta_phi: float
    n_modes: int
    n_sensors: int
    model_eigenvalues: np.ndarray = None
    mac: np.ndarray = None

    def __post_init__(self):
        rows = self.n_modes * (self.n_sensors + 1)
        if self.residue.shape != (rows,) or self.jacobian.shape[0] != rows:
            raise ValueError(f"expected {rows} rows in residue and jacobian")
        if not (self.beta_lambda > 0 and self.beta_phi > 0):
            raise ValueError("beta weights must be positive")

    @property
    def n_rows(self) -> int:
        return self.residue.shape[0]

    @property
    def n_ele(self) -> int:
        return self.jacobian.shape[1]


def stack_systems(systems):
    """Concatenate the rows of several sensitivity systems into one ``(r, S)``."""
    r = np.concatenate([s.residue for s in systems])
    S = np.vstack([s.jacobian for s in systems])
    return r, S


def _check_full(system, phi):
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] != system.n_dof:
        raise ValueError(f"shape vector has length {phi.shape[0]}, expected n_dof={system.n_dof}")
    return phi


def eigenvalue_derivative(system: AssembledSystem, phi_full, element: int) -> float:
    phi = _check_full(system, phi_full)
    return float(phi @ system.element_k[element] @ phi)


def _gap_check(lam, j):
    others = np.delete(np.arange(lam.shape[0]), j)
    rel = np.abs(lam[j] - lam[others]) / abs(lam[j])
    if others.size and rel.min() < REPEATED_EIG_RTOL:
        raise DegenerateModeError(f"mode {j} is repeated; eigenvector derivative undefined")


def eigenvector_derivative(system: AssembledSystem, modes_full, j: int, element: int) -> np.ndarray:
    """Derivative of mass-normalized mode ``j`` with respect to ``theta[element]``.

    ``modes_full`` is ``(eigenvalues, shapes)`` holding all ``n_dof`` modes.
    """
    lam, phi = modes_full
    lam = np.asarray(lam, dtype=float)
    phi = _check_full(system, phi)
    _gap_check(lam, j)
    coupling = phi.T @ (system.element_k[element] @ phi[:, j])
    out = np.zeros(system.n_dof)
    for r in range(lam.shape[0]):
        if r != j:
            out += coupling[r] / (lam[j] - lam[r]) * phi[:, r]
    return out


def modal_derivatives(system: AssembledSystem, lam, phi, modes):
    """Vectorized derivatives for the selected ``modes``.

    Returns ``(dlam, dphi)`` with shapes ``(n_modes, n_ele)`` and
    ``(n_modes, n_dof, n_ele)``.
    """
    modes = list(modes)
    # coupling[i, r, j] = phi_r^T K_i phi_j
    coupling = np.einsum("dr,ide,ej->irj", phi, system.element_stack, phi[:, modes])
    dlam = np.stack([coupling[:, j, col] for col, j in enumerate(modes)])
    dphi = []
    for col, j in enumerate(modes):
        _gap_check(lam, j)
        diff = lam[j] - lam
        diff[j] = np.inf
        weights = coupling[:, :, col] / diff  # (n_ele, n_dof_modes)
        dphi.append(phi @ weights.T)
    return dlam, np.stack(dphi)


def mac(phi_a, phi_b) -> np.ndarray:
    """Modal Assurance Criterion between the columns of two shape matrices."""
    a = np.asarray(phi_a, dtype=float)
    b = np.asarray(phi_b, dtype=float)
    num = (a.T @ b) ** 2
    den = np.outer(np.sum(a * a, axis=0), np.sum(b * b, axis=0))
    return num / np.where(den > 0, den, np.inf)


def match_modes(measured: ModalData, model: ModalData):
    """Pair each measured mode with a distinct model mode by MAC.

    Greedy: repeatedly take the unassigned pair with the highest MAC, ties
    broken by relative eigenvalue distance. Returns ``(pairing, signs, macs)``
    where ``pairing[i]`` is the model mode matched to measured mode ``i`` and
    ``signs[i]`` flips it so that ``phi_meas . phi_model >= 0``.
    """
    if tuple(measured.sensor_dofs) != tuple(model.sensor_dofs):
        raise ValueError("measured and model modes must share sensor DOFs")
    n_meas, n_model = measured.n_modes, model.n_modes
    if n_model < n_meas:
        raise ValueError("model has fewer modes than measured")
    m = mac(measured.shapes, model.shapes)
    dist = np.abs(measured.eigenvalues[:, None] - model.eigenvalues[None, :]) / np.abs(
        measured.eigenvalues[:, None]
    )
    pairing = np.full(n_meas, -1)
    free_meas, free_model = set(range(n_meas)), set(range(n_model))
    order = sorted(
        ((i, r) for i in range(n_meas) for r in range(n_model)),
        key=lambda ir: (-round(m[ir], 12), dist[ir]),
    )
    for i, r in order:
        if i in free_meas and r in free_model:
            pairing[i] = r
            free_meas.discard(i)
            free_model.discard(r)
            if not free_meas:
                break
    macs = m[np.arange(n_meas), pairing]
    bad = np.flatnonzero(macs < MAC_FLOOR)
    if bad.size:
        raise ModeMatchError(
            f"measured mode {int(bad[0])} has best MAC {macs[bad[0]]:.3f} < {MAC_FLOOR}"
        )
    dots = np.sum(measured.shapes * model.shapes[:, pairing], axis=0)
    signs = np.where(dots < 0, -1.0, 1.0)
    return pairing, signs, macs


def assemble_sensitivity(
    system: AssembledSystem,
    theta_current,
    measured: ModalData,
    betas=(1.0, 1.0),
    shape_normalization: str = "unit",
) -> SensitivitySystem:
    """Residue and Jacobian of the model at ``theta_current`` against ``measured``.

    Eigenvalue rows are relative, ``beta_lambda * (lam_meas - lam) / lam_meas``.
    Shape rows are ``beta_phi * (phi_meas - phi) / ||phi_meas_j||`` with the
    norm taken over sensor entries (``shape_normalization="unit"``), or raw
    differences (``"none"``). All scale factors come from the measurement so
    that ``S`` is the exact derivative of ``-r``.
    """
    beta_lambda, beta_phi = (float(b) for b in betas)
    sensors = list(measured.sensor_dofs)
    k = apply_parameters(system, theta_current)
    lam, phi = full_eigensolution(k, system.mass, sensors)

    n_meas = measured.n_modes
    n_cand = min(system.n_dof, 2 * n_meas + 2)
    model = ModalData(lam[:n_cand], phi[np.ix_(sensors, range(n_cand))], sensors)
    pairing, signs, macs = match_modes(measured, model)

    dlam, dphi = modal_derivatives(system, lam, phi, pairing)
    n_sen = len(sensors)
    rows = n_meas * (n_sen + 1)
    r = np.empty(rows)
    S = np.empty((rows, system.n_ele))
    for i, (j, sign) in enumerate(zip(pairing, signs)):
        lam_scale = beta_lambda / measured.eigenvalues[i]
        if shape_normalization == "unit":
            phi_scale = beta_phi / np.linalg.norm(measured.shapes[:, i])
        elif shape_normalization == "none":
            phi_scale = beta_phi
        else:
            raise ValueError(f"unknown shape_normalization {shape_normalization!r}")
        base = i * (n_sen + 1)
        r[base] = lam_scale * (measured.eigenvalues[i] - lam[j])
        S[base] = lam_scale * dlam[i]
        r[base + 1 : base + 1 + n_sen] = phi_scale * (measured.shapes[:, i] - sign * phi[sensors, j])
        S[base + 1 : base + 1 + n_sen] = phi_scale * sign * dphi[i][sensors]
    return SensitivitySystem(
        residue=r,
        jacobian=S,
        beta_lambda=beta_lambda,
        beta_phi=beta_phi,
        n_modes=n_meas,
        n_sensors=n_sen,
        model_eigenvalues=lam[pairing],
        mac=macs,
    )
