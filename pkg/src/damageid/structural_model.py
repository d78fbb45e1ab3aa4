"""Parameterized finite-element structures and their undamped modal solutions.

Two structure families are supported: a fixed-base shear building (one
lateral DOF per floor, one spring per story) and a pin-jointed planar truss.
Every model is assembled as a baseline stiffness ``k0`` together with the
per-element contributions ``element_k`` such that ``sum(element_k) == k0``.
A parameter vector ``theta`` then scales each element's contribution::

    K(theta) = k0 + sum_i theta[i] * element_k[i]

All indices (stories, bars, nodes, DOFs) are 0-based.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np
from scipy import linalg

from .exceptions import (
    AssemblyError,
    EigenSolverError,
    InvalidDefinitionError,
    NonPhysicalStiffnessError,
)

logger = logging.getLogger(__name__)

SHEAR_BUILDING = "shear_building"
PLANAR_TRUSS = "planar_truss"

#: relative eigenvalue gap below which two modes are treated as repeated
REPEATED_EIG_RTOL = 1e-8


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ModelDefinition:
    """Geometry, material and support description of a structure (SI units).

    Only the fields relevant to ``kind`` are used.
    """

    kind: str
    n_stories: int = 0
    story_stiffness: Sequence[float] | float = 0.0
    story_mass: Sequence[float] | float = 0.0
    nodes: Sequence[Sequence[float]] = ()
    bars: Sequence[Sequence[int]] = ()
    elastic_modulus: float = 0.0
    cross_section_area: float = 0.0
    density: float = 0.0
    supports: Sequence[int] = ()
    description: str = ""

    @classmethod
    def shear_building(cls, n_stories, story_stiffness, story_mass) -> "ModelDefinition":
        return cls(
            kind=SHEAR_BUILDING,
            n_stories=int(n_stories),
            story_stiffness=story_stiffness,
            story_mass=story_mass,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ModelDefinition":
        kind = data.get("kind")
        if kind == SHEAR_BUILDING:
            return cls(
                kind=kind,
                n_stories=int(data["n_stories"]),
                story_stiffness=data["story_stiffness"],
                story_mass=data["story_mass"],
                description=data.get("description", ""),
            )
        if kind == PLANAR_TRUSS:
            return cls(
                kind=kind,
                nodes=tuple(tuple(map(float, n)) for n in data["nodes"]),
                bars=tuple(tuple(map(int, b)) for b in data["bars"]),
                elastic_modulus=float(data["elastic_modulus"]),
                cross_section_area=float(data["cross_section_area"]),
                density=float(data["density"]),
                supports=tuple(int(s) for s in data["supports"]),
                description=data.get("description", ""),
            )
        raise InvalidDefinitionError(f"unknown model kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == SHEAR_BUILDING:
            d = {
                "kind": self.kind,
                "n_stories": self.n_stories,
                "story_stiffness": _listify(self.story_stiffness),
                "story_mass": _listify(self.story_mass),
            }
        else:
            d = {
                "kind": self.kind,
                "nodes": [list(n) for n in self.nodes],
                "bars": [list(b) for b in self.bars],
                "elastic_modulus": self.elastic_modulus,
                "cross_section_area": self.cross_section_area,
                "density": self.density,
                "supports": list(self.supports),
            }
        if self.description:
            d["description"] = self.description
        return d

    def replace(self, **changes) -> "ModelDefinition":
        d = self.to_dict()
        d.update(changes)
        return ModelDefinition.from_dict(d)


def _listify(v):
    return np.asarray(v, dtype=float).tolist()


def load_model_definition(path) -> ModelDefinition:
    with open(path) as f:
        return ModelDefinition.from_dict(json.load(f))


def canonical_truss31() -> ModelDefinition:
    """The shipped 31-bar truss geometry (14 nodes, pin + roller supports)."""
    text = resources.files("damageid").joinpath("data/truss31.json").read_text()
    return ModelDefinition.from_dict(json.loads(text))


@dataclass(frozen=True)
class AssembledSystem:
    """Mass, baseline stiffness and per-element stiffness contributions.

    Arrays are read-only; ``free_dofs[j]`` is the unconstrained DOF index of
    reduced coordinate ``j``.
    """

    mass: np.ndarray
    k0: np.ndarray
    element_k: tuple
    free_dofs: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mass", _frozen(self.mass))
        object.__setattr__(self, "k0", _frozen(self.k0))
        object.__setattr__(self, "element_k", tuple(_frozen(k) for k in self.element_k))
        free = np.arange(self.k0.shape[0]) if self.free_dofs is None else self.free_dofs
        object.__setattr__(self, "free_dofs", np.array(free, dtype=int))
        self.free_dofs.flags.writeable = False

    @property
    def n_dof(self) -> int:
        return self.k0.shape[0]

    @property
    def n_ele(self) -> int:
        return len(self.element_k)

    @property
    def element_stack(self) -> np.ndarray:
        """Element matrices stacked into an ``(n_ele, n_dof, n_dof)`` array."""
        return np.stack(self.element_k)

    def rescaled(self, theta) -> "AssembledSystem":
        """Return the system whose baseline is ``K(theta)``.

        Each element contribution is scaled by ``1 + theta[i]`` so that a
        new parameter vector measures variation relative to the updated
        element stiffness rather than the nominal one.
        """
        theta = check_theta(self, theta)
        ek = [(1.0 + t) * k for t, k in zip(theta, self.element_k)]
        return AssembledSystem(self.mass, np.sum(ek, axis=0), ek, self.free_dofs)

    def reduced_dof(self, full_dof: int) -> int:
        hits = np.flatnonzero(self.free_dofs == full_dof)
        if hits.size == 0:
            raise InvalidDefinitionError(f"DOF {full_dof} is constrained")
        return int(hits[0])


@dataclass(frozen=True)
class ModalData:
    """Eigenvalues (rad^2/s^2) and mass-normalized shapes at observed DOFs.

    ``shapes`` has one column per mode and one row per entry of
    ``sensor_dofs``.
    """

    eigenvalues: np.ndarray
    shapes: np.ndarray
    sensor_dofs: tuple

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        shapes = np.array(self.shapes, dtype=float).reshape(len(self.sensor_dofs), -1)
        object.__setattr__(self, "shapes", _frozen(shapes))
        object.__setattr__(self, "sensor_dofs", tuple(int(d) for d in self.sensor_dofs))
        if self.shapes.shape[1] != self.eigenvalues.shape[0]:
            raise ValueError("shapes must have one column per eigenvalue")

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_dofs)

    @property
    def frequencies_hz(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.eigenvalues, 0.0)) / (2.0 * np.pi)

    def to_dict(self) -> dict:
        return {
            "frequencies_hz": self.frequencies_hz.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "shapes": self.shapes.tolist(),
            "sensor_dofs": list(self.sensor_dofs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModalData":
        return cls(np.asarray(d["eigenvalues"]), np.asarray(d["shapes"]), d["sensor_dofs"])


# -- assembly -------------------------------------------------------------


def _per_story(value, n, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidDefinitionError(f"{name} must be strictly positive")
    return arr


def assemble_shear_building(definition: ModelDefinition) -> AssembledSystem:
    """Assemble a fixed-base shear chain.

    Story ``i`` connects floor ``i - 1`` (the ground for ``i == 0``) to floor
    ``i``; DOF ``i`` is the lateral displacement of floor ``i``.
    """
    if definition.kind != SHEAR_BUILDING:
        raise InvalidDefinitionError(f"expected {SHEAR_BUILDING}, got {definition.kind!r}")
    n = int(definition.n_stories)
    if n < 1:
        raise InvalidDefinitionError("n_stories must be >= 1")
    k = _per_story(definition.story_stiffness, n, "story_stiffness")
    m = _per_story(definition.story_mass, n, "story_mass")

    element_k = []
    for i in range(n):
        ke = np.zeros((n, n))
        ke[i, i] = k[i]
        if i > 0:
            ke[i - 1, i - 1] = k[i]
            ke[i - 1, i] = ke[i, i - 1] = -k[i]
        element_k.append(ke)
    return AssembledSystem(np.diag(m), np.sum(element_k, axis=0), element_k)


def _bar_stiffness(xa, xb, ea):
    dx = np.subtract(xb, xa)
    length = float(np.hypot(*dx))
    if length <= 0.0:
        raise AssemblyError("zero-length bar")
    c, s = dx / length
    t = np.array([-c, -s, c, s])
    return ea / length * np.outer(t, t), length


def assemble_truss(definition: ModelDefinition) -> AssembledSystem:
    """Assemble a pin-jointed planar truss with lumped mass.

    Full DOF ``2 * n + 0`` / ``2 * n + 1`` is the x / y displacement of node
    ``n``. Support DOFs are removed by row/column deletion.
    """
    if definition.kind != PLANAR_TRUSS:
        raise InvalidDefinitionError(f"expected {PLANAR_TRUSS}, got {definition.kind!r}")
    nodes = np.asarray(definition.nodes, dtype=float).reshape(-1, 2)
    bars = np.asarray(definition.bars, dtype=int).reshape(-1, 2)
    n_nodes = nodes.shape[0]
    for p in ("elastic_modulus", "cross_section_area", "density"):
        if not getattr(definition, p) > 0:
            raise InvalidDefinitionError(f"{p} must be strictly positive")
    if bars.shape[0] == 0:
        raise InvalidDefinitionError("truss has no bars")
    if np.any(bars < 0) or np.any(bars >= n_nodes):
        raise InvalidDefinitionError("bar references a missing node")
    if np.any(bars[:, 0] == bars[:, 1]):
        raise InvalidDefinitionError("bar connects a node to itself")
    supports = sorted(set(int(s) for s in definition.supports))
    if len(supports) < 3:
        raise InvalidDefinitionError("a planar truss needs at least 3 constrained DOFs")
    if supports[0] < 0 or supports[-1] >= 2 * n_nodes:
        raise InvalidDefinitionError("support DOF out of range")

    n_full = 2 * n_nodes
    free = np.setdiff1d(np.arange(n_full), supports)
    ea = definition.elastic_modulus * definition.cross_section_area
    mass_full = np.zeros(n_full)
    element_k = []
    for a, b in bars:
        kb, length = _bar_stiffness(nodes[a], nodes[b], ea)
        dofs = [2 * a, 2 * a + 1, 2 * b, 2 * b + 1]
        ke = np.zeros((n_full, n_full))
        ke[np.ix_(dofs, dofs)] = kb
        element_k.append(ke[np.ix_(free, free)])
        half = 0.5 * definition.density * definition.cross_section_area * length
        mass_full[dofs] += half

    mass = np.diag(mass_full[free])
    if np.any(np.diag(mass) <= 0):
        raise AssemblyError("a free DOF carries no mass (node not attached to any bar)")
    k0 = np.sum(element_k, axis=0)
    eig = linalg.eigvalsh(k0)
    n_rigid = int(np.sum(eig <= 1e-10 * eig.max()))
    if n_rigid:
        raise AssemblyError(f"constrained stiffness is singular: {n_rigid} rigid-body/mechanism mode(s)")
    return AssembledSystem(mass, k0, element_k, free)


def assemble(definition: ModelDefinition) -> AssembledSystem:
    if definition.kind == SHEAR_BUILDING:
        return assemble_shear_building(definition)
    if definition.kind == PLANAR_TRUSS:
        return assemble_truss(definition)
    raise InvalidDefinitionError(f"unknown model kind {definition.kind!r}")


def truss_sensor_dofs(system: AssembledSystem, node_indices, directions=(0, 1)) -> list[int]:
    """Reduced DOF indices of the given nodes' x (0) and/or y (1) directions."""
    return [system.reduced_dof(2 * n + d) for n in node_indices for d in directions]


# -- parameters and modes -------------------------------------------------


def check_theta(system: AssembledSystem, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != system.n_ele:
        raise ValueError(f"theta has length {theta.shape[0]}, expected {system.n_ele}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    bad = np.flatnonzero(theta <= -1.0)
    if bad.size:
        raise NonPhysicalStiffnessError(
            f"theta <= -1 for element(s) {bad.tolist()}: element stiffness would be non-positive"
        )
    return theta


def apply_parameters(system: AssembledSystem, theta) -> np.ndarray:
    """Return ``k0 + sum_i theta[i] * element_k[i]`` as a new array."""
    theta = check_theta(system, theta)
    k = np.array(system.k0)
    k += np.tensordot(theta, system.element_stack, axes=1)
    return 0.5 * (k + k.T)


def _canonical_signs(shapes_obs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(shapes_obs), axis=0)
    signs = np.sign(shapes_obs[idx, np.arange(shapes_obs.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def full_eigensolution(k, m, sensor_dofs=None):
    """All eigenpairs of ``K phi = lam M phi``, ascending, mass-normalized.

    Sign convention: the largest-magnitude entry among ``sensor_dofs`` (all
    DOFs by default) of each shape is positive.
    """
    try:
        lam, phi = linalg.eigh(k, m)
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(str(exc)) from exc
    rows = slice(None) if sensor_dofs is None else list(sensor_dofs)
    phi = phi * _canonical_signs(phi[rows])
    return lam, phi


def _warn_repeated(lam, n_modes):
    lam = lam[: n_modes + 1]
    gaps = np.abs(np.diff(lam)) / np.maximum(np.abs(lam[1:]), np.finfo(float).tiny)
    if np.any(gaps < REPEATED_EIG_RTOL):
        warnings.warn("repeated eigenvalues detected; mode shapes are not unique", RuntimeWarning)


def solve_modes(k, m, n_modes: int, sensor_dofs=None) -> ModalData:
    """The ``n_modes`` lowest modes with shapes restricted to ``sensor_dofs``."""
    k = np.asarray(k, dtype=float)
    n_dof = k.shape[0]
    if not 1 <= n_modes <= n_dof:
        raise ValueError(f"n_modes must be in [1, {n_dof}]")
    sensor_dofs = list(range(n_dof)) if sensor_dofs is None else [int(d) for d in sensor_dofs]
    if len(set(sensor_dofs)) != len(sensor_dofs) or min(sensor_dofs) < 0 or max(sensor_dofs) >= n_dof:
        raise ValueError("sensor_dofs must be distinct valid DOF indices")
    lam, phi = full_eigensolution(k, m, sensor_dofs)
    _warn_repeated(lam, n_modes)
    if lam[0] <= 0:
        raise EigenSolverError("non-positive eigenvalue: stiffness is not positive definite")
    return ModalData(lam[:n_modes], phi[np.ix_(sensor_dofs, range(n_modes))], sensor_dofs)
