"""Benchmark scenarios and synthetic modal measurements.

Measurements are generated directly in the modal domain: true modes are
computed from the ground-truth model and perturbed with Gaussian noise,

    lam  <- lam * (1 + e_lam),        e_lam ~ N(0, c_lam * noise_level)
    phi  <- phi + e_phi * RMS(phi_j), e_phi ~ N(0, c_phi * noise_level)

standing in for a time-domain simulation followed by system identification.
Every draw is a pure function of ``(seed, stage, observation index)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .structural_model import (
    AssembledSystem,
    ModalData,
    ModelDefinition,
    apply_parameters,
    assemble,
    canonical_truss31,
    solve_modes,
    truss_sensor_dofs,
)

INTACT, DAMAGED = "intact", "damaged"
_STAGE_CODE = {INTACT: 0, DAMAGED: 1}

C_LAMBDA = 0.1
C_PHI = 0.1

SHEAR10 = "shear10"
TRUSS31 = "truss31"
CUSTOM = "custom"
SCENARIOS = (SHEAR10, TRUSS31)


@dataclass(frozen=True)
class Scenario:
    name: str
    model: ModelDefinition
    theta_intact_true: np.ndarray
    theta_dmg_true: np.ndarray
    n_modes: int
    sensor_dofs: tuple
    noise_level: float = 0.1
    n_observations: int = 1
    seed: int = 0
    c_lambda: float = C_LAMBDA
    c_phi: float = C_PHI
    betas: tuple = (1.0, 1.0)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        system = self.system
        for attr in ("theta_intact_true", "theta_dmg_true"):
            v = np.asarray(getattr(self, attr), dtype=float)
            if v.shape != (system.n_ele,):
                raise ValueError(f"{attr} must have length {system.n_ele}")
            object.__setattr__(self, attr, v)
        dofs = tuple(int(d) for d in self.sensor_dofs)
        if len(set(dofs)) != len(dofs) or min(dofs) < 0 or max(dofs) >= system.n_dof:
            raise ValueError("sensor_dofs must be distinct valid DOF indices")
        object.__setattr__(self, "sensor_dofs", dofs)
        betas = tuple(float(b) for b in self.betas)
        if len(betas) != 2 or min(betas) <= 0:
            raise ValueError("betas must be two positive weights")
        object.__setattr__(self, "betas", betas)
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if not 1 <= self.n_modes <= system.n_dof:
            raise ValueError("n_modes out of range")

    @property
    def system(self) -> AssembledSystem:
        return assemble(self.model)

    @property
    def theta_damaged_total(self) -> np.ndarray:
        """Nominal-model coefficients of the damaged structure."""
        return (1.0 + self.theta_intact_true) * (1.0 + self.theta_dmg_true) - 1.0

    @property
    def damage_support(self) -> list[int]:
        return np.flatnonzero(self.theta_dmg_true).tolist()

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "model": self.model.to_dict(),
            "theta_intact_true": self.theta_intact_true.tolist(),
            "theta_dmg_true": self.theta_dmg_true.tolist(),
            "n_modes": self.n_modes,
            "sensor_dofs": list(self.sensor_dofs),
            "noise_level": self.noise_level,
            "n_observations": self.n_observations,
            "seed": self.seed,
            "c_lambda": self.c_lambda,
            "c_phi": self.c_phi,
            "betas": list(self.betas),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["model"] = ModelDefinition.from_dict(d["model"])
        d["sensor_dofs"] = tuple(d["sensor_dofs"])
        d["betas"] = tuple(d.get("betas", (1.0, 1.0)))
        return cls(**d)


def _theta_draw(seed, n, half_width):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    return rng.uniform(-half_width, half_width, n)


def _shear10(seed):
    model = ModelDefinition.shear_building(10, 176.729e6, 100e3)
    dmg = np.zeros(10)
    dmg[[0, 2]] = (-0.28, -0.33)
    return dict(
        model=model,
        theta_intact_true=_theta_draw(seed, 10, 0.2),
        theta_dmg_true=dmg,
        n_modes=3,
        sensor_dofs=(0, 2, 4, 6, 8),
        noise_level=0.1,
        n_observations=5,
        metadata={"damping_ratios": [0.02, 0.02], "sensor_floors": [1, 3, 5, 7, 9]},
    )


TRUSS31_SENSOR_NODES = (1, 2, 4, 7, 8, 11, 12)


def _truss31(seed):
    model = canonical_truss31()
    system = assemble(model)
    dmg = np.zeros(system.n_ele)
    dmg[[0, 14, 26]] = (-0.20, -0.15, -0.15)
    return dict(
        model=model,
        theta_intact_true=_theta_draw(seed, system.n_ele, 0.1),
        theta_dmg_true=dmg,
        n_modes=10,
        sensor_dofs=tuple(truss_sensor_dofs(system, TRUSS31_SENSOR_NODES)),
        noise_level=0.1,
        n_observations=1,
        # residue weights: with cond(S) ~ 1e2 the unit weights let the l0 term swamp the misfit
        betas=(2.0, 2.0),
        metadata={"damping_ratios": [0.01, 0.02], "sensor_nodes": list(TRUSS31_SENSOR_NODES)},
    )


def make_scenario(name: str, seed: int = 0, **overrides) -> Scenario:
    """Build a named benchmark (``shear10``, ``truss31``) or a ``custom`` one.

    ``custom`` requires all :class:`Scenario` fields in ``overrides``.
    """
    if name == SHEAR10:
        fields = _shear10(seed)
    elif name == TRUSS31:
        fields = _truss31(seed)
    elif name == CUSTOM:
        fields = {}
    else:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS + (CUSTOM,)}")
    fields.update(overrides)
    return Scenario(name=name, seed=seed, **fields)


def true_modes(scenario: Scenario, stage: str) -> ModalData:
    system = scenario.system
    theta = scenario.theta_intact_true if stage == INTACT else scenario.theta_damaged_total
    k = apply_parameters(system, theta)
    return solve_modes(k, system.mass, scenario.n_modes, scenario.sensor_dofs)


def synth_measurements(scenario: Scenario, stage: str) -> list[ModalData]:
    if stage not in _STAGE_CODE:
        raise ValueError(f"stage must be {INTACT!r} or {DAMAGED!r}")
    clean = true_modes(scenario, stage)
    rms = np.sqrt(np.mean(clean.shapes**2, axis=0))
    out = []
    for idx in range(scenario.n_observations):
        rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, _STAGE_CODE[stage], idx]))
        e_lam = rng.normal(0.0, 1.0, clean.n_modes) * scenario.c_lambda * scenario.noise_level
        e_phi = rng.normal(0.0, 1.0, clean.shapes.shape) * scenario.c_phi * scenario.noise_level
        out.append(
            ModalData(
                clean.eigenvalues * (1.0 + e_lam),
                clean.shapes + e_phi * rms,
                clean.sensor_dofs,
            )
        )
    return out


def measurement_file_dict(scenario: Scenario, stage: str, observations) -> dict:
    return {
        "observations": [md.to_dict() for md in observations],
        "provenance": {"scenario": scenario.name, "seed": scenario.seed, "stage": stage},
    }


def load_measurements(path) -> list[ModalData]:
    with open(path) as f:
        data = json.load(f)
    return [ModalData.from_dict(o) for o in data["observations"]]
