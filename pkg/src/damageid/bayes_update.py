"""Intact-model updating by iterative l2 hierarchical Bayesian learning.

Each outer (sensitivity) iteration solves the linearized equations
``r_n = S_n @ dtheta`` for ``n = 1..N_ob`` observations under the model::

    r_n | dtheta, sigma2 ~ N(S_n dtheta, sigma2 I)
    dtheta | alpha       ~ N(0, alpha I)
    sigma2 ~ IG(a0, b0),  alpha ~ IG(a1, b1)

The MAP point is found by cycling the closed-form updates of ``dtheta``,
``sigma2`` and ``alpha``; the posterior of ``dtheta`` is approximated by a
Gaussian whose covariance comes from the Hessian at the MAP. Increments and
covariances are accumulated over outer iterations.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import CovarianceError, DivergenceError
from .sensitivity import assemble_sensitivity
from .structural_model import AssembledSystem, check_theta

logger = logging.getLogger(__name__)

INNER_TOL = 1e-8
INNER_MAX_ITER = 500
OUTER_TOL = 1e-6
OUTER_MAX_ITER = 50


@dataclass(frozen=True)
class HyperPriors:
    """Inverse-Gamma shape/scale pairs for the noise (a0, b0) and prior (a1, b1) variances."""

    a0: float = 1.0
    b0: float = 1e-4
    a1: float = 1.0
    b1: float = 0.1

    def __post_init__(self):
        if not all(v > 0 for v in (self.a0, self.b0, self.a1, self.b1)):
            raise ValueError("hyperprior parameters must be strictly positive")


@dataclass
class MapIterate:
    delta_theta: np.ndarray
    sigma2: float
    alpha: float
    n_inner_iters: int = 0
    converged: bool = False
    objective_trace: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.alpha > 0):
            raise ValueError("sigma2 and alpha must be positive")


@dataclass
class PosteriorEstimate:
    theta_hat: np.ndarray
    covariance: np.ndarray
    per_param: list
    history: list
    converged: bool

    @property
    def std(self) -> np.ndarray:
        return np.array([s for _, s in self.per_param])

    @property
    def n_iterations(self) -> int:
        return len(self.history)

    def interval(self, z: float = 1.96):
        mean = np.array([m for m, _ in self.per_param])
        return mean - z * self.std, mean + z * self.std

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "covariance": self.covariance.tolist(),
            "per_param": [{"mean": m, "std": s} for m, s in self.per_param],
            "history": self.history,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorEstimate":
        return cls(
            theta_hat=np.asarray(d["theta_hat"], dtype=float),
            covariance=np.asarray(d["covariance"], dtype=float),
            per_param=[(p["mean"], p["std"]) for p in d["per_param"]],
            history=d.get("history", []),
            converged=bool(d.get("converged", False)),
        )


def _normal_equations(systems):
    n_ele = systems[0].jacobian.shape[1]
    if any(s.jacobian.shape[1] != n_ele for s in systems):
        raise ValueError("all sensitivity systems must share N_ele")
    gram = sum(s.jacobian.T @ s.jacobian for s in systems)
    rhs = sum(s.jacobian.T @ s.residue for s in systems)
    return gram, rhs


def _misfit(systems, delta_theta) -> float:
    return float(sum(np.sum((s.jacobian @ delta_theta - s.residue) ** 2) for s in systems))


def _m_count(systems, hp: HyperPriors) -> float:
    return sum(s.n_rows for s in systems) + 2.0 * (hp.a0 + 1.0)


def objective(systems, hp: HyperPriors, delta_theta, sigma2, alpha) -> float:
    """Objective minimized blockwise by :func:`map_fixed_point`.

    Up to constants this is the negative log joint posterior; the
    ``log(alpha)`` weight is the one for which the ``alpha`` update used here
    is the exact minimizer. Its Hessian in ``delta_theta`` is
    ``sum(S^T S) / sigma2 + I / alpha``.
    """
    n_ele = systems[0].jacobian.shape[1]
    m = _m_count(systems, hp)
    c_alpha = 0.5 * (n_ele / 2.0 + hp.a1 + 1.0)
    dtheta = np.asarray(delta_theta, dtype=float)
    return (
        0.5 * m * np.log(sigma2)
        + (_misfit(systems, dtheta) + 2.0 * hp.b0) / (2.0 * sigma2)
        + c_alpha * np.log(alpha)
        + (dtheta @ dtheta + 2.0 * hp.b1) / (2.0 * alpha)
    )


def default_init(systems) -> MapIterate:
    n_ele = systems[0].jacobian.shape[1]
    r = np.concatenate([s.residue for s in systems])
    var = float(np.var(r, ddof=1)) if r.size > 1 else 0.0
    return MapIterate(np.zeros(n_ele), var if var > 0 else 1.0, 1.0)


def _rel_change(new, old) -> float:
    diff = float(np.linalg.norm(np.subtract(new, old)))
    if diff == 0.0:
        return 0.0
    return diff / max(float(np.linalg.norm(new)), np.finfo(float).tiny)


def map_fixed_point(
    systems,
    hp: HyperPriors = HyperPriors(),
    init: MapIterate | None = None,
    tol: float = INNER_TOL,
    max_iter: int = INNER_MAX_ITER,
    track_objective: bool = False,
) -> MapIterate:
    """Cycle the closed-form MAP updates until all three change by less than ``tol``."""
    systems = list(systems)
    if not systems:
        raise ValueError("need at least one sensitivity system")
    gram, rhs = _normal_equations(systems)
    n_ele = gram.shape[0]
    m = _m_count(systems, hp)
    alpha_den = n_ele / 2.0 + hp.a1 + 1.0
    it = default_init(systems) if init is None else init
    dtheta, sigma2, alpha = np.array(it.delta_theta, dtype=float), it.sigma2, it.alpha
    eye = np.eye(n_ele)
    trace = []

    converged = False
    for k in range(1, max_iter + 1):
        new_dtheta = linalg.solve(gram + (sigma2 / alpha) * eye, rhs, assume_a="pos")
        new_sigma2 = (_misfit(systems, new_dtheta) + 2.0 * hp.b0) / m
        new_alpha = (new_dtheta @ new_dtheta + 2.0 * hp.b1) / alpha_den
        if not (np.all(np.isfinite(new_dtheta)) and np.isfinite(new_sigma2) and np.isfinite(new_alpha)):
            raise DivergenceError(f"non-finite MAP iterate at inner iteration {k}")
        if not (new_sigma2 > 0 and new_alpha > 0):
            raise DivergenceError("variance hyperparameter collapsed to zero")
        done = (
            _rel_change(new_dtheta, dtheta) < tol
            and _rel_change(new_sigma2, sigma2) < tol
            and _rel_change(new_alpha, alpha) < tol
        )
        dtheta, sigma2, alpha = new_dtheta, float(new_sigma2), float(new_alpha)
        if track_objective:
            trace.append(objective(systems, hp, dtheta, sigma2, alpha))
        if done:
            converged = True
            break
    return MapIterate(dtheta, sigma2, alpha, k, converged, trace)


def posterior_covariance(systems, iterate: MapIterate) -> np.ndarray:
    """``N_ob * H^-1`` with ``H`` the Hessian of the objective in ``delta_theta``."""
    systems = list(systems)
    gram, _ = _normal_equations(systems)
    hessian = gram / iterate.sigma2 + np.eye(gram.shape[0]) / iterate.alpha
    try:
        chol = linalg.cho_factor(hessian)
    except linalg.LinAlgError as exc:
        raise CovarianceError("Hessian is not positive definite") from exc
    cov = len(systems) * linalg.cho_solve(chol, np.eye(gram.shape[0]))
    return 0.5 * (cov + cov.T)


def _psd_factor(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
        raise CovarianceError("covariance is not symmetric")
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -1e-10 * max(w.max(), np.finfo(float).tiny):
        raise CovarianceError(f"covariance is not positive semi-definite (min eigenvalue {w.min():.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def marginal_posteriors(theta_hat, covariance, n_samples: int = 100_000, seed: int = 0, chunk: int = 100_000):
    """Per-parameter Gaussian fits to Monte Carlo draws from ``N(theta_hat, covariance)``."""
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    theta_hat = np.asarray(theta_hat, dtype=float)
    factor = _psd_factor(covariance)
    rng = np.random.default_rng(seed)
    total = np.zeros_like(theta_hat)
    total_sq = np.zeros_like(theta_hat)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        draws = theta_hat + rng.standard_normal((n, theta_hat.size)) @ factor.T
        total += draws.sum(axis=0)
        total_sq += np.einsum("ij,ij->j", draws, draws)
        done += n
    mean = total / n_samples
    var = (total_sq - n_samples * mean**2) / (n_samples - 1)
    std = np.sqrt(np.clip(var, 0.0, None))
    return [(float(m), float(s)) for m, s in zip(mean, std)]


def run_model_update(
    system: AssembledSystem,
    measured_sets,
    hp: HyperPriors = HyperPriors(),
    outer_tol: float = OUTER_TOL,
    outer_max: int = OUTER_MAX_ITER,
    betas=(1.0, 1.0),
    theta0=None,
    n_samples: int = 100_000,
    seed: int = 0,
    inner_tol: float = INNER_TOL,
    inner_max: int = INNER_MAX_ITER,
) -> PosteriorEstimate:
    """Stage 1: update ``theta`` of the intact model against one or more measurement sets."""
    measured_sets = list(measured_sets)
    if not measured_sets:
        raise ValueError("need at least one measurement set")
    theta = np.zeros(system.n_ele) if theta0 is None else check_theta(system, theta0).copy()
    cov = np.zeros((system.n_ele, system.n_ele))
    history = []
    converged = False

    for k in range(outer_max):
        systems = [assemble_sensitivity(system, theta, md, betas) for md in measured_sets]
        it = map_fixed_point(systems, hp, tol=inner_tol, max_iter=inner_max)
        cov = cov + posterior_covariance(systems, it)
        theta = theta + it.delta_theta
        step = float(np.linalg.norm(it.delta_theta)) / max(float(np.linalg.norm(theta)), 1.0)
        history.append(
            {
                "iteration": k + 1,
                "delta_theta": it.delta_theta.tolist(),
                "theta": theta.tolist(),
                "sigma2": it.sigma2,
                "alpha": it.alpha,
                "inner_iterations": it.n_inner_iters,
                "relative_step": step,
            }
        )
        logger.debug("stage-1 iteration %d: relative step %.3e", k + 1, step)
        check_theta(system, theta)
        if step < outer_tol:
            converged = True
            break

    per_param = marginal_posteriors(theta, cov, n_samples=n_samples, seed=seed)
    return PosteriorEstimate(theta, cov, per_param, history, converged)


def hyperpriors_dict(hp: HyperPriors) -> dict:
    return asdict(hp)
