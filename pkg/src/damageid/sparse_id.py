"""Sparse damage identification with sequential threshold least squares (STLS).

The linearized damage equations ``r = S @ x`` are solved for a sparse ``x``
by alternating hard thresholding and least-squares refits on the surviving
support. Candidates are scored with

    L(x) = ||r - S x||_2 + delta * cond(S) * ||x||_0

STLS is initialized with a cross-validated LASSO estimate; the LASSO
objective is ``||r - S x||_2^2 + eta * ||x||_1`` throughout this module, so
the all-zero solution is reached at ``eta = 2 * ||S^T r||_inf``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import GridError
from .sensitivity import assemble_sensitivity, stack_systems
from .structural_model import AssembledSystem, check_theta

logger = logging.getLogger(__name__)

LASSO_TOL = 1e-8
LASSO_MAX_SWEEPS = 10_000
STLS_MAX_ITER = 10
STLS_DELTA = 1e-3
RCOND = 1e-10


@dataclass(frozen=True)
class LassoConfig:
    n_etas: int = 100
    eta_ratio: float = 1e-4
    n_folds: int = 5
    selection_rank: int = 2

    def __post_init__(self):
        if self.n_etas < 2:
            raise ValueError("n_etas must be >= 2")
        if not 0 < self.eta_ratio < 1:
            raise ValueError("eta_ratio must lie in (0, 1)")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if not 1 <= self.selection_rank <= self.n_etas:
            raise ValueError("selection_rank out of range")


@dataclass
class SparseSolution:
    delta_theta: np.ndarray
    loss: float
    lam: float
    support: list
    n_stls_iters: int
    guard: bool = False
    loss_history: list = field(default_factory=list)


def _check_system(r, S):
    r = np.asarray(r, dtype=float).ravel()
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != r.shape[0]:
        raise ValueError(f"S has {S.shape[0]} rows but r has {r.shape[0]} entries")
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(S))):
        raise ValueError("r and S must be finite")
    return r, S


# -- LASSO ----------------------------------------------------------------


@numba.njit(cache=True)
def _cd_gram(gram, corr, eta, x, tol, max_sweeps):
    p = corr.shape[0]
    half = 0.5 * eta
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj == 0.0:
                x[j] = 0.0
                continue
            rho = corr[j]
            for k in range(p):
                rho -= gram[j, k] * x[k]
            rho += gjj * x[j]
            if rho > half:
                new = (rho - half) / gjj
            elif rho < -half:
                new = (rho + half) / gjj
            else:
                new = 0.0
            change = abs(new - x[j])
            if change > max_change:
                max_change = change
            x[j] = new
        if max_change < tol:
            return sweep + 1
    return max_sweeps


def _lasso_gram(gram, corr, eta, x0=None, tol=LASSO_TOL, max_sweeps=LASSO_MAX_SWEEPS):
    x = np.zeros(corr.shape[0]) if x0 is None else np.array(x0, dtype=float)
    _cd_gram(gram, corr, float(eta), x, tol, max_sweeps)
    return x


def lasso(r, S, eta, x0=None, tol=LASSO_TOL, max_sweeps=LASSO_MAX_SWEEPS) -> np.ndarray:
    """Minimize ``||r - S x||^2 + eta * ||x||_1`` by cyclic coordinate descent.

    ``eta == 0`` returns the minimum-norm least-squares solution.
    """
    r, S = _check_system(r, S)
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if eta == 0:
        return np.linalg.lstsq(S, r, rcond=None)[0]
    return _lasso_gram(S.T @ S, S.T @ r, eta, x0, tol, max_sweeps)


def lasso_kkt_residual(r, S, x, eta) -> float:
    """Largest violation of the LASSO subgradient optimality conditions."""
    grad = -2.0 * S.T @ (r - S @ x)
    nz = x != 0
    viol = np.zeros_like(x)
    viol[nz] = np.abs(grad[nz] + eta * np.sign(x[nz]))
    viol[~nz] = np.maximum(np.abs(grad[~nz]) - eta, 0.0)
    return float(viol.max(initial=0.0))


def max_eta(r, S) -> float:
    """Smallest ``eta`` for which the LASSO solution is identically zero."""
    r, S = _check_system(r, S)
    if not np.any(S):
        raise GridError("S is identically zero; the eta grid is undefined")
    return 2.0 * float(np.max(np.abs(S.T @ r)))


def eta_grid(top: float, cfg: LassoConfig = LassoConfig()) -> np.ndarray:
    """Geometric grid from ``top`` down to ``eta_ratio * top`` (descending)."""
    return top * np.geomspace(1.0, cfg.eta_ratio, cfg.n_etas)


def _folds(n_rows, n_folds, seed):
    if n_rows < n_folds:
        warnings.warn(f"only {n_rows} rows; reducing n_folds from {n_folds} to {n_rows}", RuntimeWarning)
        n_folds = n_rows
    perm = np.random.default_rng(seed).permutation(n_rows)
    return np.array_split(perm, n_folds)


def _cv_select(r, S, grid, solver, cfg, seed):
    folds = _folds(S.shape[0], cfg.n_folds, seed)
    cv_loss = np.zeros(grid.shape[0])
    coefs = np.zeros((len(folds), grid.shape[0], S.shape[1]))
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(S.shape[0]), test)
        coefs[f] = solver(r[train], S[train], grid)
        resid = r[test][None, :] - coefs[f] @ S[test].T
        cv_loss += np.sum(resid**2, axis=1)
    cv_loss /= len(folds)
    rank = min(cfg.selection_rank, grid.shape[0]) - 1
    pick = int(np.argsort(cv_loss, kind="stable")[rank])
    return pick, coefs[:, pick].mean(axis=0), cv_loss


def _lasso_path(r, S, grid):
    gram, corr = S.T @ S, S.T @ r
    out = np.zeros((grid.shape[0], S.shape[1]))
    x = np.zeros(S.shape[1])
    for i, eta in enumerate(grid):
        _cd_gram(gram, corr, float(eta), x, LASSO_TOL, LASSO_MAX_SWEEPS)
        out[i] = x
    return out


def select_eta_cv(r, S, cfg: LassoConfig = LassoConfig(), seed: int = 0):
    """Cross-validated LASSO: returns ``(eta, fold-averaged coefficients)``."""
    r, S = _check_system(r, S)
    top = max_eta(r, S)
    if top == 0.0:
        return 0.0, np.zeros(S.shape[1])
    grid = eta_grid(top, cfg)
    pick, coef, _ = _cv_select(r, S, grid, _lasso_path, cfg, seed)
    return float(grid[pick]), coef


# -- ridge ----------------------------------------------------------------


def ridge(r, S, eta) -> np.ndarray:
    """Solve ``(S^T S + eta I) x = S^T r``."""
    r, S = _check_system(r, S)
    if not eta > 0:
        raise ValueError("eta must be positive")
    return np.linalg.solve(S.T @ S + eta * np.eye(S.shape[1]), S.T @ r)


def _ridge_path(r, S, grid):
    u, s, vt = np.linalg.svd(S, full_matrices=False)
    ur = u.T @ r
    return np.stack([vt.T @ (s / (s**2 + eta) * ur) for eta in grid])


def select_ridge_cv(r, S, cfg: LassoConfig = LassoConfig(selection_rank=1), seed: int = 0):
    """Cross-validated ridge on a geometric grid topped at ``||S||_2^2``."""
    r, S = _check_system(r, S)
    top = float(np.linalg.norm(S, 2) ** 2)
    if top == 0.0:
        raise GridError("S is identically zero; the eta grid is undefined")
    grid = eta_grid(top, cfg)
    pick, _, _ = _cv_select(r, S, grid, _ridge_path, cfg, seed)
    eta = float(grid[pick])
    return eta, ridge(r, S, eta)


# -- STLS -----------------------------------------------------------------


def condition_number(S) -> float:
    s = np.linalg.svd(np.asarray(S, dtype=float), compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def stls_loss(r, S, delta_theta, delta_coef: float = STLS_DELTA, cond=None) -> float:
    r, S = _check_system(r, S)
    x = np.asarray(delta_theta, dtype=float)
    if not delta_coef > 0:
        raise ValueError("delta_coef must be positive")
    cond = condition_number(S) if cond is None else cond
    nnz = int(np.count_nonzero(x))
    penalty = delta_coef * cond * nnz if nnz else 0.0
    return float(np.linalg.norm(r - S @ x)) + penalty


def _refit(r, S, support):
    x = np.zeros(S.shape[1])
    sub = S[:, support]
    sol, _, rank, sv = np.linalg.lstsq(sub, r, rcond=RCOND)
    if rank < len(support):
        warnings.warn("rank-deficient support; using minimum-norm least squares", RuntimeWarning)
    x[support] = sol
    return x


def stls(
    r,
    S,
    lam: float,
    cfg: LassoConfig = LassoConfig(),
    init=None,
    delta_coef: float = STLS_DELTA,
    max_iter: int = STLS_MAX_ITER,
    seed: int = 0,
    cond=None,
) -> SparseSolution:
    """Sequential threshold least squares at threshold ``lam``.

    ``init`` defaults to the cross-validated LASSO estimate. An iterate is
    accepted only if it strictly lowers the loss and is not all-zero;
    otherwise the last accepted iterate (possibly ``init``) is returned.
    ``guard`` is set when thresholding removes every entry.
    """
    r, S = _check_system(r, S)
    if not lam > 0:
        raise ValueError("lam must be positive")
    if init is None:
        _, init = select_eta_cv(r, S, cfg, seed)
    cond = condition_number(S) if cond is None else cond
    best = np.asarray(init, dtype=float).copy()
    best_loss = stls_loss(r, S, best, delta_coef, cond)
    history = [best_loss]
    prev = best
    accepted = 0
    guard = False
    for _ in range(max_iter):
        support = np.flatnonzero(np.abs(prev) >= lam)
        if support.size == 0:
            guard = True
            break
        x = _refit(r, S, support)
        loss = stls_loss(r, S, x, delta_coef, cond)
        if loss < best_loss and np.count_nonzero(x):
            best, best_loss, prev = x, loss, x
            history.append(loss)
            accepted += 1
        else:
            break
    return SparseSolution(
        delta_theta=best,
        loss=best_loss,
        lam=float(lam),
        support=np.flatnonzero(best).tolist(),
        n_stls_iters=accepted,
        guard=guard,
        loss_history=history,
    )


# -- outer sensitivity loop -----------------------------------------------

METHODS = ("stls", "lasso", "ridge")


@dataclass
class DamageResult:
    theta_dmg: np.ndarray
    support: list
    history: list
    converged: bool
    method: str = "stls"

    @property
    def n_iterations(self) -> int:
        return len(self.history)

    @property
    def lambda_trace(self) -> list:
        return [h.get("lambda") for h in self.history]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "theta_dmg": self.theta_dmg.tolist(),
            "support": self.support,
            "converged": self.converged,
            "history": self.history,
        }


def run_damage_id(
    system: AssembledSystem,
    theta_intact,
    measured_dmg,
    bounds=(0.01, 1.0),
    outer_tol: float = 1e-6,
    outer_max: int = 20,
    betas=(1.0, 1.0),
    method: str = "stls",
    lam=None,
    cfg: LassoConfig = LassoConfig(),
    budget=None,
    seed: int = 0,
    formulation: str = "total",
) -> DamageResult:
    """Stage 2: sparse damage relative to the intact model ``theta_intact``.

    Damage is measured relative to the updated element stiffness, i.e. the
    damaged element ``i`` has stiffness ``(1 + theta_intact[i]) * (1 +
    theta_dmg[i])`` times nominal.

    Every sensitivity iteration solves the linearized problem with the chosen
    ``method``. With ``formulation="total"`` the regularized unknown is the
    full damage vector (``r + S theta_dmg = S theta_new``); with
    ``"increment"`` it is the step itself. ``lam`` fixes the STLS threshold;
    by default it is tuned by Bayesian optimization within ``bounds``.
    """
    from .bayes_opt import OptBudget, bayes_opt

    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if formulation not in ("total", "increment"):
        raise ValueError("formulation must be 'total' or 'increment'")
    measured_dmg = list(measured_dmg)
    if not measured_dmg:
        raise ValueError("need at least one damaged measurement set")
    base = system.rescaled(theta_intact)
    if budget is None:
        budget = OptBudget(lambda_min=bounds[0], lambda_max=bounds[1])
    theta = np.zeros(system.n_ele)
    history = []
    converged = False

    for k in range(outer_max):
        systems = [assemble_sensitivity(base, theta, md, betas) for md in measured_dmg]
        r, S = stack_systems(systems)
        offset = theta if formulation == "total" else np.zeros_like(theta)
        rhs = r + S @ offset
        step_seed = np.random.SeedSequence([seed, k]).generate_state(1)[0]
        entry = {"iteration": k + 1, "residual_norm": float(np.linalg.norm(r))}
        if method == "stls":
            if lam is None:
                lam_k, sol, trace = bayes_opt(rhs, S, budget, seed=int(step_seed), cfg=cfg)
                entry["bayes_opt_trace"] = trace
            else:
                lam_k = float(lam)
                sol = stls(rhs, S, lam_k, cfg, seed=int(step_seed))
            # nothing clears the threshold: no damage update this iteration
            target = offset.copy() if sol.guard and sol.n_stls_iters == 0 else sol.delta_theta
            entry.update({"lambda": lam_k, "loss": sol.loss, "guard": sol.guard})
            entry["stls_iterations"] = sol.n_stls_iters
        elif method == "lasso":
            eta, target = select_eta_cv(rhs, S, cfg, seed=int(step_seed))
            entry["eta"] = eta
        else:
            eta, target = select_ridge_cv(rhs, S, seed=int(step_seed))
            entry["eta"] = eta
        new_theta = target + (theta - offset)
        step = new_theta - theta
        theta = check_theta(system, new_theta)
        rel = float(np.linalg.norm(step)) / max(float(np.linalg.norm(theta)), 1.0)
        entry.update(theta=theta.tolist(), relative_step=rel, support=np.flatnonzero(theta).tolist())
        history.append(entry)
        logger.debug("stage-2 %s iteration %d: relative step %.3e", method, k + 1, rel)
        if rel < outer_tol:
            converged = True
            break

    return DamageResult(theta, np.flatnonzero(theta).tolist(), history, converged, method)


def relative_error(estimate, truth) -> float:
    truth = np.asarray(truth, dtype=float)
    return float(np.linalg.norm(np.asarray(estimate) - truth) / np.linalg.norm(truth))
