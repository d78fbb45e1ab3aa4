"""Gaussian-process Bayesian optimization of the STLS threshold.

The loss ``L(lam)`` of :func:`damageid.sparse_id.stls` is modeled by a GP
with a constant mean (the mean of the observed losses), a Matern 5/2 kernel

    k(d) = s2 * (1 + sqrt(5) d / ell + 5 d^2 / (3 ell^2)) * exp(-sqrt(5) d / ell)

and Gaussian observation noise. New thresholds maximize the analytic
expected improvement over the incumbent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.special import ndtr

from .sparse_id import LassoConfig, SparseSolution, condition_number, select_eta_cv, stls

logger = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)
N_RESTARTS = 8
EI_GRID_POINTS = 512
JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class OptBudget:
    lambda_min: float = 0.01
    lambda_max: float = 1.0
    n_init: int = 4
    max_iter: int = 30

    def __post_init__(self):
        if not 0 < self.lambda_min < self.lambda_max:
            raise ValueError("need 0 < lambda_min < lambda_max")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


def matern52(x, x2, kernel_scale: float, length_scale: float):
    """Matern 5/2 covariance between (broadcastable) scalar inputs."""
    a = SQRT5 * np.abs(np.subtract(x, x2)) / length_scale
    return kernel_scale * (1.0 + a + a * a / 3.0) * np.exp(-a)


@dataclass
class GPSurrogate:
    x: np.ndarray
    y: np.ndarray
    kernel_scale: float
    length_scale: float
    noise_variance: float
    mean_const: float
    chol: np.ndarray = None
    weights: np.ndarray = None
    log_marginal_likelihood: float = np.nan

    @property
    def observations(self):
        return list(zip(self.x.tolist(), self.y.tolist()))


def _train_cov(x, s2, ell, noise):
    return matern52(x[:, None], x[None, :], s2, ell) + noise * np.eye(x.shape[0])


def _cholesky(cov, scale):
    for jitter in JITTERS:
        try:
            return linalg.cholesky(cov + jitter * scale * np.eye(cov.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
    raise linalg.LinAlgError("GP covariance is not positive definite even with jitter")


def _nll_and_grad(log_params, x, yc):
    """Negative log marginal likelihood and its gradient in log-hyperparameters."""
    s2, ell, noise = np.exp(log_params)
    n = x.shape[0]
    a = SQRT5 * np.abs(x[:, None] - x[None, :]) / ell
    e = np.exp(-a)
    base = (1.0 + a + a * a / 3.0) * e
    cov = s2 * base + noise * np.eye(n)
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        return 1e25, np.zeros(3)
    alpha = linalg.cho_solve((chol, True), yc)
    nll = 0.5 * yc @ alpha + np.sum(np.log(np.diag(chol))) + 0.5 * n * np.log(2.0 * np.pi)
    inner = linalg.cho_solve((chol, True), np.eye(n)) - np.outer(alpha, alpha)
    d_s2 = s2 * base
    d_ell = s2 * (a * a * (1.0 + a) / 3.0) * e
    d_noise = noise * np.eye(n)
    grad = 0.5 * np.array([np.sum(inner * d) for d in (d_s2, d_ell, d_noise)])
    return float(nll), grad


def _bounds(var_y):
    return np.log(
        np.array(
            [
                [1e-6 * var_y, 10.0 * var_y],  # kernel_scale
                [1e-3, 10.0],  # length_scale
                [1e-8, max(var_y, 1e-7)],  # noise_variance
            ]
        )
    )


def gp_fit(points, seed: int = 0, n_restarts: int = N_RESTARTS) -> GPSurrogate:
    """Fit GP hyperparameters by maximizing the marginal likelihood (multi-start L-BFGS-B)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise ValueError("need at least two observations")
    if not np.all(np.isfinite(pts)):
        raise ValueError("observations must be finite")
    x, y = pts[:, 0], pts[:, 1]
    mu = float(np.mean(y))
    yc = y - mu
    var_y = float(np.var(y))
    degenerate = var_y <= 1e-14 * max(1.0, mu * mu)
    if degenerate:
        # flat data: any kernel reproduces the mean; pin the noise to its floor
        var_ref = max(1e-12 * max(1.0, mu * mu), np.finfo(float).tiny)
        params = np.array([var_ref, 1.0, 1e-8 * var_ref])
        return _finalize(x, y, mu, params)

    bounds = _bounds(var_y)
    rng = np.random.default_rng(seed)
    starts = rng.uniform(bounds[:, 0], bounds[:, 1], size=(n_restarts, 3))
    best_p, best_f = None, np.inf
    for start in starts:
        f0, _ = _nll_and_grad(start, x, yc)
        if f0 < best_f:
            best_p, best_f = start, f0
        res = optimize.minimize(
            _nll_and_grad, start, args=(x, yc), jac=True, method="L-BFGS-B", bounds=bounds
        )
        if res.fun < best_f:
            best_p, best_f = res.x, float(res.fun)
    return _finalize(x, y, mu, np.exp(best_p))


def _finalize(x, y, mu, params):
    s2, ell, noise = (float(p) for p in params)
    chol = _cholesky(_train_cov(x, s2, ell, noise), s2)
    yc = y - mu
    weights = linalg.cho_solve((chol, True), yc)
    lml = -(0.5 * yc @ weights + np.sum(np.log(np.diag(chol))) + 0.5 * x.shape[0] * np.log(2 * np.pi))
    return GPSurrogate(x, y, s2, ell, noise, mu, chol, weights, float(lml))


def log_marginal_likelihood(gp: GPSurrogate, kernel_scale, length_scale, noise_variance) -> float:
    nll, _ = _nll_and_grad(np.log([kernel_scale, length_scale, noise_variance]), gp.x, gp.y - gp.mean_const)
    return -nll


def gp_posterior(gp: GPSurrogate, lam):
    """Posterior mean and latent variance (no observation noise) at ``lam``."""
    lam = np.asarray(lam, dtype=float)
    flat = np.atleast_1d(lam).ravel()
    kx = matern52(flat[:, None], gp.x[None, :], gp.kernel_scale, gp.length_scale)
    mean = gp.mean_const + kx @ gp.weights
    v = linalg.solve_triangular(gp.chol, kx.T, lower=True)
    var = np.clip(gp.kernel_scale - np.sum(v * v, axis=0), 0.0, None)
    if lam.ndim == 0:
        return float(mean[0]), float(var[0])
    return mean.reshape(lam.shape), var.reshape(lam.shape)


def ei_from_moments(mean, std, best):
    """Expected value of ``max(0, best - f)`` for ``f ~ N(mean, std^2)``."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    gain = best - mean
    safe = np.where(std > 0, std, 1.0)
    with np.errstate(over="ignore"):
        # subnormal std sends z to +-inf, where the closed form has the right limit
        z = gain / safe
        ei = gain * ndtr(z) + safe * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    out = np.where(std > 0, ei, np.maximum(gain, 0.0))
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def expected_improvement(gp: GPSurrogate, lam, L_best: float):
    mean, var = gp_posterior(gp, lam)
    return ei_from_moments(mean, np.sqrt(var), L_best)


def _golden_max(f, a, b, n_iter=30):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n_iter):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc > fd else (d, fd)


def propose(gp: GPSurrogate, L_best: float, budget: OptBudget, taken) -> float:
    """Next threshold: EI maximizer on a grid, refined by golden-section search."""
    grid = np.linspace(budget.lambda_min, budget.lambda_max, EI_GRID_POINTS)
    step = grid[1] - grid[0]
    mean, var = gp_posterior(gp, grid)
    ei = ei_from_moments(mean, np.sqrt(var), L_best)
    i = int(np.argmax(ei))
    if ei[i] < 1e-12:
        lam_new = float(grid[int(np.argmax(var))])
    else:
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        lam_ref, ei_ref = _golden_max(lambda t: expected_improvement(gp, t, L_best), lo, hi)
        lam_new = float(lam_ref) if ei_ref >= ei[i] else float(grid[i])
    taken = np.asarray(taken, dtype=float)
    if taken.size and np.min(np.abs(taken - lam_new)) < 1e-6:
        lam_new = lam_new + step if lam_new + step <= budget.lambda_max else lam_new - step
    return lam_new


def bayes_opt(r, S, budget: OptBudget = OptBudget(), seed: int = 0, cfg: LassoConfig = LassoConfig(), init=None):
    """Tune the STLS threshold on ``(r, S)``.

    Returns ``(lambda_best, SparseSolution, trace)`` where ``trace`` lists one
    record per loss evaluation. Every evaluated point enters the GP data set;
    the incumbent changes only on strict improvement.
    """
    r = np.asarray(r, dtype=float)
    S = np.asarray(S, dtype=float)
    rng = np.random.default_rng(seed)
    if init is None:
        _, init = select_eta_cv(r, S, cfg, seed)
    cond = condition_number(S)

    def evaluate(lam) -> SparseSolution:
        return stls(r, S, lam, cfg, init=init, cond=cond)

    lams, losses, trace = [], [], []
    best: SparseSolution | None = None

    def record(it, lam, sol):
        nonlocal best
        lams.append(lam)
        losses.append(sol.loss)
        if best is None or sol.loss < best.loss:
            best = sol
        trace.append({"iteration": it, "lambda": lam, "loss": sol.loss, "incumbent": best.loss})

    for lam in rng.uniform(budget.lambda_min, budget.lambda_max, budget.n_init):
        record(0, float(lam), evaluate(float(lam)))

    for j in range(1, budget.max_iter + 1):
        if len(lams) < 2:
            lam_new = float(rng.uniform(budget.lambda_min, budget.lambda_max))
        else:
            gp = gp_fit(np.column_stack([lams, losses]), seed=int(rng.integers(2**31)))
            lam_new = propose(gp, best.loss, budget, lams)
        record(j, lam_new, evaluate(lam_new))

    return best.lam, best, trace
