"""scikit-learn style estimators around the two identification stages.

The linear estimators take the Jacobian as ``X`` and the residue as ``y``
and expose the solution as ``coef_``; ``predict(X)`` is ``X @ coef_``. The
structural estimators wrap an :class:`AssembledSystem` and are fitted on
modal measurements.

>>> import numpy as np
>>> from damageid.estimators import STLSRegressor
>>> X = np.eye(4)
>>> est = STLSRegressor(lam=0.5, init=[2.1, 0.1, 0.0, -0.9])
>>> est.fit(X, [2.0, 0.0, 0.0, -1.0]).support_
[0, 3]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation as val
from .bayes_opt import OptBudget, bayes_opt
from .bayes_update import (
    INNER_MAX_ITER,
    INNER_TOL,
    OUTER_MAX_ITER,
    OUTER_TOL,
    HyperPriors,
    map_fixed_point,
    posterior_covariance,
    run_model_update,
)
from .sparse_id import (
    STLS_DELTA,
    STLS_MAX_ITER,
    LassoConfig,
    run_damage_id,
    select_eta_cv,
    select_ridge_cv,
    stls,
)
from .structural_model import AssembledSystem, apply_parameters, solve_modes


@dataclass(frozen=True)
class _Block:
    """Rows of one observation, duck-typed like a SensitivitySystem."""

    residue: np.ndarray
    jacobian: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.residue.shape[0]


class _LinearMixin(RegressorMixin):
    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = val.check_design(X, self.coef_.shape[0])
        return X @ self.coef_

    def _lasso_config(self, selection_rank=None):
        return LassoConfig(
            n_etas=self.n_etas,
            eta_ratio=self.eta_ratio,
            n_folds=self.n_folds,
            selection_rank=self.selection_rank if selection_rank is None else selection_rank,
        )


class STLSRegressor(_LinearMixin, BaseEstimator):
    """Sequential threshold least squares at a fixed threshold ``lam``.

    Parameters
    ----------
    lam : float
        Hard threshold on coefficient magnitudes.
    delta : float
        Weight of the ``cond(X) * ||coef||_0`` term in the loss.
    init : array-like or None
        Starting coefficients; ``None`` uses the cross-validated LASSO.
    """

    def __init__(
        self,
        lam=0.1,
        delta=STLS_DELTA,
        max_iter=STLS_MAX_ITER,
        init=None,
        n_etas=100,
        eta_ratio=1e-4,
        n_folds=5,
        selection_rank=2,
        random_state=0,
    ):
        self.lam = lam
        self.delta = delta
        self.max_iter = max_iter
        self.init = init
        self.n_etas = n_etas
        self.eta_ratio = eta_ratio
        self.n_folds = n_folds
        self.selection_rank = selection_rank
        self.random_state = random_state

    def fit(self, X, y):
        X, y = val.check_linear_system(X, y)
        sol = stls(
            y,
            X,
            self.lam,
            self._lasso_config(),
            init=self.init,
            delta_coef=self.delta,
            max_iter=self.max_iter,
            seed=self.random_state,
        )
        self.coef_ = sol.delta_theta
        self.loss_ = sol.loss
        self.support_ = sol.support
        self.n_iter_ = sol.n_stls_iters
        self.guard_ = sol.guard
        self.n_features_in_ = X.shape[1]
        return self


class BayesOptSTLSRegressor(_LinearMixin, BaseEstimator):
    """STLS with the threshold tuned by Gaussian-process Bayesian optimization."""

    def __init__(
        self,
        lambda_min=0.01,
        lambda_max=1.0,
        n_init=4,
        max_iter=30,
        n_etas=100,
        eta_ratio=1e-4,
        n_folds=5,
        selection_rank=2,
        random_state=0,
    ):
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.n_init = n_init
        self.max_iter = max_iter
        self.n_etas = n_etas
        self.eta_ratio = eta_ratio
        self.n_folds = n_folds
        self.selection_rank = selection_rank
        self.random_state = random_state

    def fit(self, X, y):
        X, y = val.check_linear_system(X, y)
        budget = OptBudget(self.lambda_min, self.lambda_max, self.n_init, self.max_iter)
        lam, sol, trace = bayes_opt(y, X, budget, seed=self.random_state, cfg=self._lasso_config())
        self.lambda_ = lam
        self.coef_ = sol.delta_theta
        self.loss_ = sol.loss
        self.support_ = sol.support
        self.trace_ = trace
        self.n_features_in_ = X.shape[1]
        return self


class CVLassoRegressor(_LinearMixin, BaseEstimator):
    """LASSO with ``eta`` chosen by k-fold CV; ``coef_`` is the fold average."""

    def __init__(self, n_etas=100, eta_ratio=1e-4, n_folds=5, selection_rank=2, random_state=0):
        self.n_etas = n_etas
        self.eta_ratio = eta_ratio
        self.n_folds = n_folds
        self.selection_rank = selection_rank
        self.random_state = random_state

    def fit(self, X, y):
        X, y = val.check_linear_system(X, y)
        self.eta_, self.coef_ = select_eta_cv(y, X, self._lasso_config(), seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self


class CVRidgeRegressor(_LinearMixin, BaseEstimator):
    """Ridge regression with ``eta`` chosen by k-fold CV."""

    def __init__(self, n_etas=100, eta_ratio=1e-4, n_folds=5, selection_rank=1, random_state=0):
        self.n_etas = n_etas
        self.eta_ratio = eta_ratio
        self.n_folds = n_folds
        self.selection_rank = selection_rank
        self.random_state = random_state

    def fit(self, X, y):
        X, y = val.check_linear_system(X, y)
        self.eta_, self.coef_ = select_ridge_cv(y, X, self._lasso_config(), seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self


class HierarchicalBayesRegressor(_LinearMixin, BaseEstimator):
    """Hierarchical Bayesian ridge with inverse-Gamma hyperpriors.

    Rows sharing a ``groups`` label form one observation; the reported
    covariance is the number of observations times the inverse Hessian.
    """

    def __init__(self, a0=1.0, b0=1e-4, a1=1.0, b1=0.1, tol=INNER_TOL, max_iter=INNER_MAX_ITER):
        self.a0 = a0
        self.b0 = b0
        self.a1 = a1
        self.b1 = b1
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, groups=None):
        X, y = val.check_linear_system(X, y)
        codes = val.check_groups(groups, X.shape[0])
        blocks = [_Block(y[codes == g], X[codes == g]) for g in np.unique(codes)]
        hp = HyperPriors(self.a0, self.b0, self.a1, self.b1)
        it = map_fixed_point(blocks, hp, tol=self.tol, max_iter=self.max_iter)
        self.coef_ = it.delta_theta
        self.sigma2_ = it.sigma2
        self.alpha_ = it.alpha
        self.n_iter_ = it.n_inner_iters
        self.converged_ = it.converged
        self.covariance_ = posterior_covariance(blocks, it)
        self.n_features_in_ = X.shape[1]
        return self


class IntactModelUpdater(BaseEstimator):
    """Stage 1: update the stiffness parameters of ``system`` from intact measurements.

    Examples
    --------
    >>> from damageid.bench_sim import make_scenario, synth_measurements
    >>> sc = make_scenario("shear10", seed=1)
    >>> est = IntactModelUpdater(sc.system, n_samples=1000).fit(synth_measurements(sc, "intact"))
    >>> est.theta_.shape
    (10,)
    """

    def __init__(
        self,
        system: AssembledSystem = None,
        a0=1.0,
        b0=1e-4,
        a1=1.0,
        b1=0.1,
        beta_lambda=1.0,
        beta_phi=1.0,
        tol=OUTER_TOL,
        max_iter=OUTER_MAX_ITER,
        n_samples=100_000,
        random_state=0,
    ):
        self.system = system
        self.a0 = a0
        self.b0 = b0
        self.a1 = a1
        self.b1 = b1
        self.beta_lambda = beta_lambda
        self.beta_phi = beta_phi
        self.tol = tol
        self.max_iter = max_iter
        self.n_samples = n_samples
        self.random_state = random_state

    def fit(self, measured_sets, y=None):
        if not isinstance(self.system, AssembledSystem):
            raise TypeError("system must be an AssembledSystem")
        measured = val.check_measurement_sets(measured_sets, self.system)
        post = run_model_update(
            self.system,
            measured,
            HyperPriors(self.a0, self.b0, self.a1, self.b1),
            outer_tol=self.tol,
            outer_max=self.max_iter,
            betas=val.check_betas((self.beta_lambda, self.beta_phi)),
            n_samples=self.n_samples,
            seed=self.random_state,
        )
        self.posterior_ = post
        self.theta_ = post.theta_hat
        self.covariance_ = post.covariance
        self.std_ = post.std
        self.converged_ = post.converged
        self.n_iter_ = post.n_iterations
        return self

    def predict(self, n_modes: int, sensor_dofs=None):
        """Modal data of the updated model."""
        check_is_fitted(self, "theta_")
        k = apply_parameters(self.system, self.theta_)
        return solve_modes(k, self.system.mass, n_modes, sensor_dofs)


class SparseDamageIdentifier(BaseEstimator):
    """Stage 2: sparse damage relative to the intact parameters ``theta_intact``.

    ``lam=None`` tunes the STLS threshold by Bayesian optimization in every
    sensitivity iteration; ``method`` selects ``"stls"``, ``"lasso"`` or
    ``"ridge"``.
    """

    def __init__(
        self,
        system: AssembledSystem = None,
        theta_intact=None,
        method="stls",
        lam=None,
        lambda_min=0.01,
        lambda_max=1.0,
        beta_lambda=1.0,
        beta_phi=1.0,
        tol=1e-6,
        max_iter=20,
        formulation="total",
        random_state=0,
    ):
        self.system = system
        self.theta_intact = theta_intact
        self.method = method
        self.lam = lam
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.beta_lambda = beta_lambda
        self.beta_phi = beta_phi
        self.tol = tol
        self.max_iter = max_iter
        self.formulation = formulation
        self.random_state = random_state

    def fit(self, measured_dmg, y=None):
        if not isinstance(self.system, AssembledSystem):
            raise TypeError("system must be an AssembledSystem")
        measured = val.check_measurement_sets(measured_dmg, self.system)
        intact = np.zeros(self.system.n_ele) if self.theta_intact is None else self.theta_intact
        intact = val.check_parameter_vector(self.system, intact)
        res = run_damage_id(
            self.system,
            intact,
            measured,
            bounds=(self.lambda_min, self.lambda_max),
            outer_tol=self.tol,
            outer_max=self.max_iter,
            betas=val.check_betas((self.beta_lambda, self.beta_phi)),
            method=self.method,
            lam=self.lam,
            seed=self.random_state,
            formulation=self.formulation,
        )
        self.result_ = res
        self.theta_dmg_ = res.theta_dmg
        self.support_ = res.support
        self.converged_ = res.converged
        self.n_iter_ = res.n_iterations
        self.lambda_trace_ = res.lambda_trace
        return self

    def predict(self, n_modes: int, sensor_dofs=None):
        """Modal data of the identified damaged model."""
        check_is_fitted(self, "theta_dmg_")
        intact = np.zeros(self.system.n_ele) if self.theta_intact is None else self.theta_intact
        base = self.system.rescaled(intact)
        return solve_modes(apply_parameters(base, self.theta_dmg_), base.mass, n_modes, sensor_dofs)
