import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from damageid.bayes_update import (
    HyperPriors,
    MapIterate,
    PosteriorEstimate,
    map_fixed_point,
    marginal_posteriors,
    objective,
    posterior_covariance,
    run_model_update,
)
from damageid.bench_sim import make_scenario, synth_measurements
from damageid.estimators import _Block
from damageid.exceptions import CovarianceError
from damageid.sensitivity import assemble_sensitivity

# scalar problem S = [[1]], r = [1], a0 = a1 = b0 = b1 = 1e-6: fixed point of
# the three closed-form updates iterated in 40-digit arithmetic (mpmath)
SCALAR_FP = {"delta": 0.9999990000005000025, "sigma2": 6.6666655555529629489e-7, "alpha": 0.66666622222385185343}


def random_blocks(rng, n_obs=2, rows=12, n_ele=5):
    truth = rng.normal(size=n_ele)
    out = []
    for _ in range(n_obs):
        S = rng.normal(size=(rows, n_ele))
        out.append(_Block(S @ truth + 0.1 * rng.normal(size=rows), S))
    return out


def fd_hessian(f, x, h=1e-4):
    n = x.size
    hess = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            e_i, e_j = np.eye(n)[i] * h, np.eye(n)[j] * h
            hess[i, j] = (f(x + e_i + e_j) - f(x + e_i - e_j) - f(x - e_i + e_j) + f(x - e_i - e_j)) / (4 * h * h)
    return hess


@pytest.fixture(scope="module")
def shear_systems():
    sc = make_scenario("shear10", seed=4)
    return [assemble_sensitivity(sc.system, np.zeros(10), md) for md in synth_measurements(sc, "intact")]


class TestHyperPriors:
    @pytest.mark.parametrize("field", ["a0", "b0", "a1", "b1"])
    def test_positive(self, field):
        with pytest.raises(ValueError):
            HyperPriors(**{field: 0.0})

    def test_iterate_positive(self):
        with pytest.raises(ValueError):
            MapIterate(np.zeros(2), 0.0, 1.0)


class TestMapFixedPoint:
    def test_zero_data_limit(self):
        hp = HyperPriors()
        blocks = [_Block(np.zeros(6), np.random.default_rng(0).normal(size=(6, 3)))]
        it = map_fixed_point(blocks, hp)
        m = 6 + 2 * (hp.a0 + 1)
        assert it.converged
        np.testing.assert_allclose(it.delta_theta, 0.0, atol=1e-12)
        assert it.sigma2 == pytest.approx(2 * hp.b0 / m, rel=1e-12)
        assert it.alpha == pytest.approx(2 * hp.b1 / (3 / 2 + hp.a1 + 1), rel=1e-12)

    def test_scalar_oracle(self):
        hp = HyperPriors(1e-6, 1e-6, 1e-6, 1e-6)
        it = map_fixed_point([_Block(np.array([1.0]), np.array([[1.0]]))], hp)
        assert it.converged
        assert it.delta_theta[0] == pytest.approx(SCALAR_FP["delta"], rel=1e-12)
        assert it.sigma2 == pytest.approx(SCALAR_FP["sigma2"], rel=1e-6)
        assert it.alpha == pytest.approx(SCALAR_FP["alpha"], rel=1e-6)
        # the fixed point satisfies the theta update in closed form
        assert it.delta_theta[0] == pytest.approx(1 / (1 + it.sigma2 / it.alpha), rel=1e-12)

    def test_noise_prior_shrinks(self, rng):
        blocks = random_blocks(rng)
        weak = map_fixed_point(blocks, HyperPriors(b0=1e-4))
        strong = map_fixed_point(blocks, HyperPriors(b0=1e3))
        assert np.linalg.norm(strong.delta_theta) < np.linalg.norm(weak.delta_theta)

    def test_ridge_limit(self, rng):
        blocks = random_blocks(rng)
        it = map_fixed_point(blocks, HyperPriors(b1=1e12))
        S = np.vstack([b.jacobian for b in blocks])
        r = np.concatenate([b.residue for b in blocks])
        ols = np.linalg.lstsq(S, r, rcond=None)[0]
        np.testing.assert_allclose(it.delta_theta, ols, atol=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            map_fixed_point([])

    def test_mismatched_columns(self):
        with pytest.raises(ValueError):
            map_fixed_point([_Block(np.ones(3), np.ones((3, 2))), _Block(np.ones(3), np.ones((3, 4)))])

    def test_max_iter(self, rng):
        it = map_fixed_point(random_blocks(rng), max_iter=1)
        assert it.n_inner_iters == 1 and not it.converged

    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
    def test_objective_monotone(self, seed, n_obs, b0, b1):
        rng = np.random.default_rng(seed)
        blocks = random_blocks(rng, n_obs=n_obs, rows=8, n_ele=4)
        hp = HyperPriors(1.0, b0, 1.0, b1)
        it = map_fixed_point(blocks, hp, track_objective=True)
        trace = np.array(it.objective_trace)
        assert np.all(np.diff(trace) <= 1e-10 * np.maximum(1.0, np.abs(trace[:-1])))


class TestPosteriorCovariance:
    def test_identity_information(self):
        blocks = [_Block(np.zeros(3), np.eye(3))]
        cov = posterior_covariance(blocks, MapIterate(np.zeros(3), 1.0, 1e15))
        np.testing.assert_allclose(cov, np.eye(3), atol=1e-12)

    def test_replicated_observations(self, rng):
        block = random_blocks(rng, n_obs=1)[0]
        it = MapIterate(np.zeros(5), 0.3, 1e15)
        one = posterior_covariance([block], it)
        two = posterior_covariance([block, block], it)
        np.testing.assert_allclose(two, one, rtol=1e-9)

    def test_finite_difference_hessian(self, shear_systems):
        hp = HyperPriors()
        it = map_fixed_point(shear_systems, hp)
        hess = fd_hessian(lambda d: objective(shear_systems, hp, d, it.sigma2, it.alpha), it.delta_theta)
        expected = len(shear_systems) * np.linalg.inv(hess)
        cov = posterior_covariance(shear_systems, it)
        np.testing.assert_allclose(cov, expected, rtol=1e-6, atol=1e-6 * np.abs(expected).max())

    def test_symmetric_pd(self, shear_systems):
        cov = posterior_covariance(shear_systems, map_fixed_point(shear_systems))
        np.testing.assert_array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > 0


class TestMarginals:
    def test_diagonal(self):
        var = np.array([0.04, 1.0, 9.0])
        n = 20_000
        out = marginal_posteriors(np.array([1.0, 0.0, -2.0]), np.diag(var), n_samples=n, seed=1)
        stds = np.array([s for _, s in out])
        np.testing.assert_allclose(stds, np.sqrt(var), rtol=3 / np.sqrt(n))

    def test_clt_means(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(4, 4))
        cov = a @ a.T + 0.1 * np.eye(4)
        mean = rng.normal(size=4)
        n = 1_000_000
        out = marginal_posteriors(mean, cov, n_samples=n, seed=2)
        se = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(np.array([m for m, _ in out]) - mean) < 5 * se)

    def test_deterministic(self):
        cov = np.array([[1.0, 0.3], [0.3, 2.0]])
        assert marginal_posteriors(np.zeros(2), cov, 5000, seed=9) == marginal_posteriors(np.zeros(2), cov, 5000, seed=9)

    def test_chunking_invariant(self):
        cov = np.diag([1.0, 2.0])
        a = marginal_posteriors(np.zeros(2), cov, 5000, seed=9, chunk=1000)
        b = marginal_posteriors(np.zeros(2), cov, 5000, seed=9, chunk=5000)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            marginal_posteriors(np.zeros(2), np.eye(2), n_samples=999)

    def test_not_psd(self):
        with pytest.raises(CovarianceError):
            marginal_posteriors(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_not_symmetric(self):
        with pytest.raises(CovarianceError):
            marginal_posteriors(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestRunModelUpdate:
    def test_exact_intact(self, shear10):
        sc = shear10.with_overrides(theta_intact_true=np.zeros(10), noise_level=0.0)
        post = run_model_update(sc.system, synth_measurements(sc, "intact"), n_samples=1000)
        assert post.converged and post.n_iterations == 1
        np.testing.assert_allclose(post.theta_hat, 0.0, atol=1e-8)

    def test_noiseless_full_sensors(self, shear10):
        sc = shear10.with_overrides(noise_level=0.0, n_modes=10, sensor_dofs=tuple(range(10)), n_observations=1)
        post = run_model_update(sc.system, synth_measurements(sc, "intact"), n_samples=1000)
        assert post.converged
        np.testing.assert_allclose(post.theta_hat, sc.theta_intact_true, atol=1e-6)

    def test_order_invariance(self, shear10):
        meas = synth_measurements(shear10, "intact")
        a = run_model_update(shear10.system, meas, n_samples=1000)
        b = run_model_update(shear10.system, meas[::-1], n_samples=1000)
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(a.covariance, b.covariance, rtol=1e-9, atol=1e-15)

    def test_history_and_roundtrip(self, shear10):
        post = run_model_update(shear10.system, synth_measurements(shear10, "intact"), n_samples=1000)
        assert [h["iteration"] for h in post.history] == list(range(1, post.n_iterations + 1))
        theta = np.sum([h["delta_theta"] for h in post.history], axis=0)
        np.testing.assert_allclose(theta, post.theta_hat, atol=1e-12)
        again = PosteriorEstimate.from_dict(post.to_dict())
        np.testing.assert_array_equal(again.theta_hat, post.theta_hat)
        assert np.all(post.std > 0)

    def test_non_convergence_flag(self, shear10):
        post = run_model_update(shear10.system, synth_measurements(shear10, "intact"), outer_max=1, n_samples=1000)
        assert not post.converged and post.n_iterations == 1

    def test_empty_sets(self, shear10):
        with pytest.raises(ValueError):
            run_model_update(shear10.system, [])


@pytest.mark.xfail(
    strict=True,
    reason="accumulating N_ob * H^-1 over outer iterations overstates the spread; coverage is ~1.0",
)
def test_interval_calibration():
    hits, total = 0, 0
    for seed in range(200):
        sc = make_scenario("shear10", seed=1000 + seed)
        post = run_model_update(sc.system, synth_measurements(sc, "intact"), n_samples=1000, seed=seed)
        lo, hi = post.interval(1.96)
        hits += int(np.sum((lo <= sc.theta_intact_true) & (sc.theta_intact_true <= hi)))
        total += sc.system.n_ele
    assert 0.90 <= hits / total <= 0.99
