"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N PASS|FAIL`` line (visible with
``pytest -v``) before asserting. Seeds start at 1000 so that none of these
trials overlap the seeds used elsewhere in the suite.
"""

import csv
import itertools

import numpy as np
import pytest

from damageid.bayes_opt import ei_from_moments
from damageid.bayes_update import HyperPriors, map_fixed_point, objective, posterior_covariance, run_model_update
from damageid.bench_sim import DAMAGED, INTACT, make_scenario, synth_measurements
from damageid.cli import main
from damageid.exceptions import DamageIDError
from damageid.sensitivity import assemble_sensitivity, eigenvalue_derivative, eigenvector_derivative
from damageid.sparse_id import condition_number, relative_error, run_damage_id, stls, stls_loss
from damageid.structural_model import AssembledSystem, apply_parameters, full_eigensolution

pytestmark = pytest.mark.slow

SEED0 = 1000
SHEAR_TRIALS = 50
BO_TRIALS = 30
TRUSS_TRIALS = 20
TIE = 1e-6


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {k} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


@pytest.fixture(scope="module")
def shear_pipeline():
    runs = []
    for t in range(SHEAR_TRIALS):
        sc = make_scenario("shear10", seed=SEED0 + t)
        post = run_model_update(sc.system, synth_measurements(sc, INTACT), betas=sc.betas, seed=sc.seed)
        damaged = synth_measurements(sc, DAMAGED)
        res = run_damage_id(sc.system, post.theta_hat, damaged, betas=sc.betas, seed=sc.seed)
        runs.append((sc, post, damaged, res))
    return runs


@pytest.fixture(scope="module")
def truss_compare(tmp_path_factory):
    out = tmp_path_factory.mktemp("truss_compare")
    assert main(["generate", "--scenario", "truss31", "--seed", str(SEED0), "--out", str(out)]) == 0
    assert main(["compare", "--out", str(out), "--trials", str(TRUSS_TRIALS)]) == 0
    with open(out / "compare.csv") as f:
        table = list(csv.DictReader(f))
    est = {}
    with open(out / "compare_elements.csv") as f:
        for row in csv.DictReader(f):
            est.setdefault((int(row["trial"]), row["method"]), []).append(float(row["estimate"]))
    truth = make_scenario("truss31").theta_dmg_true
    return table, {k: np.array(v) for k, v in est.items()}, truth


def central_difference(system, theta, element, j, h):
    lam0, phi0 = full_eigensolution(apply_parameters(system, theta), system.mass)
    out = []
    for s in (1, -1):
        t = theta.copy()
        t[element] += s * h
        lam, phi = full_eigensolution(apply_parameters(system, t), system.mass)
        out.append((lam[j], phi[:, j] * np.sign(phi[:, j] @ system.mass @ phi0[:, j])))
    (lp, vp), (lm, vm) = out
    return (lp - lm) / (2 * h), (vp - vm) / (2 * h), (lam0, phi0)


def fd_derivatives(system, theta, element, j, h=1e-3):
    # Richardson-extrapolated central differences: O(h^4) truncation with a
    # step large enough that roundoff stays small for weakly coupled elements
    dl1, dp1, modes = central_difference(system, theta, element, j, h)
    dl2, dp2, _ = central_difference(system, theta, element, j, h / 2)
    return (4 * dl2 - dl1) / 3, (4 * dp2 - dp1) / 3, modes


def test_criterion_01_sensitivity_fd(report):
    worst = 0.0
    for name in ("shear10", "truss31"):
        sc = make_scenario(name, seed=SEED0)
        sys0, theta = sc.system, sc.theta_intact_true
        base = AssembledSystem(sys0.mass, apply_parameters(sys0, theta), sys0.element_k)
        rng = np.random.default_rng(SEED0)
        for _ in range(20):
            j, i = int(rng.integers(sc.n_modes)), int(rng.integers(sys0.n_ele))
            dlam_fd, dphi_fd, modes = fd_derivatives(sys0, theta, i, j)
            dlam = eigenvalue_derivative(base, modes[1][:, j], i)
            dphi = eigenvector_derivative(base, modes, j, i)
            worst = max(worst, abs(dlam - dlam_fd) / abs(dlam), np.linalg.norm(dphi - dphi_fd) / np.linalg.norm(dphi))
    assert report(1, worst <= 1e-4, f"max relative FD discrepancy {worst:.2e} over 40 pairs (limit 1e-4)")


def test_criterion_02_noiseless_identifiability(report):
    sc = make_scenario("shear10", seed=SEED0, noise_level=0.0, n_modes=10, sensor_dofs=tuple(range(10)), n_observations=1)
    post = run_model_update(sc.system, synth_measurements(sc, INTACT), n_samples=1000)
    err = float(np.max(np.abs(post.theta_hat - sc.theta_intact_true)))
    ok = err <= 1e-5 and post.converged and post.n_iterations <= 10
    assert report(2, ok, f"max error {err:.2e}, {post.n_iterations} iterations, converged={post.converged}")


def test_criterion_03_stage1_band(report, shear_pipeline):
    corrs, hits, total = [], 0, 0
    for sc, post, _, _ in shear_pipeline:
        corrs.append(np.corrcoef(post.theta_hat, sc.theta_intact_true)[0, 1])
        lo, hi = post.interval(1.96)
        hits += int(np.sum((lo <= sc.theta_intact_true) & (sc.theta_intact_true <= hi)))
        total += sc.system.n_ele
    med, cov = float(np.median(corrs)), hits / total
    ok = med >= 0.9 and 0.85 <= cov <= 1.0
    assert report(3, ok, f"median correlation {med:.3f} (>= 0.9), 95% coverage {cov:.3f} (in [0.85, 1])")


def test_criterion_04_shear_support(report, shear_pipeline):
    detected, worst_fp, worst_mag = 0, 0.0, 0.0
    for sc, _, _, res in shear_pipeline:
        dmg = sc.damage_support
        detected += set(dmg) <= set(res.support)
        undamaged = np.setdiff1d(np.arange(sc.system.n_ele), dmg)
        worst_fp = max(worst_fp, float(np.max(np.abs(res.theta_dmg[undamaged]))))
        worst_mag = max(worst_mag, float(np.max(np.abs(res.theta_dmg[dmg] - sc.theta_dmg_true[dmg]))))
    rate = detected / len(shear_pipeline)
    ok = rate >= 0.9 and worst_fp < 0.10 and worst_mag <= 0.07
    detail = f"support detected {rate:.2f} (>= 0.9), max false positive {worst_fp:.3f} (< 0.10), max magnitude error {worst_mag:.3f} (<= 0.07)"
    assert report(4, ok, detail)


def test_criterion_05_truss_localization(report, truss_compare):
    _, est, truth = truss_compare
    dmg = np.flatnonzero(truth)
    exact, worst = 0, 0.0
    for t in range(TRUSS_TRIALS):
        x = est[(t, "stls")]
        exact += np.flatnonzero(x).tolist() == dmg.tolist()
        worst = max(worst, float(np.max(np.abs(x[dmg] - truth[dmg]))))
    rate = exact / TRUSS_TRIALS
    ok = rate >= 0.8 and worst <= 0.05
    assert report(5, ok, f"exact support {rate:.2f} (>= 0.8), max magnitude error {worst:.3f} (<= 0.05)")


def test_criterion_06_regularizer_ordering(report, truss_compare):
    table, _, _ = truss_compare
    err = {(int(r["trial"]), r["method"]): float(r["relative_error"]) for r in table}
    ordered = np.mean([err[t, "stls"] < err[t, "lasso"] < err[t, "ridge"] for t in range(TRUSS_TRIALS)])
    med = {m: float(np.median([err[t, m] for t in range(TRUSS_TRIALS)])) for m in ("stls", "lasso", "ridge")}
    ok = ordered >= 0.8 and med["stls"] <= 0.10
    detail = f"ordered {ordered:.2f} (>= 0.8), median errors stls {med['stls']:.3f} (<= 0.10) lasso {med['lasso']:.3f} ridge {med['ridge']:.3f}"
    assert report(6, ok, detail)


def test_criterion_07_stls_optimality(report):
    rng = np.random.default_rng(SEED0)
    hits = 0
    for trial in range(100):
        n_ele = int(rng.integers(4, 13))
        k = int(rng.integers(1, 4))
        S = rng.normal(size=(n_ele + 8, n_ele))
        truth = np.zeros(n_ele)
        truth[rng.choice(n_ele, k, replace=False)] = rng.uniform(0.3, 1.0, k) * rng.choice([-1.0, 1.0], k)
        r = S @ truth
        cond = condition_number(S)
        best = stls_loss(r, S, np.zeros(n_ele), cond=cond)
        for size in range(1, k + 2):
            for supp in itertools.combinations(range(n_ele), size):
                x = np.zeros(n_ele)
                x[list(supp)] = np.linalg.lstsq(S[:, supp], r, rcond=None)[0]
                best = min(best, stls_loss(r, S, x, cond=cond))
        hits += stls(r, S, 0.2, seed=trial).loss <= best + 1e-9
    assert report(7, hits >= 95, f"{hits}/100 within 1e-9 of the brute-force minimum (>= 95)")


def test_criterion_08_bayes_opt_efficacy(report, shear_pipeline):
    wins, constant = 0, 0
    for sc, post, damaged, res in shear_pipeline[:BO_TRIALS]:
        err_bo = relative_error(res.theta_dmg, sc.theta_dmg_true)
        beaten = True
        for lam in (0.1, 0.2):
            try:
                fixed = run_damage_id(sc.system, post.theta_hat, damaged, betas=sc.betas, lam=lam, seed=sc.seed)
            except DamageIDError:
                continue  # a fixed threshold that breaks the model loses to the tuned one
            beaten &= err_bo <= relative_error(fixed.theta_dmg, sc.theta_dmg_true) + TIE
        wins += beaten
        constant += len(set(res.lambda_trace)) < 2
    rate = wins / BO_TRIALS
    ok = rate >= 0.7 and constant == 0
    assert report(8, ok, f"BO no worse than fixed lambda in {rate:.2f} of trials (>= 0.7), constant lambda traces {constant}")


def test_criterion_09_expected_improvement(report):
    rng = np.random.default_rng(SEED0)
    worst = 0.0
    for _ in range(20):
        mean, std, best = rng.normal(), rng.uniform(0.05, 2.0), rng.normal()
        gain = np.maximum(0.0, best - rng.normal(mean, std, 10_000_000))
        se = gain.std() / np.sqrt(gain.size)
        worst = max(worst, abs(ei_from_moments(mean, std, best) - gain.mean()) / se)
    assert report(9, worst <= 3.0, f"max deviation {worst:.2f} standard errors over 20 triples (<= 3)")


def test_criterion_10_posterior_covariance(report):
    sc = make_scenario("shear10", seed=SEED0)
    systems = [assemble_sensitivity(sc.system, np.zeros(10), md) for md in synth_measurements(sc, INTACT)]
    hp = HyperPriors()
    it = map_fixed_point(systems, hp)
    h = 1e-4
    x = it.delta_theta
    hess = np.zeros((10, 10))
    f = lambda d: objective(systems, hp, d, it.sigma2, it.alpha)  # noqa: E731
    for i in range(10):
        for j in range(10):
            ei, ej = np.eye(10)[i] * h, np.eye(10)[j] * h
            hess[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    expected = len(systems) * np.linalg.inv(hess)
    rel = float(np.linalg.norm(posterior_covariance(systems, it) - expected) / np.linalg.norm(expected))
    assert report(10, rel <= 1e-6, f"relative difference {rel:.2e} (<= 1e-6)")


def test_criterion_11_convergence_speed(report, shear_pipeline, truss_compare):
    table, _, _ = truss_compare
    iters = {"shear stage 1": [], "shear stage 2": [], "truss stage 1": [], "truss stage 2": []}
    converged = True
    for _, post, _, res in shear_pipeline:
        iters["shear stage 1"].append(post.n_iterations)
        iters["shear stage 2"].append(res.n_iterations)
        converged &= post.converged and res.converged
    for t in range(5):
        sc = make_scenario("truss31", seed=SEED0 + t)
        post = run_model_update(sc.system, synth_measurements(sc, INTACT), betas=sc.betas, seed=sc.seed)
        iters["truss stage 1"].append(post.n_iterations)
        converged &= post.converged
    for row in table:
        if row["method"] == "stls":
            iters["truss stage 2"].append(int(row["n_iterations"]))
            converged &= row["converged"] == "1"
    worst = {k: max(v) for k, v in iters.items()}
    ok = converged and max(worst.values()) <= 20
    status = "all converged" if converged else "NOT all converged"
    assert report(11, ok, f"{status}; max iterations {worst} (<= 20)")
