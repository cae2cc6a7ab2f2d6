"""Tests for process specifications, simulation, and exact reference objects."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.stats import kstest

from ergolab.errors import BlowUpError, ConfigError, DomainError
from ergolab.processes import (
    BackwardRecurrence,
    CompoundPoisson,
    ConstantControl,
    DiscreteJumps,
    GenericIto,
    LangevinTempered,
    LevyMeasureSpec,
    MarkovControl,
    NoJumps,
    NonlinearSS,
    OUJump,
    PiecewiseOU,
    StableSubordinatorMeasure,
    SymmetricStable,
    TrajectoryBatch,
    invariant_exact,
    langevin_coeffs,
    langevin_density,
    ou_exact_transition,
    piecewise_drift,
    sample_stable,
    simulate,
    spec_fingerprint,
    standard_one_sided_stable,
)


# ---------------------------------------------------------------------------
# specification validation
# ---------------------------------------------------------------------------


def test_levy_measure_validation():
    with pytest.raises(ConfigError):
        LevyMeasureSpec(a_L=np.array([[1.0, 0.5], [0.2, 1.0]]))  # not symmetric
    with pytest.raises(ConfigError):
        LevyMeasureSpec(a_L=np.array([[1.0, 2.0], [2.0, 1.0]]))  # not PSD
    with pytest.raises(ConfigError):
        DiscreteJumps(atoms=np.array([1.0, -1.0]), probs=np.array([0.6, 0.6]))
    with pytest.raises(ConfigError):
        CompoundPoisson(rate=0.0, jump_dist=DiscreteJumps([1.0], [1.0]))
    with pytest.raises(ConfigError):
        SymmetricStable(alpha=2.0)
    with pytest.raises(ConfigError):
        StableSubordinatorMeasure(alpha=1.0)


def test_theta_class():
    assert LevyMeasureSpec().theta_class().theta_sup == math.inf
    tc = LevyMeasureSpec(kind=SymmetricStable(alpha=1.3)).theta_class()
    assert tc.theta_sup == 1.3 and tc.exp_rate is None
    cp = LevyMeasureSpec(
        kind=CompoundPoisson(rate=2.0, jump_dist=DiscreteJumps([2.0], [1.0]))
    ).theta_class()
    assert cp.theta_sup == math.inf and cp.exp_rate == math.inf
    sub = LevyMeasureSpec(kind=StableSubordinatorMeasure(alpha=0.5)).theta_class()
    assert sub.theta_sup == 0.5


def test_markov_control_requires_local_lipschitz():
    with pytest.raises(ConfigError):
        MarkovControl(fn=lambda x: x, locally_lipschitz=False)
    MarkovControl(fn=lambda x: x)  # accepted


def test_piecewise_ou_validation():
    levy = LevyMeasureSpec()
    ok = dict(
        l=np.zeros(2),
        M=np.eye(2),
        Gamma=np.eye(2),
        control=ConstantControl(np.array([1.0, 0.0])),
        sigma=None,
        levy=levy,
    )
    PiecewiseOU(**ok)
    with pytest.raises(ConfigError):  # control off the simplex
        ConstantControl(np.array([0.5, 0.1]))
    with pytest.raises(ConfigError):  # positive off-diagonal: not an M-matrix
        PiecewiseOU(**{**ok, "M": np.array([[1.0, 0.5], [0.0, 1.0]])})
    with pytest.raises(ConfigError):  # eigenvalue in the left half-plane
        PiecewiseOU(**{**ok, "M": np.array([[-1.0, 0.0], [0.0, 1.0]])})
    with pytest.raises(ConfigError):  # e'M has a negative component
        PiecewiseOU(**{**ok, "M": np.array([[1.0, -2.0], [0.0, 1.0]])})
    with pytest.raises(ConfigError):  # Gamma not nonnegative diagonal
        PiecewiseOU(**{**ok, "Gamma": np.array([[1.0, 0.2], [0.2, 1.0]])})


def test_backward_recurrence_validation_and_up_prob():
    with pytest.raises(ConfigError):
        BackwardRecurrence(alpha=1.0, i0=4)
    with pytest.raises(ConfigError):
        BackwardRecurrence(alpha=2.0, i0=3)  # needs i0 > 1 + alpha
    spec = BackwardRecurrence(alpha=2.0, i0=4)
    assert spec.up_prob(np.array([0.0]))[0] == 1.0
    assert spec.up_prob(np.array([2.0]))[0] == 0.5
    assert spec.up_prob(np.array([10.0]))[0] == pytest.approx(0.7)


def test_langevin_validation():
    with pytest.raises(ConfigError):
        LangevinTempered(alpha=0.6, beta=0.0, dim=2)  # alpha >= 1/n
    with pytest.raises(ConfigError):
        LangevinTempered(alpha=0.25, beta=0.9, dim=1)  # beta above the cap
    with pytest.raises(ConfigError):
        NonlinearSS(F=lambda x: x, noise=lambda r, m: np.zeros(m), c_bar=-1.0,
                    c_tilde=1.0, eps_bar=1.0, r_bar=1.0)


# ---------------------------------------------------------------------------
# stable sampling
# ---------------------------------------------------------------------------


def test_stable_alpha2_is_gaussian_variance():
    x = sample_stable(alpha=2.0, skew=0.0, scale=0.7, n=1_000_000, seed=11)
    assert np.var(x) == pytest.approx(2 * 0.7**2, rel=0.02)
    assert np.mean(x) == pytest.approx(0.0, abs=0.01)


def test_stable_alpha1_is_cauchy():
    x = sample_stable(alpha=1.0, skew=0.0, scale=1.0, n=1_000_000, seed=7)
    stat = kstest(x, "cauchy").statistic
    assert stat < 0.005


def test_stable_one_sided_positive():
    x = sample_stable(alpha=0.5, skew=1.0, scale=1.0, n=100_000, seed=3)
    assert np.all(x > 0)


def test_stable_domain_checks():
    with pytest.raises(DomainError):
        sample_stable(alpha=2.5, skew=0.0, scale=1.0, n=10, seed=0)
    with pytest.raises(DomainError):
        sample_stable(alpha=1.0, skew=2.0, scale=1.0, n=10, seed=0)
    with pytest.raises(DomainError):
        sample_stable(alpha=1.0, skew=0.0, scale=-1.0, n=10, seed=0)


def test_standard_one_sided_stable_laplace_transform():
    rng = np.random.Generator(np.random.Philox(99))
    s = standard_one_sided_stable(0.5, rng, 1_000_000)
    for u in (0.5, 1.0, 2.0):
        emp = np.mean(np.exp(-u * s))
        assert emp == pytest.approx(math.exp(-(u**0.5)), rel=0.01)


# ---------------------------------------------------------------------------
# exact invariant distribution of the backward recurrence chain
# ---------------------------------------------------------------------------


def test_invariant_exact_frozen_values():
    # independent series oracle (exact rational summation) for alpha=2, i0=4:
    # normalizer c = 15/16, so pi(0) = pi(1) = 16/47, pi(2) = 8/47,
    # pi(3) = 4/47, pi(4) = 2/47, pi(5) = 1/94
    spec = BackwardRecurrence(alpha=2.0, i0=4)
    mu = invariant_exact(spec, truncation=600_000)
    w = mu.weights
    assert w[0] == pytest.approx(16 / 47, abs=1e-12)
    assert w[1] == pytest.approx(16 / 47, abs=1e-12)
    assert w[2] == pytest.approx(8 / 47, abs=1e-12)
    assert w[3] == pytest.approx(4 / 47, abs=1e-12)
    assert w[4] == pytest.approx(2 / 47, abs=1e-12)
    assert w[5] == pytest.approx(1 / 94, abs=1e-12)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert w[1] / w[0] == pytest.approx(1.0, abs=1e-14)
    assert np.array_equal(mu.points[:3, 0], [0.0, 1.0, 2.0])


def test_invariant_exact_tail_gate():
    spec = BackwardRecurrence(alpha=2.0, i0=4)
    with pytest.raises(ConfigError):
        invariant_exact(spec, truncation=100)


# ---------------------------------------------------------------------------
# OU transition law
# ---------------------------------------------------------------------------


def test_ou_exact_transition_t0():
    mean, cov = ou_exact_transition(np.array([[-1.0]]), np.array([[2.0]]), 0.0, [3.0])
    assert mean[0] == 3.0
    assert cov[0, 0] == 0.0


def test_ou_exact_transition_1d_limit():
    # dX = -X dt + sqrt(2) dB has stationary variance 1
    mean, cov = ou_exact_transition([[-1.0]], [[2.0]], 40.0, [5.0])
    assert abs(mean[0]) < 1e-12
    assert cov[0, 0] == pytest.approx(1.0, abs=1e-12)
    _, cov_t = ou_exact_transition([[-1.0]], [[2.0]], 0.7, [5.0])
    assert cov_t[0, 0] == pytest.approx(1.0 - math.exp(-1.4), abs=1e-12)


def test_ou_exact_transition_matches_quadrature():
    h = np.array([[-1.0, 0.5], [0.0, -2.0]])
    a = np.array([[1.0, 0.3], [0.3, 2.0]])
    t = 0.7
    _, cov = ou_exact_transition(h, a, t, [0.0, 0.0])

    def integrand(s, i, j):
        e = expm(h * s)
        return (e @ a @ e.T)[i, j]

    for i in range(2):
        for j in range(2):
            ref, _ = quad(integrand, 0.0, t, args=(i, j), epsabs=1e-12, epsrel=1e-12)
            assert cov[i, j] == pytest.approx(ref, abs=1e-8)


def test_ou_simulated_mean_within_mc_band():
    spec = OUJump(H=np.array([[-1.0]]), levy=LevyMeasureSpec(a_L=np.array([[2.0]])))
    batch = simulate(spec, x0=[2.0], t_grid=[0.0, 1.0], n_paths=4000, seed=21, max_step=0.05)
    xs = batch.marginal(1)[:, 0]
    mean, cov = ou_exact_transition([[-1.0]], [[2.0]], 1.0, [2.0])
    se = xs.std(ddof=1) / math.sqrt(len(xs))
    assert abs(xs.mean() - mean[0]) < 3 * se
    assert xs.var(ddof=1) == pytest.approx(cov[0, 0], rel=0.1)


# ---------------------------------------------------------------------------
# piecewise drift
# ---------------------------------------------------------------------------


def test_piecewise_drift_frozen_examples():
    # all-ones state with l = 0, M = Gamma = I, v = e1 gives -x
    b = piecewise_drift(np.zeros(2), np.eye(2), np.eye(2), [1.0, 0.0], [1.0, 1.0])
    assert np.allclose(b, [-1.0, -1.0], atol=1e-15)
    # nonpositive total: plain OU drift l - Mx
    l = np.array([0.3, 0.4])
    m = np.array([[2.0, -1.0], [-0.5, 3.0]])
    x = np.array([-1.0, -0.5])
    b2 = piecewise_drift(l, m, np.eye(2), [0.5, 0.5], x)
    assert np.allclose(b2, l - m @ x, atol=1e-15)
    # at the origin the drift is l
    b3 = piecewise_drift(l, m, np.eye(2), [0.5, 0.5], np.zeros(2))
    assert np.allclose(b3, l, atol=1e-15)


def test_piecewise_drift_batch_matches_single():
    rng = np.random.default_rng(5)
    l = rng.normal(size=3)
    m = np.eye(3) * 2.0
    g = np.diag([0.5, 1.0, 1.5])
    v = np.array([0.2, 0.3, 0.5])
    xs = rng.normal(size=(40, 3))
    batch = piecewise_drift(l, m, g, v, xs)
    for i in range(40):
        assert np.allclose(batch[i], piecewise_drift(l, m, g, v, xs[i]), atol=1e-14)


def test_piecewise_drift_global_lipschitz():
    rng = np.random.default_rng(17)
    m = np.array([[2.0, -0.3], [-0.4, 3.0]])
    g = np.diag([0.5, 2.0])
    v = np.array([0.7, 0.3])
    k_const = np.linalg.norm(m, 2) + np.linalg.norm(
        (m - g) @ np.outer(v, np.ones(2)), 2
    )
    for _ in range(200):
        x, y = rng.normal(scale=5.0, size=(2, 2))
        dx = piecewise_drift(np.zeros(2), m, g, v, x) - piecewise_drift(
            np.zeros(2), m, g, v, y
        )
        assert np.linalg.norm(dx) <= k_const * np.linalg.norm(x - y) + 1e-9


# ---------------------------------------------------------------------------
# Langevin coefficients
# ---------------------------------------------------------------------------


def test_langevin_density_normalized_1d():
    spec = LangevinTempered(alpha=0.25, beta=0.0, dim=1)
    total, _ = quad(lambda r: langevin_density(spec, [[r]])[0], -30.0, 30.0, limit=400)
    # tail beyond 30: 2c * int_30^inf r^-4 dr
    c = langevin_density(spec, [[1.0]])[0]
    tail = 2 * c * 30.0 ** (-3) / 3.0
    assert total + tail == pytest.approx(1.0, abs=1e-6)


def test_langevin_drift_zero_at_beta_half():
    spec = LangevinTempered(alpha=0.2, beta=0.5, dim=1)
    xs = np.linspace(-4.0, 4.0, 33)[:, None]
    b, _ = langevin_coeffs(spec, xs)
    assert np.max(np.abs(b)) < 1e-14


def test_langevin_drift_outside_ball_formula():
    # for beta = 0 the drift is (1/2) grad log pi = -(1/(2 alpha)) x / |x|^2
    spec = LangevinTempered(alpha=0.25, beta=0.0, dim=1)
    b, sig = langevin_coeffs(spec, np.array([2.0]))
    assert b[0] == pytest.approx(-(1.0 / (2 * 0.25)) / 2.0, abs=1e-14)
    assert sig[0] == pytest.approx(1.0, abs=1e-14)  # sigma = pi^0 = 1


def test_langevin_sigma_symmetric():
    spec = LangevinTempered(alpha=0.2, beta=0.3, dim=1)
    xs = np.array([[0.3], [0.9], [1.5], [4.0]])
    _, s_pos = langevin_coeffs(spec, xs)
    _, s_neg = langevin_coeffs(spec, -xs)
    assert np.allclose(s_pos, s_neg, atol=1e-14)


def test_langevin_density_c2_at_ball_boundary():
    spec = LangevinTempered(alpha=0.25, beta=0.0, dim=1)
    h = 1e-5
    inner = langevin_density(spec, [[1.0 - h]])[0]
    outer = langevin_density(spec, [[1.0 + h]])[0]
    mid = langevin_density(spec, [[1.0]])[0]
    # continuity and matching first derivative across |x| = 1
    assert inner == pytest.approx(mid * (1 - h) ** (-4), rel=1e-6)
    assert outer == pytest.approx(mid * (1 + h) ** (-4), rel=1e-6)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def test_simulate_deterministic_given_seed():
    spec = GenericIto(
        b=lambda x: -x,
        sigma=np.array([[1.0]]),
        levy=LevyMeasureSpec(),
        dim=1,
    )
    a = simulate(spec, [1.0], [0.0, 0.5, 1.0], n_paths=64, seed=42, max_step=0.05)
    b = simulate(spec, [1.0], [0.0, 0.5, 1.0], n_paths=64, seed=42, max_step=0.05)
    c = simulate(spec, [1.0], [0.0, 0.5, 1.0], n_paths=64, seed=43, max_step=0.05)
    assert np.array_equal(a.paths, b.paths)
    assert not np.array_equal(a.paths, c.paths)
    assert a.spec_hash == b.spec_hash


def test_simulate_initial_condition_and_grid_checks():
    spec = OUJump(H=np.array([[-1.0]]), levy=LevyMeasureSpec())
    batch = simulate(spec, [3.0], [0.0, 1.0], n_paths=5, seed=0)
    assert np.all(batch.paths[:, 0, 0] == 3.0)
    with pytest.raises(ConfigError):
        simulate(spec, [3.0], [1.0, 0.5], n_paths=5, seed=0)
    with pytest.raises(ConfigError):
        simulate(spec, [3.0], [0.0, 1.0], n_paths=0, seed=0)


def test_simulate_linear_ode_exact():
    # no noise: OUJump integrates the drift exactly, so X(t) = x0 e^{-t}
    spec = OUJump(H=np.array([[-1.0]]), levy=LevyMeasureSpec())
    batch = simulate(spec, [2.0], [0.0, 0.5, 1.0, 2.0], n_paths=3, seed=1)
    for k, t in enumerate([0.0, 0.5, 1.0, 2.0]):
        assert batch.paths[:, k, 0] == pytest.approx(2.0 * math.exp(-t), abs=1e-12)


def test_simulate_piecewise_single_euler_step_exact():
    l = np.array([0.3, 0.4])
    m = np.array([[2.0, -1.0], [-0.5, 3.0]])
    g = np.diag([1.0, 1.0])
    v = np.array([0.5, 0.5])
    spec = PiecewiseOU(
        l=l, M=m, Gamma=g, control=ConstantControl(v), sigma=None, levy=LevyMeasureSpec()
    )
    x0 = np.array([1.0, -0.2])
    batch = simulate(spec, x0, [0.0, 0.01], n_paths=2, seed=9, max_step=0.01)
    expected = x0 + piecewise_drift(l, m, g, v, x0) * 0.01
    assert np.array_equal(batch.paths[0, 1], expected)


def test_simulate_euler_weak_error_halves():
    # mean error of the explicit Euler scheme for dX = -X dt at t = 1
    spec = GenericIto(b=lambda x: -x, sigma=None, levy=LevyMeasureSpec(), dim=1)
    exact = math.exp(-1.0)
    errs = []
    for dt in (0.1, 0.05):
        batch = simulate(spec, [1.0], [0.0, 1.0], n_paths=1, seed=0, max_step=dt)
        errs.append(abs(batch.paths[0, 1, 0] - exact))
    assert 1.6 <= errs[0] / errs[1] <= 2.4

    # variance: the sampled Euler variance matches the exact Euler recursion,
    # whose error against the true OU variance also halves with dt
    spec_noise = GenericIto(
        b=lambda x: -x, sigma=np.array([[1.0]]), levy=LevyMeasureSpec(), dim=1
    )
    v_true = (1.0 - math.exp(-2.0)) / 2.0
    v_rec = {}
    for dt in (0.1, 0.05):
        v = 0.0
        for _ in range(round(1.0 / dt)):
            v = (1.0 - dt) ** 2 * v + dt
        v_rec[dt] = v
    ratio = abs(v_rec[0.1] - v_true) / abs(v_rec[0.05] - v_true)
    assert 1.6 <= ratio <= 2.4
    batch = simulate(spec_noise, [0.0], [0.0, 1.0], n_paths=200_000, seed=5, max_step=0.1)
    sample_var = batch.marginal(1)[:, 0].var(ddof=1)
    se = v_rec[0.1] * math.sqrt(2.0 / 200_000)
    assert abs(sample_var - v_rec[0.1]) < 4 * se


def test_simulate_compound_poisson_rate():
    # pure CP with unit jumps: X(t) is Poisson(rate * t)
    levy = LevyMeasureSpec(
        kind=CompoundPoisson(rate=2.0, jump_dist=DiscreteJumps([1.0], [1.0]))
    )
    spec = GenericIto(b=None, sigma=None, levy=levy, dim=1)
    batch = simulate(spec, [0.0], [0.0, 1.0], n_paths=20_000, seed=8, max_step=0.05)
    xs = batch.marginal(1)[:, 0]
    assert xs.mean() == pytest.approx(2.0, rel=0.05)
    assert xs.var(ddof=1) == pytest.approx(2.0, rel=0.05)
    assert np.all(xs == np.round(xs))


def test_simulate_subordinator_paths_nondecreasing():
    levy = LevyMeasureSpec(kind=StableSubordinatorMeasure(alpha=0.5))
    spec = GenericIto(b=None, sigma=None, levy=levy, dim=1)
    batch = simulate(spec, [0.0], [0.0, 0.5, 1.0], n_paths=500, seed=4, max_step=0.02)
    diffs = np.diff(batch.paths[:, :, 0], axis=1)
    assert np.all(diffs >= 0)


def test_simulate_stable_increment_scaling():
    # pure symmetric stable flight at alpha = 2 reduces to Brownian motion
    levy = LevyMeasureSpec(kind=SymmetricStable(alpha=1.99999999, scale=1.0))
    spec = GenericIto(b=None, sigma=None, levy=levy, dim=1)
    batch = simulate(spec, [0.0], [0.0, 1.0], n_paths=50_000, seed=6, max_step=0.05)
    xs = batch.marginal(1)[:, 0]
    assert xs.var(ddof=1) == pytest.approx(2.0, rel=0.05)


def test_simulate_blowup_guard():
    spec = GenericIto(b=lambda x: x**3, sigma=None, levy=LevyMeasureSpec(), dim=1)
    with pytest.raises(BlowUpError):
        simulate(spec, [10.0], [0.0, 1.0], n_paths=2, seed=0, max_step=0.01)


def test_simulate_nonlinear_ss_exact_recursion():
    spec = NonlinearSS(
        F=lambda x: 0.5 * x,
        noise=lambda rng, m: np.zeros((m, 1)),
        c_bar=1.0,
        c_tilde=1.0,
        eps_bar=0.5,
        r_bar=1.0,
        dim=1,
    )
    batch = simulate(spec, [8.0], [0, 1, 2, 3], n_paths=2, seed=0)
    assert np.allclose(batch.paths[0, :, 0], [8.0, 4.0, 2.0, 1.0], atol=0)
    with pytest.raises(ConfigError):
        simulate(spec, [8.0], [0.0, 0.5, 1.0], n_paths=2, seed=0)


def test_simulate_backward_recurrence_first_step_up():
    spec = BackwardRecurrence(alpha=2.0, i0=4)
    batch = simulate(spec, [0.0], [0, 1], n_paths=50, seed=12)
    assert np.all(batch.paths[:, 1, 0] == 1.0)  # p_0 = 1


def test_backward_recurrence_occupation_matches_invariant():
    spec = BackwardRecurrence(alpha=2.0, i0=4)
    n_paths, burn, horizon = 400, 200, 5200
    batch = simulate(spec, [0.0], list(range(0, horizon + 1)), n_paths=n_paths, seed=77)
    states = batch.paths[:, burn:, 0].ravel().astype(int)
    mu = invariant_exact(spec, truncation=600_000)
    counts = np.bincount(states, minlength=mu.weights.shape[0])
    emp = counts / counts.sum()
    tv = 0.5 * np.sum(np.abs(emp[: mu.weights.shape[0]] - mu.weights))
    assert tv < 0.01


# ---------------------------------------------------------------------------
# trajectory container serialization
# ---------------------------------------------------------------------------


def test_trajectory_binary_roundtrip(tmp_path):
    spec = OUJump(H=np.array([[-1.0]]), levy=LevyMeasureSpec(a_L=np.array([[1.0]])))
    batch = simulate(spec, [1.0], [0.0, 0.5, 1.0], n_paths=7, seed=3, max_step=0.1)
    path = tmp_path / "batch.bin"
    batch.to_binary(path)
    loaded = TrajectoryBatch.from_binary(path)
    assert np.array_equal(loaded.times, batch.times)
    assert np.array_equal(loaded.paths, batch.paths)
    assert loaded.spec_hash == batch.spec_hash
    assert loaded.seed == batch.seed


def test_trajectory_csv_export(tmp_path):
    spec = OUJump(H=np.array([[-1.0]]), levy=LevyMeasureSpec())
    batch = simulate(spec, [1.0], [0.0, 1.0], n_paths=3, seed=3)
    path = tmp_path / "batch.csv"
    batch.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "path,time,x1"
    assert len(lines) == 1 + 3 * 2


def test_spec_fingerprint_distinguishes_parameters():
    a = spec_fingerprint(BackwardRecurrence(alpha=2.0, i0=4))
    b = spec_fingerprint(BackwardRecurrence(alpha=2.0, i0=5))
    c = spec_fingerprint(BackwardRecurrence(alpha=2.0, i0=4))
    assert a != b
    assert a == c
