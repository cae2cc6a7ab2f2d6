"""Tests for synchronous-coupling experiments and the dissipativity calculus.

Hand-derived oracles:

* scalar queueing drift ``m, gamma > 0``: the two dissipativity matrices
  reduce to ``(2m, 2 gamma)``, so ``c(2) = 2 min(m, gamma)``;
* 2-D case ``M = I``, ``Gamma = diag(2, 3)``, ``v = e1``, ``Q = I``: the
  second matrix is ``[[4, 1], [1, 2]]`` with smallest eigenvalue
  ``3 - sqrt(2)``, which is below ``2`` (the first matrix's), so
  ``c(2) = 3 - sqrt(2)``;
* linear drift ``b(x) = Hx``: the dissipativity left side is
  ``2 <Hz, Qz>`` exactly; with ``Q = I`` this is ``<(H + H')z, z>``;
* a 1-D Ornstein-Uhlenbeck pair coupled through shared noise has difference
  path ``(x - y) e^{-t}`` up to floating-point roundoff, so the fitted decay
  rate equals 1 and the p-moment curve equals ``|x - y| e^{-t}``.
"""

import csv
import math

import numpy as np
import pytest
from scipy import stats

from ergolab.coupling import (
    CoupledBatch,
    CouplingReport,
    DiagonalGrid,
    DissipativityParams,
    NotFound,
    contraction_estimate,
    dissipativity_lhs,
    find_q,
    prop35_cp,
    synchronous_pair_sim,
)
from ergolab.errors import (
    ConfigError,
    DomainError,
    InsufficientPathsError,
    IntegrabilityError,
    NotDissipativeError,
)
from ergolab.lyapunov import QuadForm
from ergolab.processes import (
    CompoundPoisson,
    ConstantControl,
    DiscreteJumps,
    GenericIto,
    LevyMeasureSpec,
    OUJump,
    PiecewiseOU,
    simulate,
)


def _ou_1d(noise=1.0):
    a_l = np.array([[noise]]) if noise else None
    return OUJump(H=np.array([[-1.0]]), levy=LevyMeasureSpec(a_L=a_l))


def _scalar_queue(sigma=0.8, rate=1.0):
    jumps = DiscreteJumps(np.array([[1.0], [-1.0]]), np.array([0.5, 0.5]))
    return PiecewiseOU(
        l=np.array([0.5]),
        M=np.array([[1.0]]),
        Gamma=np.array([[1.0]]),
        control=ConstantControl(np.array([1.0])),
        sigma=np.array([[sigma]]),
        levy=LevyMeasureSpec(kind=CompoundPoisson(rate, jumps)),
    )


# ---------------------------------------------------------------------------
# prop35_cp
# ---------------------------------------------------------------------------


def test_prop35_cp_scalar_oracle():
    q = QuadForm(np.array([[1.0]]))
    got = prop35_cp(np.array([[1.5]]), np.array([[0.7]]), np.array([1.0]), q, 0.0, 2.0)
    assert got == pytest.approx(2.0 * min(1.5, 0.7), abs=1e-14)


def test_prop35_cp_matrix_oracle_2d():
    # M = I, Gamma = diag(2, 3), v = e1: second matrix [[4, 1], [1, 2]],
    # eigenvalues 3 +- sqrt(2); first matrix 2I.  kappa = 3 - sqrt(2).
    q = QuadForm(np.eye(2))
    got = prop35_cp(np.eye(2), np.diag([2.0, 3.0]), np.array([1.0, 0.0]), q, 0.0, 2.0)
    assert got == pytest.approx(3.0 - math.sqrt(2.0), abs=1e-12)


def test_prop35_cp_linear_in_p_without_diffusion():
    q = QuadForm(np.array([[1.0]]))
    m, g = np.array([[2.0]]), np.array([[1.2]])
    kappa = 2.0 * 1.2
    for p in (1.0, 2.0, 3.5):
        got = prop35_cp(m, g, np.array([1.0]), q, 0.0, p)
        assert got == pytest.approx(p * kappa / 2.0, abs=1e-14)


def test_prop35_cp_diffusion_penalty():
    # c(3) = (3/2)(2/1 - 2 * 0.25/1) = 2.25 for m = gamma = 1, lip = 0.5.
    q = QuadForm(np.array([[1.0]]))
    got = prop35_cp(np.array([[1.0]]), np.array([[1.0]]), np.array([1.0]), q, 0.5, 3.0)
    assert got == pytest.approx(2.25, abs=1e-14)


def test_prop35_cp_gamma_zero_not_dissipative():
    q = QuadForm(np.array([[1.0]]))
    with pytest.raises(NotDissipativeError):
        prop35_cp(np.array([[1.0]]), np.array([[0.0]]), np.array([1.0]), q, 0.0, 2.0)


def test_prop35_cp_indefinite_first_matrix():
    # MQ + QM has symmetric part [[2, -3], [-3, 2]] with eigenvalue -1.
    q = QuadForm(np.eye(2))
    m = np.array([[1.0, -3.0], [0.0, 1.0]])
    with pytest.raises(NotDissipativeError):
        prop35_cp(m, np.eye(2), np.array([1.0, 0.0]), q, 0.0, 2.0)


def test_prop35_cp_may_return_nonpositive_rate():
    # Large diffusion Lipschitz constant: caller must check the sign.
    q = QuadForm(np.array([[1.0]]))
    got = prop35_cp(np.array([[1.0]]), np.array([[1.0]]), np.array([1.0]), q, 5.0, 2.0)
    assert got < 0


def test_dissipativity_params_validation_and_envelope():
    q = QuadForm(np.diag([4.0, 1.0]))
    params = DissipativityParams(q=q, p=2.0, c_p=2.0)
    t = np.array([0.0, 1.0])
    env = params.envelope(t, 3.0)
    assert env == pytest.approx([6.0, 6.0 * math.exp(-1.0)], rel=1e-14)
    with pytest.raises(DomainError):
        DissipativityParams(q=q, p=0.5, c_p=1.0)


# ---------------------------------------------------------------------------
# dissipativity_lhs
# ---------------------------------------------------------------------------


def _linear_spec(h, levy=None):
    mat = np.atleast_2d(np.asarray(h, dtype=float))
    return GenericIto(
        b=lambda x: x @ mat.T,
        sigma=None,
        levy=levy if levy is not None else LevyMeasureSpec(),
        dim=mat.shape[0],
    )


def test_dissipativity_lhs_linear_drift_closed_form():
    h = np.array([[-1.0, 0.5], [0.0, -2.0]])
    qm = np.array([[2.0, 0.3], [0.3, 1.0]])
    q = QuadForm(qm)
    x = np.array([0.3, 0.9])
    z = np.array([0.7, -1.2])
    got = dissipativity_lhs(_linear_spec(h), q, 2.0, x, z)
    assert got == pytest.approx(2.0 * (h @ z) @ (qm @ z), abs=1e-13)


def test_dissipativity_lhs_identity_q_symmetrized_drift():
    h = np.array([[-1.0, 2.0, 0.1], [0.0, -3.0, 0.5], [0.2, 0.0, -0.7]])
    q = QuadForm(np.eye(3))
    z = np.array([0.4, -1.1, 0.9])
    got = dissipativity_lhs(_linear_spec(h), q, 2.0, np.zeros(3), z)
    assert got == pytest.approx((h + h.T) @ z @ z, abs=1e-13)


def test_dissipativity_lhs_scalar_ou_meets_contraction_bound():
    q = QuadForm(np.array([[1.0]]))
    got = dissipativity_lhs(_linear_spec([[-1.0]]), q, 2.0, np.array([0.7]), np.array([1.0]))
    assert got == pytest.approx(-2.0, abs=1e-14)
    c2 = prop35_cp(np.array([[1.0]]), np.array([[1.0]]), np.array([1.0]), q, 0.0, 2.0)
    assert got <= -(2.0 * c2 / 2.0) * 1.0 + 1e-14


def test_dissipativity_lhs_state_dependent_diffusion():
    # b(x) = -x, sigma(x) = x, p = 2, Q = 1: LHS = -2 z^2 + z^2 = -z^2.
    spec = GenericIto(b=lambda x: -x, sigma=lambda x: 1.0 * x, levy=LevyMeasureSpec(), dim=1)
    q = QuadForm(np.array([[1.0]]))
    z = 1.5
    got = dissipativity_lhs(spec, q, 2.0, np.array([0.4]), np.array([z]))
    assert got == pytest.approx(-z * z, abs=1e-13)


def test_dissipativity_lhs_state_independent_jumps_add_nothing():
    levy = LevyMeasureSpec(
        kind=CompoundPoisson(2.0, DiscreteJumps(np.array([[0.5]]), np.array([1.0])))
    )
    q = QuadForm(np.array([[1.0]]))
    x, z = np.array([0.7]), np.array([1.3])
    without = dissipativity_lhs(_linear_spec([[-1.0]]), q, 2.0, x, z)
    with_jumps = dissipativity_lhs(_linear_spec([[-1.0]], levy), q, 2.0, x, z)
    assert with_jumps == without


def test_dissipativity_lhs_multiplicative_jump_oracle():
    # k(x, v) = x v with marks +-1, weight 1 each, b(x) = -x, p = 2, Q = 1:
    # drift term -2 z^2, each jump integral equals 2 z^2 with coefficient 1/2,
    # so the total vanishes.
    spec = GenericIto(b=lambda x: -x, sigma=None, levy=LevyMeasureSpec(), dim=1)
    q = QuadForm(np.array([[1.0]]))
    got = dissipativity_lhs(
        spec,
        q,
        2.0,
        np.array([0.4]),
        np.array([1.0]),
        jump_coeff=lambda x, v: v * x,
        jump_marks=np.array([1.0, -1.0]),
        jump_weights=np.array([1.0, 1.0]),
    )
    assert got == pytest.approx(0.0, abs=1e-12)


def test_dissipativity_lhs_asymmetric_marks_compensate_drift():
    # Single mark v = 1, weight 2: the large-jump compensation enters the
    # drift difference.  k(1.4, 1) = 1.4 leaves the unit ball, k(0.4, 1)
    # does not: Delta btilde = -1 + 2 * 1.4 = 1.8, jump integrals both 2.
    # LHS = 2 * 1.8 + 1 + 1 = 5.6.
    spec = GenericIto(b=lambda x: -x, sigma=None, levy=LevyMeasureSpec(), dim=1)
    q = QuadForm(np.array([[1.0]]))
    got = dissipativity_lhs(
        spec,
        q,
        2.0,
        np.array([0.4]),
        np.array([1.0]),
        jump_coeff=lambda x, v: v * x,
        jump_marks=np.array([1.0]),
        jump_weights=np.array([2.0]),
    )
    assert got == pytest.approx(5.6, abs=1e-12)


def test_dissipativity_lhs_jump_coeff_requires_marks():
    spec = GenericIto(b=lambda x: -x, sigma=None, levy=LevyMeasureSpec(), dim=1)
    q = QuadForm(np.array([[1.0]]))
    with pytest.raises(IntegrabilityError):
        dissipativity_lhs(
            spec, q, 2.0, np.array([0.0]), np.array([1.0]), jump_coeff=lambda x, v: v * x
        )


def test_dissipativity_lhs_jump_coeff_rejected_at_p_one():
    spec = GenericIto(b=lambda x: -x, sigma=None, levy=LevyMeasureSpec(), dim=1)
    q = QuadForm(np.array([[1.0]]))
    with pytest.raises(IntegrabilityError):
        dissipativity_lhs(
            spec,
            q,
            1.0,
            np.array([0.0]),
            np.array([1.0]),
            jump_coeff=lambda x, v: v * x,
            jump_marks=np.array([1.0]),
            jump_weights=np.array([1.0]),
        )


def test_dissipativity_lhs_zero_displacement():
    q = QuadForm(np.array([[1.0]]))
    got = dissipativity_lhs(_linear_spec([[-1.0]]), q, 2.0, np.array([0.3]), np.array([0.0]))
    assert got == 0.0


def test_dissipativity_lhs_quadratic_homogeneity():
    h = np.array([[-1.0, 0.4], [0.2, -2.0]])
    spec = GenericIto(b=lambda x: x @ h.T, sigma=lambda x: 0.3 * x, levy=LevyMeasureSpec(), dim=2)
    q = QuadForm(np.array([[1.5, 0.2], [0.2, 0.8]]))
    x = np.array([0.5, -0.3])
    z = np.array([1.1, 0.7])
    lam = 2.37
    base = dissipativity_lhs(spec, q, 2.0, x, z)
    scaled = dissipativity_lhs(spec, q, 2.0, x, lam * z)
    assert scaled == pytest.approx(lam * lam * base, rel=1e-12)


def test_dissipativity_lhs_piecewise_drift_spec():
    # Scalar queue with m = gamma: the drift difference is -(x + z - x) = -z.
    spec = _scalar_queue()
    q = QuadForm(np.array([[1.0]]))
    got = dissipativity_lhs(spec, q, 2.0, np.array([0.3]), np.array([0.9]))
    assert got == pytest.approx(2.0 * (-0.9) * 0.9, abs=1e-13)


# ---------------------------------------------------------------------------
# find_q
# ---------------------------------------------------------------------------


def test_find_q_symmetric_case_returns_identity():
    got = find_q(np.eye(2), np.eye(2), np.array([1.0, 0.0]), DiagonalGrid())
    assert isinstance(got, QuadForm)
    assert np.allclose(got.Q, np.eye(2), atol=1e-12)


def test_find_q_scalar_matches_prop35():
    got = find_q(np.array([[3.0]]), np.array([[2.0]]), np.array([1.0]), DiagonalGrid())
    assert isinstance(got, QuadForm)
    c2 = prop35_cp(np.array([[3.0]]), np.array([[2.0]]), np.array([1.0]), got, 0.0, 2.0)
    assert c2 == pytest.approx(4.0, abs=1e-12)


def test_find_q_gamma_zero_not_found():
    got = find_q(np.eye(2), np.zeros((2, 2)), np.array([1.0, 0.0]), DiagonalGrid())
    assert isinstance(got, NotFound)
    assert got.reason


def test_find_q_rejects_non_m_matrix():
    bad = np.array([[1.0, 0.5], [0.0, 1.0]])  # positive off-diagonal entry
    with pytest.raises(ConfigError):
        find_q(bad, np.eye(2), np.array([1.0, 0.0]), DiagonalGrid())


# ---------------------------------------------------------------------------
# synchronous_pair_sim
# ---------------------------------------------------------------------------


def test_pair_sim_equal_starts_bit_exact():
    grid = np.linspace(0.0, 1.0, 5)
    pair = synchronous_pair_sim(_ou_1d(), np.array([1.0]), np.array([1.0]), grid, 64, seed=3)
    assert np.array_equal(pair.first.paths, pair.second.paths)


def test_pair_sim_ou_difference_is_deterministic_decay():
    grid = np.linspace(0.0, 3.0, 13)
    pair = synchronous_pair_sim(_ou_1d(), np.array([2.0]), np.array([-1.0]), grid, 128, seed=7)
    diff = pair.first.paths[:, :, 0] - pair.second.paths[:, :, 0]
    expected = 3.0 * np.exp(-grid)
    assert np.allclose(diff, expected[None, :], rtol=1e-9, atol=1e-11)


def test_pair_sim_marginals_match_simulate_in_law():
    grid = np.array([0.0, 1.0])
    x, y = np.array([2.0]), np.array([-1.0])
    pair = synchronous_pair_sim(_ou_1d(), x, y, grid, 4000, seed=11)
    ind_x = simulate(_ou_1d(), x, grid, 4000, seed=77)
    ind_y = simulate(_ou_1d(), y, grid, 4000, seed=78)
    for got, ref in ((pair.first, ind_x), (pair.second, ind_y)):
        p_val = stats.ks_2samp(got.marginal(1).ravel(), ref.marginal(1).ravel()).pvalue
        assert p_val > 0.001


def test_pair_sim_queue_difference_deterministic_given_shared_jumps():
    # m = gamma makes the drift globally linear, so the difference follows the
    # noise-free Euler recursion diff <- diff * (1 - dt) regardless of the
    # shared Brownian increments and compound-Poisson jumps.
    spec = _scalar_queue()
    grid = np.array([0.0, 0.5, 1.0])
    pair = synchronous_pair_sim(spec, np.array([1.8]), np.array([0.3]), grid, 300, seed=5)
    diff = pair.first.paths[:, :, 0] - pair.second.paths[:, :, 0]
    assert np.ptp(diff, axis=0).max() < 1e-11
    expected = 1.5 * (1.0 - 0.01) ** np.array([0.0, 50.0, 100.0])
    assert np.allclose(diff[0], expected, rtol=1e-11)


def test_coupled_batch_validates_alignment():
    grid = np.linspace(0.0, 1.0, 5)
    a = simulate(_ou_1d(), np.array([1.0]), grid, 16, seed=1)
    b = simulate(_ou_1d(), np.array([1.0]), grid[:-1], 16, seed=1)
    with pytest.raises(ConfigError):
        CoupledBatch(first=a, second=b)


# ---------------------------------------------------------------------------
# contraction_estimate
# ---------------------------------------------------------------------------


def test_contraction_estimate_ou_rate_and_envelope():
    grid = np.linspace(0.0, 3.0, 13)
    pair = synchronous_pair_sim(_ou_1d(), np.array([2.0]), np.array([-1.0]), grid, 200, seed=2)
    q = QuadForm(np.array([[1.0]]))
    c2 = prop35_cp(np.array([[1.0]]), np.array([[1.0]]), np.array([1.0]), q, 0.0, 2.0)
    report = contraction_estimate(pair, 2.0, params=DissipativityParams(q=q, p=2.0, c_p=c2))
    assert np.allclose(report.moment_curve, 3.0 * np.exp(-grid), rtol=1e-8)
    assert abs(report.fitted_rate - 1.0) < 0.02
    assert np.allclose(report.envelope, 3.0 * np.exp(-grid), rtol=1e-12)
    assert report.violations == 0


def test_contraction_estimate_equal_starts_zero_curve():
    grid = np.linspace(0.0, 2.0, 9)
    pair = synchronous_pair_sim(_ou_1d(), np.array([1.0]), np.array([1.0]), grid, 150, seed=4)
    report = contraction_estimate(pair, 2.0)
    assert np.all(report.moment_curve == 0.0)
    assert math.isnan(report.fitted_rate)
    assert report.envelope is None
    assert report.violations == 0


def test_contraction_estimate_requires_paths():
    grid = np.linspace(0.0, 1.0, 5)
    pair = synchronous_pair_sim(_ou_1d(), np.array([1.0]), np.array([0.0]), grid, 50, seed=6)
    with pytest.raises(InsufficientPathsError):
        contraction_estimate(pair, 2.0)


def test_contraction_estimate_queueing_network_meets_prop35_rate():
    jumps = DiscreteJumps(np.array([[0.4, 0.0], [-0.4, 0.0]]), np.array([0.5, 0.5]))
    spec = PiecewiseOU(
        l=np.array([0.2, 0.2]),
        M=np.eye(2),
        Gamma=np.eye(2),
        control=ConstantControl(np.array([1.0, 0.0])),
        sigma=0.5 * np.eye(2),
        levy=LevyMeasureSpec(kind=CompoundPoisson(1.0, jumps)),
    )
    grid = np.linspace(0.0, 2.0, 9)
    x, y = np.array([2.0, 1.0]), np.array([-1.0, 0.5])
    pair = synchronous_pair_sim(spec, x, y, grid, 256, seed=9)
    q = find_q(np.eye(2), np.eye(2), np.array([1.0, 0.0]), DiagonalGrid())
    assert isinstance(q, QuadForm)
    c2 = prop35_cp(np.eye(2), np.eye(2), np.array([1.0, 0.0]), q, 0.0, 2.0)
    assert c2 == pytest.approx(2.0, abs=1e-12)
    report = contraction_estimate(pair, 2.0, params=DissipativityParams(q=q, p=2.0, c_p=c2))
    assert report.fitted_rate >= c2 / 2.0 - 1e-9
    assert report.fitted_rate < 1.02
    assert report.violations == 0
    sep0 = float(np.linalg.norm(x - y))
    assert np.allclose(report.envelope, sep0 * np.exp(-grid), rtol=1e-12)


def test_contraction_estimate_bootstrap_brackets_moment():
    # Multiplicative noise makes the difference genuinely random.
    spec = GenericIto(b=lambda x: -x, sigma=lambda x: 0.3 * x, levy=LevyMeasureSpec(), dim=1)
    grid = np.linspace(0.0, 2.0, 9)
    pair = synchronous_pair_sim(spec, np.array([2.0]), np.array([1.0]), grid, 400, seed=12)
    report = contraction_estimate(pair, 2.0, n_boot=300, seed=1)
    assert np.all(report.ci_lo <= report.moment_curve + 1e-12)
    assert np.all(report.moment_curve <= report.ci_hi + 1e-12)
    assert np.all(report.ci_hi[1:] > report.ci_lo[1:])
    assert 0.8 < report.fitted_rate < 1.1


def test_contraction_estimate_deterministic_given_seed():
    spec = GenericIto(b=lambda x: -x, sigma=lambda x: 0.3 * x, levy=LevyMeasureSpec(), dim=1)
    grid = np.linspace(0.0, 1.0, 5)
    pair = synchronous_pair_sim(spec, np.array([2.0]), np.array([1.0]), grid, 150, seed=3)
    a = contraction_estimate(pair, 2.0, n_boot=100, seed=21)
    b = contraction_estimate(pair, 2.0, n_boot=100, seed=21)
    assert np.array_equal(a.ci_lo, b.ci_lo) and np.array_equal(a.ci_hi, b.ci_hi)
    assert a.fitted_rate == b.fitted_rate


def test_coupling_report_csv(tmp_path):
    grid = np.linspace(0.0, 2.0, 9)
    pair = synchronous_pair_sim(_ou_1d(), np.array([2.0]), np.array([-1.0]), grid, 128, seed=8)
    with_env = contraction_estimate(
        pair, 2.0, params=DissipativityParams(q=QuadForm(np.array([[1.0]])), p=2.0, c_p=2.0)
    )
    without_env = contraction_estimate(pair, 2.0)
    path_a = tmp_path / "with_env.csv"
    path_b = tmp_path / "without_env.csv"
    with_env.to_csv(path_a)
    without_env.to_csv(path_b)
    for path, has_env in ((path_a, True), (path_b, False)):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["time", "moment", "ci_lo", "ci_hi", "envelope"]
        assert len(rows) == 1 + grid.shape[0]
        assert (rows[1][4] != "") == has_env
        assert float(rows[1][1]) == pytest.approx(3.0, rel=1e-12)
