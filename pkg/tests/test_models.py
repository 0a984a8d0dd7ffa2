import math

import numpy as np
import pytest

from qbwalk.diagnostics import clt_fit
from qbwalk.models import (
    CurvedSpec,
    Dataset,
    SyntheticSpec,
    empirical_moments,
    first_order_s,
    gaussian_location_family,
    gen_synthetic,
    linear_regression_problem,
    localize,
    make_curved_target,
    make_exp_target,
    make_z_target,
    quantile_moments,
    quantile_problem,
    read_dataset_csv,
    write_dataset_csv,
)
from qbwalk.rng import stream


def gaussian_setup(d=3, n=500, theta0=None, seed=7):
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, float)
    spec = gaussian_location_family(d)
    data = gen_synthetic(SyntheticSpec("gaussian_location", d, tuple(theta0)), n, seed)
    loc = localize(spec, data, theta0)
    target, ref = make_exp_target(spec, data, loc)
    return spec, data, loc, target, ref


class TestExpFamily:
    def test_gaussian_location_identity(self):
        # psi = ||theta||^2/2 makes the localized log criterion exactly
        # -||lam||^2/2 for every dataset; checked against the closed form
        _, _, _, target, _ = gaussian_setup(d=3, n=200, theta0=[0.4, -1.0, 0.2])
        rng = stream(3)
        for lam in rng.uniform(-2.0, 2.0, size=(100, 3)):
            assert abs(target.log_ell(lam) + 0.5 * float(lam @ lam)) < 1e-10

    def test_normalized_at_origin(self):
        _, _, _, target, _ = gaussian_setup()
        assert target.log_ell(np.zeros(3)) == 0.0

    def test_gaussian_clt_fit_is_exact(self):
        _, _, _, target, ref = gaussian_setup(d=2, n=100)
        fit = clt_fit(target, ref, 200, seed=11)
        assert fit.eps1 <= 1e-10 and fit.eps2 <= 1e-10

    def test_identity_property_thousand_points(self):
        _, _, _, target, _ = gaussian_setup(d=2, n=50, theta0=[1.0, -0.5], seed=9)
        rng = stream(10)
        lams = rng.uniform(-2.8, 2.8, size=(1000, 2))
        vals = np.array([target.log_ell(l) + 0.5 * float(l @ l) for l in lams])
        assert np.max(np.abs(vals)) < 1e-10

    def test_sample_size_mismatch_rejected(self):
        spec, data, loc, _, _ = gaussian_setup(n=100)
        short = Dataset(data.data[:50], data.columns)
        with pytest.raises(ValueError):
            make_exp_target(spec, short, loc)


class TestCurvedFamily:
    def make_linear(self, d=3, d1=2, n=400, seed=5):
        base = gaussian_location_family(d)
        G = np.array([[1.0, 0.0], [0.5, 1.0], [0.0, -1.0]])
        spec = CurvedSpec(base=base, dim_eta=d1, theta_map=lambda e: G @ e, G=G)
        eta0 = np.zeros(d1)
        data = gen_synthetic(SyntheticSpec("gaussian_location", d, (0.0,) * d), n, seed)
        loc = localize(spec, data, eta0)
        return spec, data, loc, G

    def test_linear_map_identity(self):
        spec, data, loc, G = self.make_linear()
        target, ref = make_curved_target(spec, data, loc)
        JG = G.T @ G
        rng = stream(8)
        for gamma in rng.uniform(-1.5, 1.5, size=(100, 2)):
            expected = -0.5 * float(gamma @ JG @ gamma)
            assert abs(target.log_ell(gamma) - expected) < 1e-10
        assert np.allclose(ref.J, JG)

    def test_normalized_at_origin(self):
        spec, data, loc, _ = self.make_linear()
        target, _ = make_curved_target(spec, data, loc)
        assert target.log_ell(np.zeros(2)) == 0.0

    def test_rank_deficient_map_rejected(self):
        base = gaussian_location_family(2)
        G = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(ValueError):
            CurvedSpec(base=base, dim_eta=2, theta_map=lambda e: G @ e, G=G)

    def test_jump_in_map_bounds_eps1(self):
        # a jump of size delta1/sqrt(n) in one coordinate of the map puts a
        # discontinuity into the criterion; the fitted eps1 stays positive
        # and below a constant multiple of delta1 sqrt(d1)
        d, d1, n = 3, 2, 400
        base = gaussian_location_family(d)
        G = np.array([[1.0, 0.0], [0.5, 1.0], [0.0, -1.0]])
        delta1 = 0.3
        sqrt_n = math.sqrt(n)

        def theta_map(eta):
            jump = delta1 / sqrt_n if eta[0] >= 0.02 else 0.0
            out = G @ eta
            return out + np.array([jump, 0.0, 0.0])

        spec = CurvedSpec(base=base, dim_eta=d1, theta_map=theta_map, G=G, delta1=delta1)
        data = gen_synthetic(SyntheticSpec("gaussian_location", d, (0.0,) * d), n, 21)
        loc = localize(spec, data, np.zeros(d1))
        target, ref = make_curved_target(spec, data, loc)

        # oracle: direct residual maximization on a dense sample of the ball
        from qbwalk.target import uniform_in_ball

        grid = uniform_in_ball(stream(4), target.support, 20_000)
        res = np.array(
            [abs(target.log_ell(g) + 0.5 * float(g @ ref.J @ g)) for g in grid]
        )
        grid_max = float(res.max())
        fit = clt_fit(target, ref, 400, seed=6)
        assert fit.eps1 > 0.0
        assert fit.eps1 <= grid_max + 1e-9
        assert grid_max <= 6.0 * delta1 * math.sqrt(d1)


class TestZProblems:
    def test_linear_moments_reference_is_2I(self):
        prob = linear_regression_problem(2)
        data = gen_synthetic(SyntheticSpec("linear_regression", 2, (0.0, 0.0)), 1000, 3)
        loc = localize(prob, data)
        _, ref = make_z_target(prob, data, loc)
        assert np.allclose(ref.J, 2.0 * np.eye(2))

    def test_normalized_at_origin(self):
        prob = linear_regression_problem(2)
        data = gen_synthetic(SyntheticSpec("linear_regression", 2, (0.5, -0.5)), 500, 5)
        loc = localize(prob, data)
        target, _ = make_z_target(prob, data, loc)
        assert target.log_ell(np.zeros(2)) == 0.0

    def test_quadratic_approximation_improves_with_n(self):
        # sup_lambda |log_ell - (-lam' A'A lam)| over random lambdas in K
        # shrinks from n=1e2 to n=1e4
        def sup_gap(n):
            prob = linear_regression_problem(2)
            data = gen_synthetic(
                SyntheticSpec("linear_regression", 2, (0.0, 0.0)), n, 12
            )
            loc = localize(prob, data)
            target, ref = make_z_target(prob, data, loc)
            lams = stream(13).uniform(-1.4, 1.4, size=(100, 2))
            return max(
                abs(target.log_ell(l) + float(l @ l)) for l in lams
            )  # A'A = I here

        assert sup_gap(10_000) < sup_gap(100)


class TestQuantileMoments:
    def test_above_quantile(self):
        # Y > X'theta: indicator 0 -> alpha * Z
        rec = np.array([2.0, 1.0, 0.5, 1.0, 2.0])  # y, x1, x2, z1, z2
        out = quantile_moments(rec, np.array([0.5, 0.5]), 0.25, np.eye(2))
        assert np.allclose(out, 0.25 * np.array([1.0, 2.0]))

    def test_below_quantile(self):
        rec = np.array([-2.0, 1.0, 0.5, 1.0, 2.0])
        out = quantile_moments(rec, np.array([0.5, 0.5]), 0.25, np.eye(2))
        assert np.allclose(out, -0.75 * np.array([1.0, 2.0]))

    def test_hand_value_alpha_half(self):
        # alpha = 0.5, p = 1, Z = (1, 2), Y <= X'theta: (alpha - 1) Z = (-0.5, -1)
        rec = np.array([0.0, 1.0, 0.0, 1.0, 2.0])
        out = quantile_moments(rec, np.array([1.0, 1.0]), 0.5, np.eye(2))
        assert np.allclose(out, np.array([-0.5, -1.0]))

    def test_tie_counts_as_censored_side(self):
        # indicator is 1(Y <= X'theta), ties included
        rec = np.array([1.0, 1.0, 1.0])
        out = quantile_moments(rec, np.array([1.0]), 0.5, np.eye(1))
        assert np.allclose(out, np.array([-0.5]))

    def test_zero_censoring_weight_rejected(self):
        rec = np.array([0.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            quantile_moments(rec, np.array([1.0]), 0.5, np.eye(1), p=lambda _t: 0.0)


class TestEmpiricalMoments:
    def test_single_record(self):
        prob = linear_regression_problem(2)
        data = Dataset(np.array([[1.0, 2.0, 0.5]]), ("y", "x1", "x2"))
        theta = np.zeros(2)
        m1 = prob.moment(data.data[0], theta)
        assert np.allclose(empirical_moments(prob, data, theta), m1)

    def test_all_zero_moments(self):
        prob = linear_regression_problem(1)
        data = Dataset(np.array([[0.0, 1.0], [0.0, 2.0]]), ("y", "x1"))
        assert np.allclose(empirical_moments(prob, data, np.zeros(1)), np.zeros(1))

    def test_two_records_hand_value(self):
        # moment values (1, 0) and (0, 1) must average to (1, 1)/sqrt(2)
        prob = linear_regression_problem(2)
        data = Dataset(
            np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]]), ("y", "x1", "x2")
        )
        out = empirical_moments(prob, data, np.zeros(2))
        assert np.allclose(out, np.array([0.7071067811865475, 0.7071067811865475]))

    def test_linearity_in_record_moments(self):
        prob = linear_regression_problem(2)
        data = gen_synthetic(SyntheticSpec("linear_regression", 2, (0.3, 0.1)), 40, 2)
        theta = np.array([0.1, -0.2])
        rows = prob.moments_matrix(data, theta)
        expected = rows.sum(axis=0) / math.sqrt(data.n)
        assert np.allclose(empirical_moments(prob, data, theta), expected, atol=1e-14)


class TestSynthetic:
    def test_determinism(self):
        spec = SyntheticSpec("quantile", 3, (0.5, 1.0, -0.5))
        a = gen_synthetic(spec, 100, 42)
        b = gen_synthetic(spec, 100, 42)
        assert np.array_equal(a.data, b.data)
        c = gen_synthetic(spec, 100, 43)
        assert not np.array_equal(a.data, c.data)

    def test_gaussian_location_mean_concentrates(self):
        d, n = 3, 100_000
        data = gen_synthetic(SyntheticSpec("gaussian_location", d, (0.0,) * d), n, 8)
        assert np.linalg.norm(data.data.mean(axis=0)) <= 4.0 * math.sqrt(d / n)

    def test_quantile_fraction_matches_level(self):
        d, n, alpha = 3, 20_000, 0.5
        theta0 = np.array([0.5, 1.0, -0.5])
        data = gen_synthetic(SyntheticSpec("quantile", d, tuple(theta0), alpha), n, 4)
        y = data.column("y")
        X = data.block(("x1", "x2", "x3"))
        frac = float(np.mean(y <= X @ theta0))
        assert abs(frac - alpha) <= 3.0 / (2.0 * math.sqrt(n))

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            gen_synthetic(SyntheticSpec("mystery", 1, (0.0,)), 10, 1)


class TestFirstOrderShift:
    def test_exp_family_zero_when_mean_matches(self):
        spec = gaussian_location_family(2)
        data = Dataset(np.array([[1.0, -1.0], [-1.0, 1.0]]), ("x1", "x2"))
        s = first_order_s(spec, data, np.zeros(2))
        assert np.allclose(s, np.zeros(2))

    def test_exp_family_hand_value(self):
        # d=1, n=4, xbar - mu = 0.5 -> s = sqrt(4) * 0.5 = 1
        spec = gaussian_location_family(1)
        data = Dataset(np.array([[0.5], [0.5], [0.5], [0.5]]), ("x1",))
        s = first_order_s(spec, data, np.zeros(1))
        assert np.allclose(s, np.array([1.0]))

    def test_z_problem_identity_jacobian(self):
        # A = -I collapses the formula to s = S_n(theta0)
        prob = linear_regression_problem(2)
        data = gen_synthetic(SyntheticSpec("linear_regression", 2, (0.0, 0.0)), 50, 6)
        s = first_order_s(prob, data)
        sn = empirical_moments(prob, data, prob.center)
        A = -np.eye(2)
        oracle = -np.linalg.solve(A.T @ A, A.T @ sn)
        assert np.allclose(s, oracle)
        assert np.allclose(s, sn)

    def test_localization_center(self):
        prob = linear_regression_problem(2)
        data = gen_synthetic(SyntheticSpec("linear_regression", 2, (0.2, 0.0)), 64, 6)
        loc = localize(prob, data, np.array([0.2, 0.0]))
        s = first_order_s(prob, data, np.array([0.2, 0.0]))
        assert np.allclose(loc.center, np.array([0.2, 0.0]) + s / 8.0)
        assert loc.n == 64


def test_dataset_csv_round_trip(tmp_path):
    spec = SyntheticSpec("quantile", 2, (0.5, -0.25))
    data = gen_synthetic(spec, 37, 11)
    path = tmp_path / "d.csv"
    write_dataset_csv(data, str(path))
    back = read_dataset_csv(str(path))
    assert back.columns == data.columns
    assert np.array_equal(back.data, data.data)


def test_quantile_problem_batch_matches_per_record():
    prob = quantile_problem(2, 0.3, np.zeros(2))
    data = gen_synthetic(SyntheticSpec("quantile", 2, (0.1, 0.2), 0.3), 25, 3)
    theta = np.array([0.05, 0.3])
    batch = prob.moments_matrix(data, theta)
    rows = np.array([prob.moment(r, theta) for r in data.data])
    assert np.allclose(batch, rows, atol=1e-14)
