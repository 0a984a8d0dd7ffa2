import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbwalk.diagnostics import (
    AutoCovTable,
    autocovariance,
    autocovariance_series,
    clt_fit,
    conductance_proxy,
    covariance_bound_check,
    fit_deviation_bounds,
    iat,
    mixing_scaling,
    tv_to_normal,
    tv_to_normal_quadrature,
)
from qbwalk.models import SyntheticSpec, gen_synthetic, localize, make_exp_target
from qbwalk.models import ExpFamilySpec
from qbwalk.rng import stream
from qbwalk.schedule import beta_factor
from qbwalk.target import (
    LocalTarget,
    NormalReference,
    SupportBall,
    gaussian_reference_target,
)
from qbwalk.walk import WalkConfig, run_chain


def shifted_target(shift=0.5, radius=4.0):
    ball = SupportBall(dim=1, radius=radius)
    ref = NormalReference.from_matrix(np.eye(1), ball)
    target = LocalTarget(
        dim=1,
        support=ball,
        log_ell=lambda l: -0.5 * float((l[0] - shift) ** 2),
        reference=ref,
    )
    return target, ref


class TestDeviationFit:
    def test_exact_gaussian_fit_is_zero(self):
        target = gaussian_reference_target(np.eye(2))
        fit = clt_fit(target, target.reference, 200, seed=1)
        assert fit.eps1 <= 1e-10 and fit.eps2 <= 1e-10
        assert fit.beta >= 1.0 - 1e-9

    def test_pure_tilt_instance(self):
        # log_ell = -0.55 lam^2 against J = 1: residual is -0.05 lam^2, whose
        # tight envelope over all of K is (eps1, eps2) = (0, 0.1)
        R = 2.0
        xs = np.linspace(-R, R, 81)
        e1, e2 = fit_deviation_bounds(xs**2, -0.05 * xs**2, R**2)
        assert e1 == pytest.approx(0.0, abs=1e-12)
        assert e2 == pytest.approx(0.1, abs=1e-10)

    def test_pure_jump_instance(self):
        # constant-size residual 0.05 sign(lam) forces the eps1 vertex
        ball = SupportBall(dim=1, radius=2.0)
        ref = NormalReference.from_matrix(np.eye(1), ball)
        target = LocalTarget(
            dim=1,
            support=ball,
            log_ell=lambda l: -0.5 * float(l[0] ** 2) + 0.05 * math.copysign(1.0, l[0] or 1.0),
            reference=ref,
        )
        fit = clt_fit(target, ref, 300, seed=2)
        # the origin is sampled too, where the residual is +0.05
        assert fit.eps1 == pytest.approx(0.05, abs=1e-9)
        assert fit.eps2 == pytest.approx(0.0, abs=1e-9)

    def test_matches_brute_force_grid(self):
        rng = stream(3)
        q = rng.uniform(0.0, 9.0, size=30)
        r = 0.03 * np.sign(rng.standard_normal(30)) + 0.01 * q
        normKJ_sq = 9.0
        e1, e2 = fit_deviation_bounds(q, r, normKJ_sq)
        lp_obj = e1 + e2 * normKJ_sq / 2.0
        grid = np.arange(0.0, 0.301, 0.001)
        best = math.inf
        a = np.abs(r)
        for ge1 in grid:
            need = np.max((a - ge1) * 2.0 / np.maximum(q, 1e-300))
            ge2 = max(0.0, need)
            best = min(best, ge1 + ge2 * normKJ_sq / 2.0)
        assert lp_obj <= best + 1e-9
        # grid resolution bounds how far the continuous optimum can sit below
        assert best - lp_obj <= 0.001 * (1.0 + normKJ_sq / 2.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_fit_is_feasible(self, seed):
        rng = stream(seed)
        n = int(rng.integers(5, 40))
        q = rng.uniform(0.0, 16.0, size=n)
        r = rng.standard_normal(n) * rng.uniform(0.01, 0.5)
        e1, e2 = fit_deviation_bounds(q, r, 16.0)
        assert e1 >= 0.0 and e2 >= 0.0
        assert np.all(np.abs(r) <= e1 + e2 * q / 2.0 + 1e-9)

    def test_infinite_residual_flagged(self):
        ball = SupportBall(dim=1, radius=2.0)
        ref = NormalReference.from_matrix(np.eye(1), ball)
        target = LocalTarget(
            dim=1,
            support=ball,
            log_ell=lambda l: -math.inf if l[0] > 1.0 else -0.5 * float(l[0] ** 2),
            reference=ref,
        )
        fit = clt_fit(target, ref, 200, seed=4)
        assert math.isinf(fit.eps1)
        assert fit.beta == 0.0

    def test_beta_matches_beta_factor(self):
        target, ref = shifted_target(0.3)
        fit = clt_fit(target, ref, 50, seed=5)
        assert fit.beta == beta_factor(fit.eps1, fit.eps2, ref.norm_K_J**2)


class TestTvToNormal:
    def test_matching_target_is_small(self):
        target = gaussian_reference_target(np.eye(1), radius=4.0)
        assert tv_to_normal(target, target.reference, 10_000, seed=6) <= 0.01

    def test_shifted_normal_value(self):
        # L1 distance between N(0.5,1) and N(0,1) truncated to [-4,4]; the
        # untruncated closed form is 2 (2 Phi(1/4) - 1) ~ 0.3948
        target, ref = shifted_target(0.5)
        mc = tv_to_normal(target, ref, 20_000, seed=7)
        quad = tv_to_normal_quadrature(target, ref)
        assert quad == pytest.approx(0.3946551282751558, abs=1e-6)
        assert mc == pytest.approx(quad, abs=0.02)
        assert abs(2.0 * (2.0 * 0.5987063256829237 - 1.0) - quad) <= 2e-3

    def test_shift_invariance(self):
        target, ref = shifted_target(0.5)
        shifted = LocalTarget(
            dim=1,
            support=target.support,
            log_ell=lambda l: target.log_ell(l) + 7.25,
            reference=ref,
        )
        a = tv_to_normal(target, ref, 5_000, seed=8)
        b = tv_to_normal(shifted, ref, 5_000, seed=8)
        assert a == pytest.approx(b, abs=1e-12)

    def test_exp_family_distance_shrinks_with_n(self):
        # one-parameter family with psi = exp(theta): the cubic term of psi
        # leaves an O(1/sqrt(n)) deviation from the quadratic reference
        spec = ExpFamilySpec(
            dim=1,
            psi=lambda th: float(np.exp(th[0])),
            grad_psi=lambda th: np.array([math.exp(th[0])]),
            hess_psi=lambda th: np.array([[math.exp(th[0])]]),
        )

        def tv_at(n):
            data = gen_synthetic(SyntheticSpec("gaussian_location", 1, (1.0,)), n, 9)
            loc = localize(spec, data, np.zeros(1))
            target, ref = make_exp_target(spec, data, loc)
            return tv_to_normal(target, ref, 10_000, seed=10)

        assert tv_at(10_000) < tv_at(100)

    def test_quadrature_matches_mc_2d(self):
        target = gaussian_reference_target(np.diag([1.0, 2.0]), radius=3.0)
        ball = target.support
        ref_wrong = NormalReference.from_matrix(np.diag([1.3, 2.0]), ball)
        mc = tv_to_normal(target, ref_wrong, 20_000, seed=11)
        quad = tv_to_normal_quadrature(target, ref_wrong)
        assert mc == pytest.approx(quad, abs=0.03)


class TestAutocovariance:
    def test_iid_lags_inside_noise_band(self):
        y = stream(12).standard_normal(20_000)
        table = autocovariance_series(y, maxlag=30)
        band = 3.0 * table.gammas[0] / math.sqrt(table.n)
        assert np.all(np.abs(table.gammas[1:]) <= band * 1.5)

    def test_constant_sequence_is_degenerate(self):
        table = autocovariance_series(np.full(1000, 3.7), maxlag=10)
        assert np.allclose(table.gammas, 0.0)
        assert iat(table) == 1.0

    def test_ar1_decay_matches_closed_form(self):
        rho = 0.9
        rng = stream(13)
        n = 100_000
        y = np.empty(n)
        y[0] = rng.standard_normal() / math.sqrt(1 - rho * rho)
        eps = rng.standard_normal(n)
        for t in range(1, n):
            y[t] = rho * y[t - 1] + eps[t]
        table = autocovariance_series(y, maxlag=20)
        ratios = table.gammas[1:] / table.gammas[0]
        expect = rho ** np.arange(1, 21)
        assert np.max(np.abs(ratios - expect)) <= 0.05

    def test_trace_wrapper(self):
        target = gaussian_reference_target(np.eye(1), radius=4.0)
        trace = run_chain(target, WalkConfig(sigma=1.0, seed=14, init=np.zeros(1)), 5000)
        table = autocovariance(trace, lambda l: float(l[0]), maxlag=50, burn_in=500)
        assert table.gammas[0] > 0
        assert table.n == 4501

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            autocovariance_series(np.arange(50, dtype=float), maxlag=10)


class TestConductanceProxy:
    def make_table(self, rho, n=10**12, maxlag=60):
        g = rho ** np.arange(maxlag + 1)
        return AutoCovTable(gammas=g, n=n)

    def test_exact_geometric_decay(self):
        proxy = conductance_proxy(self.make_table(0.98))
        assert proxy.rho_hat == pytest.approx(0.98, abs=1e-9)
        assert proxy.phi_hat == pytest.approx(0.2, abs=1e-9)
        assert proxy.r_squared == pytest.approx(1.0, abs=1e-9)

    def test_iid_clamps_to_one(self):
        y = stream(15).standard_normal(50_000)
        table = autocovariance_series(y, maxlag=40)
        proxy = conductance_proxy(table)
        assert proxy.phi_hat == 1.0
        assert proxy.rho_hat == 0.0

    def test_envelope_passes_at_fitted_phi(self):
        table = self.make_table(0.95)
        proxy = conductance_proxy(table)
        chk = covariance_bound_check(table, proxy.phi_hat)
        assert chk.holds

    def test_proxy_flagged_as_heuristic(self):
        proxy = conductance_proxy(self.make_table(0.9))
        assert "heuristic" in proxy.note


class TestCovarianceBoundCheck:
    def test_tiny_phi_always_holds(self):
        y = stream(16).standard_normal(5_000)
        table = autocovariance_series(y, maxlag=20)
        assert covariance_bound_check(table, 1e-6).holds

    def test_iid_with_full_phi_holds(self):
        y = stream(17).standard_normal(50_000)
        table = autocovariance_series(y, maxlag=20)
        assert covariance_bound_check(table, 1.0).holds

    def test_ar1_violates_overclaimed_phi(self):
        # envelope (1 - 0.32)^k decays faster than the true 0.9^k; at k=5
        # 0.68^5 ~ 0.145 < 0.9^5 ~ 0.59
        rho = 0.9
        rng = stream(18)
        n = 100_000
        y = np.empty(n)
        y[0] = rng.standard_normal() / math.sqrt(1 - rho * rho)
        eps = rng.standard_normal(n)
        for t in range(1, n):
            y[t] = rho * y[t - 1] + eps[t]
        table = autocovariance_series(y, maxlag=10)
        chk = covariance_bound_check(table, 0.8)
        assert not chk.holds
        assert chk.margins[5] < 0

    def test_invalid_phi_rejected(self):
        table = AutoCovTable(gammas=np.array([1.0, 0.5]), n=100)
        with pytest.raises(ValueError):
            covariance_bound_check(table, 0.0)


class TestIat:
    def test_iid_close_to_one(self):
        y = stream(19).standard_normal(100_000)
        table = autocovariance_series(y, maxlag=100)
        assert iat(table) == pytest.approx(1.0, abs=0.1)

    def test_ar1_closed_form(self):
        # AR(1) with rho = 0.5 has tau = (1+rho)/(1-rho) = 3
        rho = 0.5
        rng = stream(20)
        n = 100_000
        y = np.empty(n)
        y[0] = rng.standard_normal() / math.sqrt(1 - rho * rho)
        eps = rng.standard_normal(n)
        for t in range(1, n):
            y[t] = rho * y[t - 1] + eps[t]
        table = autocovariance_series(y, maxlag=200)
        assert iat(table) == pytest.approx(3.0, abs=0.3)

    def test_floor_at_one(self):
        table = AutoCovTable(gammas=np.array([1.0, -0.4, 0.1]), n=1000)
        assert iat(table) >= 1.0


class TestMixingScaling:
    def test_single_dim_has_no_slope(self):
        res = mixing_scaling([2], 2_000, master_seed=21)
        assert math.isnan(res.slope)
        assert len(res.rows) == 1
        assert res.rows[0][1] >= 1.0

    def test_rows_sorted_and_positive(self):
        res = mixing_scaling([2, 4], 2_000, master_seed=22)
        assert [r[0] for r in res.rows] == [2, 4]
        assert all(tau >= 1.0 for _, tau in res.rows)

    def test_deterministic(self):
        a = mixing_scaling([2, 3], 1_500, master_seed=23)
        b = mixing_scaling([2, 3], 1_500, master_seed=23)
        assert a == b

    def test_unsorted_dims_rejected(self):
        with pytest.raises(ValueError):
            mixing_scaling([4, 2], 1_000, master_seed=24)


def test_iat_tracks_inverse_sigma_squared_scaling():
    # ground truth for the scaling benchmark: with acceptance near one the
    # walk diffuses, so the coordinate IAT grows like 1/sigma^2; measured
    # with sigma = 1/(2 d) the IAT slope over d in {2,4,8} is near 2
    taus = []
    dims = [2, 4, 8]
    for i, d in enumerate(dims):
        target = gaussian_reference_target(np.eye(d))
        sigma = 1.0 / (2.0 * d)
        trace = run_chain(
            target, WalkConfig(sigma=sigma, seed=100 + i, init=np.zeros(d)), 60_000
        )
        table = autocovariance_series(trace.states[1:, 0], maxlag=6_000)
        taus.append(iat(table))
    slope = np.polyfit(np.log(dims), np.log(taus), 1)[0]
    assert 1.5 <= slope <= 2.5
