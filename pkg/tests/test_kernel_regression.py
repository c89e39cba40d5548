import numpy as np
import pytest

from spatrack import kernel_regression as kr
from spatrack.errors import ContractError, DimensionError, GeometryError
from spatrack.numerics import finite_diff_gradient

from oracles import (brute_force_response, cross_patch_loop, kernel_matrix_loop,
                     objective_sum, psd_beta, rel_err)


def small_geo():
    return kr.KrrGeometry(H=8, W=8, C=2, h=4, w=4, M=4)


def random_instance(seed, geo=None):
    geo = geo or small_geo()
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(geo.H, geo.W, geo.C))
    d = kr.extract_dense_samples(x, geo)
    alpha = rng.normal(size=geo.N) * 0.1
    beta = rng.normal(size=geo.M**2) * 0.5
    y = rng.normal(size=geo.N)
    return geo, x, d, alpha, beta, y


class TestGeometry:
    def test_derived_quantities(self):
        geo = kr.KrrGeometry(H=12, W=10, C=3, h=6, w=4, M=4)
        assert (geo.N, geo.d, geo.patch_dim) == (7 * 7, 72, 18)
        assert (geo.ph, geo.pw) == (3, 2)

    def test_invalid_geometry(self):
        with pytest.raises(GeometryError):
            kr.KrrGeometry(H=8, W=8, C=1, h=4, w=4, M=3)  # not a square
        with pytest.raises(GeometryError):
            kr.KrrGeometry(H=8, W=8, C=1, h=5, w=4, M=4)  # not divisible
        with pytest.raises(GeometryError):
            kr.KrrGeometry(H=3, W=8, C=1, h=4, w=4, M=4)  # h > H


class TestExtractDenseSamples:
    def test_target_filling_map_gives_single_column(self):
        geo = kr.KrrGeometry(H=4, W=4, C=2, h=4, w=4, M=4)
        x = np.random.default_rng(0).normal(size=(4, 4, 2))
        d = kr.extract_dense_samples(x, geo)
        assert d.shape == (geo.d, 1)
        assert np.array_equal(d[:, 0], x.reshape(-1))

    def test_constant_input_identical_columns(self):
        geo = small_geo()
        d = kr.extract_dense_samples(np.full((8, 8, 2), 0.3), geo)
        assert np.allclose(d, d[:, :1])

    def test_window_slicing_oracle(self):
        geo = kr.KrrGeometry(H=5, W=5, C=1, h=3, w=3, M=1)
        x = np.random.default_rng(1).normal(size=(5, 5, 1))
        d = kr.extract_dense_samples(x, geo)
        i = 0
        for r in range(3):
            for c in range(3):
                assert np.array_equal(d[:, i], x[r:r + 3, c:c + 3, :].reshape(-1))
                i += 1


class TestCrossPatchKernel:
    def test_single_patch_reduces_to_linear(self):
        geo = kr.KrrGeometry(H=3, W=2, C=1, h=2, w=1, M=1)
        val = kr.cross_patch_kernel(np.array([1.0, 2.0]), np.array([1.0, 2.0]),
                                    np.array([1.0]), geo)
        assert val == 5.0

    def test_zero_beta(self):
        geo = small_geo()
        rng = np.random.default_rng(2)
        xi, xj = rng.normal(size=(2, geo.d))
        assert kr.cross_patch_kernel(xi, xj, np.zeros(geo.M**2), geo) == 0.0

    def test_double_loop_oracle(self):
        geo = small_geo()
        rng = np.random.default_rng(3)
        xi, xj = rng.normal(size=(2, geo.d))
        beta = rng.normal(size=geo.M**2)
        got = kr.cross_patch_kernel(xi, xj, beta, geo)
        assert abs(got - cross_patch_loop(xi, xj, beta, geo)) <= 1e-10


class TestKernelMatrix:
    def test_identity_beta_telescopes_to_linear_kernel(self):
        geo = small_geo()
        rng = np.random.default_rng(4)
        d = rng.normal(size=(geo.d, geo.N))
        k = kr.kernel_matrix(d, kr.identity_beta(geo.M), geo)
        assert np.abs(k - d.T @ d).max() <= 1e-9

    def test_single_sample(self):
        geo = kr.KrrGeometry(H=3, W=3, C=1, h=2, w=2, M=4)
        d = np.random.default_rng(5).normal(size=(geo.d, geo.N))
        k = kr.kernel_matrix(d, kr.identity_beta(4), geo)
        assert k.shape == (4, 4)

    def test_pairwise_oracle(self):
        geo = kr.KrrGeometry(H=4, W=7, C=1, h=2, w=6, M=4)
        assert geo.N == 6
        rng = np.random.default_rng(6)
        d = rng.normal(size=(geo.d, geo.N))
        beta = rng.normal(size=16)
        assert np.abs(kr.kernel_matrix(d, beta, geo)
                      - kernel_matrix_loop(d, beta, geo)).max() <= 1e-10

    def test_linearity_in_beta(self):
        geo = small_geo()
        rng = np.random.default_rng(7)
        d = rng.normal(size=(geo.d, geo.N))
        b1, b2 = rng.normal(size=(2, geo.M**2))
        lhs = kr.kernel_matrix(d, 2.0 * b1 - 0.5 * b2, geo)
        rhs = 2.0 * kr.kernel_matrix(d, b1, geo) - 0.5 * kr.kernel_matrix(d, b2, geo)
        assert np.abs(lhs - rhs).max() <= 1e-9

    def test_symmetry_iff_beta_symmetric(self):
        geo = small_geo()
        rng = np.random.default_rng(8)
        d = rng.normal(size=(geo.d, geo.N))
        sym = psd_beta(rng, geo.M)
        k = kr.kernel_matrix(d, sym, geo)
        assert np.abs(k - k.T).max() <= 1e-9
        asym = rng.normal(size=geo.M**2)
        k2 = kr.kernel_matrix(d, asym, geo)
        assert np.abs(k2 - k2.T).max() > 1e-6


class TestObjective:
    def test_zero_alpha_zero_beta(self):
        geo, x, d, alpha, beta, y = random_instance(9)
        j = kr.objective_J(np.zeros(geo.N), np.zeros(geo.M**2), d, y, 0.1, 0.2, geo)
        assert abs(j - y @ y) <= 1e-12

    def test_zero_alpha_random_beta(self):
        geo, x, d, alpha, beta, y = random_instance(10)
        j = kr.objective_J(np.zeros(geo.N), beta, d, y, 0.1, 0.2, geo)
        assert abs(j - (y @ y + 0.2 * beta @ beta)) <= 1e-9

    def test_triple_sum_transcription(self):
        geo = kr.KrrGeometry(H=5, W=5, C=1, h=3, w=3, M=1)
        rng = np.random.default_rng(11)
        d = rng.normal(size=(geo.d, geo.N))
        alpha = rng.normal(size=geo.N) * 0.3
        beta = rng.normal(size=1)
        y = rng.normal(size=geo.N)
        got = kr.objective_J(alpha, beta, d, y, 0.05, 0.07, geo)
        want = objective_sum(alpha, beta, d, y, 0.05, 0.07, geo)
        assert abs(got - want) <= 1e-9 * max(1.0, abs(want))

    def test_data_term_matches_forward_trace(self):
        geo, x, d_unused, alpha, beta, y = random_instance(12)
        d = kr.extract_dense_samples(x, geo)
        trace = kr.krr_forward(x, d, alpha, beta, geo)
        resid = y - trace.r_flat
        j_from_trace = (resid @ resid
                        + 0.1 * float(alpha @ kr.kernel_matrix(d, beta, geo) @ alpha)
                        + 0.2 * float(beta @ beta))
        j = kr.objective_J(alpha, beta, d, y, 0.1, 0.2, geo)
        assert abs(j - j_from_trace) <= 1e-9 * max(1.0, abs(j))


class TestClosedFormAlpha:
    def test_identity_kernel(self):
        y = np.array([2.0, -4.0, 6.0])
        alpha = kr.closed_form_alpha(np.eye(3), y, 1.0)
        assert np.allclose(alpha, y / 2.0)

    def test_scalar_case(self):
        alpha = kr.closed_form_alpha(np.array([[3.0]]), np.array([8.0]), 1.0)
        assert np.allclose(alpha, 2.0)

    def test_stationarity_via_finite_differences(self):
        geo, x, _, _, _, y = random_instance(13)
        rng = np.random.default_rng(13)
        d = kr.extract_dense_samples(x, geo)
        beta = psd_beta(rng, geo.M)
        k = kr.kernel_matrix(d, beta, geo)
        alpha = kr.closed_form_alpha(k, y, 0.01)
        grad = finite_diff_gradient(
            lambda a: kr.objective_J(a, beta, d, y, 0.01, 0.0, geo), alpha.copy())
        assert np.abs(grad).max() <= 1e-6

    def test_asymmetric_kernel_rejected(self):
        k = np.eye(3)
        k[0, 1] = 1e-3
        with pytest.raises(ContractError):
            kr.closed_form_alpha(k, np.ones(3), 0.1)


class TestForward:
    def test_single_sample_single_patch(self):
        # target fills the map, one patch, one stored sample
        geo = kr.KrrGeometry(H=2, W=2, C=1, h=2, w=2, M=1)
        rng = np.random.default_rng(14)
        x = rng.normal(size=(2, 2, 1))
        d = rng.normal(size=(geo.d, 1))
        alpha = rng.normal(size=1)
        trace = kr.krr_forward(x, d, alpha, np.array([1.0]), geo)
        assert trace.r.shape == (1, 1)
        want = alpha[0] * float(x.reshape(-1) @ d[:, 0])
        assert abs(trace.r[0, 0] - want) <= 1e-12 * max(1.0, abs(want))

    def test_identity_beta_is_linear_kernel_regression(self):
        geo, x, _, alpha, _, _ = random_instance(15)
        rng = np.random.default_rng(15)
        d = rng.normal(size=(geo.d, geo.N))
        trace = kr.krr_forward(x, d, alpha, kr.identity_beta(geo.M), geo)
        s = kr.extract_dense_samples(x, geo)
        want = s.T @ (d @ alpha)
        assert rel_err(trace.r_flat, want) <= 1e-12

    def test_brute_force_kernel_oracle(self):
        geo = kr.KrrGeometry(H=12, W=12, C=3, h=6, w=6, M=4)
        rng = np.random.default_rng(16)
        x = rng.normal(size=(12, 12, 3))
        d = rng.normal(size=(geo.d, geo.N))
        alpha = rng.normal(size=geo.N)
        beta = rng.normal(size=16)
        trace = kr.krr_forward(x, d, alpha, beta, geo)
        want = brute_force_response(x, d, alpha, beta, geo)
        assert rel_err(trace.r_flat, want) <= 1e-9

    def test_trace_consistency(self):
        geo, x, d, alpha, beta, _ = random_instance(17)
        trace = kr.krr_forward(x, d, alpha, beta, geo)
        recombined = np.einsum("mn,mnrc->rc",
                               beta.reshape(geo.M, geo.M), trace.b)
        assert np.array_equal(trace.r, recombined)

    @pytest.mark.parametrize("dims", [(9, 9, 1, 3, 3, 9), (10, 14, 2, 6, 4, 4),
                                      (16, 16, 1, 4, 4, 16)])
    def test_network_kernel_equivalence_property(self, dims):
        H, W, C, h, w, M = dims
        geo = kr.KrrGeometry(H=H, W=W, C=C, h=h, w=w, M=M)
        assert geo.N <= 200
        rng = np.random.default_rng(hash(dims) % 2**32)
        x = rng.normal(size=(H, W, C))
        d = rng.normal(size=(geo.d, geo.N))
        alpha = rng.normal(size=geo.N)
        beta = rng.normal(size=M * M)
        r = kr.krr_forward(x, d, alpha, beta, geo).r_flat
        s = kr.extract_dense_samples(x, geo)
        k_cross = np.zeros((geo.N, geo.N))
        for m in range(M):
            for n in range(M):
                k_cross += (beta.reshape(M, M)[m, n]
                            * s[geo.patch_rows[m]].T @ d[geo.patch_rows[n]])
        want = k_cross @ alpha
        assert np.abs(r - want).max() <= 1e-9 * np.abs(r).max()


class TestGradients:
    def test_stationary_at_closed_form(self):
        geo, x, _, _, _, y = random_instance(18)
        rng = np.random.default_rng(18)
        d = kr.extract_dense_samples(x, geo)
        beta = psd_beta(rng, geo.M)
        alpha = kr.closed_form_alpha(kr.kernel_matrix(d, beta, geo), y, 0.01)
        ga, _ = kr.krr_gradients(x, d, alpha, beta, y, 0.01, 0.2, geo)
        assert np.abs(ga).max() <= 1e-6

    def test_ridge_term_isolated(self):
        geo, x, _, _, beta, y = random_instance(19)
        d = kr.extract_dense_samples(x, geo)
        _, gb = kr.krr_gradients(x, d, np.zeros(geo.N), beta, y, 0.3, 0.7, geo)
        assert np.abs(gb - 2.0 * 0.7 * beta).max() <= 1e-12

    def test_finite_difference_suite(self):
        worst_a = worst_b = 0.0
        for seed in range(20):
            geo, x, _, alpha, beta, y = random_instance(100 + seed)
            d = kr.extract_dense_samples(x, geo)
            ga, gb = kr.krr_gradients(x, d, alpha, beta, y, 0.01, 0.05, geo)
            fa = finite_diff_gradient(
                lambda a: kr.objective_J(a, beta, d, y, 0.01, 0.05, geo), alpha.copy())
            fb = finite_diff_gradient(
                lambda b: kr.objective_J(alpha, b, d, y, 0.01, 0.05, geo), beta.copy())
            worst_a = max(worst_a, rel_err(ga, fa))
            worst_b = max(worst_b, rel_err(gb, fb))
        assert worst_a <= 1e-4 and worst_b <= 1e-4


class TestTrainStep:
    def _model(self, seed, lambda1=0.01, lambda2=0.05):
        geo, x, _, _, _, y = random_instance(seed)
        rng = np.random.default_rng(seed)
        d = kr.extract_dense_samples(x, geo)
        beta = psd_beta(rng, geo.M)
        alpha = rng.normal(size=geo.N) * 0.01
        model = kr.KrrModel(alpha=alpha, beta=beta, D=d,
                            lambda1=lambda1, lambda2=lambda2)
        return geo, x, y, model

    def test_zero_rates_leave_model_unchanged(self):
        geo, x, y, model = self._model(20)
        a0, b0, d0 = model.alpha.copy(), model.beta.copy(), model.D.copy()
        kr.krr_train_step(model, x, y, 0.0, 0.0, geo)
        assert np.array_equal(model.alpha, a0)
        assert np.array_equal(model.beta, b0)
        assert np.array_equal(model.D, d0)

    def test_alpha_descent_strictly_decreases_objective(self):
        geo, x, y, model = self._model(21)
        j_prev = kr.objective_J(model.alpha, model.beta, model.D, y,
                                model.lambda1, model.lambda2, geo)
        for _ in range(10):
            kr.krr_train_step(model, x, y, 1e-6, 0.0, geo)
            j = kr.objective_J(model.alpha, model.beta, model.D, y,
                               model.lambda1, model.lambda2, geo)
            assert j < j_prev
            j_prev = j

    def test_windowed_decrease_with_both_rates(self):
        geo, x, y, model = self._model(22)
        def j_of(m):
            return kr.objective_J(m.alpha, m.beta, m.D, y, m.lambda1, m.lambda2, geo)
        j_start = j_of(model)
        for _ in range(50):
            kr.krr_train_step(model, x, y, 1e-6, 1e-4, geo)
        assert j_of(model) < j_start


class TestEmaUpdate:
    def _model(self):
        rng = np.random.default_rng(23)
        return kr.KrrModel(alpha=rng.normal(size=4), beta=rng.normal(size=4),
                           D=rng.normal(size=(6, 4)))

    def test_eta_zero_keeps_state(self):
        m = self._model()
        a, b, d = m.alpha_ema.copy(), m.beta_ema.copy(), m.D_ema.copy()
        m.alpha = m.alpha + 1.0
        m.eta = 0.0
        kr.ema_update(m)
        assert np.array_equal(m.alpha_ema, a)
        assert np.array_equal(m.beta_ema, b)
        assert np.array_equal(m.D_ema, d)

    def test_eta_one_copies_state(self):
        m = self._model()
        m.alpha = m.alpha + 2.0
        m.eta = 1.0
        kr.ema_update(m)
        assert np.array_equal(m.alpha_ema, m.alpha)

    def test_early_rate_blend(self):
        # the first-frames update rate is 0.2: blending 0 toward 1 gives 0.2
        m = self._model()
        m.D_ema = np.zeros((2, 2))
        m.D = np.ones((2, 2))
        m.eta = 0.2
        kr.ema_update(m)
        assert np.allclose(m.D_ema, 0.2)
