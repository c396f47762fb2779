import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalfft.exceptions import NotAMinimumError, ValidationError
from modalfft.model import ModalParameterSet, ParameterLayout, constraint_jacobian
from modalfft.uncertainty import (frf_derivatives, hessian, mac, nullspace_basis,
                                  posterior_covariance, summarize)
from oracles import fd_frf_derivatives, fd_hessian, random_instance


@pytest.fixture(scope="module")
def small_case():
    theta, spectra = random_instance(np.random.default_rng(7), d=2, m=1, ds=1, nr=2, ns=2, nf=8)
    return theta, spectra, hessian(theta, spectra), fd_hessian(theta, spectra)


@pytest.fixture(scope="module")
def coupled_case():
    theta, spectra = random_instance(np.random.default_rng(8), d=3, m=2, ds=2, nr=2, ns=1, nf=6, q=1,
                                     sensors_per_setup=2)
    return theta, spectra, hessian(theta, spectra), fd_hessian(theta, spectra)


class TestFrfDerivatives:
    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.3, 20.0), st.floats(0.005, 0.5), st.floats(0.5, 2.0), st.integers(0, 2))
    def test_against_high_precision_differences(self, f, zeta, ratio, q):
        ours = frf_derivatives(f, zeta, f * ratio, q)
        ref = fd_frf_derivatives(f, zeta, f * ratio, q)
        for key, val in ref.items():
            assert ours[key] == pytest.approx(val, rel=1e-11, abs=1e-13 * abs(ref["h"]))
        assert ours["h_zetaf"] == ours["h_fzeta"]

    def test_zeta_derivative_at_resonance(self):
        # dh/dzeta = 2i b c / D^2 with b = 1, D = -2i zeta  ->  -i / (2 zeta^2)
        out = frf_derivatives(1.0, 0.1, 1.0)
        assert out["h_zeta"] == pytest.approx(-0.5j / 0.01, rel=1e-14)


class TestHessian:
    @pytest.mark.parametrize("case", ["small_case", "coupled_case"])
    def test_every_block_matches_finite_differences(self, case, request):
        theta, spectra, H, ref = request.getfixturevalue(case)
        from modalfft.uncertainty import HessianBlocks
        R = HessianBlocks(ref, H.layout)
        for a in H.names:
            for b in H.names:
                ours, num = H.block(a, b), R.block(a, b)
                scale = np.sqrt(np.outer(np.abs(np.diag(H.block(a, a))), np.abs(np.diag(H.block(b, b)))))
                err = np.max(np.abs(ours - num) / np.maximum(scale, 1e-300))
                assert err < 1e-9, (a, b, err)

    def test_symmetric(self, coupled_case):
        H = coupled_case[2].matrix
        np.testing.assert_array_equal(H, H.T)

    def test_block_names(self, small_case):
        names = small_case[2].names
        assert list(names) == ["theta_m", "phi", "mpf[0]", "mpf[1]", "err_psd[0]", "err_psd[1]"]

    def test_err_psd_diagonal_at_its_optimum(self, rng):
        from modalfft.estimator import update_se
        theta, spectra = random_instance(rng, d=3, m=1, nr=2, sensors_per_setup=2)
        theta = theta.replace(err_psd=update_se(theta, spectra))
        H = hessian(theta, spectra)
        for r, ss in enumerate(spectra.setups):
            n = ss.n_channels * ss.n_freqs
            assert H.block(f"err_psd[{r}]", f"err_psd[{r}]")[0, 0] == pytest.approx(
                n / theta.err_psd[r] ** 2, rel=1e-12)


class TestPosterior:
    def test_nullspace(self, rng):
        theta, _ = random_instance(rng, d=4, m=2, ns=2, nr=3)
        N = nullspace_basis(theta)
        G = constraint_jacobian(theta)
        n = ParameterLayout.for_theta(theta).size
        assert N.shape == (n, n - 2)
        np.testing.assert_allclose(G @ N, 0, atol=1e-12)
        np.testing.assert_allclose(N.T @ N, np.eye(n - 2), atol=1e-12)

    def test_matches_projected_pseudo_inverse(self, rng):
        theta, _ = random_instance(rng, d=3, m=2, ns=1, nr=2)
        n = ParameterLayout.for_theta(theta).size
        A = rng.normal(size=(n, n))
        H = A @ A.T + n * np.eye(n)
        N = nullspace_basis(theta)
        P = N @ N.T
        ref = np.linalg.pinv(P @ H @ P)
        pcm = posterior_covariance(H, N)
        np.testing.assert_allclose(pcm, ref, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(pcm @ constraint_jacobian(theta).T, 0, atol=1e-12)

    def test_indefinite_raises(self, rng):
        theta, _ = random_instance(rng, d=2, m=1, nr=1)
        n = ParameterLayout.for_theta(theta).size
        with pytest.raises(NotAMinimumError):
            posterior_covariance(-np.eye(n), nullspace_basis(theta))

    def test_zero_shape_rejected(self):
        theta = ModalParameterSet([1.0], [0.1], [[0.0], [0.0]], ([[1.0]],), [1.0])
        with pytest.raises(ValidationError):
            nullspace_basis(theta)

    def test_posterior_at_bridge_fit(self, bridge_fits):
        _, spectra, theta, _ = bridge_fits[2]
        pcm = posterior_covariance(hessian(theta, spectra), nullspace_basis(theta))
        assert np.all(np.linalg.eigvalsh(pcm) > -1e-12 * np.abs(pcm).max())
        res = summarize(theta, pcm)
        assert np.all(res.cov_f > 0) and np.all(res.cov_f < 1e-3)
        assert np.all(res.cov_zeta > 0) and np.all(res.cov_zeta < 0.1)


class TestSummarize:
    def test_reads_diagonal(self):
        theta = ModalParameterSet([2.0], [0.05], [[1.0]], ([[0.5]],), [4.0])
        pcm = np.diag([0.04, 0.0001, 0.0, 0.01, 0.16])
        res = summarize(theta, pcm)
        assert res.std_f[0] == pytest.approx(0.2) and res.cov_f[0] == pytest.approx(0.1)
        assert res.cov_zeta[0] == pytest.approx(0.2)
        assert res.cov_mpf[0][0, 0] == pytest.approx(0.2)
        assert res.cov_err_psd[0] == pytest.approx(0.1)
        assert res.flags == [] and not res.converged

    def test_zero_value_reports_absolute_std(self):
        theta = ModalParameterSet([2.0], [0.05], [[1.0]], ([[0.0]],), [4.0])
        res = summarize(theta, np.diag([0.04, 0.0001, 0.0, 0.01, 0.16]))
        assert res.cov_mpf[0][0, 0] == pytest.approx(0.1)
        assert any("zero MAP value" in f for f in res.flags)

    def test_shape_mismatch(self):
        theta = ModalParameterSet([2.0], [0.05], [[1.0]], ([[0.5]],), [4.0])
        with pytest.raises(ValidationError):
            summarize(theta, np.eye(3))


class TestMac:
    def test_values(self):
        assert mac([1, 0], [0, 1]) == 0
        assert mac([1, 2], [-2, -4]) == pytest.approx(1.0)
        assert mac([1, 1], [1, 0], squared=True) == pytest.approx(0.5)

    def test_zero(self):
        with pytest.raises(ValidationError):
            mac([0, 0], [1, 0])

    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
           st.lists(st.floats(-10, 10), min_size=3, max_size=3))
    def test_bounded_and_symmetric(self, a, b):
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        assert 0 <= mac(a, b) <= 1 and mac(a, b) == pytest.approx(mac(b, a))
