import numpy as np
import pytest

from risloc import _kernels
from risloc._kernels import (
    ACTIVE_BACKEND,
    _numpy_concentrated_cost,
    _numpy_projector_cost_batch,
    _select_backend,
)


def random_batch(rng, c=7, g=4, n=11):
    shape = (c, g, n)
    phi1 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    phi2 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    y = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
    return phi1, phi2, y


class TestBackendSelection:
    def test_numpy_forced(self):
        assert _select_backend("numpy") == "numpy"

    def test_auto_prefers_numba_when_available(self):
        expected = "numba"
        try:
            import numba  # noqa: F401
        except ImportError:
            expected = "numpy"
        assert _select_backend("auto") == expected
        assert _select_backend(None) == expected

    def test_invalid_choice_rejected(self):
        with pytest.raises(ValueError):
            _select_backend("gpu")

    def test_active_backend_is_known(self):
        assert ACTIVE_BACKEND in ("numba", "numpy")


class TestNumpyProjectorCost:
    def test_against_lstsq(self):
        rng = np.random.default_rng(0)
        phi1, phi2, y = random_batch(rng)
        costs, margins = _numpy_projector_cost_batch(phi1, phi2, y)
        for c in range(phi1.shape[0]):
            expected = 0.0
            for n in range(y.shape[1]):
                block = np.column_stack([phi1[c, :, n], phi2[c, :, n]])
                coef, *_ = np.linalg.lstsq(block, y[:, n], rcond=None)
                expected += np.sum(np.abs(y[:, n] - block @ coef) ** 2)
            assert costs[c] == pytest.approx(expected, rel=1e-10)
        assert np.all(margins > 0) and np.all(margins <= 1)

    def test_margin_detects_collinear_columns(self):
        rng = np.random.default_rng(1)
        phi1, phi2, y = random_batch(rng, c=2)
        phi2[0] = 2.5 * phi1[0]  # candidate 0 collinear on every subcarrier
        _, margins = _numpy_projector_cost_batch(phi1, phi2, y)
        assert margins[0] < 1e-14
        assert margins[1] > 1e-6

    def test_margin_matches_singular_values(self):
        rng = np.random.default_rng(2)
        phi1, phi2, y = random_batch(rng, c=3)
        _, margins = _numpy_projector_cost_batch(phi1, phi2, y)
        for c in range(3):
            ratios = []
            for n in range(y.shape[1]):
                block = np.column_stack([phi1[c, :, n], phi2[c, :, n]])
                s = np.linalg.svd(block, compute_uv=False)
                ratios.append(s[1] / s[0])
            assert margins[c] == pytest.approx(min(ratios), rel=1e-8)


class TestNumpyConcentratedCost:
    def test_against_explicit_least_squares(self):
        rng = np.random.default_rng(3)
        g, n = 5, 9
        w1 = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
        w2 = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
        ph1 = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
        ph2 = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
        y = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
        sqrt_p = 1.7
        cost, g1, g2, rcond = _numpy_concentrated_cost(w1, w2, ph1, ph2, y, sqrt_p)

        b = np.column_stack([(w1 * ph1).ravel(), (w2 * ph2).ravel()])
        coef, *_ = np.linalg.lstsq(sqrt_p * b, y.ravel(), rcond=None)
        expected = np.sum(np.abs(y.ravel() - sqrt_p * b @ coef) ** 2)
        assert cost == pytest.approx(expected, rel=1e-10)
        np.testing.assert_allclose([g1, g2], coef, rtol=1e-9)
        assert 0 < rcond <= 1

    def test_collinear_paths_flagged(self):
        rng = np.random.default_rng(4)
        g, n = 4, 6
        w1 = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
        ph = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
        y = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
        cost, _, _, rcond = _numpy_concentrated_cost(w1, 2.0 * w1, ph, ph, y, 1.0)
        assert rcond < 1e-14
        assert cost == np.inf


@pytest.mark.skipif(ACTIVE_BACKEND != "numba", reason="numba backend inactive")
class TestNumbaMatchesNumpy:
    def test_projector_cost_batch(self):
        rng = np.random.default_rng(5)
        for c, g, n in [(1, 3, 4), (9, 5, 30), (3, 8, 7)]:
            phi1, phi2, y = random_batch(rng, c=c, g=g, n=n)
            jc, jm = _kernels.projector_cost_batch(phi1, phi2, y)
            pc, pm = _numpy_projector_cost_batch(phi1, phi2, y)
            # atol floor: an exact fit leaves only rounding noise ~1e-30
            floor = 1e-25 * np.sum(np.abs(y) ** 2)
            np.testing.assert_allclose(jc, pc, rtol=1e-12, atol=floor)
            np.testing.assert_allclose(jm, pm, rtol=1e-10)

    def test_projector_cost_degenerate_first_column(self):
        rng = np.random.default_rng(6)
        phi1, phi2, y = random_batch(rng, c=2, g=3, n=5)
        phi1[0, :, 2] = 0.0  # zero first column on one subcarrier
        jc, jm = _kernels.projector_cost_batch(phi1, phi2, y)
        pc, pm = _numpy_projector_cost_batch(phi1, phi2, y)
        np.testing.assert_allclose(jc, pc, rtol=1e-12)
        np.testing.assert_allclose(jm, pm, rtol=1e-12)
        assert jm[0] == 0.0

    def test_concentrated_cost(self):
        rng = np.random.default_rng(7)
        g, n = 5, 30
        for _ in range(5):
            w1 = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
            w2 = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
            ph1 = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
            ph2 = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
            y = rng.standard_normal((g, n)) + 1j * rng.standard_normal((g, n))
            jres = _kernels.concentrated_cost(w1, w2, ph1, ph2, y, 2.3)
            pres = _numpy_concentrated_cost(w1, w2, ph1, ph2, y, 2.3)
            assert jres[0] == pytest.approx(pres[0], rel=1e-12)
            assert jres[1] == pytest.approx(pres[1], rel=1e-10)
            assert jres[2] == pytest.approx(pres[2], rel=1e-10)
            assert jres[3] == pytest.approx(pres[3], rel=1e-10)
